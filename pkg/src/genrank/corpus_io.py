"""Corpus, query, qrels, embedding and run-file I/O.

Every loader is all-or-nothing: a malformed line raises :class:`FormatError`
and nothing partial is returned.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

PathLike = Union[str, Path]

MAGIC = b"GRDE"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised when an input file does not follow its declared format."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: Optional[str] = None

    @property
    def full_text(self) -> str:
        # title goes first so lexical and dense pipelines tokenize the same stream
        if self.title:
            return f"{self.title} {self.text}"
        return self.text


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str


Qrels = Dict[str, Dict[str, int]]


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Aligned document ids and float32 row vectors (the document embedding matrix)."""

    ids: Tuple[str, ...]
    rows: np.ndarray
    dim: int
    _vectors: np.ndarray = field(init=False, repr=False, compare=False)
    _position: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = tuple(self.ids)
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        rows = np.ascontiguousarray(self.rows, dtype=np.float32).reshape(len(ids), self.dim)
        if not np.all(np.isfinite(rows)):
            raise ValueError("embedding rows contain non-finite values")
        position = {}
        for i, doc_id in enumerate(ids):
            if doc_id in position:
                raise ValueError(f"duplicate id {doc_id!r} in embedding matrix")
            position[doc_id] = i
        rows.setflags(write=False)
        vectors = rows.astype(np.float64)
        vectors.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "_vectors", vectors)
        object.__setattr__(self, "_position", position)

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.ids == other.ids
            and self.rows.tobytes() == other.rows.tobytes()
        )

    @property
    def vectors(self) -> np.ndarray:
        """Rows widened to float64; all scoring runs on these."""
        return self._vectors

    def position(self, doc_id: str) -> int:
        return self._position[doc_id]


@dataclass
class RunFile:
    """Per-query rankings: ``rankings[qid] = [(doc_id, rank, score), ...]``."""

    rankings: Dict[str, List[Tuple[str, int, float]]]
    tag: str = "genrank"

    @classmethod
    def from_ranked(cls, ranked: Iterable[Tuple[str, Sequence[str], Sequence[float]]], tag: str) -> "RunFile":
        rankings = {}
        for qid, doc_ids, scores in ranked:
            rankings[qid] = [(d, r + 1, float(s)) for r, (d, s) in enumerate(zip(doc_ids, scores))]
        return cls(rankings, tag)

    def doc_ids(self, qid: str) -> List[str]:
        return [d for d, _, _ in self.rankings.get(qid, [])]


def _open_lines(path: PathLike):
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: invalid UTF-8 at byte {e.start}") from None
    return text.splitlines()


def load_corpus(path: PathLike) -> List[Document]:
    docs: List[Document] = []
    seen: Dict[str, int] = {}
    for lineno, line in enumerate(_open_lines(path), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
        if not isinstance(record, dict):
            raise FormatError(f"{path}:{lineno}: expected a JSON object")
        for key in ("doc_id", "text"):
            if not isinstance(record.get(key), str) or not record[key]:
                raise FormatError(f"{path}:{lineno}: missing or empty required field {key!r}")
        title = record.get("title")
        if title is not None and not isinstance(title, str):
            raise FormatError(f"{path}:{lineno}: field 'title' must be a string")
        doc_id = record["doc_id"]
        if doc_id in seen:
            raise FormatError(
                f"{path}:{lineno}: duplicate doc_id {doc_id!r} (first seen on line {seen[doc_id]})"
            )
        seen[doc_id] = lineno
        docs.append(Document(doc_id=doc_id, text=record["text"], title=title))
    return docs


def write_corpus(docs: Iterable[Document], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for d in docs:
            record = {"doc_id": d.doc_id}
            if d.title is not None:
                record["title"] = d.title
            record["text"] = d.text
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_queries(path: PathLike) -> List[Query]:
    queries: List[Query] = []
    seen = set()
    for lineno, line in enumerate(_open_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1].strip():
            raise FormatError(f"{path}:{lineno}: expected 'query_id<TAB>text'")
        qid, text = parts
        if qid in seen:
            raise FormatError(f"{path}:{lineno}: duplicate query_id {qid!r}")
        seen.add(qid)
        queries.append(Query(qid, text))
    return queries


def write_queries(queries: Iterable[Query], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for q in queries:
            if "\t" in q.text or "\n" in q.text:
                raise ValueError(f"query {q.query_id!r} text contains a tab or newline")
            f.write(f"{q.query_id}\t{q.text}\n")


def load_qrels(path: PathLike) -> Qrels:
    qrels: Qrels = {}
    for lineno, line in enumerate(_open_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 'qid 0 docid grade'")
        qid, _, doc_id, grade_text = parts
        try:
            grade = int(grade_text)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-integer grade {grade_text!r}") from None
        if grade < 0:
            raise FormatError(f"{path}:{lineno}: negative grade {grade}")
        judged = qrels.setdefault(qid, {})
        if doc_id in judged:
            raise FormatError(f"{path}:{lineno}: repeated judgment for ({qid}, {doc_id})")
        judged[doc_id] = grade
    return qrels


def write_qrels(qrels: Qrels, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for qid, judged in qrels.items():
            for doc_id, grade in judged.items():
                f.write(f"{qid} 0 {doc_id} {grade}\n")


# -- embeddings ---------------------------------------------------------------

_EMB_HEADER = struct.Struct("<4sIIQ")


def save_embeddings(matrix: EmbeddingMatrix, path: PathLike) -> None:
    if matrix.dim < 1:
        raise ValueError("cannot save an embedding matrix with dim 0")
    parts = [_EMB_HEADER.pack(MAGIC, FORMAT_VERSION, matrix.dim, len(matrix.ids))]
    for doc_id in matrix.ids:
        encoded = doc_id.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
    parts.append(matrix.rows.astype("<f4", copy=False).tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def load_embeddings(path: PathLike) -> EmbeddingMatrix:
    data = Path(path).read_bytes()
    if len(data) < _EMB_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dim, count = _EMB_HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim == 0:
        raise FormatError(f"{path}: dim is 0")
    offset = _EMB_HEADER.size
    ids = []
    for _ in range(count):
        if offset + 4 > len(data):
            raise FormatError(f"{path}: truncated id table")
        (n,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if offset + n > len(data):
            raise FormatError(f"{path}: truncated id table")
        try:
            ids.append(data[offset : offset + n].decode("utf-8"))
        except UnicodeDecodeError:
            raise FormatError(f"{path}: id {len(ids)} is not valid UTF-8") from None
        offset += n
    expected = count * dim * 4
    if len(data) - offset != expected:
        raise FormatError(f"{path}: payload has {len(data) - offset} bytes, expected {expected}")
    rows = np.frombuffer(data, dtype="<f4", count=count * dim, offset=offset)
    try:
        return EmbeddingMatrix(ids=tuple(ids), rows=rows.astype(np.float32).reshape(count, dim), dim=dim)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def embeddings_roundtrip(matrix: EmbeddingMatrix, path: PathLike) -> EmbeddingMatrix:
    save_embeddings(matrix, path)
    return load_embeddings(path)


# -- run files ----------------------------------------------------------------


def format_score(score: float) -> str:
    """Six significant digits, printed as the shortest float repr (``6.0``, ``0.333333``)."""
    return repr(float(f"{score:.6g}"))


def validate_run(run: RunFile) -> None:
    for qid, entries in run.rankings.items():
        prev = math.inf
        seen = set()
        for expected, (doc_id, rank, score) in enumerate(entries, start=1):
            if rank != expected:
                raise ValueError(f"query {qid!r}: rank {rank} where {expected} expected")
            if not math.isfinite(score):
                raise ValueError(f"query {qid!r}: non-finite score at rank {rank}")
            if score > prev:
                raise ValueError(f"query {qid!r}: score increases at rank {rank}")
            if doc_id in seen:
                raise ValueError(f"query {qid!r}: doc {doc_id!r} listed twice")
            seen.add(doc_id)
            prev = score
    if not run.tag or any(c.isspace() for c in run.tag):
        raise ValueError(f"run tag must be a non-empty token, got {run.tag!r}")


def write_run(run: RunFile, path: PathLike) -> None:
    validate_run(run)
    lines = []
    for qid, entries in run.rankings.items():
        for doc_id, rank, score in entries:
            lines.append(f"{qid} Q0 {doc_id} {rank} {format_score(score)} {run.tag}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(lines)


def load_run(path: PathLike) -> RunFile:
    rankings: Dict[str, List[Tuple[str, int, float]]] = {}
    tag = None
    for lineno, line in enumerate(_open_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(f"{path}:{lineno}: expected 'qid Q0 docid rank score tag'")
        qid, _, doc_id, rank, score, line_tag = parts
        try:
            entry = (doc_id, int(rank), float(score))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad rank or score") from None
        rankings.setdefault(qid, []).append(entry)
        tag = tag or line_tag
    return RunFile(rankings, tag or "genrank")
