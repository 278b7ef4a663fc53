"""BM25 inverted index, search, and hard-negative mining."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Sequence, Tuple

import numpy as np

from genrank.corpus_io import Document, FormatError, PathLike, Qrels, Query
from genrank.dense_index import RankedList, order_by_score
from genrank.encoder import tokenize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 0.9
    b: float = 0.4

    def __post_init__(self):
        if not self.k1 >= 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0 <= self.b <= 1:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


DEFAULT = Bm25Params(0.9, 0.4)
# tuned on NQ320k
NQ_TUNED = Bm25Params(10.0, 0.8)
PRESETS = {"default": DEFAULT, "nq": NQ_TUNED}


@dataclass
class Bm25Index:
    postings: Dict[str, Tuple[np.ndarray, np.ndarray]]  # term -> (doc ordinals, tf)
    doc_lengths: np.ndarray
    avgdl: float
    params: Bm25Params
    doc_ids: Tuple[str, ...]

    @property
    def num_docs(self) -> int:
        return len(self.doc_ids)

    def df(self, term: str) -> int:
        entry = self.postings.get(term)
        return 0 if entry is None else len(entry[0])

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log(1 + (self.num_docs - df + 0.5) / (df + 0.5))


def build_bm25(corpus: Sequence[Document], params: Bm25Params = DEFAULT) -> Bm25Index:
    if not corpus:
        raise ValueError("cannot index an empty corpus")
    lists: Dict[str, Tuple[List[int], List[int]]] = {}
    lengths = []
    for ordinal, doc in enumerate(corpus):
        tokens = tokenize(doc.full_text)
        lengths.append(len(tokens))
        for term, tf in Counter(tokens).items():
            entry = lists.setdefault(term, ([], []))
            entry[0].append(ordinal)
            entry[1].append(tf)
    postings = {
        term: (np.array(docs, dtype=np.int64), np.array(tfs, dtype=np.float64))
        for term, (docs, tfs) in sorted(lists.items())
    }
    doc_lengths = np.array(lengths, dtype=np.int64)
    return Bm25Index(
        postings=postings,
        doc_lengths=doc_lengths,
        avgdl=int(doc_lengths.sum()) / len(corpus),
        params=params,
        doc_ids=tuple(d.doc_id for d in corpus),
    )


def bm25_scores(index: Bm25Index, query: str) -> np.ndarray:
    """Scores for every document (zero where no query term matches)."""
    k1, b = index.params.k1, index.params.b
    scores = np.zeros(index.num_docs)
    avgdl = index.avgdl if index.avgdl > 0 else 1.0
    for term in tokenize(query):
        entry = index.postings.get(term)
        if entry is None:
            continue
        docs, tf = entry
        idf = index.idf(term)
        dl = index.doc_lengths[docs].astype(np.float64)
        scores[docs] += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
    return scores


def bm25_search(index: Bm25Index, query: str, k: int) -> RankedList:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = bm25_scores(index, query)
    hits = np.flatnonzero(scores > 0)
    top = hits[order_by_score(scores[hits], hits)[:k]]
    return RankedList(
        doc_ids=tuple(index.doc_ids[i] for i in top.tolist()),
        scores=tuple(float(s) for s in scores[top]),
        positions=tuple(int(i) for i in top),
    )


class Negative(NamedTuple):
    doc_id: str
    rank: int
    score: float


def mine_negatives_scored(
    index: Bm25Index, queries: Iterable[Query], qrels: Qrels, top_k: int, per_query: int
) -> Dict[str, List[Negative]]:
    if not top_k >= per_query >= 0:
        raise ValueError(f"need top_k >= per_query >= 0, got top_k={top_k}, per_query={per_query}")
    out: Dict[str, List[Negative]] = {}
    for q in queries:
        if q.query_id not in qrels:
            logger.warning("query %s has no judgments; skipped for negative mining", q.query_id)
            continue
        if per_query == 0:
            out[q.query_id] = []
            continue
        positives = {d for d, g in qrels[q.query_id].items() if g > 0}
        ranked = bm25_search(index, q.text, top_k)
        negs = [
            Negative(d, rank, s)
            for rank, (d, s) in enumerate(ranked, start=1)
            if d not in positives
        ]
        out[q.query_id] = negs[:per_query]
    return out


def mine_negatives(
    index: Bm25Index, queries: Iterable[Query], qrels: Qrels, top_k: int, per_query: int
) -> Dict[str, List[str]]:
    scored = mine_negatives_scored(index, queries, qrels, top_k, per_query)
    return {qid: [n.doc_id for n in negs] for qid, negs in scored.items()}


def write_negatives(negatives: Dict[str, List[Negative]], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for qid, negs in negatives.items():
            for n in negs:
                f.write(f"{qid}\t{n.doc_id}\t{n.rank}\t{n.score!r}\n")


def load_negatives(path: PathLike) -> Dict[str, List[str]]:
    out: Dict[str, List[str]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 'query_id<TAB>doc_id<TAB>rank<TAB>score'")
            out.setdefault(parts[0], []).append(parts[1])
    return out
