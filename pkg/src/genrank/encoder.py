"""Hashed bag-of-words featurizer and a linear text encoder.

The encoder stands in for a transformer stack: it maps a document or query
text to a single dense vector whose dot products act as relevance scores.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from genrank.corpus_io import MAGIC, FORMAT_VERSION, EmbeddingMatrix, FormatError, PathLike

DEFAULT_FEATURE_DIM = 4096
DEFAULT_DIM = 64

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_SPLIT = re.compile(r"[\W_]+")

PARAMS_KIND = 2


def tokenize(text: str) -> List[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return [t for t in _SPLIT.split(text.lower()) if t]


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class FeatureVector:
    """Sparse bucket counts. ``indices`` is strictly increasing, ``counts`` ≥ 1."""

    indices: np.ndarray
    counts: np.ndarray
    num_features: int

    def as_dict(self) -> dict:
        return {int(i): int(c) for i, c in zip(self.indices, self.counts)}

    def __len__(self) -> int:
        return len(self.indices)

    def scaled(self, factor: int) -> "FeatureVector":
        return FeatureVector(self.indices, self.counts * factor, self.num_features)


_bucket_cache: dict = {}


def bucket(token: str, num_features: int) -> int:
    key = (token, num_features)
    b = _bucket_cache.get(key)
    if b is None:
        b = fnv1a_64(token.encode("utf-8")) % num_features
        if len(_bucket_cache) < 1_000_000:
            _bucket_cache[key] = b
    return b


def featurize(text: str, num_features: int = DEFAULT_FEATURE_DIM) -> FeatureVector:
    if num_features < 1:
        raise ValueError(f"num_features must be >= 1, got {num_features}")
    counts: dict = {}
    for tok in tokenize(text):
        b = bucket(tok, num_features)
        counts[b] = counts.get(b, 0) + 1
    idx = np.array(sorted(counts), dtype=np.int64)
    cnt = np.array([counts[i] for i in idx.tolist()], dtype=np.int64)
    return FeatureVector(idx, cnt, num_features)


def feature_matrix(features: Sequence[FeatureVector], num_features: int) -> np.ndarray:
    """Dense (n, F) count matrix; used by the trainer's batched forward pass."""
    x = np.zeros((len(features), num_features), dtype=np.float64)
    for row, fv in enumerate(features):
        x[row, fv.indices] = fv.counts
    return x


@dataclass
class EncoderParams:
    weight: np.ndarray  # (F, d)
    bias: np.ndarray  # (d,)
    normalize: bool = False

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError(f"shape mismatch: weight {self.weight.shape}, bias {self.bias.shape}")
        if self.weight.shape[0] < 1 or self.weight.shape[1] < 1:
            raise ValueError("F and d must be positive")

    @property
    def num_features(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.weight.copy(), self.bias.copy(), self.normalize)

    def equals(self, other: "EncoderParams") -> bool:
        return (
            self.normalize == other.normalize
            and self.weight.tobytes() == other.weight.tobytes()
            and self.bias.tobytes() == other.bias.tobytes()
        )


def init_params(
    num_features: int = DEFAULT_FEATURE_DIM,
    dim: int = DEFAULT_DIM,
    seed: int = 42,
    scale: float = 0.1,
    normalize: bool = False,
) -> EncoderParams:
    """Seeded Gaussian weights with standard deviation ``scale``, zero bias."""
    rng = np.random.default_rng(seed)
    weight = rng.standard_normal((num_features, dim)) * scale
    return EncoderParams(weight, np.zeros(dim), normalize)


def encode(params: EncoderParams, x: FeatureVector) -> np.ndarray:
    if x.num_features != params.num_features or (len(x) and x.indices[-1] >= params.num_features):
        raise ValueError(f"feature vector has F={x.num_features}, encoder expects {params.num_features}")
    with np.errstate(over="ignore", invalid="ignore"):
        v = x.counts.astype(np.float64) @ params.weight[x.indices] + params.bias if len(x) else params.bias.copy()
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("encoder produced non-finite values")
    if params.normalize:
        norm = np.linalg.norm(v)
        if norm > 0:
            v = v / norm
    return v


def encode_text(params: EncoderParams, text: str) -> np.ndarray:
    return encode(params, featurize(text, params.num_features))


def encode_documents(params: EncoderParams, ids: Iterable[str], texts: Iterable[str]) -> EmbeddingMatrix:
    """Embed documents one at a time, so a document's row never depends on its neighbours."""
    ids = list(ids)
    rows = [encode_text(params, t) for t in texts]
    if len(rows) != len(ids):
        raise ValueError("ids and texts differ in length")
    mat = np.array(rows, dtype=np.float64).reshape(len(ids), params.dim)
    return EmbeddingMatrix(ids=tuple(ids), rows=mat.astype(np.float32), dim=params.dim)


# -- serialization ------------------------------------------------------------

_PARAMS_HEADER = struct.Struct("<4sIIIII")


def save_params(params: EncoderParams, path: PathLike) -> None:
    """Layout: magic, version, kind=2, F, d, normalize flag (u32 each), weight then bias as f64 LE."""
    header = _PARAMS_HEADER.pack(
        MAGIC, FORMAT_VERSION, PARAMS_KIND, params.num_features, params.dim, int(params.normalize)
    )
    payload = params.weight.astype("<f8").tobytes(order="C") + params.bias.astype("<f8").tobytes()
    Path(path).write_bytes(header + payload)


def load_params(path: PathLike) -> EncoderParams:
    data = Path(path).read_bytes()
    if len(data) < _PARAMS_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, kind, f, d, norm = _PARAMS_HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic bytes {magic!r}")
    if version != FORMAT_VERSION or kind != PARAMS_KIND:
        raise FormatError(f"{path}: not an encoder parameter file (version {version}, kind {kind})")
    if f == 0 or d == 0 or norm not in (0, 1):
        raise FormatError(f"{path}: invalid header values")
    expected = (f * d + d) * 8
    if len(data) - _PARAMS_HEADER.size != expected:
        raise FormatError(f"{path}: payload size mismatch")
    values = np.frombuffer(data, dtype="<f8", offset=_PARAMS_HEADER.size).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite parameter values")
    return EncoderParams(values[: f * d].reshape(f, d).copy(), values[f * d :].copy(), bool(norm))
