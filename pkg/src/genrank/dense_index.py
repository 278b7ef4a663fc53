"""Exact (flat) and tree-pruned maximum inner product search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from genrank.corpus_io import EmbeddingMatrix
from genrank.semantic_tree import SemanticTree


def inner(rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise dot products.

    Deliberately not ``rows @ q``: BLAS matvec kernels change accumulation order
    with the row count, so a subset of rows would not reproduce the full scan
    bit for bit. Elementwise product + per-row sum does.
    """
    return np.multiply(rows, q).sum(axis=1)


def _check_query(q, dim: int) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (dim,):
        raise ValueError(f"query has shape {q.shape}, index dim is {dim}")
    return q


def order_by_score(scores: np.ndarray, tiebreak: np.ndarray) -> np.ndarray:
    """Indices sorting descending by score, ties by ascending ``tiebreak``."""
    return np.lexsort((tiebreak, -scores))


@dataclass(frozen=True)
class RankedList:
    doc_ids: Tuple[str, ...]
    scores: Tuple[float, ...]
    positions: Tuple[int, ...]
    logits: Optional[Tuple[float, ...]] = None

    def __len__(self) -> int:
        return len(self.doc_ids)

    def __iter__(self):
        return iter(zip(self.doc_ids, self.scores))


def score_all(q, W: EmbeddingMatrix) -> np.ndarray:
    q = _check_query(q, W.dim)
    return inner(W.vectors, q)


def softmax_probs(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("softmax of an empty score vector")
    e = np.exp(s - s.max())
    return e / e.sum()


def log_softmax(scores: np.ndarray) -> np.ndarray:
    m = scores.max()
    return scores - (m + np.log(np.exp(scores - m).sum()))


def _ranked(W: EmbeddingMatrix, positions: np.ndarray, scores: np.ndarray) -> RankedList:
    return RankedList(
        doc_ids=tuple(W.ids[i] for i in positions.tolist()),
        scores=tuple(float(s) for s in scores),
        positions=tuple(int(i) for i in positions),
    )


def flat_search(q, W: EmbeddingMatrix, k: int) -> RankedList:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = score_all(q, W)
    top = order_by_score(scores, np.arange(len(W)))[:k]
    return _ranked(W, top, scores[top])


def tree_search(q, tree: SemanticTree, W: EmbeddingMatrix, nprobe: int, k: int) -> Tuple[RankedList, List[Set[int]]]:
    """Level-wise pruned search over a semantic tree.

    At each level the children of all frontier nodes are scored (internal nodes
    against their centroid, leaves against their document vector) and the
    ``nprobe`` best survive. Surviving leaves become candidates; surviving
    internal nodes form the next frontier. Returns the top-``k`` candidates and
    the node ids kept at each level.
    """
    if nprobe < 1 or k < 1:
        raise ValueError(f"nprobe and k must be >= 1, got {nprobe}, {k}")
    if tree.dim != W.dim:
        raise ValueError(f"tree dim {tree.dim} != embedding dim {W.dim}")
    q = _check_query(q, W.dim)
    nodes = tree.nodes
    frontier = [tree.root.id]
    candidates: List[int] = []
    visited: List[Set[int]] = []
    while frontier:
        children = np.array([c for u in frontier for c in nodes[u].children], dtype=np.int64)
        if len(children) == 0:
            break
        vecs = np.stack(
            [W.vectors[nodes[c].doc_index] if nodes[c].is_leaf else nodes[c].centroid for c in children.tolist()]
        )
        keep = children[order_by_score(inner(vecs, q), children)[:nprobe]]
        visited.append(set(keep.tolist()))
        frontier = []
        for c in sorted(keep.tolist()):
            if nodes[c].is_leaf:
                candidates.append(nodes[c].doc_index)
            else:
                frontier.append(c)
    cand = np.array(sorted(candidates), dtype=np.int64)
    scores = inner(W.vectors[cand], q)
    top = order_by_score(scores, cand)[:k]
    return _ranked(W, cand[top], scores[top]), visited

