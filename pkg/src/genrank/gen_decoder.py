"""Generative decoding: atomic DocIDs (one softmax step) and beam search over the semantic trie.

The query representation ``h`` is held fixed across decoding steps; each step
scores the children of the current node by their dot product with ``h``
(centroids for internal children, document vectors for leaf children).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Set, Tuple

import numpy as np

from genrank.corpus_io import EmbeddingMatrix
from genrank.dense_index import RankedList, flat_search, inner, log_softmax, score_all, softmax_probs
from genrank.semantic_tree import SemanticTree


class PruneBy(str, Enum):
    CUMULATIVE_LOGPROB = "cumulative_logprob"
    STEP_LOGIT = "step_logit"


class RankBy(str, Enum):
    CUMULATIVE_LOGPROB = "cumulative_logprob"
    LEAF_DOT = "leaf_dot"


@dataclass(frozen=True)
class BeamConfig:
    width: int = 1
    prune_by: PruneBy = PruneBy.CUMULATIVE_LOGPROB
    rank_by: RankBy = RankBy.CUMULATIVE_LOGPROB

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"beam width must be >= 1, got {self.width}")
        object.__setattr__(self, "prune_by", PruneBy(self.prune_by))
        object.__setattr__(self, "rank_by", RankBy(self.rank_by))


@dataclass(frozen=True)
class DecodedPath:
    path: Tuple[int, ...]
    doc_id: str
    doc_index: int
    cumulative_logprob: float
    leaf_dot: float


def decode_atomic(h, W: EmbeddingMatrix, k: int) -> RankedList:
    """Single decoding step over one token per document.

    Scores are generation probabilities; the order comes from the logits so it
    is the flat MIPS order, including ties that softmax rounding would merge.
    """
    logits = score_all(h, W)
    probs = softmax_probs(logits)
    ranked = flat_search(h, W, k)
    return RankedList(
        doc_ids=ranked.doc_ids,
        scores=tuple(float(probs[i]) for i in ranked.positions),
        positions=ranked.positions,
        logits=ranked.scores,
    )


def _check_tree(tree: SemanticTree, W: EmbeddingMatrix, h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if tree.dim != W.dim or h.shape != (W.dim,):
        raise ValueError(f"dimension mismatch: tree {tree.dim}, matrix {W.dim}, h {h.shape}")
    for node in tree.nodes:
        if node.is_leaf and not 0 <= (node.doc_index if node.doc_index is not None else -1) < len(W):
            raise ValueError(f"leaf {node.id} points at doc index {node.doc_index}, matrix has {len(W)} rows")
    return h


def _child_logits(tree: SemanticTree, W: EmbeddingMatrix, node_id: int, h: np.ndarray):
    children = tree.nodes[node_id].children
    vecs = np.stack(
        [W.vectors[tree.nodes[c].doc_index] if tree.nodes[c].is_leaf else tree.nodes[c].centroid for c in children]
    )
    return children, inner(vecs, h)


def decode_beam(
    h, tree: SemanticTree, W: EmbeddingMatrix, config: BeamConfig, k: int
) -> Tuple[List[DecodedPath], List[Set[int]]]:
    """Beam search over the trie.

    Every level pools the children of all live hypotheses and keeps the
    ``config.width`` best by ``prune_by``. Kept leaves are finished hypotheses;
    kept internal nodes are expanded at the next level. Returns the top-``k``
    finished leaves ordered by ``rank_by`` and the node ids kept per level.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    h = _check_tree(tree, W, h)
    by_logit = config.prune_by is PruneBy.STEP_LOGIT
    # (node id, cumulative log-prob, step logit)
    beam: List[Tuple[int, float, float]] = [(tree.root.id, 0.0, 0.0)]
    finished: List[Tuple[int, float, float]] = []
    visited: List[Set[int]] = []
    while beam:
        pool = []
        for node_id, cum, _ in beam:
            children, logits = _child_logits(tree, W, node_id, h)
            if not children:
                continue
            logp = log_softmax(logits)
            for c, lg, lp in zip(children, logits.tolist(), logp.tolist()):
                pool.append((c, cum + lp, lg))
        if not pool:
            break
        if by_logit:
            key = lambda e: (-e[2], e[0])
        else:
            # equal path sums under one parent fall back to the logit, so width 1
            # always follows the arg-max child exactly
            key = lambda e: (-e[1], -e[2], e[0])
        kept = heapq.nsmallest(config.width, pool, key=key)
        visited.append({e[0] for e in kept})
        beam = []
        for e in sorted(kept):
            (finished if tree.nodes[e[0]].is_leaf else beam).append(e)

    results = []
    for node_id, cum, logit in finished:
        doc = tree.nodes[node_id].doc_index
        results.append(DecodedPath(tuple(tree.path(node_id)), W.ids[doc], doc, cum, logit))
    if config.rank_by is RankBy.LEAF_DOT:
        results.sort(key=lambda r: (-r.leaf_dot, r.doc_index))
    else:
        results.sort(key=lambda r: (-r.cumulative_logprob, -r.leaf_dot, r.doc_index))
    return results[:k], visited


def enumerate_leaf_probs(h, tree: SemanticTree, W: EmbeddingMatrix) -> Dict[str, float]:
    """Generation probability of every DocID: product of per-step softmaxes along its path."""
    h = _check_tree(tree, W, h)
    probs: Dict[str, float] = {}
    stack = [(tree.root.id, 1.0)]
    while stack:
        node_id, p = stack.pop()
        node = tree.nodes[node_id]
        if node.is_leaf:
            probs[W.ids[node.doc_index]] = p
            continue
        children, logits = _child_logits(tree, W, node_id, h)
        for c, pc in zip(children, softmax_probs(logits).tolist()):
            stack.append((c, p * pc))
    return probs


def enumerate_leaf_logprobs(h, tree: SemanticTree, W: EmbeddingMatrix) -> Dict[str, float]:
    """Cumulative log-probabilities of every DocID, accumulated exactly as the beam decoder does."""
    h = _check_tree(tree, W, h)
    out: Dict[str, float] = {}
    stack = [(tree.root.id, 0.0)]
    while stack:
        node_id, cum = stack.pop()
        node = tree.nodes[node_id]
        if node.is_leaf:
            out[W.ids[node.doc_index]] = cum
            continue
        children, logits = _child_logits(tree, W, node_id, h)
        for c, lp in zip(children, log_softmax(logits).tolist()):
            stack.append((c, cum + lp))
    return out


def to_ranked_list(paths: List[DecodedPath], rank_by: RankBy) -> RankedList:
    rank_by = RankBy(rank_by)
    scores = [p.leaf_dot if rank_by is RankBy.LEAF_DOT else p.cumulative_logprob for p in paths]
    return RankedList(
        doc_ids=tuple(p.doc_id for p in paths),
        scores=tuple(scores),
        positions=tuple(p.doc_index for p in paths),
    )


def is_probability_vector(p: Dict[str, float], tol: float = 1e-6) -> bool:
    return all(0.0 <= v <= 1.0 for v in p.values()) and math.isclose(math.fsum(p.values()), 1.0, abs_tol=tol)
