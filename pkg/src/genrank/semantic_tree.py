"""Hierarchical semantic DocIDs: recursive k-means over document embeddings.

Each internal node stores the mean of its descendant document vectors; leaves
point at rows of the embedding matrix. A document's DocID is the sequence of
1-based child labels from the root to its leaf.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from genrank.corpus_io import EmbeddingMatrix, FormatError, PathLike

KMEANS_MAX_ITER = 100
CENTROID_TOLERANCE = 1e-5


@dataclass
class TreeNode:
    id: int
    parent: Optional[int]
    label: Optional[int]
    kind: str  # "internal" | "leaf"
    centroid: Optional[np.ndarray] = None
    doc_index: Optional[int] = None
    children: List[int] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return self.kind == "leaf"


@dataclass
class SemanticTree:
    c: int
    dim: int
    nodes: List[TreeNode]

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def leaves(self) -> List[TreeNode]:
        return [n for n in self.nodes if n.is_leaf]

    def path(self, node_id: int) -> List[int]:
        labels = []
        node = self.nodes[node_id]
        while node.parent is not None:
            labels.append(node.label)
            node = self.nodes[node.parent]
        return labels[::-1]

    def doc_paths(self) -> Dict[int, List[int]]:
        return {n.doc_index: self.path(n.id) for n in self.leaves()}

    def resolve(self, path: Sequence[int]) -> int:
        """DocIdPath -> doc index."""
        node = self.root
        for label in path:
            if node.is_leaf or not 1 <= label <= len(node.children):
                raise KeyError(f"path {list(path)} does not exist in the tree")
            node = self.nodes[node.children[label - 1]]
        if not node.is_leaf:
            raise KeyError(f"path {list(path)} ends at an internal node")
        return node.doc_index

    def level_widths(self) -> List[int]:
        widths = []
        frontier = [self.root.id]
        while frontier:
            frontier = [c for u in frontier for c in self.nodes[u].children]
            if frontier:
                widths.append(len(frontier))
        return widths

    def depth(self) -> int:
        return len(self.level_widths())

    # -- JSON ---------------------------------------------------------------

    def to_json(self) -> str:
        nodes = []
        for n in self.nodes:
            nodes.append(
                {
                    "id": n.id,
                    "parent": n.parent,
                    "label": n.label,
                    "kind": n.kind,
                    "centroid": None if n.centroid is None else [float(v) for v in n.centroid],
                    "doc_index": n.doc_index,
                }
            )
        return json.dumps({"c": self.c, "dim": self.dim, "nodes": nodes}, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SemanticTree":
        try:
            data = json.loads(text)
            nodes = []
            for i, raw in enumerate(data["nodes"]):
                if raw["id"] != i:
                    raise FormatError(f"node ids must be listed in order, got {raw['id']} at {i}")
                centroid = raw["centroid"]
                nodes.append(
                    TreeNode(
                        id=raw["id"],
                        parent=raw["parent"],
                        label=raw["label"],
                        kind=raw["kind"],
                        centroid=None if centroid is None else np.array(centroid, dtype=np.float64),
                        doc_index=raw["doc_index"],
                    )
                )
            for n in nodes:
                if n.parent is not None:
                    nodes[n.parent].children.append(n.id)
            tree = cls(c=int(data["c"]), dim=int(data["dim"]), nodes=nodes)
        except (KeyError, TypeError, IndexError, json.JSONDecodeError) as e:
            raise FormatError(f"malformed tree JSON: {e}") from None
        if not nodes or nodes[0].parent is not None:
            raise FormatError("tree JSON must start with the root node")
        for n in nodes:
            n.children.sort(key=lambda cid: nodes[cid].label)
        return tree

    def save(self, path: PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path: PathLike) -> "SemanticTree":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())


# -- k-means --------------------------------------------------------------------


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(points, points[chosen]).min(axis=1)
    while len(chosen) < k:
        cum = np.cumsum(closest)
        # zero-weight points (already chosen or duplicates) are unreachable with side="right"
        idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        idx = min(idx, n - 1)
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(points, points[[idx]])[:, 0])
    return points[chosen].copy()


def _repair_empty(points, labels, centers, k):
    for j in range(k):
        if np.any(labels == j):
            continue
        sizes = np.bincount(labels, minlength=k)
        own = np.einsum("nd,nd->n", points - centers[labels], points - centers[labels])
        own[sizes[labels] < 2] = -np.inf  # never empty another cluster
        labels[int(np.argmax(own))] = j
    return labels


def _kmeans(points: np.ndarray, c: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    distinct = len(np.unique(points, axis=0))
    k = min(c, distinct)
    if k == 1:
        return np.zeros(len(points), dtype=np.int64), points.mean(axis=0, keepdims=True)
    centers = _kmeanspp(points, k, rng)
    labels = None
    for _ in range(KMEANS_MAX_ITER):
        new = _sq_dists(points, centers).argmin(axis=1)
        new = _repair_empty(points, new, centers, k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centers = np.stack([points[labels == j].mean(axis=0) for j in range(k)])
    return labels, centers


def kmeans_cluster(points, c: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding; k = min(c, number of distinct points).

    Returns ``(assignments, centroids)``; every cluster in ``0..k-1`` is non-empty.
    """
    if c < 2:
        raise ValueError(f"C must be >= 2, got {c}")
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) == 0:
        raise ValueError("need a non-empty 2-d array of points")
    return _kmeans(points, c, np.random.default_rng(seed))


# -- tree construction ----------------------------------------------------------


def _median_split(points: np.ndarray, members: np.ndarray) -> List[np.ndarray]:
    coord = int(np.argmax(points.var(axis=0)))
    order = np.argsort(points[:, coord], kind="stable")
    half = len(members) // 2
    return [np.sort(members[order[:half]]), np.sort(members[order[half:]])]


def build_tree(W: EmbeddingMatrix, c: int, seed: int) -> SemanticTree:
    if c < 2:
        raise ValueError(f"C must be >= 2, got {c}")
    if len(W) == 0:
        raise ValueError("cannot build a tree over an empty embedding matrix")
    vectors = W.vectors
    rng = np.random.default_rng(seed)
    nodes: List[TreeNode] = []

    def new_node(parent, label, kind, **kw) -> TreeNode:
        node = TreeNode(id=len(nodes), parent=parent, label=label, kind=kind, **kw)
        nodes.append(node)
        if parent is not None:
            nodes[parent].children.append(node.id)
        return node

    def grow(members: np.ndarray, parent, label) -> None:
        node = new_node(parent, label, "internal", centroid=vectors[members].mean(axis=0))
        if len(members) <= c:
            for i, doc in enumerate(members, start=1):
                new_node(node.id, i, "leaf", doc_index=int(doc))
            return
        points = vectors[members]
        labels, _ = _kmeans(points, c, rng)
        groups = [members[labels == j] for j in range(labels.max() + 1)]
        groups = [g for g in groups if len(g)]
        if len(groups) < 2:
            groups = _median_split(points, members)
        for i, g in enumerate(groups, start=1):
            grow(g, node.id, i)

    grow(np.arange(len(W)), None, None)
    return SemanticTree(c=c, dim=W.dim, nodes=nodes)


def validate_tree(tree: SemanticTree, W: EmbeddingMatrix) -> List[str]:
    """Return a list of human-readable invariant violations (empty when valid)."""
    problems: List[str] = []
    n_docs = len(W)
    if tree.c < 2:
        problems.append(f"branching factor C={tree.c} < 2")
    if tree.dim != W.dim:
        problems.append(f"tree dim {tree.dim} != embedding dim {W.dim}")
    if not tree.nodes:
        return problems + ["tree has no nodes"]
    if tree.nodes[0].parent is not None or tree.nodes[0].is_leaf:
        problems.append("node 0 must be an internal root")

    seen_docs: Dict[int, int] = {}
    for node in tree.nodes:
        if node.kind not in ("internal", "leaf"):
            problems.append(f"node {node.id}: unknown kind {node.kind!r}")
            continue
        if node.parent is not None:
            if not 0 <= node.parent < len(tree.nodes) or node.id not in tree.nodes[node.parent].children:
                problems.append(f"node {node.id}: parent link {node.parent} inconsistent")
        if node.is_leaf:
            if node.children:
                problems.append(f"leaf {node.id} has children")
            d = node.doc_index
            if d is None or not 0 <= d < n_docs:
                problems.append(f"leaf {node.id}: doc index {d} out of range")
            elif d in seen_docs:
                problems.append(f"doc {d} appears in leaves {seen_docs[d]} and {node.id}")
            else:
                seen_docs[d] = node.id
            continue
        k = len(node.children)
        if not 1 <= k <= tree.c:
            problems.append(f"internal node {node.id} has {k} children (C={tree.c})")
        if any(not node.id < ch < len(tree.nodes) for ch in node.children):
            problems.append(f"internal node {node.id}: children not in depth-first order")
            continue
        labels = [tree.nodes[ch].label for ch in node.children]
        if labels != list(range(1, k + 1)):
            problems.append(f"internal node {node.id}: child labels {labels} not 1..{k}")
        if node.centroid is None or np.shape(node.centroid) != (W.dim,):
            problems.append(f"internal node {node.id}: missing or mis-shaped centroid")

    missing = sorted(set(range(n_docs)) - set(seen_docs))
    if missing:
        problems.append(f"docs missing from leaves: {missing[:10]}")
    if len(seen_docs) != n_docs:
        problems.append(f"leaf count {len(seen_docs)} != N={n_docs}")
    if problems:
        return problems

    # centroid = mean of descendant document vectors, bottom-up
    sums: Dict[int, np.ndarray] = {}
    counts: Dict[int, int] = {}
    for node in reversed(tree.nodes):
        if node.is_leaf:
            sums[node.id] = W.vectors[node.doc_index].copy()
            counts[node.id] = 1
            continue
        sums[node.id] = sum((sums[ch] for ch in node.children), np.zeros(W.dim))
        counts[node.id] = sum(counts[ch] for ch in node.children)
        if counts[node.id] == 0:
            problems.append(f"internal node {node.id} has no descendant documents")
            continue
        mean = sums[node.id] / counts[node.id]
        err = float(np.max(np.abs(mean - node.centroid)))
        if not err <= CENTROID_TOLERANCE:
            problems.append(f"internal node {node.id}: centroid off by {err:.3g}")
    return problems
