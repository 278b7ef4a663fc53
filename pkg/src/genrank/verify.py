"""Seeded cross-module invariant checks.

Every check builds its own random instances from a seed, compares two
independent computations, and reports the first mismatch. Counts default to
the full acceptance sizes; ``scale`` shrinks them for quick smoke runs.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from genrank.bm25 import DEFAULT, NQ_TUNED, bm25_search, build_bm25
from genrank.corpus_io import Document, EmbeddingMatrix
from genrank.dense_index import flat_search, tree_search
from genrank.encoder import EncoderParams, FeatureVector, encode, init_params, tokenize
from genrank.gen_decoder import BeamConfig, decode_atomic, decode_beam, enumerate_leaf_probs, to_ranked_list
from genrank.semantic_tree import build_tree, validate_tree
from genrank.trainer import FreeEmbeddingTable, Mode, TrainBatch, TrainConfig, compute_gradients

FD_STEP = 1e-4
GRAD_TOLERANCE = 1e-4
PROB_TOLERANCE = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}\t{self.name}\t{self.detail}\t{self.seconds:.2f}s"


class Mismatch(AssertionError):
    pass


def random_embeddings(rng: np.random.Generator, n: int, d: int, clustered: bool = False) -> EmbeddingMatrix:
    if clustered:
        centers = rng.standard_normal((max(1, n // 16), d)) * 3
        rows = centers[rng.integers(len(centers), size=n)] + rng.standard_normal((n, d)) * 0.5
    else:
        rows = rng.standard_normal((n, d))
    return EmbeddingMatrix(tuple(f"d{i}" for i in range(n)), rows.astype(np.float32), d)


def _tree_instances(count: int, seed: int, max_n: int = 512, max_d: int = 32, cs=(2, 4, 8)):
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        n, d = int(rng.integers(1, max_n + 1)), int(rng.integers(1, max_d + 1))
        W = random_embeddings(rng, n, d, clustered=bool(i % 2))
        c = cs[i % len(cs)]
        yield i, W, build_tree(W, c, seed=i), rng.standard_normal(d), c


# -- equivalences --------------------------------------------------------------


def check_atomic_flat(instances: int = 100, seed: int = 0) -> str:
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        n, d = int(rng.integers(1, 513)), int(rng.integers(1, 33))
        W = random_embeddings(rng, n, d, clustered=bool(i % 2))
        h = rng.standard_normal(d)
        for k in (1, 10, 100):
            a, f = decode_atomic(h, W, k), flat_search(h, W, k)
            if a.doc_ids != f.doc_ids or a.positions != f.positions or a.logits != f.scores:
                raise Mismatch(f"instance {i}, k={k}")
    return f"{instances} instances, k in (1, 10, 100)"


def check_greedy(instances: int = 100, seed: int = 0) -> str:
    for i, W, tree, h, c in _tree_instances(instances, seed):
        paths, visited = decode_beam(h, tree, W, BeamConfig(1), 1)
        ranked, tvisited = tree_search(h, tree, W, nprobe=1, k=1)
        if visited != tvisited or (paths[0].doc_id,) != ranked.doc_ids:
            raise Mismatch(f"instance {i} (C={c})")
    return f"{instances} instances, C in (2, 4, 8)"


def check_dense_beam(instances: int = 100, seed: int = 0, k: int = 10) -> str:
    for i, W, tree, h, c in _tree_instances(instances, seed):
        for n in (1, 2, 4):
            cfg = BeamConfig(n, prune_by="step_logit", rank_by="leaf_dot")
            paths, visited = decode_beam(h, tree, W, cfg, k)
            ranked, tvisited = tree_search(h, tree, W, nprobe=n, k=k)
            if visited != tvisited or to_ranked_list(paths, cfg.rank_by) != ranked:
                raise Mismatch(f"instance {i} (C={c}), width {n}")
        wide = BeamConfig(max(tree.level_widths()), prune_by="step_logit", rank_by="leaf_dot")
        if to_ranked_list(decode_beam(h, tree, W, wide, k)[0], wide.rank_by) != flat_search(h, W, k):
            raise Mismatch(f"instance {i} (C={c}), exhaustive beam")
    return f"{instances} instances, widths (1, 2, 4) and exhaustive"


def check_leaf_probs(seeds: int = 50, max_n: int = 2048, max_depth: int = 10) -> str:
    worst, deepest = 0.0, 0
    for s in range(seeds):
        rng = np.random.default_rng([7, s])
        n = max_n if s % 5 == 0 else int(rng.integers(1, max_n + 1))
        d = int(rng.integers(1, 17))
        W = random_embeddings(rng, n, d, clustered=bool(s % 2))
        c = (2, 4, 8, 16)[s % 4]
        tree = build_tree(W, c, seed=s)
        while tree.depth() > max_depth:
            c *= 2
            tree = build_tree(W, c, seed=s)
        deepest = max(deepest, tree.depth())
        probs = enumerate_leaf_probs(rng.standard_normal(d) * 3, tree, W)
        err = abs(math.fsum(probs.values()) - 1.0)
        worst = max(worst, err)
        if len(probs) != n or err > PROB_TOLERANCE:
            raise Mismatch(f"seed {s}: |sum - 1| = {err:.3g}")
    return f"{seeds} trees, max depth {deepest}, max |sum - 1| = {worst:.2e}"


def check_tree_validity(seeds: int = 100, max_n: int = 2048) -> str:
    for s in range(seeds):
        rng = np.random.default_rng([11, s])
        c = (2, 4, 8, 16)[s % 4]
        n = int(rng.integers(1, max_n + 1))
        d = int(rng.integers(1, 17))
        if s < 4:
            # all-identical embeddings, one per branching factor
            W = EmbeddingMatrix(tuple(f"d{i}" for i in range(n)), np.ones((n, d), np.float32), d)
        else:
            W = random_embeddings(rng, n, d, clustered=bool(s % 2))
        problems = validate_tree(build_tree(W, c, seed=s), W)
        if problems:
            raise Mismatch(f"seed {s} (C={c}, N={n}): {problems[0]}")
    return f"{seeds} trees incl. all-identical, C in (2, 4, 8, 16)"


# -- BM25 -----------------------------------------------------------------------


def bm25_brute_force(corpus: List[Document], query: str, k1: float, b: float, k: int):
    """Scalar scoring of every document followed by a sort."""
    tfs = [Counter(tokenize(d.full_text)) for d in corpus]
    lengths = [sum(t.values()) for t in tfs]
    n = len(corpus)
    avgdl = sum(lengths) / n
    df = Counter(term for t in tfs for term in t)
    scored = []
    for i, tf in enumerate(tfs):
        s = 0.0
        for term in tokenize(query):
            if tf[term] == 0:
                continue
            idf = math.log(1 + (n - df[term] + 0.5) / (df[term] + 0.5))
            f = float(tf[term])
            s += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * float(lengths[i]) / avgdl))
        if s > 0:
            scored.append((-s, i))
    scored.sort()
    return [(corpus[i].doc_id, -ns) for ns, i in scored[:k]]


def check_bm25(corpora: int = 50, max_docs: int = 1000, queries: int = 10) -> str:
    for s in range(corpora):
        rng = np.random.default_rng([13, s])
        vocab = int(rng.integers(5, 300))
        n = int(rng.integers(1, max_docs + 1))
        p = 1.0 / np.arange(1, vocab + 1)
        p /= p.sum()
        corpus = [
            Document(f"d{i}", " ".join(f"t{t}" for t in rng.choice(vocab, size=int(rng.integers(0, 30)), p=p)))
            for i in range(n)
        ]
        for params in (DEFAULT, NQ_TUNED):
            index = build_bm25(corpus, params)
            for _ in range(queries):
                q = " ".join(f"t{t}" for t in rng.integers(vocab + 3, size=int(rng.integers(0, 6))))
                got = list(bm25_search(index, q, 100))
                if got != bm25_brute_force(corpus, q, params.k1, params.b, 100):
                    raise Mismatch(f"corpus {s}, params {params}, query {q!r}")
    return f"{corpora} corpora x {queries} queries, default and nq presets"


# -- gradients --------------------------------------------------------------------


def _lse(xs):
    m = max(xs)
    return m + math.log(sum(math.exp(x - m) for x in xs))


def oracle_loss(params: EncoderParams, batch: TrainBatch, cfg: TrainConfig, table=None) -> float:
    """Per-example scalar loss through :func:`encode`, independent of the batched trainer path."""
    enc = lambda fv: encode(params, fv)
    terms = []
    if cfg.mode is Mode.FREE_DSI:
        for fv, target in zip(batch.inputs, batch.positives):
            h = enc(fv)
            logits = [float(np.dot(row, h)) for row in table.weight]
            terms.append(_lse(logits) - logits[target])
        return sum(terms) / len(terms)
    if cfg.mode is Mode.TIED_CONTRASTIVE:
        for fv, pos, negs in zip(batch.inputs, batch.positives, batch.negatives):
            q = enc(fv)
            if not negs:
                terms.append(0.0)
                continue
            logits = [float(np.dot(q, enc(batch.doc_features[d]))) / cfg.temperature for d in [pos] + negs]
            terms.append(_lse(logits) - logits[0])
        return sum(terms) / len(terms)
    for fv, pos, negs, teach in zip(batch.inputs, batch.positives, batch.negatives, batch.teacher_margins):
        q = enc(fv)
        p = enc(batch.doc_features[pos])
        for d, t in zip(negs, teach):
            m = float(np.dot(q, p)) - float(np.dot(q, enc(batch.doc_features[d])))
            terms.append((m - t) ** 2)
    return sum(terms) / len(terms) if terms else 0.0


def finite_difference(params, batch, cfg, table=None, step: float = FD_STEP) -> Dict[str, np.ndarray]:
    """Central differences of :func:`oracle_loss` over weight, bias and (if given) the table."""
    arrays = {"weight": params.weight, "bias": params.bias}
    if table is not None:
        arrays["table"] = table.weight
    out = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = oracle_loss(params, batch, cfg, table)
            arr[idx] = orig - step
            down = oracle_loss(params, batch, cfg, table)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * step)
        out[name] = g
    return out


def rel_err(a, b) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def random_features(rng: np.random.Generator, f: int) -> FeatureVector:
    k = int(rng.integers(1, min(f, 6) + 1))
    idx = np.sort(rng.choice(f, size=k, replace=False))
    return FeatureVector(idx.astype(np.int64), rng.integers(1, 4, size=k).astype(np.int64), f)


def random_instance(mode: Mode, seed: int):
    """Seeded (params, batch, config, table) with F <= 32, d <= 8, N <= 16."""
    rng = np.random.default_rng(seed)
    f, d, n = int(rng.integers(4, 33)), int(rng.integers(1, 9)), int(rng.integers(2, 17))
    normalize = bool(seed % 2)
    cfg = TrainConfig(mode=mode, temperature=float(rng.uniform(0.3, 2.0)), feature_dim=f, dim=d, normalize=normalize)
    params = init_params(f, d, seed=seed, scale=0.4, normalize=normalize)
    params.bias = rng.standard_normal(d) * 0.2
    docs = [random_features(rng, f) for _ in range(n)]
    b = int(rng.integers(1, 5))
    inputs = [random_features(rng, f) for _ in range(b)]
    positives = rng.integers(n, size=b).tolist()
    if mode is Mode.FREE_DSI:
        table = FreeEmbeddingTable(tuple(f"d{i}" for i in range(n)), rng.standard_normal((n, d)) * 0.5)
        return params, TrainBatch(inputs, positives, [[] for _ in inputs], docs), cfg, table
    negatives = []
    for p in positives:
        pool = [i for i in range(n) if i != p]
        negatives.append(rng.choice(pool, size=int(rng.integers(0, min(4, len(pool)) + 1)), replace=False).tolist())
    margins = None
    if mode is Mode.TIED_MARGINMSE:
        margins = [rng.standard_normal(len(ns)).tolist() for ns in negatives]
    return params, TrainBatch(inputs, positives, negatives, docs, margins), cfg, None


def max_gradient_error(mode: Mode, seed: int) -> float:
    params, batch, cfg, table = random_instance(mode, seed)
    _, grads = compute_gradients(params, batch, cfg, table)
    fd = finite_difference(params, batch, cfg, table)
    pairs = [(grads.weight, fd["weight"]), (grads.bias, fd["bias"])]
    if table is not None:
        pairs.append((grads.table, fd["table"]))
    return max(rel_err(a, b) for g, f in pairs for a, b in zip(g.ravel(), f.ravel()))


def check_gradients(instances: int = 20) -> str:
    worst = 0.0
    for mode in Mode:
        for s in range(instances):
            err = max_gradient_error(mode, s)
            worst = max(worst, err)
            if err >= GRAD_TOLERANCE:
                raise Mismatch(f"{mode.value} seed {s}: relative error {err:.3g}")
    return f"{instances} instances x {len(Mode)} modes, max rel err {worst:.2e}"


# -- runner ----------------------------------------------------------------------

CHECKS: Dict[str, Callable[..., str]] = {
    "atomic_equals_flat": check_atomic_flat,
    "greedy_equals_nprobe1": check_greedy,
    "dense_beam_equals_tree_search": check_dense_beam,
    "leaf_probs_normalized": check_leaf_probs,
    "gradients_match_finite_differences": check_gradients,
    "bm25_matches_brute_force": check_bm25,
    "tree_validity": check_tree_validity,
}

_SIZE_ARG = {
    "atomic_equals_flat": ("instances", 100),
    "greedy_equals_nprobe1": ("instances", 100),
    "dense_beam_equals_tree_search": ("instances", 100),
    "leaf_probs_normalized": ("seeds", 50),
    "gradients_match_finite_differences": ("instances", 20),
    "bm25_matches_brute_force": ("corpora", 50),
    "tree_validity": ("seeds", 100),
}


def run_check(name: str, scale: float = 1.0) -> CheckResult:
    arg, full = _SIZE_ARG[name]
    t0 = time.perf_counter()
    try:
        detail = CHECKS[name](**{arg: max(1, round(full * scale))})
        passed = True
    except Mismatch as e:
        detail, passed = f"mismatch: {e}", False
    return CheckResult(name, passed, detail, time.perf_counter() - t0)


def run_all(scale: float = 1.0, names: Optional[List[str]] = None) -> List[CheckResult]:
    return [run_check(n, scale) for n in (names or list(CHECKS))]
