import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genrank.dense_index import flat_search, score_all, softmax_probs, tree_search
from genrank.gen_decoder import (
    BeamConfig,
    decode_atomic,
    decode_beam,
    enumerate_leaf_logprobs,
    enumerate_leaf_probs,
    to_ranked_list,
)
from genrank.semantic_tree import build_tree

from conftest import matrix, random_matrix

DEFAULT = BeamConfig()
DENSE = dict(prune_by="step_logit", rank_by="leaf_dot")


def test_atomic_two_basis_vectors():
    W = matrix([[1, 0], [0, 1]])
    r = decode_atomic([1, 0], W, 1)
    assert r.doc_ids == ("d1",)
    # hand softmax over logits (1, 0)
    assert math.isclose(r.scores[0], math.e / (math.e + 1), rel_tol=0, abs_tol=1e-15)


def test_atomic_single_doc():
    r = decode_atomic([0.3, -2.0], matrix([[5, 5]]), 3)
    assert r.doc_ids == ("d1",) and r.scores == (1.0,)


def test_atomic_equals_flat(rng):
    for _ in range(30):
        n, d = int(rng.integers(1, 300)), int(rng.integers(1, 16))
        W = random_matrix(rng, n, d)
        h = rng.standard_normal(d)
        for k in (1, 10, 100):
            a, f = decode_atomic(h, W, k), flat_search(h, W, k)
            assert a.doc_ids == f.doc_ids and a.logits == f.scores


def test_atomic_keeps_ties_that_softmax_merges():
    # softmax rounds both to 1.0 relative weight; logits still order d2 first
    W = matrix([[0.0], [1e-30]])
    assert decode_atomic([1.0], W, 2).doc_ids == flat_search([1.0], W, 2).doc_ids == ("d2", "d1")


def instances(rng, count, max_n=200, cs=(2, 4, 8)):
    for i in range(count):
        n, d = int(rng.integers(1, max_n)), int(rng.integers(1, 10))
        W = random_matrix(rng, n, d, clustered=bool(i % 2))
        tree = build_tree(W, cs[i % len(cs)], seed=i)
        yield W, tree, rng.standard_normal(d)


def test_greedy_matches_nprobe_one(rng):
    for W, tree, h in instances(rng, 40):
        paths, visited = decode_beam(h, tree, W, DEFAULT, 1)
        ranked, tvisited = tree_search(h, tree, W, nprobe=1, k=1)
        assert visited == tvisited
        assert (paths[0].doc_id,) == ranked.doc_ids


def test_dense_mode_matches_tree_search(rng):
    for W, tree, h in instances(rng, 40):
        for n in (1, 2, 4):
            paths, visited = decode_beam(h, tree, W, BeamConfig(n, **DENSE), 10)
            ranked, tvisited = tree_search(h, tree, W, nprobe=n, k=10)
            assert visited == tvisited
            assert to_ranked_list(paths, "leaf_dot") == ranked


def test_exhaustive_dense_beam_is_flat(rng):
    for W, tree, h in instances(rng, 30):
        width = max(tree.level_widths())
        paths, _ = decode_beam(h, tree, W, BeamConfig(width, **DENSE), 10)
        flat = flat_search(h, W, 10)
        assert to_ranked_list(paths, "leaf_dot") == flat
        paths, _ = decode_beam(h, tree, W, BeamConfig(width, rank_by="leaf_dot"), 10)
        assert tuple(p.doc_id for p in paths) == flat.doc_ids


def test_leaf_probs_depth_one_is_softmax(rng):
    W = random_matrix(rng, 6, 3)
    tree = build_tree(W, 8, 0)
    h = rng.standard_normal(3)
    probs = enumerate_leaf_probs(h, tree, W)
    expected = softmax_probs(score_all(h, W))
    for i, doc in enumerate(W.ids):
        assert abs(probs[doc] - expected[i]) <= 1e-9


def test_leaf_probs_normalized(rng):
    for W, tree, h in instances(rng, 20, max_n=400):
        probs = enumerate_leaf_probs(h, tree, W)
        assert set(probs) == set(W.ids)
        assert abs(math.fsum(probs.values()) - 1) <= 1e-6


def test_five_doc_enumeration_matches_full_beam(rng):
    W = random_matrix(rng, 5, 3)
    tree = build_tree(W, 2, seed=3)
    h = rng.standard_normal(3)
    logp = enumerate_leaf_logprobs(h, tree, W)
    probs = enumerate_leaf_probs(h, tree, W)
    for doc in W.ids:
        assert abs(math.exp(logp[doc]) - probs[doc]) <= 1e-12
    oracle = sorted(W.ids, key=lambda d: (-logp[d], W.position(d)))
    paths, _ = decode_beam(h, tree, W, BeamConfig(10**6), 5)
    assert [p.doc_id for p in paths] == oracle
    assert [p.cumulative_logprob for p in paths] == [logp[d] for d in oracle]


def test_decoded_paths_resolve(rng):
    for W, tree, h in instances(rng, 10):
        for p in decode_beam(h, tree, W, BeamConfig(3), 5)[0]:
            assert p.cumulative_logprob <= 0
            assert W.ids[tree.resolve(p.path)] == p.doc_id


def test_beam_errors(rng):
    W = random_matrix(rng, 5, 2)
    tree = build_tree(W, 2, 0)
    with pytest.raises(ValueError):
        decode_beam(np.zeros(3), tree, W, DEFAULT, 1)
    with pytest.raises(ValueError):
        decode_beam(np.zeros(2), tree, random_matrix(rng, 3, 2), DEFAULT, 1)
    with pytest.raises(ValueError):
        BeamConfig(0)
    with pytest.raises(ValueError):
        BeamConfig(1, prune_by="bogus")


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(2, 60), c=st.integers(2, 4), width=st.integers(2, 6))
def test_monotone_beam(seed, n, c, width):
    rng = np.random.default_rng(seed)
    W = random_matrix(rng, n, 3, clustered=True)
    tree = build_tree(W, c, seed)
    h = rng.standard_normal(3)
    narrow = decode_beam(h, tree, W, BeamConfig(width - 1), 1)[0]
    wide = decode_beam(h, tree, W, BeamConfig(width), 1)[0]
    if narrow:
        assert wide and wide[0].cumulative_logprob >= narrow[0].cumulative_logprob
