import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genrank.dense_index import flat_search, inner, order_by_score, score_all, softmax_probs, tree_search
from genrank.semantic_tree import build_tree

from conftest import matrix, random_matrix


def test_score_all_examples():
    assert score_all([1, 0, 0], matrix([[1, 0, 0], [0, 1, 0]])).tolist() == [1.0, 0.0]
    assert score_all([0, 0, 0], matrix([[1, 2, 3], [4, 5, 6]])).tolist() == [0.0, 0.0]
    # hand dot products: 2*1-1*1, 2*3-0, 0-4
    assert score_all([2, -1], matrix([[1, 1], [3, 0], [0, 4]])).tolist() == [1.0, 6.0, -4.0]


def test_score_all_dim_mismatch():
    with pytest.raises(ValueError):
        score_all([1, 2, 3], matrix([[1, 1]]))


def test_inner_subset_is_bitwise_stable(rng):
    for _ in range(50):
        n, d = rng.integers(1, 400), rng.integers(1, 40)
        rows = rng.standard_normal((n, d))
        q = rng.standard_normal(d)
        full = inner(rows, q)
        idx = rng.choice(n, size=rng.integers(1, n + 1), replace=False)
        assert np.array_equal(full[idx], inner(rows[idx], q))


def test_softmax_examples():
    assert softmax_probs([0, 0]).tolist() == [0.5, 0.5]
    assert np.allclose(softmax_probs([np.log(2), 0]), [2 / 3, 1 / 3], atol=1e-15)
    s = np.array([3.0, 1.0, 2.0])
    pos = np.arange(3)
    assert order_by_score(softmax_probs(s), pos).tolist() == order_by_score(s, pos).tolist() == [0, 2, 1]
    with pytest.raises(ValueError):
        softmax_probs([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-300, 300), min_size=1, max_size=40).map(lambda xs: np.array(xs, dtype=np.float64) / 4))
def test_rank_preservation(scores):
    # quarter-integer scores within ±75: every gap survives exp() without rounding to a tie
    p = softmax_probs(scores)
    pos = np.arange(len(scores))
    assert abs(p.sum() - 1) <= 1e-6
    assert order_by_score(p, pos).tolist() == order_by_score(scores, pos).tolist()


def test_flat_search_examples():
    W = matrix([[1, 1], [3, 0], [0, 4]])
    r = flat_search([2, -1], W, 2)
    assert list(r) == [("d2", 6.0), ("d1", 1.0)]
    assert flat_search([2, -1], W, 10).doc_ids == ("d2", "d1", "d3")
    with pytest.raises(ValueError):
        flat_search([2, -1], W, 0)


def test_flat_search_tie_break_by_position():
    W = matrix([[0, 1], [1, 0], [1, 0]])
    assert flat_search([1, 0], W, 3).doc_ids == ("d2", "d3", "d1")


def test_flat_full_is_permutation(rng):
    W = random_matrix(rng, 50, 6)
    r = flat_search(rng.standard_normal(6), W, 50)
    assert sorted(r.doc_ids) == sorted(W.ids)
    assert all(a >= b for a, b in zip(r.scores, r.scores[1:]))


def test_tree_search_depth_one_equals_flat(rng):
    W = random_matrix(rng, 6, 3)
    tree = build_tree(W, 8, seed=0)
    assert tree.depth() == 1
    q = rng.standard_normal(3)
    for k in (1, 3, 6):
        for nprobe in range(k, 8):
            assert tree_search(q, tree, W, nprobe, k)[0] == flat_search(q, W, k)


def test_tree_search_two_clusters():
    W = matrix([[10, 0], [10, 1], [-10, 0], [-10, 1]])
    tree = build_tree(W, 2, seed=0)
    centroid_a = W.vectors[:2].mean(axis=0)
    # brute-force: the cluster-A members are the two best scores overall
    assert set(flat_search(centroid_a, W, 2).doc_ids) == {"d1", "d2"}
    ranked, visited = tree_search(centroid_a, tree, W, nprobe=1, k=2)
    # nprobe=1 keeps one leaf at the last level, so only the best A member survives
    assert set(ranked.doc_ids) <= {"d1", "d2"}
    ranked, _ = tree_search(centroid_a, tree, W, nprobe=2, k=2)
    assert set(ranked.doc_ids) == {"d1", "d2"}


def test_tree_search_exhaustive_equals_flat(rng):
    for seed in range(20):
        W = random_matrix(rng, int(rng.integers(1, 120)), 4, clustered=True)
        tree = build_tree(W, int(rng.integers(2, 6)), seed=seed)
        q = rng.standard_normal(4)
        width = max(tree.level_widths())
        for k in (1, 5, len(W)):
            assert tree_search(q, tree, W, width, k)[0] == flat_search(q, W, k)


def test_tree_search_argument_errors(rng):
    W = random_matrix(rng, 5, 2)
    tree = build_tree(W, 2, 0)
    with pytest.raises(ValueError):
        tree_search(np.zeros(2), tree, W, 0, 1)
    with pytest.raises(ValueError):
        tree_search(np.zeros(2), tree, W, 1, 0)
