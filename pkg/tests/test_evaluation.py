import pytest
from hypothesis import given, settings, strategies as st

from genrank.corpus_io import RunFile
from genrank.evaluation import mrr_at_k, recall_at_k


def run_of(rankings):
    return RunFile({q: [(d, i + 1, float(-i)) for i, d in enumerate(ds)] for q, ds in rankings.items()}, "t")


def test_recall_single_relevant_at_rank_three():
    run = run_of({"q": ["a", "b", "rel"]})
    qrels = {"q": {"rel": 1}}
    assert recall_at_k(run, qrels, 10).mean == 1.0
    assert recall_at_k(run, qrels, 2).mean == 0.0


def test_recall_two_relevant():
    run = run_of({"q": ["r1", "x", "y"]})
    assert recall_at_k(run, {"q": {"r1": 1, "r2": 2}}, 3).mean == 0.5


def test_missing_query_scores_zero():
    run = run_of({"q1": ["a"]})
    rep = recall_at_k(run, {"q1": {"a": 1}, "q2": {"b": 1}}, 5)
    assert rep.num_queries == 2 and rep.mean == 0.5
    assert rep.per_query["q2"] == 0.0


def test_unjudged_and_nonrelevant_excluded():
    run = run_of({"q1": ["a"], "q2": ["b"], "q3": ["c"]})
    rep = mrr_at_k(run, {"q1": {"a": 1}, "q2": {"b": 0}}, 5)
    assert rep.num_queries == 1 and rep.mean == 1.0


@pytest.mark.parametrize("rank,k,expected", [(1, 10, 1.0), (4, 10, 0.25), (11, 10, 0.0)])
def test_mrr_examples(rank, k, expected):
    docs = [f"x{i}" for i in range(rank - 1)] + ["rel"]
    assert mrr_at_k(run_of({"q": docs}), {"q": {"rel": 1}}, k).mean == expected


def test_bad_k():
    with pytest.raises(ValueError):
        recall_at_k(run_of({}), {}, 0)
    with pytest.raises(ValueError):
        mrr_at_k(run_of({}), {}, 0)


def test_report_line():
    rep = mrr_at_k(run_of({"q": ["a"]}), {"q": {"a": 1}}, 10)
    assert rep.line() == "mrr\t10\t1.000000\t1"


rankings = st.dictionaries(
    st.sampled_from(["q1", "q2", "q3", "q4"]),
    st.lists(st.sampled_from("abcdefghij"), unique=True, max_size=10),
)
qrels_st = st.dictionaries(
    st.sampled_from(["q1", "q2", "q3", "q4", "q5"]),
    st.dictionaries(st.sampled_from("abcdefghij"), st.integers(0, 2), min_size=1),
)


@settings(max_examples=150, deadline=None)
@given(rankings, qrels_st)
def test_metric_properties(ranks, qrels):
    run = run_of(ranks)
    for metric in (recall_at_k, mrr_at_k):
        means = [metric(run, qrels, k).mean for k in range(1, 12)]
        assert all(a <= b + 1e-15 for a, b in zip(means, means[1:]))
        for k in (1, 5, 11):
            rep = metric(run, qrels, k)
            assert all(0 <= v <= 1 for v in rep.per_query.values())
            assert 0 <= rep.mean <= 1
            shuffled = RunFile(dict(reversed(list(run.rankings.items()))), "t")
            assert metric(shuffled, dict(reversed(list(qrels.items()))), k).mean == rep.mean


@settings(max_examples=50, deadline=None)
@given(qrels_st)
def test_oracle_run_scores_one(qrels):
    relevant = {q: [d for d, g in j.items() if g > 0] for q, j in qrels.items()}
    relevant = {q: ds[:1] for q, ds in relevant.items() if ds}
    single = {q: {ds[0]: 1} for q, ds in relevant.items()}
    run = run_of(relevant)
    for k in (1, 10, 100):
        if single:
            assert recall_at_k(run, single, k).mean == 1.0
            assert mrr_at_k(run, single, k).mean == 1.0
