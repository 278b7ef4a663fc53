import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genrank.corpus_io import (
    EmbeddingMatrix,
    FormatError,
    RunFile,
    embeddings_roundtrip,
    format_score,
    load_corpus,
    load_embeddings,
    load_qrels,
    load_queries,
    load_run,
    save_embeddings,
    write_run,
)


def write(tmp_path, name, content, mode="w"):
    p = tmp_path / name
    if mode == "wb":
        p.write_bytes(content)
    else:
        p.write_text(content, encoding="utf-8")
    return p


def test_load_corpus_preserves_order(tmp_path):
    p = write(tmp_path, "c.jsonl", '{"doc_id": "d1", "text": "alpha"}\n\n{"doc_id": "d2", "title": "T", "text": "beta"}\n')
    docs = load_corpus(p)
    assert [d.doc_id for d in docs] == ["d1", "d2"]
    assert docs[1].title == "T"
    assert docs[1].full_text == "T beta"


def test_duplicate_doc_id_cites_line(tmp_path):
    p = write(
        tmp_path,
        "c.jsonl",
        '{"doc_id": "d1", "text": "a"}\n{"doc_id": "d2", "text": "b"}\n{"doc_id": "d1", "text": "c"}\n',
    )
    with pytest.raises(FormatError, match=r":3: duplicate doc_id 'd1'"):
        load_corpus(p)


@pytest.mark.parametrize("line", ['{"doc_id": "d1"}', '{"text": "x"}', '{"doc_id": "", "text": "x"}', "not json"])
def test_malformed_record_has_line_number(tmp_path, line):
    p = write(tmp_path, "c.jsonl", '{"doc_id": "d0", "text": "ok"}\n' + line + "\n")
    with pytest.raises(FormatError, match=r":2:"):
        load_corpus(p)


def test_invalid_utf8(tmp_path):
    p = write(tmp_path, "c.jsonl", b'{"doc_id": "d1", "text": "\xff"}\n', mode="wb")
    with pytest.raises(FormatError, match="UTF-8"):
        load_corpus(p)


def test_load_queries(tmp_path):
    p = write(tmp_path, "q.tsv", "q1\thello world\nq2\tfoo\n")
    assert [(q.query_id, q.text) for q in load_queries(p)] == [("q1", "hello world"), ("q2", "foo")]
    bad = write(tmp_path, "bad.tsv", "q1 no tab\n")
    with pytest.raises(FormatError):
        load_queries(bad)


def test_load_qrels(tmp_path):
    p = write(tmp_path, "qrels", "q1 0 d1 1\nq1 0 d2 0\n")
    assert load_qrels(p) == {"q1": {"d1": 1, "d2": 0}}
    assert load_qrels(write(tmp_path, "empty", "")) == {}
    with pytest.raises(FormatError, match="non-integer"):
        load_qrels(write(tmp_path, "bad", "q1 0 d1 x\n"))
    with pytest.raises(FormatError, match="repeated"):
        load_qrels(write(tmp_path, "rep", "q1 0 d1 1\nq1 0 d1 2\n"))


def test_embedding_roundtrip_small(tmp_path):
    rows = np.array([[0.0, 1.0, -2.5, 3.25], [1e-30, -0.0, 7.0, 8.5], [np.pi, -np.e, 1e30, 0.1]], dtype=np.float32)
    m = EmbeddingMatrix(("a", "b", "é"), rows, 4)
    back = embeddings_roundtrip(m, tmp_path / "e.bin")
    assert back == m
    assert back.rows.tobytes() == rows.tobytes()


def test_embedding_roundtrip_empty(tmp_path):
    m = EmbeddingMatrix((), np.zeros((0, 8), dtype=np.float32), 8)
    back = embeddings_roundtrip(m, tmp_path / "e.bin")
    assert len(back) == 0 and back.dim == 8


def test_embedding_header_layout(tmp_path):
    m = EmbeddingMatrix(("x",), np.array([[1.5, -2.0]], dtype=np.float32), 2)
    save_embeddings(m, tmp_path / "e.bin")
    data = (tmp_path / "e.bin").read_bytes()
    assert data[:4] == b"GRDE"
    assert struct.unpack_from("<IIQ", data, 4) == (1, 2, 1)
    assert struct.unpack_from("<I", data, 20) == (1,)
    assert data[24:25] == b"x"
    assert struct.unpack_from("<2f", data, 25) == (1.5, -2.0)
    assert len(data) == 33


def test_corrupted_embeddings(tmp_path):
    m = EmbeddingMatrix(("a", "b"), np.ones((2, 3), dtype=np.float32), 3)
    save_embeddings(m, tmp_path / "e.bin")
    data = (tmp_path / "e.bin").read_bytes()
    (tmp_path / "magic.bin").write_bytes(b"XRDE" + data[4:])
    with pytest.raises(FormatError, match="magic"):
        load_embeddings(tmp_path / "magic.bin")
    (tmp_path / "trunc.bin").write_bytes(data[:-3])
    with pytest.raises(FormatError):
        load_embeddings(tmp_path / "trunc.bin")


def test_dim_zero_rejected():
    with pytest.raises(ValueError):
        EmbeddingMatrix((), np.zeros((0, 0), dtype=np.float32), 0)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(0, 6),
    d=st.integers(1, 5),
    data=st.data(),
)
def test_embedding_roundtrip_property(tmp_path_factory, n, d, data):
    ids = data.draw(st.lists(st.text(min_size=1, max_size=6), min_size=n, max_size=n, unique=True))
    vals = data.draw(
        st.lists(st.floats(width=32, allow_nan=False, allow_infinity=False), min_size=n * d, max_size=n * d)
    )
    m = EmbeddingMatrix(tuple(ids), np.array(vals, dtype=np.float32).reshape(n, d), d)
    back = embeddings_roundtrip(m, tmp_path_factory.mktemp("rt") / "e.bin")
    assert back.ids == m.ids and back.dim == d
    assert back.rows.tobytes() == m.rows.tobytes()


def test_write_run_format(tmp_path):
    run = RunFile({"q1": [("d2", 1, 6.0), ("d1", 2, 1.0)]}, "genrank")
    write_run(run, tmp_path / "run.txt")
    assert (tmp_path / "run.txt").read_text() == "q1 Q0 d2 1 6.0 genrank\nq1 Q0 d1 2 1.0 genrank\n"


def test_write_run_empty(tmp_path):
    write_run(RunFile({}, "t"), tmp_path / "run.txt")
    assert (tmp_path / "run.txt").read_bytes() == b""


@pytest.mark.parametrize(
    "entries",
    [[("a", 1, 2.0), ("b", 3, 1.0)], [("a", 1, 1.0), ("b", 2, 2.0)], [("a", 2, 1.0)]],
)
def test_write_run_rejects_invalid(tmp_path, entries):
    with pytest.raises(ValueError):
        write_run(RunFile({"q": entries}, "t"), tmp_path / "run.txt")
    assert not (tmp_path / "run.txt").exists()


def test_format_score_six_significant_digits():
    assert format_score(1 / 3) == "0.333333"
    assert format_score(1234567.0) == "1234570.0"
    assert format_score(-2.5) == "-2.5"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=0, max_size=8))
def test_run_reparse(tmp_path_factory, scores):
    scores = sorted(scores, reverse=True)
    run = RunFile({"q": [(f"d{i}", i + 1, s) for i, s in enumerate(scores)]}, "t")
    p = tmp_path_factory.mktemp("run") / "r.txt"
    write_run(run, p)
    back = load_run(p)
    got = back.rankings.get("q", [])
    assert [(d, r) for d, r, _ in got] == [(d, r) for d, r, _ in run.rankings["q"]]
    for (_, _, a), (_, _, b) in zip(got, run.rankings["q"]):
        assert math.isclose(a, b, rel_tol=5e-6, abs_tol=1e-300)
