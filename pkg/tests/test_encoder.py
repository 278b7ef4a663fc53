import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genrank.encoder import (
    EncoderParams,
    FeatureVector,
    bucket,
    encode,
    fnv1a_64,
    featurize,
    init_params,
    load_params,
    save_params,
    tokenize,
)
from genrank.corpus_io import FormatError


def test_fnv1a_reference_values():
    # published FNV-1a 64 test vectors
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_tokenize():
    assert tokenize("The the cat") == ["the", "the", "cat"]
    assert tokenize("a-b a.b") == ["a", "b", "a", "b"]
    assert tokenize("  ,, ") == []
    assert tokenize("snake_case x2") == ["snake", "case", "x2"]


def test_featurize_counts():
    fv = featurize("The the cat", 4096).as_dict()
    assert fv == {bucket("the", 4096): 2, bucket("cat", 4096): 1}
    assert len(featurize("", 4096)) == 0
    assert featurize("a-b a.b", 4096).as_dict() == {bucket("a", 4096): 2, bucket("b", 4096): 2}


def test_featurize_bucket_is_fnv_mod_f():
    assert bucket("cat", 97) == fnv1a_64(b"cat") % 97
    with pytest.raises(ValueError):
        featurize("x", 0)


def fv(d, f):
    idx = np.array(sorted(d), dtype=np.int64)
    return FeatureVector(idx, np.array([d[i] for i in idx.tolist()], dtype=np.int64), f)


def test_encode_zero_params():
    p = EncoderParams(np.zeros((4, 3)), np.zeros(3))
    assert np.array_equal(encode(p, fv({1: 2}, 4)), np.zeros(3))


def test_encode_identity():
    p = EncoderParams(np.eye(2), np.zeros(2))
    assert encode(p, fv({0: 3, 1: 1}, 2)).tolist() == [3.0, 1.0]
    p.normalize = True
    v = encode(p, fv({0: 3, 1: 1}, 2))
    # hand L2 norm: sqrt(9 + 1)
    assert np.allclose(v, [3 / math.sqrt(10), 1 / math.sqrt(10)], rtol=0, atol=1e-15)


def test_normalize_keeps_zero_vector():
    p = EncoderParams(np.zeros((2, 2)), np.zeros(2), normalize=True)
    assert encode(p, fv({0: 1}, 2)).tolist() == [0.0, 0.0]


def test_encode_rejects_wrong_feature_dim():
    p = EncoderParams(np.eye(2), np.zeros(2))
    with pytest.raises(ValueError):
        encode(p, fv({0: 1}, 3))


def test_encode_non_finite():
    p = EncoderParams(np.full((1, 1), 1e308), np.zeros(1))
    with pytest.raises(FloatingPointError):
        encode(p, fv({0: 10}, 1))


texts = st.text(alphabet=st.sampled_from("abc xyz-.Q"), max_size=40)


@settings(max_examples=80, deadline=None)
@given(texts, st.integers(0, 2**32 - 1))
def test_homogeneity_and_determinism(text, seed):
    p = init_params(64, 5, seed=seed % 1000)
    x = featurize(text, 64)
    a = encode(p, x)
    assert np.array_equal(a, encode(p, featurize(text, 64)))
    assert np.array_equal(encode(p, x.scaled(2)), 2 * a)


@settings(max_examples=80, deadline=None)
@given(texts, st.integers(0, 999))
def test_normalized_norm(text, seed):
    p = init_params(64, 5, seed=seed, normalize=True)
    n = np.linalg.norm(encode(p, featurize(text, 64)))
    assert n == 0 or abs(n - 1) <= 1e-6


def test_params_roundtrip(tmp_path):
    p = init_params(16, 3, seed=1, normalize=True)
    p.bias[:] = [0.5, -1.0, 2.0]
    save_params(p, tmp_path / "p.bin")
    back = load_params(tmp_path / "p.bin")
    assert back.equals(p)
    data = (tmp_path / "p.bin").read_bytes()
    assert data[:4] == b"GRDE" and int.from_bytes(data[8:12], "little") == 2


def test_params_file_is_not_embeddings(tmp_path):
    from genrank.corpus_io import load_embeddings, save_embeddings, EmbeddingMatrix

    save_embeddings(EmbeddingMatrix(("a",), np.ones((1, 2), dtype=np.float32), 2), tmp_path / "e.bin")
    with pytest.raises(FormatError):
        load_params(tmp_path / "e.bin")
    save_params(init_params(4, 2), tmp_path / "p.bin")
    with pytest.raises(FormatError):
        load_embeddings(tmp_path / "p.bin")
