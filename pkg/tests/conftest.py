import numpy as np
import pytest

from genrank.corpus_io import EmbeddingMatrix


def random_matrix(rng: np.random.Generator, n: int, d: int, clustered: bool = False) -> EmbeddingMatrix:
    if clustered:
        centers = rng.standard_normal((max(1, n // 16), d)) * 3
        rows = centers[rng.integers(len(centers), size=n)] + rng.standard_normal((n, d)) * 0.5
    else:
        rows = rng.standard_normal((n, d))
    return EmbeddingMatrix(tuple(f"d{i}" for i in range(n)), rows.astype(np.float32), d)


def matrix(rows, ids=None) -> EmbeddingMatrix:
    rows = np.asarray(rows, dtype=np.float32)
    ids = ids or tuple(f"d{i + 1}" for i in range(len(rows)))
    return EmbeddingMatrix(tuple(ids), rows, rows.shape[1])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, line); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n][1])
