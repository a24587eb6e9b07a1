import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcensemble import _backend, _fallback
from mcensemble.oracle import CovarianceConstrained, LinearCapped

pytestmark = pytest.mark.skipif("cython" not in _backend.available(), reason="compiled extension not built")


@pytest.fixture(scope="module")
def compiled():
    import mcensemble._kernels as k
    return k


def _cov_args(region, C):
    return (C, region.cov, region.risk_bound, region.sup_size, region.sup_idx, region.sup_kinv,
            region.sup_u, region.sup_A)


def test_lp_batches_agree(compiled):
    rng = np.random.default_rng(0)
    region = LinearCapped(4)
    C = np.vstack([rng.normal(size=(300, 4)), np.ones((3, 4)), np.zeros((2, 4)),
                   rng.integers(-2, 3, size=(50, 4)).astype(float)])
    a1, s1 = _fallback.lp_solve_batch(C, region.A, region.b)
    a2, s2 = compiled.lp_solve_batch(C, region.A, region.b)
    assert np.array_equal(a1, a2) and np.array_equal(s1, s2)


def test_cov_batches_agree(compiled):
    rng = np.random.default_rng(1)
    G = rng.normal(size=(4, 4))
    region = CovarianceConstrained(G @ G.T + 0.1 * np.eye(4))
    C = np.vstack([rng.normal(size=(300, 4)), np.ones((2, 4)), [[0, 0, 0.6, 0.6]]])
    a1, s1 = _fallback.cov_solve_batch(*_cov_args(region, C))
    a2, s2 = compiled.cov_solve_batch(*_cov_args(region, C))
    assert np.array_equal(a1, a2) and np.array_equal(s1, s2)


def _family(rng, n, P, N):
    cells = rng.integers(0, N, size=(P, n))
    cells[rng.random((P, n)) < 0.1] = -1
    return cells, np.full(P, N, dtype=np.int64)


def test_cell_sums_and_scores_agree(compiled):
    rng = np.random.default_rng(2)
    H, Y = rng.uniform(0, 1, (200, 3)), rng.uniform(0, 1, (200, 3))
    cells, nc = _family(rng, 200, 4, 7)
    s1, c1 = _fallback.cell_sums(H, Y, cells, nc)
    s2, c2 = compiled.cell_sums(H, Y, cells, nc)
    assert np.array_equal(s1, s2) and np.array_equal(c1, c2)
    assert np.array_equal(_fallback.event_scores(s1, c1, 200), compiled.event_scores(s2, c2, 200))


def test_patch_members_agree(compiled):
    rng = np.random.default_rng(3)
    Y = rng.uniform(0, 1, (50, 3))
    H1 = rng.uniform(0, 1, (50, 3))
    H2 = H1.copy()
    members = np.sort(rng.choice(50, 20, replace=False))
    delta = np.array([0.7, -0.4, 0.05])
    r1 = _fallback.patch_members(H1, Y, members, delta, 1.0)
    r2 = compiled.patch_members(H2, Y, members, delta, 1.0)
    assert r1 == r2 and np.array_equal(H1, H2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(5, 120), st.integers(1, 5), st.integers(1, 6),
       st.sampled_from([1e-4, 1e-3, 1e-2]), st.booleans())
def test_update_loop_agrees(seed, n, P, N, alpha, edge):
    import mcensemble._kernels as compiled
    rng = np.random.default_rng(seed)
    d = 3
    Y = rng.uniform(0, 1, (n, d))
    H = rng.uniform(0, 1, (n, d))
    if edge:
        # labels and predictions at the range ends force clamped patches
        Y = np.round(Y)
        H = 1 - Y
    cells, nc = _family(rng, n, P, N)
    ranks = rng.permutation(int(nc.sum())).astype(np.int64)
    H1, H2 = H.copy(), H.copy()
    out1 = _fallback.update_loop(H1, Y, cells, nc, ranks, alpha, 1.0, 10 ** 6)
    out2 = compiled.update_loop(H2, Y, cells, nc, ranks, alpha, 1.0, 10 ** 6)
    assert np.array_equal(H1, H2)
    for a, b in zip(out1[:-1], out2[:-1]):
        assert np.array_equal(a, b)
    assert out1[-1] == out2[-1]


def test_update_loop_overflow_flag(compiled):
    rng = np.random.default_rng(4)
    Y, H = rng.uniform(0, 1, (40, 2)), np.zeros((40, 2))
    cells, nc = _family(rng, 40, 3, 4)
    ranks = np.arange(int(nc.sum()))
    for k in (_fallback, compiled):
        out = k.update_loop(H.copy(), Y, cells, nc, ranks, 1e-6, 1.0, 2)
        assert out[-1] is True and len(out[0]) == 2


def test_backend_switching():
    before = _backend.name()
    with _backend.use("python"):
        assert _backend.name() == "python"
        assert _backend.kernels() is _fallback
    assert _backend.name() == before
    with pytest.raises(ValueError):
        _backend.set_backend("fortran")
