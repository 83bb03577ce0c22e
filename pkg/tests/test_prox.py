import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdrgraph.prox import (
    diagonal_projection,
    group_column_prox,
    group_subdiff_distance,
    l1_subdiff_distance,
    logdet_update,
    nuclear_subdiff_distance,
    prox_report,
    psd_trace_prox,
    psd_trace_subdiff_distance,
    soft_threshold,
    svt,
    svt_with_rank,
)

from conftest import random_pd, random_sym

SEEDS = st.integers(0, 2**31 - 1)


def test_soft_threshold_examples():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    np.testing.assert_array_equal(soft_threshold(np.diag([5.0, 5.0]), 1.0, False), np.diag([5.0, 5.0]))
    with pytest.raises(ValueError):
        soft_threshold(1.0, -1.0)


def test_svt_examples():
    np.testing.assert_allclose(svt(np.diag([3.0, 1.0]), 2.0), np.diag([1.0, 0.0]), atol=1e-15)
    np.testing.assert_allclose(svt(np.ones((2, 2)), 1.0), 0.5 * np.ones((2, 2)), atol=1e-15)


def test_svt_matches_full_svd_oracle(rng):
    m = rng.standard_normal((4, 3))
    u, s, vt = np.linalg.svd(m, full_matrices=True)
    sm = np.zeros((4, 3))
    sm[:3, :3] = np.diag(np.maximum(s - 0.7, 0.0))
    np.testing.assert_allclose(svt(m, 0.7), u @ sm @ vt, atol=1e-10)
    assert svt_with_rank(m, 0.7)[1] == int(np.sum(s > 0.7))


def test_psd_trace_prox_examples(rng):
    np.testing.assert_allclose(psd_trace_prox(np.diag([2.0, -1.0]), 0.5), np.diag([1.5, 0.0]), atol=1e-15)
    g = rng.standard_normal((4, 2))
    assert not psd_trace_prox(-g @ g.T, 0.1).any()
    m = random_sym(rng, 5)
    x = psd_trace_prox(m, 0.3)
    assert psd_trace_subdiff_distance(m - x, x, 0.3) <= 1e-8


def test_group_column_prox_examples(rng):
    np.testing.assert_array_equal(group_column_prox(np.array([[3.0], [4.0]]), 5.0), [[0.0], [0.0]])
    np.testing.assert_allclose(group_column_prox(np.array([[3.0], [4.0]]), 2.5), [[1.5], [2.0]])
    m = rng.standard_normal((4, 5))
    out = group_column_prox(m, 1.3)
    for j in range(5):
        n = np.linalg.norm(m[:, j])
        want = m[:, j] * max(0.0, 1.0 - 1.3 / n)
        np.testing.assert_allclose(out[:, j], want, atol=1e-15)


def test_logdet_update_examples(rng):
    th = logdet_update([[0.0]], [[1.0]], 1.0)
    assert th[0, 0] == pytest.approx((np.sqrt(5.0) - 1.0) / 2.0, abs=1e-14)
    np.testing.assert_allclose(logdet_update(np.eye(3), np.zeros((3, 3)), 1e8), np.eye(3), atol=1e-7)
    b, sig = random_sym(rng, 4), random_pd(rng, 4)
    x = logdet_update(b, sig, 0.7)
    assert np.linalg.norm(-np.linalg.inv(x) + sig + 0.7 * (x - b)) <= 1e-8
    assert np.linalg.eigvalsh(x)[0] > 0
    with pytest.raises(ValueError):
        logdet_update(b, sig, 0.0)


def test_diagonal_projection_examples(rng):
    np.testing.assert_array_equal(diagonal_projection([[1.0, 2.0], [2.0, 3.0]]), np.diag([1.0, 3.0]))
    d = np.diag([4.0, -1.0, 2.0])
    np.testing.assert_array_equal(diagonal_projection(d), d)
    m = rng.standard_normal((4, 4))
    x = diagonal_projection(m)
    np.testing.assert_array_equal(diagonal_projection(x), x)
    for i in range(4):
        for j in range(4):
            assert x[i, j] == (m[i, i] if i == j else 0.0)


def _random_input(kind, rng, shape):
    m = rng.standard_normal(shape)
    if kind in ("psd_trace_prox", "diagonal_projection", "soft_threshold_sym"):
        m = 0.5 * (m + m.T)
    return m


PROXES = {
    "soft_threshold": lambda m, t: soft_threshold(m, t),
    "soft_threshold_offdiag": lambda m, t: soft_threshold(m, t, False),
    "svt": svt,
    "psd_trace_prox": psd_trace_prox,
    "group_column_prox": group_column_prox,
    "diagonal_projection": lambda m, t: diagonal_projection(m),
}


@pytest.mark.parametrize("kind", sorted(PROXES))
@given(seed=SEEDS, t=st.floats(0.0, 2.0), n=st.integers(1, 5))
def test_firm_nonexpansive(kind, seed, t, n):
    rng = np.random.default_rng(seed)
    shape = (n, n) if kind in ("psd_trace_prox", "diagonal_projection") else (n, n + 1)
    a, b = _random_input(kind, rng, shape), _random_input(kind, rng, shape)
    f = PROXES[kind]
    d = f(a, t) - f(b, t)
    assert np.sum(d * d) <= np.sum(d * (a - b)) + 1e-9


@pytest.mark.parametrize("kind", ["svt", "psd_trace_prox"])
@given(seed=SEEDS, t=st.floats(0.0, 1.5))
def test_orthogonal_equivariance(kind, seed, t):
    rng = np.random.default_rng(seed)
    m = random_sym(rng, 4)
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    f = PROXES[kind]
    np.testing.assert_allclose(f(q @ m @ q.T, t), q @ f(m, t) @ q.T, atol=1e-9)


def test_zero_threshold_identity(rng):
    m = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(soft_threshold(m, 0.0), m)
    np.testing.assert_allclose(svt(m, 0.0), m, atol=1e-14)
    np.testing.assert_array_equal(group_column_prox(m, 0.0), m)
    s = random_sym(rng, 4)
    w, v = np.linalg.eigh(s)
    np.testing.assert_allclose(psd_trace_prox(s, 0.0), (v * np.maximum(w, 0)) @ v.T, atol=1e-14)


@pytest.mark.parametrize(
    "kind, kw, sym",
    [
        ("soft_threshold", {}, False),
        ("soft_threshold", {"penalize_diagonal": False}, True),
        ("svt", {}, False),
        ("psd_trace_prox", {}, True),
        ("group_column_prox", {}, False),
        ("diagonal_projection", {}, True),
    ],
)
@given(seed=SEEDS, t=st.floats(0.0, 2.0))
def test_prox_report_inclusion(kind, kw, sym, seed, t):
    rng = np.random.default_rng(seed)
    m = random_sym(rng, 4) if sym else rng.standard_normal((4, 3))
    x, rep = prox_report(kind, m, t, **kw)
    assert rep.residual <= 1e-8
    assert rep.zeros >= 0


def test_prox_report_logdet(rng):
    x, rep = prox_report("logdet_update", random_sym(rng, 3), sigma_n=random_pd(rng, 3), rho=2.0)
    assert rep.residual <= 1e-8
    with pytest.raises(ValueError):
        prox_report("nope", np.eye(2))


def test_subdiff_distances_detect_violations():
    x = np.diag([1.0, 0.0])
    assert l1_subdiff_distance(np.diag([1.0, 0.5]), x, 1.0) == 0.0
    assert l1_subdiff_distance(np.diag([0.5, 0.0]), x, 1.0) == pytest.approx(0.5)
    assert l1_subdiff_distance(np.diag([1.0, 2.0]), x, 1.0) == pytest.approx(1.0)
    assert nuclear_subdiff_distance(np.diag([1.0, 0.5]), x, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert nuclear_subdiff_distance(np.diag([1.0, 1.5]), x, 1.0) == pytest.approx(0.5)
    assert psd_trace_subdiff_distance(np.diag([1.0, 0.5]), x, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert psd_trace_subdiff_distance(np.diag([1.0, 1.5]), x, 1.0) == pytest.approx(0.5)
    assert group_subdiff_distance(np.array([[1.0, 0.3]]), np.array([[2.0, 0.0]]), 1.0) == 0.0
    assert group_subdiff_distance(np.array([[1.0, 1.3]]), np.array([[2.0, 0.0]]), 1.0) == pytest.approx(0.3)


def test_exact_zeros():
    x = soft_threshold(np.array([[0.3, -2.0], [-2.0, 0.1]]), 0.5)
    assert np.count_nonzero(x) == 2
    _, r = svt_with_rank(np.diag([3.0, 0.2, 0.1]), 0.5)
    assert r == 1
