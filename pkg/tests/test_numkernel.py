import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from spatfda.errors import DomainError, NotPositiveDefinite
from spatfda.numkernel import (
    RngStream,
    chisq_cdf,
    chisq_sf,
    cholesky_solve,
    cholesky_solve_many,
    jittered_cholesky,
    mvn_sample,
    nls_fit,
    polar_normals,
    sym_eigen,
)


def random_spd(n, seed, cond=10.0):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.geomspace(1.0, cond, n)
    return (q * lam) @ q.T


# -- cholesky_solve ---------------------------------------------------------

def test_solve_identity():
    np.testing.assert_allclose(cholesky_solve(np.eye(3), np.ones(3)), np.ones(3))


def test_solve_diagonal():
    np.testing.assert_allclose(cholesky_solve(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])


def test_solve_two_by_two():
    x = cholesky_solve([[1.0, 0.5], [0.5, 1.0]], [1.0, 1.0])
    np.testing.assert_allclose(x, [2 / 3, 2 / 3], atol=1e-14)


def test_solve_not_pd():
    with pytest.raises(NotPositiveDefinite):
        cholesky_solve(np.zeros((2, 2)), [1.0, 1.0])
    with pytest.raises(NotPositiveDefinite):
        cholesky_solve([[1.0, 0.0], [0.0, -5.0]], [1.0, 1.0])


def test_jitter_rescues_singular_gaussian_covariance():
    # two coincident-ish sites under a Gaussian covariogram: singular to rounding
    d = np.array([[0.0, 1e-9], [1e-9, 0.0]])
    c = np.exp(-(d / 0.3) ** 2)
    fac, level = jittered_cholesky(c)
    assert level > 0
    assert np.all(np.isfinite(fac))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 50), seed=st.integers(0, 10_000))
def test_solve_roundtrip(n, seed):
    a = random_spd(n, seed)
    b = np.random.default_rng(seed + 1).standard_normal(n)
    x = cholesky_solve(a, b)
    assert np.max(np.abs(a @ x - b)) <= 1e-9 * max(1.0, np.max(np.abs(b)))


def test_solve_many_matches_single():
    stack = np.stack([random_spd(6, s) for s in range(5)])
    b = np.ones(6)
    many = cholesky_solve_many(stack, b)
    for k in range(5):
        np.testing.assert_allclose(many[k], cholesky_solve(stack[k], b), rtol=1e-12)


# -- sym_eigen --------------------------------------------------------------

def test_eigen_diagonal():
    vals, vecs = sym_eigen(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_allclose(vals, [3, 2, 1])
    np.testing.assert_allclose(np.abs(vecs), np.eye(3)[:, [0, 2, 1]], atol=1e-15)


def test_eigen_two_by_two():
    vals, vecs = sym_eigen([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(vals, [3, 1], atol=1e-14)
    np.testing.assert_allclose(vecs[:, 0], [1 / math.sqrt(2)] * 2, atol=1e-14)


def test_eigen_identity():
    vals, _ = sym_eigen(np.eye(4))
    np.testing.assert_allclose(vals, np.ones(4))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 40), seed=st.integers(0, 10_000))
def test_eigen_properties(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    a = a + a.T
    vals, v = sym_eigen(a)
    assert np.all(np.diff(vals) <= 1e-12)
    np.testing.assert_allclose(v.T @ v, np.eye(n), atol=1e-10)
    assert np.linalg.norm(a @ v - v * vals) <= 1e-9 * max(1.0, np.linalg.norm(a))
    assert np.linalg.norm(v * vals @ v.T - a) <= 1e-8 * max(1.0, np.linalg.norm(a))
    lead = v[np.argmax(np.abs(v), axis=0), np.arange(n)]
    assert np.all(lead > 0)
    # independent oracle: LAPACK
    np.testing.assert_allclose(vals, np.linalg.eigvalsh(a)[::-1], atol=1e-9 * max(1.0, np.abs(vals).max()))


# -- nls_fit ----------------------------------------------------------------

def _exp_model(p, d):
    return p[0] * (1 - np.exp(-d / p[1]))


def test_nls_noiseless_recovery():
    d = np.linspace(0.05, 2, 30)
    y = _exp_model([1.0, 0.5], d)
    x, ok = nls_fit(lambda p: _exp_model(p, d) - y, [0.3, 1.5], ([1e-6, 1e-3], [20, 100]))
    assert ok
    np.testing.assert_allclose(x, [1.0, 0.5], atol=1e-6)


def test_nls_zero_data_degenerates():
    d = np.linspace(0.05, 2, 30)
    x, ok = nls_fit(lambda p: _exp_model(p, d), [0.5, 0.5], ([1e-6, 1e-3], [20, 100]))
    assert (not ok) or x[0] < 1e-6


def test_nls_model_mismatch_converges():
    d = np.linspace(0.05, 2, 30)
    y = _exp_model([1.0, 0.5], d)

    def resid(p):
        return p[0] * (1 - np.exp(-(d / p[1]) ** 2)) - y

    x, ok = nls_fit(resid, [1.0, 0.5], ([1e-6, 1e-3], [20, 100]))
    assert ok
    assert np.linalg.norm(resid(x)) > 1e-3


# -- chi-square tail --------------------------------------------------------

def test_chisq_examples():
    assert chisq_sf(0.0, 4) == 1.0
    assert abs(chisq_sf(3.8415, 1) - 0.05) < 1e-4
    assert abs(chisq_sf(100.0, 100) - 0.481) < 1e-3


def test_chisq_negative():
    with pytest.raises(DomainError):
        chisq_sf(-1.0, 2)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(0, 400), df=st.integers(1, 150))
def test_chisq_against_scipy(x, df):
    sf = chisq_sf(x, df)
    assert abs(sf - stats.chi2.sf(x, df)) <= 1e-10
    assert abs(sf + chisq_cdf(x, df) - 1.0) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(x=st.floats(0, 100), dx=st.floats(1e-3, 10), df=st.integers(1, 60))
def test_chisq_monotone(x, dx, df):
    assert chisq_sf(x + dx, df) <= chisq_sf(x, df)


# -- random streams ---------------------------------------------------------

def test_stream_reproducible_and_distinct():
    a = RngStream(42, 3)
    np.testing.assert_array_equal(a.normals(10), RngStream(42, 3).normals(10))
    assert not np.array_equal(a.normals(10), RngStream(42, 4).normals(10))
    assert not np.array_equal(a.substream(0).normals(10), a.substream(1).normals(10))
    np.testing.assert_array_equal(a.substream(7).uniform(5), a.substream(7).uniform(5))


def test_polar_normals_distribution():
    z = polar_normals(np.random.default_rng(1), 200_000)
    assert stats.kstest(z, "norm").pvalue > 0.001
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01


def test_independent_streams_uncorrelated():
    base = RngStream(7)
    z = np.array([base.substream(k).normals(2000) for k in range(20)])
    c = np.corrcoef(z)
    off = c[np.triu_indices(20, 1)]
    assert np.max(np.abs(off)) < 4.5 / math.sqrt(2000)


def test_mvn_zero_factor():
    np.testing.assert_array_equal(mvn_sample(np.zeros((3, 3)), RngStream(1)), np.zeros(3))


def test_mvn_reproducible():
    a = mvn_sample(np.eye(2), RngStream(5, 9))
    b = mvn_sample(np.eye(2), RngStream(5, 9))
    assert a.tobytes() == b.tobytes()


def test_mvn_correlation():
    fac = np.linalg.cholesky([[1.0, 0.9], [0.9, 1.0]])
    z = RngStream(11).normals((2, 100_000))
    x = fac @ z
    assert abs(np.corrcoef(x)[0, 1] - 0.9) < 0.01
