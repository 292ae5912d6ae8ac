import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spatfda.curvegrid import Curve, CurveSet, Grid, fourier_basis, project_many
from spatfda.errors import GridMismatch
from spatfda.numkernel import RngStream
from spatfda.simstudy import fpc_study_components, gen_fpc_dgp
from spatfda.spatial_fpc import (
    choose_p,
    estimate_fpc_cm2,
    estimate_fpc_cm3,
    fpcs_from_matrix,
    scores,
    standard_fpc,
)
from spatfda.sphere import sample_locations
from spatfda.variogram import FLAT, CovModel

G = Grid(336)
B = fourier_basis(G)
ESTIMATORS = {
    "standard": lambda d: standard_fpc(d, basis=B, p=3),
    "CM2": lambda d: estimate_fpc_cm2(d, basis=B, p=3),
    "CM3": lambda d: estimate_fpc_cm3(d, basis=B, p=3),
}


@pytest.fixture(scope="module")
def fpc_sample():
    locs = sample_locations(60, "clustered", RngStream(1))
    return gen_fpc_dgp(locs, RngStream(2))


def align(a, b):
    return a if np.dot(a, b) >= 0 else -a


def test_choose_p():
    assert choose_p([5.0, 3.0, 1.0, 1.0]) == 3
    assert choose_p([1.0, 0.0, -0.5]) == 1
    assert choose_p([0.0, 0.0]) == 1
    assert choose_p([0.85, 0.15]) == 1


def test_fpcs_from_matrix_keeps_negative_eigenvalues():
    fp = fpcs_from_matrix(np.diag([2.0, -0.5, 1.0]), fourier_basis(G, 3), p=3)
    np.testing.assert_allclose(fp.all_eigenvalues, [2.0, 1.0, -0.5])
    np.testing.assert_allclose(fp.explained(), [2 / 3, 1.0, 1.0])


@pytest.mark.parametrize("name", list(ESTIMATORS))
def test_orthonormal_descending(name, fpc_sample):
    fp = ESTIMATORS[name](fpc_sample)
    np.testing.assert_allclose(fp.gram(), np.eye(fp.p), atol=1e-8)
    assert np.all(np.diff(fp.all_eigenvalues) <= 1e-12)


@pytest.mark.parametrize("name", list(ESTIMATORS))
def test_rank_one(name):
    locs = sample_locations(40, "clustered", RngStream(3))
    xi = RngStream(4).normals(40)
    data = CurveSet(G, xi[:, None] * B.functions[1][None, :], locs)
    fp = ESTIMATORS[name](data)
    np.testing.assert_allclose(align(fp.components[0], B.functions[1]), B.functions[1], atol=1e-8)
    assert abs(fp.all_eigenvalues[1]) < 1e-10


def test_standard_orthogonal_design():
    c = np.array([1.0, -2.0, 0.5, 3.0])
    fp = standard_fpc(CurveSet(G, c[:, None] * B.functions[4][None, :]), basis=B, p=1)
    assert fp.eigenvalues[0] == pytest.approx(np.mean(c ** 2))


def test_standard_duplicated_data():
    vals = RngStream(5).normals((10, G.m))
    a = standard_fpc(CurveSet(G, vals), basis=B, p=4)
    b = standard_fpc(CurveSet(G, np.vstack([vals, vals])), basis=B, p=4)
    np.testing.assert_allclose(a.all_eigenvalues, b.all_eigenvalues, atol=1e-12)
    np.testing.assert_allclose(np.abs(a.coefficients), np.abs(b.coefficients), atol=1e-8)


def test_standard_matches_dual_gram_route():
    # oracle: eigenvalues of the N x N Gram matrix of the projected curves
    vals = RngStream(6).normals((12, G.m))
    c = project_many(vals, B)
    dual = np.sort(np.linalg.eigvalsh(c @ c.T / 12))[::-1]
    fp = standard_fpc(CurveSet(G, vals), basis=B, p=5)
    np.testing.assert_allclose(fp.all_eigenvalues[:12], dual, atol=1e-8)


def test_cm3_forced_flat_equals_standard(fpc_sample):
    a = estimate_fpc_cm3(fpc_sample, basis=B, p=5, force_flat=True)
    b = standard_fpc(fpc_sample, basis=B, p=5)
    np.testing.assert_allclose(a.all_eigenvalues, b.all_eigenvalues, atol=1e-10)
    # the sample has rank two; later components are not identified
    np.testing.assert_allclose(a.components[:2], b.components[:2], atol=1e-10)


def test_cm2_flat_equals_standard(fpc_sample):
    a = estimate_fpc_cm2(fpc_sample, basis=B, p=5, model=CovModel(FLAT, 1.0))
    b = standard_fpc(fpc_sample, basis=B, p=5)
    np.testing.assert_allclose(a.all_eigenvalues, b.all_eigenvalues, atol=1e-10)
    np.testing.assert_allclose(a.components[:2], b.components[:2], atol=1e-10)


def test_cm2_single_curve():
    x = 2.0 * B.functions[0] + B.functions[7]
    fp = estimate_fpc_cm2(CurveSet(G, x[None, :]), basis=B, p=1)
    norm2 = np.mean(x ** 2)
    assert fp.eigenvalues[0] == pytest.approx(norm2, rel=1e-10)
    np.testing.assert_allclose(align(fp.components[0], x), x / np.sqrt(norm2), atol=1e-8)


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 1000))
def test_permutation_invariance(seed, fpc_sample):
    perm = np.random.default_rng(seed).permutation(len(fpc_sample))
    shuffled = CurveSet(G, fpc_sample.values[perm], fpc_sample.locations.subset(perm))
    for est in (ESTIMATORS["CM2"], ESTIMATORS["CM3"]):
        a, b = est(fpc_sample), est(shuffled)
        np.testing.assert_allclose(a.all_eigenvalues, b.all_eigenvalues, rtol=1e-6, atol=1e-9)
        for j in range(2):
            np.testing.assert_allclose(align(b.components[j], a.components[j]), a.components[j], atol=1e-6)


def test_spatial_estimators_find_population_component(fpc_sample):
    v1 = fpc_study_components(G)[0]
    for name in ("CM2", "CM3", "standard"):
        fp = ESTIMATORS[name](fpc_sample)
        assert np.mean(fp.components[0] * v1) ** 2 > 0.8


# -- scores -----------------------------------------------------------------

def test_scores_examples(fpc_sample):
    fp = standard_fpc(fpc_sample, basis=B, p=3)
    mu = Curve(G, B.functions[0])
    data = CurveSet(G, np.vstack([mu.values, mu.values + 3.0 * fp.components[1]]))
    sf = scores(data, mu, fp)
    np.testing.assert_allclose(sf.scores, [[0, 0, 0], [0, 3, 0]], atol=1e-10)


def test_scores_grid_mismatch(fpc_sample):
    fp = standard_fpc(fpc_sample, basis=B, p=2)
    with pytest.raises(GridMismatch):
        scores(CurveSet(Grid(10), np.zeros((2, 10))), Curve(Grid(10), np.zeros(10)), fp)


def test_score_variances_match_eigenvalues():
    locs = sample_locations(218, "uniform", RngStream(8))
    data = gen_fpc_dgp(locs, RngStream(9))
    fp = standard_fpc(data, basis=B, p=2)
    sf = scores(data, Curve(G, np.zeros(G.m)), fp)
    np.testing.assert_allclose(np.mean(sf.scores ** 2, axis=0), fp.eigenvalues, rtol=0.15)
