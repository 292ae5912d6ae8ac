import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spatfda.curvegrid import CurveSet, Grid
from spatfda.errors import DomainError, NonPositiveScale
from spatfda.latscale import ScaleModel, descale, eval_scale, fit_scale, scale, scaling_ratios
from spatfda.sphere import LocationSet

G = Grid(48)
FITTED = ScaleModel(0.5495, 0.4488, 4.2631)


def test_eval_examples():
    assert eval_scale(FITTED, 0.0) == pytest.approx(0.9983, abs=1e-12)
    assert eval_scale(FITTED, math.pi / 2) == pytest.approx(0.5495, abs=1e-12)
    assert eval_scale(FITTED, -0.4) == eval_scale(FITTED, 0.4)


def test_model_invariants():
    with pytest.raises(ValueError):
        ScaleModel(1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        ScaleModel(1.0, 0.0, 1.0)
    with pytest.raises(NonPositiveScale):
        eval_scale(ScaleModel(-0.5, 0.3, 2.0), 1.0)
    with pytest.raises(DomainError):
        eval_scale(FITTED, 2.0)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0.01, 2), b=st.floats(1e-3, 5), c=st.floats(0.1, 20),
       l1=st.floats(0, math.pi / 2), l2=st.floats(0, math.pi / 2))
def test_eval_nonincreasing(a, b, c, l1, l2):
    m = ScaleModel(a, b, c)
    lo, hi = sorted((l1, l2))
    assert eval_scale(m, hi) <= eval_scale(m, lo) + 1e-12


def test_fit_noiseless_recovery():
    truth = ScaleModel(0.55, 0.45, 4.26)
    lat = np.linspace(0.0, 1.3, 25)
    m = fit_scale(lat, eval_scale(truth, lat))
    assert m.converged
    assert (m.a, m.b, m.c) == pytest.approx((0.55, 0.45, 4.26), abs=1e-4)


def test_fit_preconditions():
    with pytest.raises(ValueError):
        fit_scale([0.0, 1.0], [1.0, 0.6])
    with pytest.raises(ValueError):
        fit_scale([0.5, 0.55, 0.6, 0.65], [1.0, 0.9, 0.8, 0.7])


def test_fit_constant_ratios_flagged():
    lat = np.linspace(0.0, 1.2, 10)
    m = fit_scale(lat, np.full(10, 0.8))
    assert not m.converged
    assert eval_scale(m, lat) == pytest.approx(np.full(10, 0.8), abs=1e-6)


def test_json_roundtrip():
    assert ScaleModel.from_json(FITTED.to_json()) == FITTED


def curves_at(lat_deg, seed=0):
    locs = LocationSet.from_degrees(lat_deg, np.linspace(-170, 170, len(lat_deg)))
    vals = 2.0 + np.random.default_rng(seed).random((len(lat_deg), G.m))
    return CurveSet(G, vals, locs)


def test_descale_identity_model():
    data = curves_at([0.0, 20.0, 45.0, -60.0])
    out = descale(data, ScaleModel(1.0, 1e-9, 1.0))
    np.testing.assert_allclose(out.values, data.values, atol=1e-8)


def test_scale_roundtrip():
    data = curves_at([0.0, 20.0, 45.0, -60.0, 80.0])
    np.testing.assert_allclose(descale(scale(data, FITTED), FITTED).values, data.values, rtol=1e-12)


def test_equatorial_station_unchanged():
    m = ScaleModel(0.4, 0.6, 3.0)
    data = curves_at([0.0, 40.0])
    out = descale(data, m)
    np.testing.assert_allclose(out.values[0], data.values[0], rtol=1e-14)
    assert not np.allclose(out.values[1], data.values[1])


def test_scaling_ratios_recover_model():
    lat_deg = np.array([0.0, 10.0, 25.0, 35.0, 50.0, 65.0])
    base = 3.0 + np.sin(2 * np.pi * G.nodes)
    g = eval_scale(FITTED, np.radians(lat_deg))
    locs = LocationSet.from_degrees(lat_deg, np.zeros(6) + np.arange(6))
    data = CurveSet(G, (g / g[0])[:, None] * base[None, :], locs)
    r = scaling_ratios(data)
    np.testing.assert_allclose(r, g / g[0], rtol=1e-12)
    m = fit_scale(locs.lat, r)
    np.testing.assert_allclose(eval_scale(m, locs.lat), g / g[0], atol=1e-5)


def test_scaling_ratios_guard():
    data = CurveSet(G, np.vstack([np.zeros(G.m), np.ones(G.m)]))
    with pytest.raises(DomainError):
        scaling_ratios(data)
