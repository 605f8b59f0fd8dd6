import math

import numpy as np
import pytest
from scipy import integrate

from kinsde.besov import rasterize_drift
from kinsde.drift import (DriftField, MollifierSpec, TamingParams,
                          builtin_drifts, cutoff_tame, drift_from_id,
                          mollify_tame, verify_taming_growth)
from kinsde.geometry import GridSpec, MixedExponent, mixed_norm


def const_drift(vec):
    vec = np.asarray(vec, dtype=float)

    def fn(t, x, v):
        shape = np.broadcast_shapes(np.shape(x), np.shape(v))
        return np.broadcast_to(vec, shape).copy()

    return DriftField(fn, MixedExponent(math.inf, math.inf),
                      sup_bound=float(np.linalg.norm(vec)), label="const")


def test_taming_params_validation():
    with pytest.raises(ValueError, match="kappa"):
        TamingParams("cutoff", kappa=0.6)
    with pytest.raises(ValueError, match="delta"):
        TamingParams("cutoff", delta=2.5)
    with pytest.raises(ValueError, match="zeta"):
        TamingParams("mollify", zeta=0.7)
    with pytest.raises(ValueError):
        TamingParams("clip")


def test_cutoff_clips_magnitude_preserves_direction():
    b = const_drift([10.0, 0.0])
    params = TamingParams("cutoff", n=16, kappa=0.25, c2=1.0)
    bn = cutoff_tame(b, params)
    out = bn(0.0, np.zeros((1, 2)), np.zeros((1, 2)))
    assert np.allclose(out, [[2.0, 0.0]])  # min(10, 16^0.25) = 2
    assert bn.sup_bound == 2.0


def test_cutoff_below_threshold_is_identity():
    b = const_drift([0.5])
    params = TamingParams("cutoff", n=4, kappa=0.25, c2=1.0)
    bn = cutoff_tame(b, params)
    out = bn(0.0, np.zeros((3, 1)), np.zeros((3, 1)))
    # scale factor is exactly 1, so values are bitwise unchanged
    assert np.array_equal(out, b(0.0, np.zeros((3, 1)), np.zeros((3, 1))))


def test_cutoff_zero_drift_stays_zero():
    bn = cutoff_tame(drift_from_id("zero"), TamingParams("cutoff", n=8))
    out = bn(0.0, np.zeros((4, 2)), np.zeros((4, 2)))
    assert np.array_equal(out, np.zeros((4, 2)))


def test_cutoff_is_pointwise_contraction():
    b = drift_from_id("powerlaw:A=1,beta=0.25")
    params = TamingParams("cutoff", n=16, kappa=0.25, c2=1.0)
    bn = cutoff_tame(b, params)
    level = 1.0 * 16**0.25
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.5, 1.5, size=(512, 1))
    v = rng.uniform(-1.5, 1.5, size=(512, 1))
    raw = b(0.0, x, v)
    tamed = bn(0.0, x, v)
    mag_raw = np.abs(raw[..., 0])
    mag_tam = np.abs(tamed[..., 0])
    assert np.all(mag_tam <= mag_raw + 0.0)
    assert np.all(mag_tam <= level + 0.0)
    # direction: tamed is a nonnegative multiple of raw
    assert np.all(tamed * raw >= 0.0)


def test_mollify_preserves_constants():
    b = const_drift([0.7])
    for n in (1, 4, 32):
        bn = mollify_tame(b, TamingParams("mollify", n=n, theta=0.5))
        out = bn(0.0, np.array([[0.3]]), np.array([[-0.2]]))
        assert abs(out[0, 0] - 0.7) < 1e-10


def test_mollify_linear_in_v_unchanged():
    # odd moments of the symmetric mollifier vanish, so v stays v
    def fn(t, x, v):
        return np.asarray(v, dtype=float).copy()

    b = DriftField(fn, MixedExponent(math.inf, math.inf), label="v")
    bn = mollify_tame(b, TamingParams("mollify", n=4, theta=0.5))
    pts_x = np.array([[0.1], [0.5]])
    pts_v = np.array([[0.9], [-1.3]])
    out = bn(0.0, pts_x, pts_v)
    assert np.allclose(out, pts_v, atol=1e-12)


def test_mollify_halves_jump():
    # b = 1_{|v|<=1}: at the jump point v=1 the symmetric mollifier leaves
    # exactly half the mass on each side, so b_n(0, 1) -> 1/2.
    def fn(t, x, v):
        v = np.asarray(v, dtype=float)
        out = np.zeros(np.broadcast_shapes(np.shape(x), v.shape))
        out[..., 0] = 1.0 * (np.abs(v[..., 0]) <= 1.0)
        return out

    b = DriftField(fn, MixedExponent(math.inf, math.inf), sup_bound=1.0)
    bn = mollify_tame(b, TamingParams("mollify", n=4, theta=0.5))
    val = bn(0.0, np.array([[0.0]]), np.array([[1.0]]))[0, 0]
    # brute-force fine-quadrature oracle for the mollified jump value
    c = integrate.quad(lambda s: math.exp(-1.0 / (1.0 - s * s)), -1, 1,
                       points=[0.0])[0]
    oracle = integrate.quad(
        lambda s: math.exp(-1.0 / (1.0 - s * s)) / c,
        0.0, 1.0, points=[0.0])[0]
    assert abs(oracle - 0.5) < 1e-12
    assert abs(val - 0.5) < 2e-2


def test_mollifier_spec_validation():
    with pytest.raises(ValueError):
        MollifierSpec(order=1)
    with pytest.raises(ValueError):
        MollifierSpec(kind="box")
    # gaussian alternative also preserves constants
    b = const_drift([1.5])
    bn = mollify_tame(b, TamingParams("mollify", n=2, theta=0.5),
                      MollifierSpec(kind="gauss", order=32))
    out = bn(0.0, np.array([[0.0]]), np.array([[0.0]]))
    assert abs(out[0, 0] - 1.5) < 1e-10


def test_catalog_contents_and_values():
    cat = builtin_drifts()
    assert {"zero", "ou", "signv", "powerlaw"} <= set(cat)

    sign = drift_from_id("signv:A=1.0")
    out = sign(0.0, np.zeros((1, 2)), np.array([[0.5, 0.0]]))
    assert np.allclose(out, [[1.0, 0.0]])

    ou = drift_from_id("ou:gamma=1.0")
    out = ou(0.0, np.zeros((1, 1)), np.array([[3.0]]))
    assert np.allclose(out, [[-3.0]])

    with pytest.raises(KeyError):
        drift_from_id("nonexistent")
    with pytest.raises(ValueError):
        drift_from_id("ou:gamma")


def test_powerlaw_mixed_norm_metadata():
    # ||b||_{(inf,2)} = (int_{-1}^1 |v|^(-1/2) dv)^(1/2) = 2 for beta=1/4
    b = drift_from_id("powerlaw:A=1,beta=0.25")
    assert b.exponents.p_x == math.inf and b.exponents.p_v == 2.0
    assert math.isclose(b.mixed_norm_bound, 2.0, rel_tol=1e-12)
    # grid oracle on a refined grid reproduces the analytic norm
    spec = GridSpec(1, 1.25, 1.25, 2048, 2048)
    f = rasterize_drift(b, spec)
    val = mixed_norm(f, MixedExponent(math.inf, 2))
    assert math.isclose(val, 2.0, rel_tol=1e-2)


def test_verify_taming_growth_cutoff_recovers_kappa():
    params = TamingParams("cutoff", kappa=0.25, c2=1.0, zeta=0.25,
                          kappa_b=10.0)
    b = drift_from_id("powerlaw:A=1,beta=0.25")
    family = [(n, cutoff_tame(b, params.with_n(n)))
              for n in (4, 16, 64, 256, 1024)]
    report = verify_taming_growth(family, params, sample_budget=512, seed=3)
    assert abs(report.growth_exponent - 0.25) < 0.05
    # zeta = kappa makes the scaled sups flat and bounded
    assert report.passed


def test_verify_taming_growth_bounded_drift_flat():
    params = TamingParams("cutoff", kappa=0.25, c2=1.0, zeta=0.0,
                          kappa_b=2.0)
    b = drift_from_id("signv:A=1.0")
    family = [(n, cutoff_tame(b, params.with_n(n)))
              for n in (4, 16, 64, 256)]
    report = verify_taming_growth(family, params, sample_budget=512, seed=4)
    assert abs(report.growth_exponent) < 0.05
    assert report.passed


def test_verify_taming_growth_zero_drift():
    params = TamingParams("cutoff", kappa=0.25, kappa_b=1e-9)
    b = drift_from_id("zero")
    family = [(n, cutoff_tame(b, params.with_n(n))) for n in (2, 4, 8)]
    report = verify_taming_growth(family, params, sample_budget=128)
    assert all(s == 0.0 for _, s in report.per_n_sup)
    assert report.passed
    with pytest.raises(ValueError):
        verify_taming_growth([], params)


def test_mollify_norm_monotone_young():
    # ||b_n||_p <= ||b||_p (1 + quadrature slack), Young's inequality
    b = drift_from_id("powerlaw:A=1,beta=0")
    spec = GridSpec(1, 2.0, 2.0, 256, 256)
    p = MixedExponent(2, 2)
    base = mixed_norm(rasterize_drift(b, spec), p)
    for n in (2, 8):
        bn = mollify_tame(b, TamingParams("mollify", n=n, theta=0.5))
        val = mixed_norm(rasterize_drift(bn, spec), p)
        assert val <= base * (1.0 + 1e-6)


def test_mollify_two_dimensional_constant():
    # tensor quadrature over all four mollifier axes at d = 2
    b = const_drift([0.4, -0.9])
    bn = mollify_tame(b, TamingParams("mollify", n=4, theta=0.5),
                      MollifierSpec(order=4))
    out = bn(0.0, np.zeros((2, 2)), np.ones((2, 2)))
    assert np.allclose(out, [[0.4, -0.9], [0.4, -0.9]], atol=1e-10)


def test_mollify_sup_bounded_by_input_sup():
    b = drift_from_id("signv:A=2.0")
    bn = mollify_tame(b, TamingParams("mollify", n=4, theta=0.5))
    rng = np.random.default_rng(8)
    x = rng.uniform(-2, 2, size=(256, 1))
    v = rng.uniform(-2, 2, size=(256, 1))
    vals = bn(0.0, x, v)
    assert np.abs(vals).max() <= 2.0 + 1e-10
