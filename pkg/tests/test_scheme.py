import math

import numpy as np
import pytest
from scipy import integrate

from kinsde.drift import DriftField, TamingParams, cutoff_tame, drift_from_id
from kinsde.geometry import MixedExponent, PhaseState
from kinsde.noise import RngStream, StepNoise, sample_step, step_covariance
from kinsde.scheme import (SchemeConfig, exact_kinetic_ou,
                           exact_kinetic_ou_endpoints, kinetic_ou_moments,
                           simulate_standard_em, simulate_tamed_em,
                           standard_em_endpoints, tamed_em_endpoints,
                           tamed_em_step)


def const_drift(c):
    c = np.asarray(c, dtype=float)

    def fn(t, x, v):
        return np.broadcast_to(c, np.broadcast_shapes(np.shape(x),
                                                      np.shape(v))).copy()

    return DriftField(fn, MixedExponent(math.inf, math.inf),
                      sup_bound=float(np.linalg.norm(c)))


def zero_noise(h, d):
    return StepNoise(np.zeros(d), np.zeros(d), h)


def test_step_free_flow_plus_noise():
    z = PhaseState(np.array([0.2]), np.array([-0.4]))
    xi = sample_step(RngStream(0), 0.25, 1)
    cfg = SchemeConfig(n=4)
    out = tamed_em_step(z, 0, 0.25, drift_from_id("zero"), xi, cfg)
    assert np.allclose(out.x, z.x + 0.25 * z.v + xi.integral_part,
                       rtol=0, atol=0)
    assert np.allclose(out.v, z.v + xi.increment_part, rtol=0, atol=0)


def test_step_constant_drift_frozen_vs_gauss():
    # int_0^h (h - r) c dr = h^2 c / 2 analytically for constant drift
    z = PhaseState(np.array([0.0]), np.array([0.0]))
    h = 0.5
    c = 1.3
    xi = zero_noise(h, 1)
    frozen = tamed_em_step(z, 0, h, const_drift([c]), xi,
                           SchemeConfig(n=2, inner_quadrature="frozen"))
    gauss = tamed_em_step(z, 0, h, const_drift([c]), xi,
                          SchemeConfig(n=2, gauss_order=8))
    assert math.isclose(frozen.x[0], h * h * c / 2.0, rel_tol=1e-14)
    assert math.isclose(frozen.v[0], h * c, rel_tol=1e-14)
    assert math.isclose(gauss.x[0], frozen.x[0], rel_tol=1e-14)
    assert math.isclose(gauss.v[0], frozen.v[0], rel_tol=1e-14)


def test_step_velocity_drift_inner_integral():
    # b(t,x,v) = v with z = (0, 1), h = 0.5, no noise:
    # x-part = h v + int_0^h (h - r) dr = 0.5 + 0.125, v-part = 1 + h
    def fn(t, x, v):
        return np.asarray(v, dtype=float).copy()

    b = DriftField(fn, MixedExponent(math.inf, math.inf), sup_bound=None)
    z = PhaseState(np.array([0.0]), np.array([1.0]))
    out = tamed_em_step(z, 0, 0.5, b, zero_noise(0.5, 1),
                        SchemeConfig(n=2, gauss_order=8))
    assert math.isclose(out.x[0], 0.625, rel_tol=1e-14)
    assert math.isclose(out.v[0], 1.5, rel_tol=1e-14)


def test_step_rejects_mismatched_noise_scale():
    z = PhaseState(np.zeros(1), np.zeros(1))
    xi = zero_noise(0.25, 1)
    with pytest.raises(ValueError, match="noise"):
        tamed_em_step(z, 0, 0.5, drift_from_id("zero"), xi, SchemeConfig(n=2))


def test_single_step_consistency_with_simulate():
    z0 = PhaseState(np.array([0.3]), np.array([0.9]))
    taming = TamingParams("cutoff", kappa=0.25)
    cfg = SchemeConfig(n=1, T=1.0)
    path = simulate_tamed_em(z0, cfg, drift_from_id("signv:A=1.0"),
                             taming, RngStream(11))
    xi = sample_step(RngStream(11), 1.0, 1)
    b_n = cutoff_tame(drift_from_id("signv:A=1.0"), taming.with_n(1))
    direct = tamed_em_step(z0, 0, 1.0, b_n, xi, cfg)
    assert np.array_equal(path.endpoint.x, direct.x)
    assert np.array_equal(path.endpoint.v, direct.v)


@pytest.mark.parametrize("n", [1, 7, 64])
def test_driftless_endpoint_moments(n):
    # with b = 0 the scheme is exact: mean Gamma_T z0, covariance C(T)
    z0 = PhaseState(np.array([0.5]), np.array([-0.25]))
    npaths = 100_000
    x, v = tamed_em_endpoints(z0, SchemeConfig(n=n), drift_from_id("zero"),
                              RngStream(21, n), npaths)
    cov = step_covariance(1.0)
    mean_x = z0.x[0] + z0.v[0]
    se = math.sqrt(cov[0, 0] / npaths)
    assert abs(x.mean() - mean_x) < 5 * se
    assert abs(v.mean() - z0.v[0]) < 5 * math.sqrt(cov[1, 1] / npaths)
    assert abs(x.var() - cov[0, 0]) < 5 * math.sqrt(2 * cov[0, 0]**2 / npaths)
    assert abs(v.var() - cov[1, 1]) < 5 * math.sqrt(2 * cov[1, 1]**2 / npaths)
    xv = ((x - x.mean()) * (v - v.mean())).mean()
    se_xv = math.sqrt((cov[0, 0] * cov[1, 1] + cov[0, 1]**2) / npaths)
    assert abs(xv - cov[0, 1]) < 5 * se_xv


def test_partial_final_step_offgrid_horizon():
    # T = 0.5 with n = 3 needs one full step and one partial step; the
    # driftless law at T must still match step_covariance(0.5).
    z0 = PhaseState(np.zeros(1), np.zeros(1))
    npaths = 100_000
    cfg = SchemeConfig(n=3, T=0.5)
    assert [round(s, 12) for s in cfg.step_sizes()] == [
        round(1 / 3, 12), round(0.5 - 1 / 3, 12)]
    x, v = tamed_em_endpoints(z0, cfg, drift_from_id("zero"),
                              RngStream(31), npaths)
    cov = step_covariance(0.5)
    assert abs(x.var() - cov[0, 0]) < 5 * math.sqrt(2 * cov[0, 0]**2 / npaths)
    assert abs(v.var() - cov[1, 1]) < 5 * math.sqrt(2 * cov[1, 1]**2 / npaths)


def test_ou_moment_formulas_against_quadrature():
    # Ito isometry integrals evaluated by numerical quadrature
    gamma, t = 1.0, 1.0
    mom = kinetic_ou_moments(t, gamma)
    var_v, _ = integrate.quad(lambda s: math.exp(-2 * gamma * (t - s)), 0, t)
    var_x, _ = integrate.quad(
        lambda u: ((1 - math.exp(-gamma * (t - u))) / gamma) ** 2, 0, t)
    cov_xv, _ = integrate.quad(
        lambda u: math.exp(-gamma * (t - u))
        * (1 - math.exp(-gamma * (t - u))) / gamma, 0, t)
    assert math.isclose(mom.cov[1, 1], var_v, rel_tol=1e-10)
    assert math.isclose(mom.cov[0, 0], var_x, rel_tol=1e-10)
    assert math.isclose(mom.cov[0, 1], cov_xv, rel_tol=1e-10)
    assert math.isclose(mom.cov[1, 1], (1 - math.exp(-2.0)) / 2.0,
                        rel_tol=1e-12)
    # deterministic mean integral: E X_t = x0 + v0 (1 - e^{-gamma t})/gamma
    drift_int, _ = integrate.quad(lambda s: math.exp(-gamma * s), 0, t)
    assert math.isclose(mom.drift_integral, drift_int, rel_tol=1e-10)


def test_ou_gamma_zero_reduces_to_free():
    mom = kinetic_ou_moments(0.7, 0.0)
    assert np.allclose(mom.cov, step_covariance(0.7), rtol=0, atol=0)
    assert mom.decay == 1.0 and mom.drift_integral == 0.7


def test_exact_ou_sampler_moments():
    z0 = PhaseState(np.array([0.4]), np.array([1.2]))
    npaths = 200_000
    x, v = exact_kinetic_ou_endpoints(z0, 1.0, 1.0, RngStream(5), npaths)
    mom = kinetic_ou_moments(1.0, 1.0)
    mx, mv = mom.mean(z0)
    assert abs(x.mean() - mx[0]) < 5 * math.sqrt(mom.cov[0, 0] / npaths)
    assert abs(v.mean() - mv[0]) < 5 * math.sqrt(mom.cov[1, 1] / npaths)
    assert abs(v.var() - mom.cov[1, 1]) < 5 * math.sqrt(
        2 * mom.cov[1, 1]**2 / npaths)
    with pytest.raises(ValueError):
        exact_kinetic_ou(z0, 1.0, -0.5, RngStream(0))


def test_tamed_em_converges_to_exact_ou():
    # endpoint mean/variance of the scheme at n=1024 match the exact OU law
    z0 = PhaseState(np.array([0.0]), np.array([1.0]))
    npaths = 100_000
    x, v = tamed_em_endpoints(z0, SchemeConfig(n=1024),
                              drift_from_id("ou:gamma=1.0"),
                              RngStream(77), npaths)
    mom = kinetic_ou_moments(1.0, 1.0)
    mx, mv = mom.mean(z0)
    # 5 standard errors plus the O(h) discretization bias at n = 1024
    bias = 5.0 / 1024
    assert abs(x.mean() - mx[0]) < 5 * math.sqrt(mom.cov[0, 0] / npaths) + bias
    assert abs(v.mean() - mv[0]) < 5 * math.sqrt(mom.cov[1, 1] / npaths) + bias
    assert abs(v.var() - mom.cov[1, 1]) < 5 * math.sqrt(
        2 * mom.cov[1, 1]**2 / npaths) + bias


def test_standard_em_requires_bounded_drift():
    z0 = PhaseState(np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        simulate_standard_em(z0, SchemeConfig(n=4),
                             drift_from_id("ou:gamma=1.0"), RngStream(0))


def test_standard_em_driftless_and_constant():
    z0 = PhaseState(np.zeros(1), np.zeros(1))
    npaths = 100_000
    x, v = standard_em_endpoints(z0, SchemeConfig(n=16),
                                 drift_from_id("zero"), RngStream(13), npaths)
    assert abs(v.var() - 1.0) < 5 * math.sqrt(2.0 / npaths)
    c = 0.8
    x, v = standard_em_endpoints(z0, SchemeConfig(n=16), const_drift([c]),
                                 RngStream(14), npaths)
    assert abs(v.mean() - c) < 5 * math.sqrt(1.0 / npaths)


def test_standard_em_ou_mean_error_first_order():
    # For b = -v the mean of V under standard EM obeys the deterministic
    # recursion (1 - h)^n v0; its gap to e^{-1} v0 decays at first order.
    z0 = PhaseState(np.zeros(1), np.array([1.0]))
    bounded_ou = DriftField(lambda t, x, v: -np.asarray(v, dtype=float),
                            MixedExponent(math.inf, math.inf), sup_bound=50.0)
    npaths = 50_000
    errors = []
    ns = [16, 64, 256]
    for i, n in enumerate(ns):
        x, v = standard_em_endpoints(z0, SchemeConfig(n=n), bounded_ou,
                                     RngStream(15, i), npaths)
        recursion_mean = (1.0 - 1.0 / n) ** n
        se = math.sqrt(v.var() / npaths)
        assert abs(v.mean() - recursion_mean) < 5 * se
        errors.append(abs(recursion_mean - math.exp(-1.0)))
    slope = np.polyfit(np.log(ns), np.log(errors), 1)[0]
    assert slope <= -0.8


def test_cutoff_noop_velocity_paths_bitwise():
    # sup |b| <= C2 n^kappa keeps the cutoff inert; for a velocity-only
    # drift in frozen mode the V-paths of the tamed scheme agree bitwise
    # with the raw-drift scheme under identical noise.
    z0 = PhaseState(np.zeros(1), np.array([0.2]))
    b = drift_from_id("signv:A=1.0")  # sup = 1 <= 1 * n^kappa
    taming = TamingParams("cutoff", kappa=0.25, c2=1.0)
    cfg = SchemeConfig(n=8, inner_quadrature="frozen", record_path=True)
    tamed = simulate_tamed_em(z0, cfg, b, taming, RngStream(91))
    raw = simulate_tamed_em(z0, cfg, b,
                            TamingParams("cutoff", kappa=0.49, c2=100.0),
                            RngStream(91))
    for a, bb in zip(tamed.states, raw.states):
        assert np.array_equal(a.v, bb.v)
        assert np.array_equal(a.x, bb.x)
    # and the V-update of the standard scheme coincides for v-only drifts
    std = simulate_standard_em(z0, cfg, b, RngStream(91))
    for a, s in zip(tamed.states, std.states):
        assert np.array_equal(a.v, s.v)


def test_constant_drift_position_exact_vs_standard_em():
    # With b = c the inner (h - r) weighting accumulates the position
    # drift exactly: x_T = x0 + v0 T + c T^2/2 for every n (noise off).
    # Standard EM misses the in-step velocity ramp and lands c h T / 2 low.
    c = 0.8
    b = const_drift([c])
    z0 = PhaseState(np.zeros(1), np.zeros(1))
    for n in (1, 3, 8):
        cfg = SchemeConfig(n=n)
        z = z0
        for k in range(n):
            z = tamed_em_step(z, k, 1.0 / n, b, zero_noise(1.0 / n, 1), cfg)
        assert math.isclose(z.x[0], c / 2.0, rel_tol=1e-13), n
        assert math.isclose(z.v[0], c, rel_tol=1e-13)
        # standard recursion: x gets sum h v_k = c/2 - c h / 2
        xs, vs = np.zeros(1), np.zeros(1)
        for k in range(n):
            xs = xs + vs / n
            vs = vs + c / n
        assert math.isclose(xs[0], c / 2.0 - c / (2.0 * n), rel_tol=1e-12)


def test_simulate_with_mollified_drift():
    # the scheme evaluates the mollified field at scattered path points
    z0 = PhaseState(np.zeros(1), np.array([0.5]))
    taming = TamingParams("mollify", theta=0.5)
    path = simulate_tamed_em(z0, SchemeConfig(n=4),
                             drift_from_id("signv:A=1.0"), taming,
                             RngStream(66))
    assert np.isfinite(path.endpoint.x).all()
    assert np.isfinite(path.endpoint.v).all()
    # same stream, raw drift: the endpoints differ only through the drift
    # term, bounded by steps * h * (sup|b_n| + sup|b|) = 4 * 0.25 * 2
    x, v = tamed_em_endpoints(z0, SchemeConfig(n=4),
                              drift_from_id("signv:A=1.0"), RngStream(66),
                              npaths=1)
    assert abs(path.endpoint.v[0] - v[0, 0]) <= 2.0


def test_driftless_two_dimensional_moments():
    # dimensions evolve independently; check both blocks at d = 2
    z0 = PhaseState(np.array([0.1, -0.2]), np.array([0.3, 0.4]))
    npaths = 50_000
    x, v = tamed_em_endpoints(z0, SchemeConfig(n=4), drift_from_id("zero"),
                              RngStream(55), npaths)
    cov = step_covariance(1.0)
    for dim in range(2):
        mean_x = z0.x[dim] + z0.v[dim]
        assert abs(x[:, dim].mean() - mean_x) < 5 * math.sqrt(
            cov[0, 0] / npaths)
        assert abs(v[:, dim].var() - cov[1, 1]) < 5 * math.sqrt(
            2 * cov[1, 1]**2 / npaths)
    # cross-dimension independence of the endpoints
    assert abs(np.corrcoef(v[:, 0], v[:, 1])[0, 1]) < 5 / math.sqrt(npaths)


def test_scheme_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(n=0)
    with pytest.raises(ValueError):
        SchemeConfig(n=4, T=1.5)
    with pytest.raises(ValueError):
        SchemeConfig(n=4, inner_quadrature="midpoint")


def test_record_path_times():
    z0 = PhaseState(np.zeros(1), np.zeros(1))
    cfg = SchemeConfig(n=4, record_path=True)
    path = simulate_tamed_em(z0, cfg, drift_from_id("zero"),
                             TamingParams("cutoff"), RngStream(3))
    assert np.allclose(path.times, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert len(path.states) == 5
    assert path.endpoint is path.states[-1]
