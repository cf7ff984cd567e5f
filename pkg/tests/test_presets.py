import math

import numpy as np
import pytest
from scipy import integrate

from oracles import crossing_time, e1_quadrature
from wil import model as M
from wil.presets import (KINDS, BumpProfile, PresetParams, TabulatedDensity, TabulatedProfile, build_preset,
                         density_mode, e1_argument, mean_reinfection_time, mean_time_log_approx,
                         peaked_power_law_params, seasonal_example_params, threshold_time)
from wil.rng import CounterStream


def power(K, c=1.0, k=1.0):
    """Power-law preset whose E1 argument at x_b = 1 equals K."""
    return PresetParams(kind="power_law", c=c, k=k, kappa=K * c * k)


def q_integral(model, x_b, fn=lambda a: 1.0):
    """int q(x_b, a) fn(a) da straight from q, by adaptive quadrature."""
    d = M.support_start(model, x_b)
    val, _ = integrate.quad(lambda a: float(model.q(x_b, a)) * fn(a), d, np.inf, epsabs=0.0, epsrel=1e-12, limit=500)
    return val


def test_power_law_mode():
    params, x_b = peaked_power_law_params()
    m = build_preset(params)
    a_star, q_star = density_mode(m, x_b)
    assert a_star == pytest.approx(math.log(100.0), abs=1e-6)
    assert q_star == pytest.approx(math.exp(-0.99), abs=1e-6)


def test_seasonal_example_parameters_are_consistent():
    params, x_b = seasonal_example_params()
    assert params.kind == "seasonal"
    m = build_preset(params)
    assert q_integral(m, x_b) == pytest.approx(1.0, abs=1e-8)
    n_bar, _ = integrate.quad(lambda a: float(params.n_profile(a)), 0.0, 10.0, limit=400)
    assert x_b ** params.k * n_bar / 10.0 == pytest.approx(125 * params.kappa, rel=1e-6)


def test_seasonal_example_has_decaying_peaks_at_each_season():
    params, x_b = seasonal_example_params()
    m = build_preset(params)
    a = np.linspace(0.0, 8.0, 8001)
    q = np.asarray(m.q(x_b, a), dtype=float)
    i = np.nonzero((q[1:-1] > q[:-2]) & (q[1:-1] >= q[2:]))[0] + 1
    assert len(i) >= 5
    assert np.allclose(a[i[:5]], np.arange(1, 6), atol=0.05)
    assert np.all(np.diff(q[i[:5]]) < 0)


def test_threshold_density_is_shifted_residual():
    m = build_preset(PresetParams(kind="threshold", c=1.0, x_th=1.0, m_theta=1.0))
    x_b = math.e
    a = np.linspace(0.0, 6.0, 25)
    assert np.allclose(m.q(x_b, a), np.where(a >= 1.0, np.exp(-(a - 1.0)), 0.0), rtol=1e-12, atol=1e-300)


def test_threshold_with_tabulated_residual():
    h = TabulatedDensity((0.0, 0.5, 2.0), (1.2, 0.4 / 1.5))
    m = build_preset(PresetParams(kind="threshold", c=1.0, x_th=1.0, residual_density_h=h))
    x_b = math.e
    assert float(m.q(x_b, 1.2)) == pytest.approx(1.2)
    assert float(m.q(x_b, 2.0)) == pytest.approx(0.4 / 1.5)
    assert q_integral(m, x_b) == pytest.approx(1.0, abs=1e-8)
    assert M.mean_time(m, x_b) == pytest.approx(1.0 + h.mean(), rel=1e-9)


def test_threshold_time_examples():
    p = PresetParams(kind="threshold", c=1.0, x_th=1.0)
    assert threshold_time(p, 1.0) == 0.0
    assert threshold_time(PresetParams(kind="threshold", c=2.0, x_th=1.0), math.e ** 2) == pytest.approx(1.0)
    F = lambda x: -x / (1.0 + x)  # noqa: E731
    assert threshold_time(p, 2.0, F=F) == pytest.approx(crossing_time(F, 2.0, 1.0), abs=1e-8)
    with pytest.raises(ValueError):
        threshold_time(p, 0.5)


def test_exponential_preset_closed_forms():
    m = build_preset(PresetParams(kind="exp_decay_exp_q", rate=2.5))
    a = np.linspace(0, 4, 9)
    assert np.allclose(M.hazard_from_density(m, 3.0)(a), 2.5)
    assert np.allclose(M.survival_array(m, 3.0, a), np.exp(-2.5 * a))
    assert mean_reinfection_time(m, 3.0) == pytest.approx(1 / 2.5)
    assert mean_reinfection_time(m, 3.0, method="quadrature") == pytest.approx(1 / 2.5, rel=1e-10)


def test_threshold_mean_time():
    m = build_preset(PresetParams(kind="threshold", c=1.0, x_th=1.0, m_theta=2.0))
    assert mean_reinfection_time(m, math.e) == pytest.approx(3.0, rel=1e-12)
    assert mean_reinfection_time(m, math.e, method="quadrature") == pytest.approx(3.0, rel=1e-9)


def test_power_law_mean_example():
    p = power(0.01)
    m = build_preset(p)
    oracle = q_integral(m, 1.0, lambda a: a)
    assert oracle == pytest.approx(math.exp(0.01) * e1_quadrature(0.01), rel=1e-9)
    assert oracle == pytest.approx(4.08, abs=0.01)
    assert mean_reinfection_time(m, 1.0) == pytest.approx(oracle, rel=1e-9)
    assert mean_reinfection_time(m, 1.0) == pytest.approx(mean_time_log_approx(p, 1.0), rel=0.05)


@pytest.mark.parametrize("K", [1e-3, 1e-2, 0.1, 1.0])
@pytest.mark.parametrize("ck", [(1.0, 1.0), (0.5, 2.0), (2.0, 0.75)])
def test_power_law_normalization_and_mean(K, ck):
    c, k = ck
    p = power(K, c, k)
    m = build_preset(p)
    x_b = 1.0
    assert e1_argument(p, x_b) == pytest.approx(K)
    assert q_integral(m, x_b) == pytest.approx(1.0, abs=1e-8)
    closed = math.exp(K) * e1_quadrature(K) / (c * k)
    assert q_integral(m, x_b, lambda a: a) == pytest.approx(closed, rel=1e-8)
    assert mean_reinfection_time(m, x_b, method="closed") == pytest.approx(closed, rel=1e-8)


@pytest.mark.parametrize("K", [1e-3, 1e-4, 1e-6])
def test_power_law_log_approximation(K):
    p = power(K)
    m = build_preset(p)
    assert mean_time_log_approx(p, 1.0) == pytest.approx(mean_reinfection_time(m, 1.0), rel=0.05)


def test_power_law_hazard_identity():
    c, k, kappa = 0.8, 1.3, 0.02
    m = build_preset(PresetParams(kind="power_law", c=c, k=k, kappa=kappa))
    h = 1e-5
    for x_b in (0.7, 1.0, 2.5):
        for a in np.linspace(0.5, 6.0, 8):
            lp = lambda s: math.log(float(M.survival_array(m, x_b, s)))  # noqa: E731
            deriv = -(lp(a + h) - lp(a - h)) / (2 * h)
            assert deriv == pytest.approx(kappa * x_b ** -k * math.exp(c * k * a), rel=1e-8)


@pytest.mark.parametrize("profile", [BumpProfile(baseline=0.7, heights=()), TabulatedProfile((0.0, 1.0), (0.7,))])
def test_seasonal_constant_profile_reduces_to_power_law(profile):
    base = dict(c=0.9, k=1.2, kappa=0.02)
    s = build_preset(PresetParams(kind="seasonal", n_profile=profile, **base))
    pw = build_preset(PresetParams(kind="power_law", c=0.9, k=1.2, kappa=0.02 * 0.7))
    a = np.linspace(0, 8, 40)
    for x_b in (0.5, 1.0, 3.0):
        assert np.max(np.abs(s.q(x_b, a) - pw.q(x_b, a))) < 1e-12
        assert np.max(np.abs(M.survival_array(s, x_b, a) - M.survival_array(pw, x_b, a))) < 1e-12


def test_bump_weighted_integral_matches_quadrature():
    prof = BumpProfile(0.05, (1.0, 0.35, 0.1225), 1.0, 0.08)
    beta = 0.9
    for a in (0.3, 1.0, 2.7, 5.0):
        val, _ = integrate.quad(lambda r: math.exp(beta * r) * float(prof(r)), 0.0, a, points=[1, 2, 3], limit=400,
                                epsrel=1e-13)
        assert float(prof.weighted_integral(a, beta)) == pytest.approx(val, rel=1e-11)


def test_gamma_preset_sampled_mode_and_mean():
    shape, scale = 3.0, 0.5
    m = build_preset(PresetParams(kind="gamma_q", gamma_shape=shape, gamma_scale=scale))
    n = 1_000_000
    s = M.inverse_survival(m, 2.0, CounterStream(2024).random(n))
    se = math.sqrt(shape) * scale / math.sqrt(n)
    assert abs(s.mean() - shape * scale) < 4 * se
    counts, edges = np.histogram(s, bins=np.arange(0.0, 4.0, 0.01))
    smooth = np.convolve(counts, np.ones(21) / 21, mode="same")
    mode = 0.5 * (edges[np.argmax(smooth)] + edges[np.argmax(smooth) + 1])
    assert mode == pytest.approx((shape - 1) * scale, abs=0.05)


@pytest.mark.parametrize("kind", KINDS)
def test_every_preset_passes_core_assumptions(kind):
    m = build_preset(PresetParams(kind=kind))
    r = M.validate_assumptions(m, np.linspace(1.0, 6.0, 6))
    assert r.passed(["A1", "A2", "A3", "A4", "A5", "B1", "B2"]), r.to_text()


def test_constant_boost_c2_and_exp_decay_c1():
    cb = M.validate_assumptions(build_preset(PresetParams(kind="constant_boost", K_boost=1.5)), np.linspace(1.5, 6, 6))
    assert cb.status("C2") == "pass" and cb.L_C2 == pytest.approx(1.5)
    ed = M.validate_assumptions(build_preset(PresetParams(kind="exp_decay_exp_q")), np.linspace(1.0, 6, 6))
    assert ed.status("C1") == "pass"


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        build_preset(PresetParams(kind="nope"))
    with pytest.raises(ValueError):
        build_preset(PresetParams(kind="power_law", kappa=-1.0))
    with pytest.raises(ValueError):
        build_preset(PresetParams(kind="threshold", x_th=5.0, K_boost=1.0))
