import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from conftest import benchmark, benchmark_solution, generic_exponential, sweeping
from oracles import benchmark_stationary_cells
from wil.grids import DensityGrid1D, DensityGrid2D, l1_distance, marginal_status
from wil.presets import PresetParams, build_preset
from wil.stationary import (adjoint_of_identity, build_joint_stationary, discretize_transfer, drift_report,
                            power_iterate, solve_stationary, spread_uniform, to_state_coordinates)


# ---------------------------------------------------------------- transfer matrix


@settings(max_examples=8, deadline=None)
@given(st.sampled_from(["constant_boost", "gamma_q", "power_law", "threshold"]),
       st.floats(0.5, 2.0), st.floats(0.5, 2.0), st.integers(10, 60))
def test_rows_are_stochastic(kind, c, K, n):
    m = build_preset(PresetParams(kind=kind, c=c, K_boost=K, x_th=min(K, 1.0)))
    edges = np.linspace(K, K + 12.0, n + 1)
    T = discretize_transfer(m, edges)
    assert np.all(np.abs(T.row_sums() - 1.0) <= 1e-10)
    assert np.all(T.P >= 0)


def test_no_mass_below_boost_floor(bench):
    edges = np.linspace(0.25, 6.0, 24)
    T = discretize_transfer(bench, edges)
    below = edges[1:] <= 1.0
    assert below.any()
    assert np.all(T.P[:, :-1][:, below] == 0.0)


def test_rows_match_pushforward_quadrature(bench):
    edges = np.linspace(1.0, 5.0, 17)
    T = discretize_transfer(bench, edges)
    dx = edges[1] - edges[0]

    def landing(x, lo, hi):
        # P(G(x e^{-a}) in [lo, hi)) for a ~ Exp(1), by quadrature over the age
        f = lambda a: math.exp(-a) * (lo <= x * math.exp(-a) + 1.0 < hi)  # noqa: E731
        brk = [math.log(x / (v - 1.0)) for v in (lo, hi) if 1.0 < v < x + 1.0]
        val, _ = integrate.quad(f, 0.0, 60.0, points=brk or None, limit=200)
        return val

    for i in (0, 5, 15):
        for j in (0, 3, 8, 16):
            lo, hi = edges[j], (edges[j + 1] if j < 16 else np.inf)
            want, _ = integrate.quad(lambda x: landing(x, lo, hi), edges[i], edges[i + 1], limit=100)
            assert T.P[i, j] == pytest.approx(want / dx, abs=0.05 * dx)


def test_power_iteration_trivial_examples():
    h0 = np.array([0.2, 0.3, 0.5])
    r = power_iterate(np.eye(3), h0=h0)
    assert np.array_equal(r.h.mass if hasattr(r.h, "mass") else r.h, h0) and r.residual == 0.0
    r = power_iterate(np.array([[0.0, 1.0], [1.0, 0.0]]), h0=np.array([0.5, 0.5]))
    h = r.h.mass if hasattr(r.h, "mass") else r.h
    assert np.array_equal(h, [0.5, 0.5]) and r.residual == 0.0


def test_power_iteration_periodic_chain_still_converges():
    r = power_iterate(np.array([[0.0, 1.0], [1.0, 0.0]]), h0=np.array([0.9, 0.1]))
    h = r.h.mass if hasattr(r.h, "mass") else r.h
    assert r.converged and np.allclose(h, 0.5, atol=1e-9)


def test_benchmark_matches_dickman_oracle():
    sol = benchmark_solution(400)
    want = benchmark_stationary_cells(sol.h.edges)
    assert np.abs(sol.h.mass - want).sum() < 1e-4
    assert sol.power.interior_positive and sol.h.mass[1:-1].min() > 0


def test_refinement_is_first_order():
    m = benchmark()
    d = {}
    for n in (50, 100, 200):
        coarse = solve_stationary(m, n_cells=n, cap=13.0).h
        fine = solve_stationary(m, n_cells=2 * n, cap=13.0).h
        d[n] = l1_distance(coarse, fine.aggregate(2))
    C = 50 * d[50]
    assert all(v <= C / n for n, v in d.items())
    # each halving of the cell width at least halves the refinement distance
    assert d[100] <= 0.55 * d[50] and d[200] <= 0.55 * d[100]


def test_argmax_invariance_under_scaling_q():
    edges = np.linspace(1.0, 7.0, 25)
    base = discretize_transfer(generic_exponential(1.0), edges).P
    assert np.array_equal(discretize_transfer(generic_exponential(4.0), edges).P, base)
    assert np.allclose(discretize_transfer(generic_exponential(3.0), edges).P, base, rtol=0, atol=1e-13)
    closed = discretize_transfer(benchmark(), edges).P
    assert np.allclose(closed, base, atol=1e-9)


# ---------------------------------------------------------------- joint density and coordinates


def test_joint_age_profile_and_zero_slice(bench):
    sol = benchmark_solution(400)
    a_edges = np.linspace(0, 20, 81)
    f = build_joint_stationary(bench, sol.h, a_edges)
    assert f.total() == pytest.approx(1.0, abs=1e-12)
    ratio = f.mass[:, 0] / sol.h.mass
    assert np.allclose(ratio, ratio[0], rtol=1e-12)
    cell = np.exp(-a_edges[:-1]) - np.exp(-a_edges[1:])
    prof = f.mass / f.mass.sum(axis=1, keepdims=True)
    assert np.allclose(prof[sol.h.mass > 1e-12], cell / cell.sum(), rtol=1e-9)


def test_normalizer_is_fubini_sum():
    c, k, kappa = 1.0, 1.0, 0.05
    m = build_preset(PresetParams(kind="power_law", c=c, k=k, kappa=kappa))
    edges = np.linspace(1.0, 3.0, 21)
    h = DensityGrid1D(edges, np.full(20, 1 / 20))
    f = build_joint_stationary(m, h, np.linspace(0, 10, 11))

    def M(x):
        K = kappa * x ** -k / (c * k)
        return math.exp(K) * special.exp1(K) / (c * k)

    want = sum(h.mass[i] * integrate.quad(M, edges[i], edges[i + 1])[0] / (edges[i + 1] - edges[i]) for i in range(20))
    assert f.normalizer == pytest.approx(want, rel=1e-6)


def test_state_coordinates_preserve_rows(bench):
    sol = benchmark_solution(400)
    f = build_joint_stationary(bench, sol.h, np.linspace(0, 25, 51))
    g = to_state_coordinates(bench, f, np.linspace(0, sol.cap, 201))
    assert np.allclose(g.mass.sum(axis=0) + g.x_overflow[:-1], f.mass.sum(axis=0) + f.x_overflow[:-1], atol=1e-10)
    assert marginal_status(g).total() == pytest.approx(1.0, abs=1e-12)


def test_state_coordinates_thin_first_row_is_unchanged(bench):
    x_edges = np.linspace(1, 3, 5)
    a_edges = np.array([0.0, 1e-13, 1.0])
    mass = np.zeros((4, 2))
    mass[:, 0] = [0.1, 0.2, 0.3, 0.4]
    g = to_state_coordinates(bench, DensityGrid2D(x_edges, a_edges, mass), x_edges)
    assert np.allclose(g.mass[:, 0], mass[:, 0], atol=1e-10)


def test_state_coordinates_point_column_lands_at_one(bench):
    d = 1e-6
    x_edges = np.array([2 - d, 2 + d])
    a_edges = np.array([0.0, math.log(2) - d, math.log(2) + d])
    f = DensityGrid2D(x_edges, a_edges, np.array([[0.0, 1.0]]))
    target = np.linspace(0.55, 1.55, 11)
    g = to_state_coordinates(bench, f, target)
    k = np.searchsorted(target, 1.0, side="right") - 1
    assert g.mass[k, 1] == pytest.approx(1.0, abs=1e-10)


def test_spread_uniform_conserves_mass():
    lo = np.array([0.1, 0.5, 2.0, 3.9])
    hi = np.array([0.4, 0.5, 3.5, 5.0])
    m = np.array([0.25, 0.25, 0.25, 0.25])
    cells, below, above = spread_uniform(lo, hi, m, np.linspace(0, 4, 9))
    assert cells.sum() + below + above == pytest.approx(1.0, abs=1e-15)
    assert above == pytest.approx(0.25 * 1.0 / 1.1)


# ---------------------------------------------------------------- drift and sweeping


def test_benchmark_drift(bench):
    rep = drift_report(bench)
    assert rep.drift_verdict == "drift"
    assert rep.R is not None and math.isfinite(rep.R) and rep.global_margin > 0
    assert rep.sweep_verdict == "not-applicable"
    x = rep.probes
    assert np.allclose(rep.TV, x / 2 + 1, rtol=1e-10)
    assert np.all(rep.TV <= x + rep.L)


def test_adjoint_closed_form(bench):
    for x in (0.5, 1.0, 7.0):
        assert adjoint_of_identity(bench, x) == pytest.approx(x / 2 + 1, rel=1e-11)


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_sweeping_constant_is_two_over_e(c):
    rep = drift_report(sweeping(c), probes=np.linspace(0.5, 20, 40))
    assert rep.gamma == pytest.approx(1 / (2 * c))
    assert rep.L_sweep == pytest.approx(2 / math.e, abs=1e-9)
    assert rep.sweep_verdict == "sweeping"
    assert rep.drift_verdict == "not-applicable"


def test_normalized_survival_primitive_matches_exponential():
    from wil.crossings import NormalizedSurvival
    ns = NormalizedSurvival(generic_exponential(3.0))
    a = np.array([0.0, 0.3, 1.0, 2.5, 7.0, np.inf])
    assert np.allclose(ns(1.5, a), np.exp(-a), atol=1e-12)
    assert np.allclose(ns.psi(1.5, a), -np.expm1(-a), atol=1e-10)
    assert ns.mean(1.5) == pytest.approx(1.0, abs=1e-10)


def test_survival_primitive_of_closed_form():
    from wil.crossings import survival_primitive
    phi = lambda x, a: np.exp(-x * np.asarray(a))
    a = np.array([0.0, 0.5, 2.0, 4.0, np.inf])
    out = survival_primitive(phi, 2.0, a, 0.5)
    assert np.allclose(out[:-1], -np.expm1(-2.0 * a[:-1]) / 2.0, atol=1e-13)
    assert out[-1] == 0.5
