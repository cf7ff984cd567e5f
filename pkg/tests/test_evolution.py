import copy
import math

import numpy as np
import pytest
from scipy import sparse

from wil.evolution import (EvolutionError, EvolutionState, coarsen, convergence_check, evolve_until, fold,
                           grid_error_bound, on_grid, point_start, step_evolve)
from wil.grids import DensityGrid2D, l1_distance
from wil.simulator import simulate_ensemble
from wil.stationary import build_joint_stationary, solve_stationary


@pytest.fixture(scope="module")
def bound(evolution_setup):
    m, sol, op, fs, f = evolution_setup
    fine = solve_stationary(m, n_cells=800, cap=sol.cap)
    f2 = build_joint_stationary(m, fine.h, np.linspace(0.0, op.a_edges[-1], 801))
    return grid_error_bound(f, f2)


def test_exponential_survival_factor(evolution_setup):
    _, _, op, _, _ = evolution_setup
    assert np.allclose(op.survive, math.exp(-op.dt), rtol=1e-12)


def test_switched_off_jumps_give_pure_shift(evolution_setup):
    _, _, op, _, _ = evolution_setup
    off = copy.copy(op)
    off.survive = np.ones_like(op.survive)
    zero = sparse.csr_matrix(op.jumpT.shape)
    off.jumpT = zero
    off.rejumpT = sparse.csr_matrix(op.rejumpT.shape)
    U = np.zeros((op.nx, op.na))
    U[3, 0], U[10, 5], U[50, 100] = 0.2, 0.3, 0.5
    V, defect = off.step(U)
    assert defect == 0.0
    assert np.array_equal(V[:, 1:], U[:, :-1]) and V.sum() == 1.0


def test_one_step_from_stationary_is_invariant(evolution_setup, bound):
    _, _, op, fs, _ = evolution_setup
    U, defect = op.step(fs.mass)
    assert np.abs(U - fs.mass).sum() < 5 * bound
    assert abs(defect) < 1e-10


def test_stationary_start_stays_within_grid_error(evolution_setup, bound):
    m, _, op, fs, _ = evolution_setup
    series = evolve_until(m, fs, 20.0, operator=op)
    table = convergence_check(series, fs)
    assert np.all(table.distances < bound)


def test_point_start_converges(evolution_setup):
    m, _, op, fs, _ = evolution_setup
    u0 = point_start(op.x_edges, op.a_edges, 1.0)
    series = evolve_until(m, u0, 20.0, operator=op)
    table = convergence_check(series, fs)
    assert table.max_increase <= 1e-6
    assert table.first_crossing[0.05] is not None and table.first_crossing[0.05] <= 20.0
    assert np.all((table.distances >= 0) & (table.distances <= 2))
    for s in series:
        assert s.u.mass.min() >= 0.0
        assert s.u.total() == pytest.approx(1.0, abs=1e-10)
    assert series[-1].defect < 1e-10 * len(series)


def test_two_starts_contract(evolution_setup):
    m, _, op, _, _ = evolution_setup
    a = evolve_until(m, point_start(op.x_edges, op.a_edges, 1.0), 12.0, operator=op)
    b = evolve_until(m, point_start(op.x_edges, op.a_edges, 8.0, age=2.0), 12.0, operator=op)
    d = np.array([l1_distance(x.u, y.u) for x, y in zip(a, b)])
    assert np.all(np.diff(d) <= 1e-6)
    assert d[-1] < d[0]


def test_step_evolve_matches_operator(evolution_setup):
    m, _, op, fs, _ = evolution_setup
    st = step_evolve(m, EvolutionState(0.0, fs, op.dt), operator=op)
    U, _ = op.step(fold(fs, op))
    assert np.array_equal(st.u.mass, U) and st.steps == 1
    with pytest.raises(ValueError):
        step_evolve(m, EvolutionState(0.0, fs, op.dt * 1.5), operator=op)


def test_mass_defect_guard(evolution_setup):
    _, _, op, fs, _ = evolution_setup
    bad = copy.copy(op)
    bad.jumpT = op.jumpT * 1.01
    with pytest.raises(EvolutionError):
        bad.step(fs.mass)


def test_agrees_with_ensemble(evolution_setup):
    m, _, op, _, _ = evolution_setup
    t = 3.0
    n_steps = round(t / op.dt)
    t = n_steps * op.dt
    series = evolve_until(m, point_start(op.x_edges, op.a_edges, 1.0), t, stamps=[t], operator=op)
    ens = simulate_ensemble(m, 100_000, [t], seed=21, x_edges=np.linspace(0, op.x_edges[-1], 11),
                            xb_edges=op.x_edges, a_edges=op.a_edges, x0=1.0)
    u = on_grid(series[-1].u, op)
    eta = DensityGrid2D(op.x_edges, op.a_edges, fold(ens.eta[0], op))
    assert l1_distance(coarsen(u, 10, 10), coarsen(eta, 10, 10)) < 0.08


def test_grid_error_bound_of_identical_grids_is_zero(evolution_setup):
    _, _, _, _, f = evolution_setup
    assert grid_error_bound(f, f) == 0.0


def test_generic_law_step_keeps_stationary_density():
    from conftest import generic_exponential
    from wil.evolution import EvolutionOperator, age_cap
    m = generic_exponential(2.0)
    sol = solve_stationary(m, n_cells=40, cap=13.0)
    a_edges = np.linspace(0.0, age_cap(m, sol.h.edges), 41)
    op = EvolutionOperator(m, sol.h.edges, a_edges)
    fs = on_grid(build_joint_stationary(m, sol.h, a_edges), op)
    U, defect = op.step(fs.mass)
    assert np.abs(U - fs.mass).sum() < 1e-8
    assert abs(defect) < 1e-12
