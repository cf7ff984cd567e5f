"""Time stepping of the age-structured transport equation with jump inflow.

The unknown is the mass of (status at last jump, age) cells. With the time
step equal to the age width, transport is an exact shift by one age cell.
Inside a status cell the density is represented as a multiple of the
survival function averaged over Gauss-Legendre nodes, so the fraction that
survives a step is a ratio of survival integrals and the stationary density
is left invariant.

Mass that jumps during a step does so at ages spread by a tent weight (a
particle at age a in [a_k, a_{k+1}) jumps at age a + s, s in [0, dt)); each
jump lands at G(pi_a x). Landing probabilities come from the crossing ages of
G(pi_a x) over the status edges, integrated against q times the tent with the
primitives Phi and Psi = int Phi. Newborns that jump again within the same
step are handled by a small fixed-point solve.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .crossings import Clock, NormalizedSurvival, below_sets, make_survival, survival_primitive
from .grids import DensityGrid2D, l1_distance
from .model import flow_array, support_start, survival_array, survival_integral_array
from .stationary import _psi_table, _z_top, cell_nodes, GL_NODES

log = logging.getLogger(__name__)

GUARD = 1e-10


class EvolutionError(RuntimeError):
    pass


@dataclass
class EvolutionState:
    t: float
    u: DensityGrid2D
    dt: float
    defect: float = 0.0
    steps: int = 0


def age_cap(model, x_edges, target=1e-10):
    """Smallest age with Phi(x_b, a) < target at every grid status (probed at edges and centres)."""
    xs = np.union1d(x_edges, 0.5 * (x_edges[1:] + x_edges[:-1]))
    a = 1.0
    while a < 1e6:
        if np.all(survival_array(model, xs, a) < target):
            break
        a *= 2.0
    lo, hi = a / 2.0, a
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.all(survival_array(model, xs, mid) < target):
            hi = mid
        else:
            lo = mid
    return hi


class EvolutionOperator:
    """Precomputed one-step map on a characteristic-aligned (status, age) grid."""

    def __init__(self, model, x_edges, a_edges, nodes=GL_NODES):
        self.model = model
        self.x_edges = np.asarray(x_edges, dtype=float)
        self.a_edges = np.asarray(a_edges, dtype=float)
        da = np.diff(self.a_edges)
        if self.a_edges[0] != 0.0 or not np.allclose(da, da[0], rtol=1e-12, atol=0.0):
            raise ValueError("age grid must be uniform and start at 0")
        self.dt = float(da[0])
        self.nx = self.x_edges.size - 1
        self.na = self.a_edges.size - 1
        self._build(nodes)

    # ------------------------------------------------------------ precomputation

    def _build(self, nodes):
        model, nx, na, dt = self.model, self.nx, self.na, self.dt
        a_e = self.a_edges
        xg, w = cell_nodes(self.x_edges, nodes)
        flat = xg.ravel()
        psi, m = _psi_table(model, flat, a_e)
        phi = make_survival(model)
        phi_e = np.asarray(phi(flat[:, None], a_e[None, :]), dtype=float).reshape(flat.size, na + 1) \
            if model.survival_fn is not None else np.array([phi(x, a_e) for x in flat])
        cell = np.diff(psi, axis=1)
        self._refine_tail_cells(phi, flat, cell, psi)
        cell = cell.reshape(nx, nodes, na)
        D = np.sum(w[:, :, None] * cell, axis=1)
        self.D = D
        with np.errstate(divide="ignore", invalid="ignore"):
            self.survive = np.where(D[:, :-1] > 0, D[:, 1:] / np.where(D[:, :-1] > 0, D[:, :-1], 1.0), 0.0)
        self.keep0 = D[:, 0] / dt

        clock = Clock(model)
        U, V = below_sets(model, self.x_edges, _z_top(model, xg))
        cross = np.concatenate((U.ravel(), V.ravel()))
        rows, cols, vals = [], [], []
        k0_rows, k0_cols, k0_vals = [], [], []
        for g, x in enumerate(flat):
            i, gi = divmod(g, nodes)
            wg = w[i, gi]
            ages = clock.elapsed(x, cross)
            b = np.unique(np.concatenate((ages[np.isfinite(ages)], a_e)))
            b = b[b >= 0.0]
            lo = b
            hi = np.append(b[1:], np.inf)
            mid = np.where(np.isfinite(hi), 0.5 * (lo + hi), 2.0 * lo + 1.0)
            land = np.asarray(model.G(flow_array(model, x, mid)), dtype=float)
            j = np.clip(np.searchsorted(self.x_edges, land, side="right") - 1, 0, nx - 1)
            ends = np.append(b, np.inf)
            ph = self._phi_at(phi, x, ends)
            ps = self._psi_at(phi, x, ends, m[g])
            Q0 = 1.0 - ph
            Q1 = np.where(np.isfinite(ends), ps - np.where(np.isfinite(ends), ends, 0.0) * ph, m[g])
            dQ0 = np.diff(Q0)
            dQ1 = np.diff(Q1)
            mraw = np.searchsorted(a_e, mid, side="right") - 1
            mcell = np.minimum(mraw, na - 1)
            base = a_e[mcell]
            top = a_e[mcell + 1]
            rise = dQ1 - base * dQ0       # int q (r - a_m)
            fall = top * dQ0 - dQ1        # int q (a_{m+1} - r)
            last = mraw >= na - 1
            # tents k = m (rising) and k = m - 1 (falling); the last age cell jumps entirely
            sel = ~last
            rows.append(i * na + mcell[sel])
            cols.append(j[sel])
            vals.append(wg * rise[sel] / D[i, mcell[sel]])
            sel = (mraw >= 1) & (mraw <= na - 1)
            rows.append(i * na + mcell[sel] - 1)
            cols.append(j[sel])
            vals.append(wg * fall[sel] / D[i, mcell[sel] - 1])
            if phi_e[g, na - 1] > 0:
                share = wg * cell[i, gi, na - 1] / D[i, na - 1] / phi_e[g, na - 1]
                rows.append(np.full(np.count_nonzero(last), i * na + na - 1))
                cols.append(j[last])
                vals.append(share * dQ0[last])
            first = mcell == 0
            k0_rows.append(np.full(np.count_nonzero(first), i))
            k0_cols.append(j[first])
            k0_vals.append(wg * fall[first] / dt)
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.clip(np.concatenate(vals), 0.0, None)
        self.jump = sparse.csr_matrix((v, (r, c)), shape=(nx * na, nx))
        self.rejump = sparse.csr_matrix((np.clip(np.concatenate(k0_vals), 0.0, None),
                                         (np.concatenate(k0_rows), np.concatenate(k0_cols))), shape=(nx, nx))
        self.jumpT = self.jump.T.tocsr()
        self.rejumpT = self.rejump.T.tocsr()

    def _refine_tail_cells(self, phi, flat, cell, psi, ratio=1e-4):
        # differences of Psi lose relative accuracy where the cell integral is tiny against Psi
        t, wt = np.polynomial.legendre.leggauss(8)
        a_e = self.a_edges
        half = 0.5 * (a_e[1] - a_e[0])
        for g in np.nonzero(np.any(cell < ratio * psi[:, 1:], axis=1))[0]:
            ks = np.nonzero(cell[g] < ratio * psi[g, 1:])[0]
            ages = (0.5 * (a_e[ks] + a_e[ks + 1]))[:, None] + half * t
            vals = np.asarray(phi(flat[g], ages.ravel()), dtype=float).reshape(ages.shape)
            cell[g, ks] = half * vals @ wt

    def _phi_at(self, phi, x, ages):
        fin = np.isfinite(ages)
        out = np.zeros(ages.size)
        out[fin] = np.asarray(phi(x, ages[fin]), dtype=float)
        return out

    def _psi_at(self, phi, x, ages, mean):
        fin = np.isfinite(ages)
        out = np.full(ages.size, mean)
        if not np.any(fin):
            return out
        if self.model.survival_integral_fn is not None:
            out[fin] = survival_integral_array(self.model, x, ages[fin])
        elif isinstance(phi, NormalizedSurvival):
            out[fin] = phi.psi(x, ages[fin])
        else:
            out[fin] = survival_primitive(phi, x, ages[fin], mean, support_start(self.model, x))
        return out

    # ------------------------------------------------------------ stepping

    def births(self, U):
        """Newborn mass per status cell during one step, including same-step re-jumps."""
        J = self.jumpT @ U.ravel()
        B = J.copy()
        for _ in range(200):
            nxt = J + self.rejumpT @ B
            if np.max(np.abs(nxt - B)) <= 1e-17 * max(1.0, B.sum()):
                B = nxt
                break
            B = nxt
        return B

    def step(self, U):
        """One step; returns (new masses, mass defect before the guard)."""
        new = np.empty_like(U)
        new[:, 1:] = U[:, :-1] * self.survive
        B = self.births(U)
        new[:, 0] = B * self.keep0
        before = float(U.sum())
        defect = float(new.sum()) - before
        if abs(defect) > GUARD * max(1.0, before):
            raise EvolutionError(f"mass defect {defect!r} in one step exceeds {GUARD}; check quadrature settings")
        if new.sum() > 0:
            new *= before / new.sum()
        return new, defect


def fold(u, op):
    """Masses on the operator's grid with every overflow folded into the boundary cells."""
    if not (np.array_equal(u.x_edges, op.x_edges) and np.array_equal(u.a_edges, op.a_edges)):
        raise ValueError("density grid does not match the evolution grid")
    U = u.mass.copy()
    U[-1, :] += u.x_overflow[:-1]
    U[:, -1] += u.a_overflow
    U[-1, -1] += u.x_overflow[-1]
    return U


def _as_grid(op, U):
    return DensityGrid2D(op.x_edges, op.a_edges, U)


def step_evolve(model, state, operator=None):
    """Advance an evolution state by one step of length dt = age width."""
    op = operator or EvolutionOperator(model, state.u.x_edges, state.u.a_edges)
    if not math.isclose(state.dt, op.dt, rel_tol=1e-12):
        raise ValueError(f"time step {state.dt!r} is not the age-cell width {op.dt!r}")
    U, defect = op.step(fold(state.u, op))
    return EvolutionState(state.t + op.dt, _as_grid(op, U), op.dt, state.defect + abs(defect), state.steps + 1)


def evolve_until(model, u0, t_end, stamps=None, operator=None):
    """Repeated steps from ``u0`` up to ``t_end``; the states at the stamps (rounded to steps)."""
    op = operator or EvolutionOperator(model, u0.x_edges, u0.a_edges)
    if abs(u0.total() - 1.0) > 1e-10:
        raise ValueError("initial density is not normalized")
    n_steps = int(math.ceil(t_end / op.dt - 1e-9))
    stamps = np.arange(0, n_steps + 1) * op.dt if stamps is None else np.asarray(stamps, dtype=float)
    want = set(int(round(s / op.dt)) for s in stamps)
    U = fold(u0, op)
    defect = 0.0
    out = []
    if 0 in want:
        out.append(EvolutionState(0.0, _as_grid(op, U.copy()), op.dt, 0.0, 0))
    for n in range(1, n_steps + 1):
        U, d = op.step(U)
        defect += abs(d)
        if n in want:
            out.append(EvolutionState(n * op.dt, _as_grid(op, U.copy()), op.dt, defect, n))
    return out


def point_start(x_edges, a_edges, x_b, age=0.0):
    """Unit mass in the cell containing (x_b, age)."""
    nx, na = len(x_edges) - 1, len(a_edges) - 1
    i = int(np.clip(np.searchsorted(x_edges, x_b, side="right") - 1, 0, nx - 1))
    k = int(np.clip(np.searchsorted(a_edges, age, side="right") - 1, 0, na - 1))
    mass = np.zeros((nx, na))
    mass[i, k] = 1.0
    return DensityGrid2D(np.asarray(x_edges, dtype=float), np.asarray(a_edges, dtype=float), mass)


def on_grid(f, op):
    """A density with its overflow folded in, as the evolution sees it."""
    return _as_grid(op, fold(f, op))


@dataclass
class ConvergenceTable:
    times: np.ndarray
    distances: np.ndarray
    final: float
    first_crossing: dict
    max_increase: float = 0.0
    rows: list = field(default_factory=list)


def convergence_check(series, f_star, thresholds=(0.1, 0.05, 0.01)):
    """L1 distance of every state to ``f_star`` and the first time each threshold is crossed."""
    t = np.array([s.t for s in series])
    d = np.array([l1_distance(s.u, f_star) for s in series])
    first = {}
    for thr in thresholds:
        below = np.nonzero(d < thr)[0]
        first[thr] = float(t[below[0]]) if below.size else None
    inc = float(np.max(np.diff(d), initial=0.0))
    return ConvergenceTable(t, d, float(d[-1]), first, max(inc, 0.0), list(zip(t.tolist(), d.tolist())))


def coarsen(fine, rx, ra):
    """Aggregate a density onto the grid with every ``rx``-th status edge and ``ra``-th age edge."""
    fx, fa = fine.mass.shape
    if fx % rx or fa % ra:
        raise ValueError("grid is not divisible by the coarsening factors")
    nx, na = fx // rx, fa // ra
    agg = fine.mass.reshape(nx, rx, na, ra).sum(axis=(1, 3))
    xo = np.concatenate((fine.x_overflow[:-1].reshape(na, ra).sum(axis=1), fine.x_overflow[-1:]))
    ao = fine.a_overflow.reshape(nx, rx).sum(axis=1)
    return DensityGrid2D(fine.x_edges[::rx], fine.a_edges[::ra], agg, xo, ao)


def grid_error_bound(coarse, fine):
    """L1 distance between a density and a twice-finer one aggregated onto the coarse grid.

    This refinement estimate measures the discretization error of the stationary
    density and is used as the tolerance for its numerical invariance.
    """
    nx, na = coarse.mass.shape
    fx, fa = fine.mass.shape
    if fx % nx or fa % na:
        raise ValueError("fine grid is not a refinement of the coarse grid")
    g = coarsen(fine, fx // nx, fa // na)
    if not (np.allclose(g.x_edges, coarse.x_edges, rtol=1e-12) and np.allclose(g.a_edges, coarse.a_edges, rtol=1e-12)):
        raise ValueError("fine grid edges do not refine the coarse grid")
    g = DensityGrid2D(coarse.x_edges, coarse.a_edges, g.mass, g.x_overflow, g.a_overflow)
    return l1_distance(coarse, g)


def pilot_horizon(model, f_star, x_b, threshold=0.05, factor=4, safety=2.0, max_time=1e3, age=0.0):
    """Run horizon from a cheap pilot: evolve on a ``factor``-times coarser grid from a
    point start until the distance to the aggregated ``f_star`` drops below
    ``threshold``; return ``safety`` times that time."""
    fc = coarsen(f_star, factor, factor)
    op = EvolutionOperator(model, fc.x_edges, fc.a_edges)
    target = on_grid(fc, op)
    U = fold(point_start(fc.x_edges, fc.a_edges, x_b, age), op)
    n = 0
    while n * op.dt <= max_time:
        if l1_distance(_as_grid(op, U), target) < threshold:
            return safety * max(n, 1) * op.dt
        U, _ = op.step(U)
        n += 1
    raise EvolutionError(f"pilot evolution stayed above distance {threshold} up to t = {max_time}")
