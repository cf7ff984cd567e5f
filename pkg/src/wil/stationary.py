"""Stationary densities through a discretized jump-to-jump operator.

The chain of post-boost statuses x_b -> G(pi_tau x_b), tau ~ q(x_b, .), is
discretized into a row-stochastic matrix (an Ulam scheme), its fixed density
h_* is found by power iteration, and the stationary law of (status at last
jump, age) is f_* = h_* Phi / normalizer. Changing variables along the flow
gives the stationary density of (current status, age) and its status marginal.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .crossings import Clock, below_sets, landing_cdf, make_survival, NormalizedSurvival
from .grids import DensityGrid1D, DensityGrid2D
from .model import (flow_array, horizon, mean_time, support_interval, support_start,
                    validate_assumptions)

log = logging.getLogger(__name__)

GL_NODES = 8


class TransferError(ValueError):
    pass


@dataclass
class TransferMatrix:
    """Row i is the law of the next post-boost cell given the current one is cell i.

    ``P`` has n + 1 columns; the last collects mass mapped above the grid cap.
    """

    edges: np.ndarray
    P: np.ndarray
    underflow: float = 0.0
    nodes: int = GL_NODES

    @property
    def n(self):
        return self.P.shape[0]

    def row_sums(self):
        return self.P.sum(axis=1)

    def lumped(self):
        """n x n matrix with the overflow column folded into the top cell."""
        Q = self.P[:, :-1].copy()
        Q[:, -1] += self.P[:, -1]
        return Q

    def adjoint_apply(self, v):
        """(T* v)_i = sum_j P_ij v_j with v given on cells plus the overflow column."""
        return self.P @ np.asarray(v, dtype=float)


def cell_nodes(edges, nodes=GL_NODES):
    """Gauss-Legendre abscissae inside every cell and weights summing to 1 per cell."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    lo, hi = edges[:-1], edges[1:]
    x = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * t
    return x, np.broadcast_to(0.5 * w, x.shape)


def _z_top(model, x_nodes):
    flat = x_nodes.ravel()
    if model.support_start_fn is not None:
        d = np.asarray(model.support_start_fn(flat), dtype=float)
    else:
        d = np.array([support_start(model, x) for x in flat])
    return float(np.max(flow_array(model, flat, d)))


def discretize_transfer(model, edges, nodes=GL_NODES, underflow_tol=1e-10, threads=1):
    """Ulam matrix of the jump-to-jump operator on the status cells ``edges``.

    Each source cell averages over ``nodes`` Gauss-Legendre points; for each
    point the probability of landing in cell j is the survival difference at
    the two ages where G(pi_a x) crosses the edges of cell j.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise TransferError("status edges must be strictly increasing")
    if edges[0] < model.domain_floor:
        raise TransferError("status grid starts below the domain floor")
    x_nodes, w = cell_nodes(edges, nodes)
    clock = Clock(model)
    phi = make_survival(model)
    U, V = below_sets(model, edges, _z_top(model, x_nodes))
    n = edges.size - 1
    P = np.empty((n, n + 1))
    under = np.empty(n)
    step = max(1, 64 // nodes)

    def fill(s):
        rows = slice(s, min(s + step, n))
        C = landing_cdf(model, clock, phi, x_nodes[rows].ravel(), U, V)
        C = C.reshape(-1, nodes, n + 1)
        wr = w[rows][:, :, None]
        cells = np.sum(wr * np.diff(C, axis=2), axis=1)
        P[rows, :n] = cells
        P[rows, n] = np.sum(wr[:, :, 0] * (1.0 - C[:, :, -1]), axis=1)
        under[rows] = np.sum(wr[:, :, 0] * C[:, :, 0], axis=1)

    starts = range(0, n, step)
    if threads > 1 and not isinstance(phi, NormalizedSurvival) and model.decay_rate is not None:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(fill, starts))
    else:
        for s in starts:
            fill(s)
    worst = float(under.max())
    if worst > underflow_tol:
        raise TransferError(f"mass {worst!r} lands below the grid start {edges[0]!r}; extend the grid downwards")
    P[:, 0] += under
    return TransferMatrix(edges=edges, P=P, underflow=worst, nodes=nodes)


# ---------------------------------------------------------------- fixed point


@dataclass
class PowerResult:
    h: object
    residual: float
    iterations: int
    converged: bool
    lazy: bool = False
    overflow: float = 0.0
    interior_positive: bool = True
    history: list = field(default_factory=list)


def power_iterate(T_mat, tol=1e-10, max_iter=100_000, h0=None, stall_window=200):
    """Fixed density of a row-stochastic matrix by repeated h <- h P.

    ``T_mat`` is a :class:`TransferMatrix` (overflow folded into the top cell)
    or a square array. If the residual has not improved for ``stall_window``
    iterations, the lazy chain (I + P)/2, which has the same fixed points but
    no periodicity, is iterated instead.
    """
    if isinstance(T_mat, TransferMatrix):
        P = T_mat.lumped()
    else:
        P = np.asarray(T_mat, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("transfer matrix must be square")
    n = P.shape[0]
    if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-10) or np.any(P < 0):
        raise ValueError("transfer matrix rows are not stochastic")
    h = np.full(n, 1.0 / n) if h0 is None else np.asarray(h0, dtype=float).copy()
    h = h / h.sum()
    lazy = False
    best = (math.inf, h.copy())
    since_best = 0
    history = []
    it = 0
    res = math.inf
    for it in range(1, max_iter + 1):
        hp = h @ P
        res = float(np.abs(hp - h).sum())
        nxt = 0.5 * (h + hp) if lazy else hp
        nxt = np.clip(nxt, 0.0, None)
        nxt /= nxt.sum()
        if it <= 5 or it % 50 == 0:
            history.append((it, res))
        if res < best[0]:
            best = (res, h.copy())
            since_best = 0
        else:
            since_best += 1
        if res <= tol:
            break
        if since_best >= stall_window and not lazy:
            log.info("power iteration stalled at residual %g; switching to the lazy chain", res)
            lazy = True
            since_best = 0
        h = nxt
    converged = res <= tol
    if not converged:
        res, h = best
    interior_positive = bool(np.all(h[1:-1] > 0)) if n > 2 else bool(np.all(h > 0))
    overflow = 0.0
    if isinstance(T_mat, TransferMatrix):
        overflow = float(h @ T_mat.P[:, -1])
        h_out = DensityGrid1D(T_mat.edges.copy(), h, 0.0)
    else:
        h_out = h
    return PowerResult(h_out, res, it, converged, lazy, overflow, interior_positive, history)


@dataclass
class StationarySolution:
    transfer: TransferMatrix
    power: PowerResult
    cap: float
    x_min: float
    caps_tried: list

    @property
    def h(self):
        return self.power.h


def solve_stationary(model, n_cells=2000, x_min=None, cap=None, overflow_tol=1e-6, tol=1e-10, max_iter=100_000,
                     nodes=GL_NODES, max_doublings=12, threads=1):
    """h_* on ``n_cells`` uniform cells over [x_min, cap], doubling the cap until
    the mass mapped above it is below ``overflow_tol``."""
    if x_min is None:
        x_min = support_interval(model).x_min
    if cap is None:
        cap = 4.0 * max(x_min, 1.0)
    tried = []
    for _ in range(max_doublings + 1):
        edges = np.linspace(x_min, cap, n_cells + 1)
        T = discretize_transfer(model, edges, nodes=nodes, threads=threads)
        pw = power_iterate(T, tol=tol, max_iter=max_iter)
        tried.append((cap, pw.overflow))
        if pw.overflow < overflow_tol:
            return StationarySolution(T, pw, cap, x_min, tried)
        cap = x_min + 2.0 * (cap - x_min)
    log.warning("overflow above the cap stayed at %g after %d doublings", pw.overflow, max_doublings)
    return StationarySolution(T, pw, cap, x_min, tried)


# ---------------------------------------------------------------- joint density and coordinate change


def _psi_table(model, x, a_edges):
    """int_0^{a_k} Phi(x, r) dr for every node x (rows) and age edge a_k (columns), plus the total mean."""
    x = np.asarray(x, dtype=float)
    if model.survival_integral_fn is not None:
        psi = np.asarray(model.survival_integral_fn(x[:, None], a_edges[None, :]), dtype=float)
        if model.mean_time_fn is not None:
            m = np.asarray(model.mean_time_fn(x), dtype=float) * np.ones(x.size)
        else:
            m = np.array([mean_time(model, v) for v in x])
        return psi, m
    phi = make_survival(model)
    if isinstance(phi, NormalizedSurvival):
        psi = np.array([phi.psi(v, a_edges) for v in x])
        m = np.array([phi.mean(v) for v in x])
        return psi, m
    # closed-form survival without a primitive: Gauss-Legendre on every age cell
    psi = np.empty((x.size, a_edges.size))
    m = np.array([mean_time(model, v) for v in x])
    na = a_edges.size - 1
    t, wt = np.polynomial.legendre.leggauss(8)
    half = 0.5 * np.diff(a_edges)
    zs = ((0.5 * (a_edges[1:] + a_edges[:-1]))[:, None] + half[:, None] * t).ravel()
    ws = (half[:, None] * wt).ravel()
    k = np.repeat(np.arange(na), t.size)
    for g, v in enumerate(x):
        cells = np.bincount(k, weights=ws * np.asarray(phi(v, zs), dtype=float), minlength=na)
        psi[g] = np.concatenate(([0.0], np.cumsum(cells)))
    return psi, m


def build_joint_stationary(model, h, a_edges, nodes=GL_NODES):
    """f_*(x_b, a) proportional to h_*(x_b) Phi(x_b, a) on (status cells of h) x (age cells).

    Returns the normalized grid and the normalizer sum_i h_i M(x_i), where M is
    the mean waiting time averaged over each cell.
    """
    a_edges = np.asarray(a_edges, dtype=float)
    if a_edges[0] != 0.0:
        raise ValueError("age grid must start at 0")
    x_nodes, w = cell_nodes(h.edges, nodes)
    psi, m = _psi_table(model, x_nodes.ravel(), a_edges)
    nx, na = h.mass.size, a_edges.size - 1
    psi = psi.reshape(nx, nodes, na + 1)
    m = m.reshape(nx, nodes)
    cell = np.sum(w[:, :, None] * np.diff(psi, axis=2), axis=1)
    tail = np.sum(w * (m - psi[:, :, -1]), axis=1)
    mean_cell = np.sum(w * m, axis=1)
    mass = h.mass[:, None] * cell
    a_over = h.mass * np.clip(tail, 0.0, None)
    x_over = np.zeros(na + 1)
    if h.overflow > 0:
        # status above the grid: age profile of the top edge
        top_psi, top_m = _psi_table(model, h.edges[-1:], a_edges)
        x_over[:-1] = h.overflow * np.diff(top_psi[0])
        x_over[-1] = h.overflow * (top_m[0] - top_psi[0, -1])
    Z = float(mass.sum() + a_over.sum() + x_over.sum())
    grid = DensityGrid2D(h.edges.copy(), a_edges, mass / Z, x_over / Z, a_over / Z)
    grid.normalizer = float(np.dot(h.mass, mean_cell) + (x_over.sum() if h.overflow > 0 else 0.0))
    return grid


def spread_uniform(lo, hi, m, edges):
    """Cell masses from spreading mass ``m[j]`` uniformly over [lo[j], hi[j]].

    Returns (cell masses, mass below edges[0], mass at or above edges[-1]).
    Degenerate intervals act as point masses. Each interval is expanded over
    the cells it overlaps, so no large prefix sums are differenced.
    """
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    m = np.asarray(m, dtype=float).ravel()
    keep = m != 0
    lo, hi, m = lo[keep], hi[keep], m[keep]
    n = edges.size - 1
    cells = np.zeros(n)
    width = hi - lo
    point = width <= 0
    below = float(m[point & (lo < edges[0])].sum())
    above = float(m[point & (lo >= edges[-1])].sum())
    inside = point & (lo >= edges[0]) & (lo < edges[-1])
    if np.any(inside):
        cells += np.bincount(np.searchsorted(edges, lo[inside], side="right") - 1, weights=m[inside], minlength=n)
    sel = ~point
    if np.any(sel):
        L, R, M, W = lo[sel], hi[sel], m[sel], width[sel]
        below += float(np.sum(M * np.clip(np.minimum(R, edges[0]) - L, 0.0, None) / W))
        above += float(np.sum(M * np.clip(R - np.maximum(L, edges[-1]), 0.0, None) / W))
        i0 = np.clip(np.searchsorted(edges, L, side="right") - 1, 0, n - 1)
        i1 = np.clip(np.searchsorted(edges, R, side="left") - 1, 0, n - 1)
        ok = (R > edges[0]) & (L < edges[-1])
        i0, i1, L, R, M, W = i0[ok], i1[ok], L[ok], R[ok], M[ok], W[ok]
        counts = i1 - i0 + 1
        rep = np.repeat(np.arange(i0.size), counts)
        cell = np.repeat(i0, counts) + (np.arange(rep.size) - np.repeat(np.cumsum(counts) - counts, counts))
        overlap = np.minimum(R[rep], edges[cell + 1]) - np.maximum(L[rep], edges[cell])
        cells += np.bincount(cell, weights=M[rep] * np.clip(overlap, 0.0, None) / W[rep], minlength=n)
    return cells, below, above


def to_state_coordinates(model, f, target_x_edges=None, sub=4):
    """Push a density over (status at last jump, age) to (current status, age).

    Each age row is split into ``sub`` sub-ages; at sub-age a the status cell
    [lo, hi) is carried to [pi_a lo, pi_a hi] with its mass spread uniformly,
    which preserves the mass of every age row exactly.
    """
    tx = f.x_edges if target_x_edges is None else np.asarray(target_x_edges, dtype=float)
    nx, na = f.mass.shape
    out = np.zeros((tx.size - 1, na))
    x_over = f.x_overflow.copy()
    a_over = np.zeros(tx.size - 1)
    lo, hi = f.x_edges[:-1], f.x_edges[1:]
    frac = (np.arange(sub) + 0.5) / sub

    def carry(mass_col, ages):
        cells = np.zeros(tx.size - 1)
        above = 0.0
        for a in ages:
            if a == 0.0:
                plo, phi = lo, hi
            else:
                plo = flow_array(model, lo, a)
                phi = flow_array(model, hi, a)
            c, below, ab = spread_uniform(plo, phi, mass_col / len(ages), tx)
            if below > 1e-12 * max(1.0, mass_col.sum()):
                raise ValueError(f"mass {below!r} falls below the target grid start {tx[0]!r}")
            cells += c
            cells[0] += below
            above += ab
        return cells, above

    for k in range(na):
        a0, a1 = f.a_edges[k], f.a_edges[k + 1]
        ages = [0.0] if (k == 0 and a0 == a1) else list(a0 + (a1 - a0) * frac)
        if f.mass[:, k].any():
            cells, above = carry(f.mass[:, k], ages)
            out[:, k] = cells
            x_over[k] += above
    if f.a_overflow.any():
        cells, above = carry(f.a_overflow, [f.a_edges[-1]])
        a_over = cells
        x_over[-1] += above
    g = DensityGrid2D(tx.copy(), f.a_edges.copy(), out, x_over, a_over)
    return g


# ---------------------------------------------------------------- drift and sweeping


@dataclass
class DriftReport:
    L: Optional[float]
    R: Optional[float]
    global_margin: Optional[float]
    tail_margin: Optional[float]
    drift_probes: int
    drift_verdict: str
    b: Optional[float]
    c: Optional[float]
    gamma: Optional[float]
    L_sweep: Optional[float]
    sweep_verdict: str
    TV: Optional[np.ndarray] = None
    probes: Optional[np.ndarray] = None

    def to_text(self):
        keys = ("L", "R", "global_margin", "tail_margin", "drift_probes", "drift_verdict",
                "b", "c", "gamma", "L_sweep", "sweep_verdict")
        def text(v):
            if isinstance(v, str) or v is None:
                return str(v)
            return str(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))
        return "".join(f"{k} = {text(getattr(self, k))}\n" for k in keys)


def _age_integral(model, x, fn):
    """int_0^inf q(x, a) fn(a) da with the support start as a breakpoint."""
    d = support_start(model, x)
    q = model.q
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        head = 0.0
        if d > 0:
            head, _ = integrate.quad(lambda a: float(q(x, a)) * fn(a), 0.0, d, epsabs=1e-14, epsrel=1e-12, limit=400)
        val, _ = integrate.quad(lambda a: float(q(x, a)) * fn(a), d, np.inf, epsabs=1e-14, epsrel=1e-12, limit=400)
    return head + val


def adjoint_of_identity(model, x):
    """T*V(x) = int q(x, a) G(pi_a x) da for V(x) = x."""
    a_max = horizon(model, x)
    d = support_start(model, x)
    q = model.q

    def integrand(a):
        return float(q(x, a)) * float(model.G(flow_array(model, x, a)))

    pts = [d] if 0 < d < a_max else None
    val, _ = integrate.quad(integrand, 0.0, a_max, points=pts, epsabs=1e-13, epsrel=1e-12, limit=400)
    return val


def _sweep_bounds(model, probes):
    """(b, c) with F(x) >= -c x and G(x) >= b x, or None when no b > 1 exists."""
    xs = np.concatenate((probes, float(probes[-1]) * 2.0 ** np.arange(1, 31)))
    xs = xs[xs > 0]
    if model.decay_rate is not None:
        c = float(model.decay_rate)
    else:
        c = float(np.max(-np.asarray(model.F(xs), dtype=float) / xs))
    b = float(np.min(np.asarray(model.G(xs), dtype=float) / xs))
    return b, c


def drift_report(model, probes=None, R_search=None, gamma=None, b=None, c=None):
    """Evaluate the linear drift bound and the power sweeping bound on status probes.

    Drift: with L from the boost bound G(x) <= x + L, find the smallest probed
    R with T*V(x) <= x - 2L for every probe x >= R, and check T*V(x) <= x + L
    on all probes. Sweeping: with F(x) >= -c x and G(x) >= b x, b > 1, and
    gamma = 1/c - 1/ln b by default, L_sweep = sup_x int q(x,a) b^-gamma e^{c gamma a} da.
    """
    if probes is None:
        probes = np.linspace(1.0, 50.0, 99)
    probes = np.unique(np.asarray(probes, dtype=float))
    report = validate_assumptions(model, probes[:: max(1, probes.size // 12)])
    L = report.L_C2
    R = gm = tm = None
    TV = None
    drift_verdict = "not-applicable"
    if L is not None and report.passed(["A1", "A2", "A4", "B2"]):
        TV = np.array([adjoint_of_identity(model, x) for x in probes])
        gm = float(np.min(probes + L - TV))
        ok_tail = TV <= probes - 2.0 * L
        if R_search is not None:
            ok_tail = ok_tail | (probes < R_search[0])
        bad = np.nonzero(~ok_tail)[0]
        start = 0 if bad.size == 0 else bad[-1] + 1
        if start < probes.size:
            R = float(probes[start])
            tm = float(np.min(probes[start:] - 2.0 * L - TV[start:]))
        drift_verdict = "drift" if (R is not None and gm >= 0 and start < probes.size - 1) else "no-drift"

    b_est, c_est = _sweep_bounds(model, probes)
    b = b_est if b is None else b
    c = c_est if c is None else c
    L_sweep = None
    sweep_verdict = "not-applicable"
    if b > 1.0 + 1e-9 and c > 0:
        g = (1.0 / c - 1.0 / math.log(b)) if gamma is None else gamma
        if g > 0:
            vals = [_age_integral(model, x, lambda a: math.exp(min(c * g * a, 700.0))) * b ** -g for x in probes]
            L_sweep = float(np.max(vals))
            sweep_verdict = "sweeping" if L_sweep < 1.0 else "inconclusive"
            gamma = g
    return DriftReport(L, R, gm, tm, int(probes.size), drift_verdict, b if sweep_verdict != "not-applicable" else None,
                       c if sweep_verdict != "not-applicable" else None, gamma, L_sweep, sweep_verdict, TV, probes)
