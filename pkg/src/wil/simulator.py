"""Event-driven Monte Carlo of the waning/boosting process.

Between infections the status follows the flow exactly; waiting times are
drawn by inverting the survival function. Every uniform is a pure function of
(seed, trajectory index, event index), and trajectories are processed in
fixed-size chunks whose integer histogram counts are summed, so results do not
depend on the number of worker threads.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .crossings import Clock
from .grids import DensityGrid1D, DensityGrid2D
from .model import SamplingError, flow_array, inverse_survival, survival_array
from .rng import CounterStream, counter_uniform

log = logging.getLogger(__name__)

CHUNK = 8192
# counters at or above this offset are reserved for initial-condition draws
INIT_COUNTER = 1 << 40


@dataclass
class TrajectoryLog:
    """Jumps of one realization: times, status just before and just after each jump."""

    seed: int
    x0: float
    horizon: float
    times: np.ndarray
    pre: np.ndarray
    post: np.ndarray
    stream: int = 0

    @property
    def n_events(self):
        return int(self.times.size)

    def state_at(self, model, t):
        """(status, post-jump status of the current cycle, age) at time t."""
        if not 0.0 <= t <= self.horizon:
            raise ValueError("time outside the simulated window")
        k = int(np.searchsorted(self.times, t, side="right"))
        x_b = self.x0 if k == 0 else float(self.post[k - 1])
        t_last = 0.0 if k == 0 else float(self.times[k - 1])
        age = t - t_last
        return float(flow_array(model, x_b, age)), x_b, age


def _draw_waiting(model, x_b, u):
    try:
        return np.asarray(inverse_survival(model, x_b, u), dtype=float)
    except SamplingError as exc:
        raise SamplingError(f"waiting-time draw failed: {exc}") from exc


def simulate_trajectory(model, x0, horizon, seed, stream=0, max_events=None):
    """Jumps of a single trajectory started at post-jump status ``x0`` and age 0."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    rng = CounterStream(seed, stream)
    times, pre, post = [], [], []
    t, x_b = 0.0, float(x0)
    block = 4096
    while True:
        u = rng.random()
        try:
            tau = float(_draw_waiting(model, x_b, u))
        except SamplingError as exc:
            raise SamplingError(f"trajectory seed={seed} stream={stream} event={len(times)}: {exc}") from exc
        if t + tau > horizon:
            break
        t += tau
        x_pre = float(flow_array(model, x_b, tau))
        x_b = float(model.G(x_pre))
        times.append(t)
        pre.append(x_pre)
        post.append(x_b)
        if max_events is not None and len(times) >= max_events:
            break
        if len(times) % block == 0:
            log.debug("trajectory %d: %d events", stream, len(times))
    return TrajectoryLog(int(seed), float(x0), float(horizon if max_events is None or len(times) < max_events else t),
                         np.array(times), np.array(pre), np.array(post), int(stream))


def simulate_jumps(model, x0, n_jumps, seed, stream=0):
    """Trajectory stopped at its ``n_jumps``-th jump (horizon = time of that jump)."""
    return simulate_trajectory(model, x0, math.inf, seed, stream, max_events=n_jumps)


# ---------------------------------------------------------------- ensembles


@dataclass
class EnsembleSummary:
    n_trajectories: int
    stamps: np.ndarray
    xi: list
    eta: list
    zeta: list
    mean_events: np.ndarray
    mass_checks: list = field(default_factory=list)


def _bin(values, edges):
    """Cell index per value; values at or above the last edge map to n (overflow)."""
    idx = np.searchsorted(edges, values, side="right") - 1
    if np.any(idx < 0):
        raise ValueError(f"value {values[idx < 0].min()!r} lies below the grid start {edges[0]!r}")
    return np.minimum(idx, edges.size - 1)


def _initial_state(model, idx, seed, x0, initial):
    """Post-jump status and time of the last jump (<= 0) for trajectories ``idx``."""
    n = idx.size
    if initial is None:
        return np.full(n, float(x0)), np.zeros(n), np.zeros(n)
    u = counter_uniform(seed, idx, INIT_COUNTER)
    v = counter_uniform(seed, idx, INIT_COUNTER + 1)
    if isinstance(initial, DensityGrid1D):
        if initial.overflow > 0:
            raise ValueError("initial density has mass above its grid")
        cdf = np.cumsum(initial.mass) / initial.mass.sum()
        k = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
        x_b = initial.edges[k] + v * (initial.edges[k + 1] - initial.edges[k])
        return x_b, np.zeros(n), np.zeros(n)
    if isinstance(initial, DensityGrid2D):
        if initial.x_overflow.sum() > 0 or initial.a_overflow.sum() > 0:
            raise ValueError("initial density has mass outside its grid")
        flat = initial.mass.ravel()
        cdf = np.cumsum(flat) / flat.sum()
        k = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
        i, j = np.divmod(k, initial.mass.shape[1])
        w = counter_uniform(seed, idx, INIT_COUNTER + 2)
        x_b = initial.x_edges[i] + v * (initial.x_edges[i + 1] - initial.x_edges[i])
        age = initial.a_edges[j] + w * (initial.a_edges[j + 1] - initial.a_edges[j])
        return x_b, -age, age
    raise TypeError("initial condition must be a DensityGrid1D or DensityGrid2D")


def _run_chunk(model, idx, stamps, seed, x0, initial, visit):
    """Advance trajectories ``idx`` through ``stamps``; ``visit(s, x_b, age, xi)`` is called per stamp."""
    x_b, t_last, age0 = _initial_state(model, idx, seed, x0, initial)
    count = np.zeros(idx.size, dtype=np.int64)
    u = counter_uniform(seed, idx, count)
    if initial is not None and np.any(age0 > 0):
        # condition the first waiting time on having already survived age0
        u = u * survival_array(model, x_b, age0)
        u = np.clip(u, np.finfo(float).tiny, None)
    t_next = t_last + _draw_waiting(model, x_b, u)
    events = np.zeros(len(stamps))
    for s, stamp in enumerate(stamps):
        due = np.nonzero(t_next <= stamp)[0]
        while due.size:
            tau = t_next[due] - t_last[due]
            pre = flow_array(model, x_b[due], tau)
            x_b[due] = np.asarray(model.G(pre), dtype=float)
            t_last[due] = t_next[due]
            count[due] += 1
            uu = counter_uniform(seed, idx[due], count[due])
            t_next[due] = t_last[due] + _draw_waiting(model, x_b[due], uu)
            due = due[t_next[due] <= stamp]
        age = stamp - t_last
        xi = flow_array(model, x_b, age)
        visit(s, x_b, age, xi)
        events[s] = float(count.sum())
    return events


def _chunks(n):
    return [np.arange(s, min(s + CHUNK, n), dtype=np.int64) for s in range(0, n, CHUNK)]


def _map_chunks(fn, n, threads):
    chunks = _chunks(n)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, chunks))
    return [fn(c) for c in chunks]


def simulate_ensemble(model, n, stamps, seed, x_edges, xb_edges=None, a_edges=None, x0=None, initial=None, threads=1):
    """Histograms of the status, of (post-jump status, age) and of (status, age) at each stamp.

    The default start is every trajectory at post-jump status ``G(floor)`` and
    age 0. Histograms are normalized counts, so each sums to exactly one.
    """
    if n < 1:
        raise ValueError("need at least one trajectory")
    stamps = np.asarray(stamps, dtype=float)
    if stamps.ndim != 1 or np.any(np.diff(stamps) < 0) or np.any(stamps < 0):
        raise ValueError("stamps must be sorted and non-negative")
    x_edges = np.asarray(x_edges, dtype=float)
    xb_edges = x_edges if xb_edges is None else np.asarray(xb_edges, dtype=float)
    want_2d = a_edges is not None
    a_edges = None if a_edges is None else np.asarray(a_edges, dtype=float)
    if x0 is None and initial is None:
        x0 = float(model.G(model.domain_floor))
    ns, nx, nxb = stamps.size, x_edges.size, xb_edges.size
    na = 0 if a_edges is None else a_edges.size

    def work(idx):
        c_xi = np.zeros((ns, nx), dtype=np.int64)
        c_eta = np.zeros((ns, nxb, na), dtype=np.int64) if want_2d else None
        c_zeta = np.zeros((ns, nx, na), dtype=np.int64) if want_2d else None

        def visit(s, x_b, age, xi):
            ix = _bin(xi, x_edges)
            c_xi[s] += np.bincount(ix, minlength=nx)
            if want_2d:
                ia = _bin(age, a_edges)
                ib = _bin(x_b, xb_edges)
                c_eta[s] += np.bincount(ib * na + ia, minlength=nxb * na).reshape(nxb, na)
                c_zeta[s] += np.bincount(ix * na + ia, minlength=nx * na).reshape(nx, na)

        ev = _run_chunk(model, idx, stamps, seed, x0, initial, visit)
        return c_xi, c_eta, c_zeta, ev

    parts = _map_chunks(work, n, threads)
    c_xi = sum(p[0] for p in parts)
    events = sum(p[3] for p in parts) / n
    xi = [DensityGrid1D(x_edges, c_xi[s, :-1] / n, c_xi[s, -1] / n) for s in range(ns)]
    eta, zeta = [], []
    if want_2d:
        c_eta = sum(p[1] for p in parts)
        c_zeta = sum(p[2] for p in parts)
        eta = [_grid_from_counts(xb_edges, a_edges, c_eta[s], n) for s in range(ns)]
        zeta = [_grid_from_counts(x_edges, a_edges, c_zeta[s], n) for s in range(ns)]
    checks = [g.total() for g in xi] + [g.total() for g in eta] + [g.total() for g in zeta]
    return EnsembleSummary(n, stamps, xi, eta, zeta, events, checks)


def _grid_from_counts(x_edges, a_edges, counts, n):
    # counts has an overflow row (status) and column (age); the corner is both
    mass = counts[:-1, :-1] / n
    x_over = counts[-1, :] / n
    a_over = counts[:-1, -1] / n
    return DensityGrid2D(x_edges, a_edges, mass, x_over, a_over)


def region_mass_series(model, R, stamps, n, seed, x0=None, initial=None, threads=1):
    """Fraction of trajectories with status <= R at each stamp."""
    stamps = np.asarray(stamps, dtype=float)
    if x0 is None and initial is None:
        x0 = float(model.G(model.domain_floor))

    def work(idx):
        hits = np.zeros(stamps.size, dtype=np.int64)

        def visit(s, x_b, age, xi):
            hits[s] += int(np.count_nonzero(xi <= R))

        _run_chunk(model, idx, stamps, seed, x0, initial, visit)
        return hits

    parts = _map_chunks(work, n, threads)
    return sum(parts) / n


def pilot_horizon(model, R, target, n, seed, x0=None, start=1.0, max_horizon=1e4, points=32):
    """Smallest doubled horizon at which a pilot run's region mass drops below ``target``."""
    t = start
    while t <= max_horizon:
        series = region_mass_series(model, R, np.linspace(0.0, t, points + 1), n, seed, x0=x0)
        if series[-1] < target:
            return t, series
        t *= 2.0
    raise RuntimeError(f"region mass stayed above {target} up to horizon {max_horizon}")


# ---------------------------------------------------------------- occupation measure


def _segments(model, log_):
    """Start and end status of every waning segment up to the horizon."""
    starts = np.concatenate(([log_.x0], log_.post))
    t0 = np.concatenate(([0.0], log_.times))
    ends = np.concatenate((log_.pre, [float(flow_array(model, starts[-1], log_.horizon - t0[-1]))]))
    return starts, ends


def occupation_histogram(logs, edges, model):
    """Fraction of time spent in each status cell, from exact crossing times of the flow.

    ``logs`` is a :class:`TrajectoryLog` or a list of them (averaged with equal weight).
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("occupation grid must have at least one cell with increasing edges")
    if isinstance(logs, TrajectoryLog):
        logs = [logs]
    clock = Clock(model)
    acc = np.zeros(edges.size - 1)
    over = 0.0
    for lg in logs:
        if lg.n_events < 1000:
            log.info("occupation estimate from only %d events", lg.n_events)
        s, e = _segments(model, lg)
        if np.any(e < edges[0]):
            raise ValueError("trajectory visits statuses below the occupation grid")
        above = np.empty(edges.size)
        for j, z in enumerate(edges):
            # time spent at statuses >= z, summed over segments
            zc = np.clip(z, e, s)
            t = clock.elapsed(s, zc)
            above[j] = float(np.sum(np.where(zc > e, t, clock.elapsed(s, e))))
        total = float(above[0])
        if total <= 0:
            raise ValueError("trajectory has zero duration")
        acc += np.diff(-above) / total
        over += above[-1] / total
    k = len(logs)
    return DensityGrid1D(edges, acc / k, over / k)
