"""Crossing ages of the post-jump status over a grid of edges.

For a post-boost status ``x`` and a waiting time ``tau``, the next post-boost
status is ``G(pi_tau x)``. Everything that discretizes the jump kernel needs
the probability that this lands below a given edge ``e``:

    C_x(e) = P(G(pi_tau x) < e) = sum over monotone pieces of G of
             P(pi_tau x in {z in piece : G(z) < e}).

Each such set is a z-interval ``[u, v]`` and ``pi_tau x`` lies in it exactly
for ``tau`` between the two crossing ages, so only survival values at those
ages are needed.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate, optimize

from .model import DENSE_PROBES, SURVIVAL_FLOOR, integrate_q, support_start, survival_array
from .quadrature import panel_nodes


class Clock:
    """Waning clock: ``elapsed(x, z)`` is the time for the orbit of x to reach z <= x.

    With exponential waning this is ``ln(x/z)/c``. Otherwise a primitive
    ``T(z) = int_z^{ref} -1/F`` is tabulated on demand at the requested points.
    """

    def __init__(self, model):
        self.model = model
        self.c = model.decay_rate
        self._cache = {}

    def T(self, z):
        z = np.asarray(z, dtype=float)
        floor = self.model.domain_floor
        if self.c is not None:
            with np.errstate(divide="ignore"):
                return np.where(z <= floor, np.inf, -np.log(np.where(z > 0, z, 1.0)) / self.c)
        flat = z.ravel()
        pts = np.unique(flat[flat > floor])
        missing = [p for p in pts if p not in self._cache]
        if missing:
            self._extend(np.array(missing))
        out = np.array([math.inf if v <= floor else self._cache[v] for v in flat])
        return out.reshape(z.shape)

    def _extend(self, pts):
        known = np.array(sorted(self._cache)) if self._cache else np.empty(0)
        allp = np.union1d(known, pts)
        if not known.size:
            ref = allp[0]
            self._cache[ref] = 0.0
            known = np.array([ref])
        for p in allp:
            if p in self._cache:
                continue
            j = int(np.argmin(np.abs(known - p)))
            base = known[j]
            val, _ = integrate.quad(lambda y: -1.0 / float(self.model.F(y)), p, base,
                                    epsabs=0.0, epsrel=1e-12, limit=200)
            self._cache[p] = self._cache[base] + val
            known = np.insert(known, np.searchsorted(known, p), p)

    def elapsed(self, x, z):
        """Time from x down to min(z, x); inf when z is at or below the floor."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        zz = np.minimum(z, x)
        with np.errstate(invalid="ignore"):
            t = self.T(zz) - self.T(x)
        return np.where(zz <= self.model.domain_floor, np.inf, np.maximum(t, 0.0))


def monotone_pieces(model, lo, hi):
    """Breakpoints splitting [lo, hi] into pieces where G is monotone, with each piece's direction."""
    if model.G_increasing or hi <= lo:
        return np.array([lo, hi]), np.array([1.0])
    z = np.linspace(lo, hi, DENSE_PROBES + 1)
    g = np.asarray(model.G(z), dtype=float)
    s = np.sign(np.diff(g))
    turns = np.nonzero(s[1:] != s[:-1])[0]
    cuts = [lo]
    for t in turns:
        a, b = z[t], z[t + 2]
        sign = -1.0 if s[t] > 0 else 1.0
        res = optimize.minimize_scalar(lambda v: sign * float(model.G(v)), bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-13})
        cuts.append(float(res.x))
    cuts.append(hi)
    cuts = np.array(cuts)
    mids = 0.5 * (cuts[1:] + cuts[:-1])
    eps = 1e-9 * (hi - lo)
    dirs = np.sign(np.asarray(model.G(np.minimum(mids + eps, cuts[1:])), dtype=float)
                   - np.asarray(model.G(np.maximum(mids - eps, cuts[:-1])), dtype=float))
    dirs[dirs == 0] = 1.0
    return cuts, dirs


def _piece_inverse(model, lo, hi, direction, e):
    """z in [lo, hi] with G(z) = e on a monotone piece, clipped to the piece."""
    g_lo, g_hi = float(model.G(lo)), float(model.G(hi))
    out = np.empty(e.size)
    for j, ev in enumerate(e):
        if direction > 0:
            if ev <= g_lo:
                out[j] = lo
                continue
            if ev >= g_hi:
                out[j] = hi
                continue
        else:
            if ev >= g_lo:
                out[j] = lo
                continue
            if ev <= g_hi:
                out[j] = hi
                continue
        out[j] = optimize.brentq(lambda v: float(model.G(v)) - ev, lo, hi, xtol=1e-14, rtol=1e-15)
    return out


def below_sets(model, edges, z_top):
    """z-intervals [U, V] (shape (pieces, edges)) of {z in [floor, z_top]: G(z) < e}."""
    floor = model.domain_floor
    edges = np.asarray(edges, dtype=float)
    if model.G_increasing and model.G_inverse is not None:
        v = np.clip(np.asarray(model.G_inverse(edges), dtype=float), floor, z_top)
        return np.full((1, edges.size), floor), v[None, :]
    cuts, dirs = monotone_pieces(model, floor, z_top)
    U = np.empty((dirs.size, edges.size))
    V = np.empty_like(U)
    for p, d in enumerate(dirs):
        w = _piece_inverse(model, cuts[p], cuts[p + 1], d, edges)
        if d > 0:
            U[p], V[p] = cuts[p], w
        else:
            U[p], V[p] = w, cuts[p + 1]
    return U, V


def survival_at(model, x, a):
    """Phi with infinite ages mapped to 0."""
    a = np.asarray(a, dtype=float)
    fin = np.isfinite(a)
    phi = survival_array(model, x, np.where(fin, a, 0.0))
    return np.where(fin, phi, 0.0)


class NormalizedSurvival:
    """Phi(x, a) and Psi(x, a) = int_0^a Phi from q alone, normalized by the total mass of q(x, .).

    Used for models without a closed-form survival, so that q enters the
    discretization only as a normalized density.
    """

    def __init__(self, model):
        self.model = model
        self._horizons = {}

    def _horizon(self, x, d):
        if x in self._horizons:
            return self._horizons[x]
        # relative tail criterion with epsabs = 0 keeps the result invariant under rescaling q
        q = self.model.q
        a = max(1.0, 2.0 * d + 1.0)
        while a < 1e8:
            head = integrate_q(self.model, x, 0.0, a)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                tail, _ = integrate.quad(lambda s: float(q(x, s)), a, np.inf, epsabs=0.0, epsrel=1e-10, limit=200)
            if tail <= SURVIVAL_FLOOR * (head + tail):
                self._horizons[x] = (a, head)
                return a, head
            a *= 2.0
        raise ValueError(f"no quadrature horizon found for x_b={x}")

    def _tables(self, x, ages):
        """Knots and the normalized primitives int_0^k q and int_0^k r q at every knot."""
        d = support_start(self.model, x)
        a_max, total = self._horizon(x, d)
        knots = np.unique(np.concatenate(([0.0, d, a_max], np.clip(ages[np.isfinite(ages)], 0.0, a_max))))
        lens = np.diff(knots)
        counts = np.maximum(1, np.ceil(lens / (a_max / 64.0)).astype(int))
        p0 = np.zeros(lens.size)
        p1 = np.zeros(lens.size)
        t, wt = np.polynomial.legendre.leggauss(16)
        one = np.nonzero(counts == 1)[0]
        if one.size:
            mid = 0.5 * (knots[one] + knots[one + 1])
            half = 0.5 * lens[one]
            zs = mid[:, None] + half[:, None] * t
            qv = np.asarray(self.model.q(x, zs.ravel()), dtype=float).reshape(zs.shape)
            p0[one] = half * (qv @ wt)
            p1[one] = half * ((qv * zs) @ wt)
        for j in np.nonzero(counts > 1)[0]:
            zs, ws = panel_nodes(knots[j], knots[j + 1], int(counts[j]))
            qv = np.asarray(self.model.q(x, zs), dtype=float)
            p0[j] = float(np.dot(ws, qv))
            p1[j] = float(np.dot(ws, qv * zs))
        h0 = np.concatenate(([0.0], np.cumsum(p0))) / total
        h1 = np.concatenate(([0.0], np.cumsum(p1))) / total
        return knots, h0, h1, a_max

    def __call__(self, x, ages):
        x = float(x)
        ages = np.asarray(ages, dtype=float)
        knots, h0, _, a_max = self._tables(x, ages)
        phi = 1.0 - np.interp(np.clip(ages, 0.0, a_max), knots, h0)
        phi = np.where(ages >= a_max, 0.0, phi)
        return np.clip(np.where(np.isfinite(ages), phi, 0.0), 0.0, 1.0)

    def psi(self, x, ages):
        """int_0^a Phi = a Phi(a) + int_0^a r q(r) dr; the mean for ages past the horizon."""
        x = float(x)
        ages = np.asarray(ages, dtype=float)
        knots, h0, h1, a_max = self._tables(x, ages)
        a = np.clip(np.where(np.isfinite(ages), ages, a_max), 0.0, a_max)
        phi = np.clip(1.0 - np.interp(a, knots, h0), 0.0, 1.0)
        out = a * phi + np.interp(a, knots, h1)
        return np.where(ages >= a_max, h1[-1], out)

    def mean(self, x):
        return float(self.psi(x, np.array([np.inf]))[0])


def survival_primitive(phi, x, ages, mean, start=0.0, order=16):
    """int_0^a Phi(x, r) dr at ``ages`` for a vectorized closed-form Phi, by Gauss-Legendre between
    consecutive ages (``start`` is an extra breakpoint); infinite ages give ``mean``."""
    ages = np.asarray(ages, dtype=float)
    fin = np.isfinite(ages)
    knots = np.unique(np.concatenate(([0.0], [start] if start > 0 else [], np.clip(ages[fin], 0.0, None))))
    t, wt = np.polynomial.legendre.leggauss(order)
    mid = 0.5 * (knots[1:] + knots[:-1])
    half = 0.5 * np.diff(knots)
    zs = mid[:, None] + half[:, None] * t
    vals = np.asarray(phi(x, zs.ravel()), dtype=float).reshape(zs.shape)
    cum = np.concatenate(([0.0], np.cumsum(half * (vals @ wt))))
    out = np.full(ages.shape, float(mean))
    out[fin] = np.interp(np.clip(ages[fin], 0.0, None), knots, cum)
    return out


def make_survival(model):
    """(x, ages) -> Phi evaluator for a fixed status and a batch of ages."""
    if model.survival_fn is not None:
        return lambda x, a: survival_at(model, x, a)
    return NormalizedSurvival(model)


def landing_cdf(model, clock, phi, x_nodes, U, V, block=64):
    """C[g, j] = P(G(pi_tau x_g) < e_j) for nodes x_g and the below-sets of edges e_j."""
    x_nodes = np.asarray(x_nodes, dtype=float)
    out = np.zeros((x_nodes.size, U.shape[1]))
    if isinstance(phi, NormalizedSurvival):
        for g, x in enumerate(x_nodes):
            out[g] = _landing_rows(clock, phi, np.array([x]), U, V, scalar=True)[0]
        return out
    for s in range(0, x_nodes.size, block):
        out[s:s + block] = _landing_rows(clock, phi, x_nodes[s:s + block], U, V)
    return out


def _landing_rows(clock, phi, xs, U, V, scalar=False):
    # pi_tau x in [u, v]  <=>  tau in [a(v), a(u)]
    x = xs[:, None, None]
    a_u = clock.elapsed(x, U[None])
    a_v = clock.elapsed(x, V[None])
    if scalar:
        ages = np.concatenate((a_u.ravel(), a_v.ravel()))
        ph = phi(float(xs[0]), ages)
        ph_u = ph[: a_u.size].reshape(a_u.shape)
        ph_v = ph[a_u.size:].reshape(a_v.shape)
    else:
        ph_u = phi(x, a_u)
        ph_v = phi(x, a_v)
    return np.sum(np.clip(ph_v - ph_u, 0.0, None), axis=1)
