"""Ready-made models: exponential waning with the worked inter-infection laws.

All presets wane exponentially, ``F(x) = -c x``, and boost affinely,
``G(x) = b x + K``. They differ in the law of the time between infections:

* ``exp_decay_exp_q`` / ``constant_boost``: exponential waiting time
* ``threshold``: infection only after status falls below ``x_th``, then a
  residual delay with density ``h`` (exponential with mean ``m_theta`` by default)
* ``power_law``: hazard ``kappa * x(a)**-k``
* ``seasonal``: hazard ``kappa * x(a)**-k * n(a)`` with an epidemic profile ``n``
* ``gamma_q``: gamma-distributed waiting time
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import integrate, optimize, special

from .model import ModelSpec, horizon, mean_time, support_start
from .special import EULER_GAMMA, e1_scaled_array

KINDS = ("exp_decay_exp_q", "constant_boost", "threshold", "power_law", "seasonal", "gamma_q")


def _bisect_increasing(fn, target, hi0=1.0, iters=200):
    """Solve fn(a) = target for a >= 0, fn increasing with fn(0) = 0; vectorized."""
    target = np.asarray(target, dtype=float)
    lo = np.zeros_like(target)
    hi = np.full_like(target, hi0)
    for _ in range(200):
        grow = fn(hi) < target
        if not np.any(grow):
            break
        lo = np.where(grow, hi, lo)
        hi = np.where(grow, 2.0 * hi, hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = fn(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(hi, 1.0)):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------- residual delay densities


@dataclass(frozen=True)
class TabulatedDensity:
    """Piecewise-constant density on ``edges``; zero outside them."""

    edges: tuple
    values: tuple

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if e.ndim != 1 or v.shape != (e.size - 1,) or np.any(np.diff(e) <= 0) or e[0] < 0 or np.any(v < 0):
            raise ValueError("tabulated density needs increasing edges >= 0 and one nonnegative value per cell")
        mass = float(np.sum(v * np.diff(e)))
        if mass <= 0:
            raise ValueError("tabulated density has zero mass")
        object.__setattr__(self, "edges", tuple(e))
        object.__setattr__(self, "values", tuple(v / mass))

    @property
    def _arrays(self):
        e = np.asarray(self.edges)
        v = np.asarray(self.values)
        cdf = np.concatenate(([0.0], np.cumsum(v * np.diff(e))))
        return e, v, cdf

    def pdf(self, s):
        e, v, _ = self._arrays
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(e, s, side="right") - 1
        inside = (idx >= 0) & (idx < v.size)
        return np.where(inside, v[np.clip(idx, 0, v.size - 1)], 0.0)

    def sf(self, s):
        e, _, cdf = self._arrays
        return 1.0 - np.interp(s, e, cdf, left=0.0, right=1.0)

    def sf_integral(self, s):
        # int_0^s sf; sf is piecewise linear between edges
        e, _, cdf = self._arrays
        s = np.asarray(s, dtype=float)
        nodes = np.concatenate(([0.0], e)) if e[0] > 0 else e
        sf_nodes = 1.0 - np.interp(nodes, e, cdf, left=0.0, right=1.0)
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (sf_nodes[1:] + sf_nodes[:-1]) * np.diff(nodes))))
        sc = np.clip(s, 0.0, None)
        k = np.clip(np.searchsorted(nodes, sc, side="right") - 1, 0, nodes.size - 1)
        part = 0.5 * (sf_nodes[k] + self.sf(sc)) * (sc - nodes[k])
        return np.where(sc >= nodes[-1], cum[-1], cum[k] + part)

    def isf(self, u):
        e, _, cdf = self._arrays
        return np.interp(1.0 - np.asarray(u, dtype=float), cdf, e)

    def mean(self):
        e, v, _ = self._arrays
        return float(np.sum(v * 0.5 * (e[1:] ** 2 - e[:-1] ** 2)))

    def std(self):
        e, v, _ = self._arrays
        m2 = float(np.sum(v * (e[1:] ** 3 - e[:-1] ** 3) / 3.0))
        return math.sqrt(max(m2 - self.mean() ** 2, 0.0))


@dataclass(frozen=True)
class ExponentialDensity:
    mean_value: float

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s >= 0, np.exp(-np.clip(s, 0, None) / self.mean_value) / self.mean_value, 0.0)

    def sf(self, s):
        return np.exp(-np.clip(np.asarray(s, dtype=float), 0, None) / self.mean_value)

    def sf_integral(self, s):
        return -self.mean_value * np.expm1(-np.clip(np.asarray(s, dtype=float), 0, None) / self.mean_value)

    def isf(self, u):
        return -self.mean_value * np.log(u)

    def mean(self):
        return self.mean_value

    def std(self):
        return self.mean_value


# ---------------------------------------------------------------- epidemic profiles n(a)


def _erf_diff(z1, z2):
    """erf(z2) - erf(z1) without cancellation in the tails."""
    z1, z2 = np.broadcast_arrays(np.asarray(z1, dtype=float), np.asarray(z2, dtype=float))
    pos = z1 >= 0
    neg = z2 <= 0
    out = special.erf(z2) - special.erf(z1)
    out = np.where(pos, special.erfc(z1) - special.erfc(z2), out)
    return np.where(neg, special.erfc(-z2) - special.erfc(-z1), out)


@dataclass(frozen=True)
class BumpProfile:
    """n(a) = baseline + sum_j heights[j] * exp(-(a - (j+1) period)^2 / (2 width^2))."""

    baseline: float = 0.05
    heights: tuple = ()
    period: float = 1.0
    width: float = 0.08

    def _centres(self):
        return self.period * np.arange(1, len(self.heights) + 1), np.asarray(self.heights, dtype=float)

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        mu, h = self._centres()
        z = (a[..., None] - mu) / self.width
        return self.baseline + np.sum(h * np.exp(-0.5 * z * z), axis=-1)

    def weighted_integral(self, a, beta):
        """int_0^a e^{beta r} n(r) dr (closed form)."""
        a = np.asarray(a, dtype=float)
        out = self.baseline * np.expm1(beta * a) / beta
        if not self.heights:
            return out
        mu, h = self._centres()
        w = self.width
        shift = mu + beta * w * w
        scale = h * w * math.sqrt(math.pi / 2.0) * np.exp(beta * mu + 0.5 * (beta * w) ** 2)
        r2w = math.sqrt(2.0) * w
        bumps = scale * _erf_diff(-shift / r2w, (a[..., None] - shift) / r2w)
        return out + np.sum(bumps, axis=-1)

    def mean(self, span):
        val, _ = integrate.quad(lambda r: float(self(r)), 0.0, span, limit=400)
        return val / span


@dataclass(frozen=True)
class TabulatedProfile:
    """Piecewise-constant n(a) on ``edges`` with the last value held beyond them."""

    edges: tuple
    values: tuple

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if e[0] != 0.0 or np.any(np.diff(e) <= 0) or v.shape != (e.size - 1,) or np.any(v <= 0):
            raise ValueError("tabulated profile needs edges from 0 and positive values")
        object.__setattr__(self, "edges", tuple(e))
        object.__setattr__(self, "values", tuple(v))

    def __call__(self, a):
        e = np.asarray(self.edges)
        v = np.asarray(self.values)
        idx = np.clip(np.searchsorted(e, np.asarray(a, dtype=float), side="right") - 1, 0, v.size - 1)
        return v[idx]

    def weighted_integral(self, a, beta):
        e = np.asarray(self.edges)
        v = np.asarray(self.values)
        a = np.asarray(a, dtype=float)
        cum = np.concatenate(([0.0], np.cumsum(v * (np.exp(beta * e[1:]) - np.exp(beta * e[:-1])) / beta)))
        idx = np.clip(np.searchsorted(e, a, side="right") - 1, 0, v.size - 1)
        return cum[idx] + v[idx] * (np.exp(beta * a) - np.exp(beta * e[idx])) / beta

    def mean(self, span):
        val, _ = integrate.quad(lambda r: float(self(r)), 0.0, span, points=list(self.edges[1:-1]), limit=400)
        return val / span


def default_profile(period=1.0, mean=1.25):
    """Decaying multimodal outbreak profile with peaks at multiples of ``period``,
    scaled to the given mean over ten periods."""
    unit = BumpProfile(baseline=0.01, heights=tuple(0.35 ** j for j in range(9)), period=period, width=0.08 * period)
    s = mean / unit.mean(10 * period)
    return BumpProfile(baseline=s * unit.baseline, heights=tuple(s * h for h in unit.heights), period=period,
                       width=unit.width)


# ---------------------------------------------------------------- parameters and construction


@dataclass(frozen=True)
class PresetParams:
    kind: str
    c: float = 1.0
    K_boost: float = 1.0
    b_boost: float = 1.0
    rate: float = 1.0
    x_th: float = 1.0
    m_theta: float = 1.0
    residual_density_h: Optional[object] = None
    kappa: float = 0.01
    k: float = 1.0
    n_profile: Optional[object] = None
    T_season: float = 1.0
    gamma_shape: float = 2.0
    gamma_scale: float = 1.0
    extra: dict = field(default_factory=dict)


def _check(params):
    if params.kind not in KINDS:
        raise ValueError(f"unknown preset kind {params.kind!r}; expected one of {KINDS}")
    for name in ("c", "rate", "m_theta", "kappa", "k", "T_season", "gamma_shape", "gamma_scale", "b_boost"):
        if not getattr(params, name) > 0:
            raise ValueError(f"preset parameter {name} must be > 0, got {getattr(params, name)!r}")
    if params.K_boost < 0:
        raise ValueError("preset parameter K_boost must be >= 0")
    if params.kind == "threshold":
        g_min = params.K_boost if params.b_boost >= 0 else -math.inf
        if not 0 < params.x_th <= g_min:
            raise ValueError(f"threshold preset needs 0 < x_th <= min G = {g_min!r}, got x_th={params.x_th!r}")


def build_preset(params: PresetParams) -> ModelSpec:
    """Model for one of the worked examples."""
    _check(params)
    c, K, b = params.c, params.K_boost, params.b_boost

    common = dict(
        F=lambda x: -c * np.asarray(x, dtype=float),
        G=lambda x: b * np.asarray(x, dtype=float) + K,
        G_inverse=lambda y: (np.asarray(y, dtype=float) - K) / b,
        G_increasing=True,
        decay_rate=c,
        kind=params.kind,
        params=params,
    )
    kind = params.kind
    if kind in ("exp_decay_exp_q", "constant_boost"):
        return ModelSpec(**common, **_exponential_law(params.rate))
    if kind == "gamma_q":
        return ModelSpec(**common, **_gamma_law(params.gamma_shape, params.gamma_scale))
    if kind == "threshold":
        return ModelSpec(**common, **_threshold_law(params))
    if kind == "power_law":
        rate0 = lambda x: params.kappa * np.asarray(x, dtype=float) ** -params.k
        return ModelSpec(**common, **_power_law(params.c * params.k, rate0))
    return ModelSpec(**common, **_seasonal_law(params))


def _bcast(x_b, a):
    return np.broadcast_arrays(np.asarray(x_b, dtype=float), np.asarray(a, dtype=float))


def _exponential_law(lam):
    def q(x_b, a):
        _, a = _bcast(x_b, a)
        return np.where(a >= 0, lam * np.exp(-lam * np.clip(a, 0, None)), 0.0)

    def phi(x_b, a):
        _, a = _bcast(x_b, a)
        return np.exp(-lam * np.clip(a, 0, None))

    return dict(
        q=q,
        survival_fn=phi,
        hazard_fn=lambda x_b, a: np.full(_bcast(x_b, a)[0].shape, lam),
        survival_integral_fn=lambda x_b, a: -np.expm1(-lam * np.clip(_bcast(x_b, a)[1], 0, None)) / lam,
        inverse_survival_fn=lambda x_b, u: -np.log(_bcast(x_b, u)[1]) / lam,
        support_start_fn=lambda x_b: 0.0 * np.asarray(x_b, dtype=float),
        mean_time_fn=lambda x_b: 1.0 / lam + 0.0 * np.asarray(x_b, dtype=float),
        q_status_free=True,
    )


def _gamma_law(shape, scale):
    log_norm = special.gammaln(shape) + shape * math.log(scale)

    def log_pdf(a):
        with np.errstate(divide="ignore"):
            return (shape - 1.0) * np.log(a) - a / scale - log_norm

    def q(x_b, a):
        _, a = _bcast(x_b, a)
        pos = a > 0
        return np.where(pos, np.exp(log_pdf(np.where(pos, a, 1.0))), 0.0 if shape != 1.0 else 1.0 / scale * (a == 0))

    def phi(x_b, a):
        _, a = _bcast(x_b, a)
        return special.gammaincc(shape, np.clip(a, 0, None) / scale)

    def hazard(x_b, a):
        _, a = _bcast(x_b, a)
        pos = a > 0
        ap = np.where(pos, a, 1.0)
        with np.errstate(divide="ignore"):
            log_sf = np.log(special.gammaincc(shape, ap / scale))
            p = np.exp(log_pdf(ap) - log_sf)
        at_zero = 1.0 / scale if shape == 1.0 else (0.0 if shape > 1.0 else np.inf)
        return np.where(pos, p, at_zero)

    def psi(x_b, a):
        _, a = _bcast(x_b, a)
        a = np.clip(a, 0, None)
        fin = np.isfinite(a)
        af = np.where(fin, a, 0.0)
        head = af * special.gammaincc(shape, af / scale) + shape * scale * special.gammainc(shape + 1.0, af / scale)
        return np.where(fin, head, shape * scale)

    return dict(
        q=q,
        survival_fn=phi,
        hazard_fn=hazard,
        survival_integral_fn=psi,
        inverse_survival_fn=lambda x_b, u: scale * special.gammainccinv(shape, _bcast(x_b, u)[1]),
        support_start_fn=lambda x_b: 0.0 * np.asarray(x_b, dtype=float),
        mean_time_fn=lambda x_b: shape * scale + 0.0 * np.asarray(x_b, dtype=float),
        q_status_free=True,
    )


def _threshold_law(params):
    c, x_th = params.c, params.x_th
    h = params.residual_density_h or ExponentialDensity(params.m_theta)

    def a_th(x_b):
        # statuses already below the threshold are infectable at once
        x_b = np.asarray(x_b, dtype=float)
        return np.log(np.maximum(x_b, x_th) / x_th) / c

    def q(x_b, a):
        x_b, a = _bcast(x_b, a)
        s = a - a_th(x_b)
        return np.where(s >= 0, h.pdf(np.clip(s, 0, None)), 0.0)

    def phi(x_b, a):
        x_b, a = _bcast(x_b, a)
        return h.sf(a - a_th(x_b))

    def hazard(x_b, a):
        x_b, a = _bcast(x_b, a)
        s = a - a_th(x_b)
        sf = h.sf(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(s < 0, 0.0, np.where(sf > 0, h.pdf(np.clip(s, 0, None)) / np.where(sf > 0, sf, 1), np.inf))

    def psi(x_b, a):
        x_b, a = _bcast(x_b, a)
        ath = a_th(x_b)
        a = np.clip(a, 0, None)
        tail = np.where(np.isinf(a), h.mean(), h.sf_integral(np.where(np.isinf(a), 0.0, a - ath)))
        return np.minimum(a, ath) + np.where(a > ath, tail, 0.0)

    def inv(x_b, u):
        x_b, u = _bcast(x_b, u)
        return a_th(x_b) + h.isf(u)

    return dict(
        q=q,
        survival_fn=phi,
        hazard_fn=hazard,
        survival_integral_fn=psi,
        inverse_survival_fn=inv,
        support_start_fn=a_th,
        mean_time_fn=lambda x_b: h.mean() + a_th(x_b),
    )


def _power_law(beta, base_rate):
    """Hazard base_rate(x_b) * e^{beta a}; base_rate is the hazard at age 0."""

    def k_e1(x_b):
        return base_rate(x_b) / beta

    def phi(x_b, a):
        x_b, a = _bcast(x_b, a)
        return np.exp(-k_e1(x_b) * np.expm1(beta * np.clip(a, 0, None)))

    def hazard(x_b, a):
        x_b, a = _bcast(x_b, a)
        return base_rate(x_b) * np.exp(beta * np.clip(a, 0, None))

    def q(x_b, a):
        # log form: the hazard overflows where the survival underflows
        x_b, a = _bcast(x_b, a)
        r = np.clip(a, 0, None)
        with np.errstate(over="ignore"):
            log_q = np.log(base_rate(x_b)) + beta * r - k_e1(x_b) * np.expm1(beta * r)
        return np.where(a >= 0, np.exp(log_q), 0.0)

    def psi(x_b, a):
        x_b, a = _bcast(x_b, a)
        K1 = k_e1(x_b)
        a = np.clip(a, 0, None)
        with np.errstate(over="ignore"):
            y = K1 * np.exp(beta * np.where(np.isinf(a), 0.0, a))
        tail = phi(x_b, a) * e1_scaled_array(np.where(np.isfinite(y), y, 1.0))
        tail = np.where(np.isfinite(y) & ~np.isinf(a), tail, 0.0)
        return (e1_scaled_array(K1) - tail) / beta

    def inv(x_b, u):
        x_b, u = _bcast(x_b, u)
        return np.log1p(-np.log(u) / k_e1(x_b)) / beta

    return dict(
        q=q,
        survival_fn=phi,
        hazard_fn=hazard,
        survival_integral_fn=psi,
        inverse_survival_fn=inv,
        support_start_fn=lambda x_b: 0.0 * np.asarray(x_b, dtype=float),
        mean_time_fn=lambda x_b: e1_scaled_array(np.atleast_1d(k_e1(x_b))).reshape(np.shape(x_b)) / beta,
    )


def _seasonal_law(params):
    beta = params.c * params.k
    n = params.n_profile or default_profile(params.T_season, 125.0 * params.kappa)

    def r0(x_b):
        return params.kappa * np.asarray(x_b, dtype=float) ** -params.k

    def phi(x_b, a):
        x_b, a = _bcast(x_b, a)
        return np.exp(-r0(x_b) * n.weighted_integral(np.clip(a, 0, None), beta))

    def hazard(x_b, a):
        x_b, a = _bcast(x_b, a)
        a = np.clip(a, 0, None)
        return r0(x_b) * np.exp(beta * a) * n(a)

    def q(x_b, a):
        x_b, a = _bcast(x_b, a)
        r = np.clip(a, 0, None)
        rate = r0(x_b)
        with np.errstate(over="ignore", divide="ignore"):
            log_q = np.log(rate) + beta * r + np.log(n(r)) - rate * n.weighted_integral(r, beta)
        return np.where(a >= 0, np.exp(log_q), 0.0)

    def inv(x_b, u):
        x_b, u = _bcast(x_b, u)
        target = -np.log(u) / r0(x_b)
        return _bisect_increasing(lambda s: n.weighted_integral(s, beta), target)

    return dict(
        q=q,
        survival_fn=phi,
        hazard_fn=hazard,
        inverse_survival_fn=inv,
        support_start_fn=lambda x_b: 0.0 * np.asarray(x_b, dtype=float),
    )


# ---------------------------------------------------------------- closed-form quantities


def threshold_time(params, x_b, F=None):
    """Time for the status to wane from ``x_b`` to the threshold ``x_th``.

    With ``F`` given the general integral int_{x_b}^{x_th} dx / F(x) is
    evaluated by quadrature, otherwise the exponential closed form is used.
    """
    if x_b < params.x_th:
        raise ValueError(f"x_b={x_b!r} is already below the threshold {params.x_th!r}")
    if x_b == params.x_th:
        return 0.0
    if F is None:
        return math.log(x_b / params.x_th) / params.c
    val, _ = integrate.quad(lambda x: 1.0 / float(F(x)), x_b, params.x_th, epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def e1_argument(params, x_b):
    """kappa x_b^{-k} / (c k), the argument of E1 in the power-law mean."""
    return params.kappa * x_b ** -params.k / (params.c * params.k)


def mean_time_log_approx(params, x_b):
    """Small-argument approximation ln(x_b)/c - (gamma + ln(kappa/(ck)))/(ck)."""
    ck = params.c * params.k
    return math.log(x_b) / params.c - (EULER_GAMMA + math.log(params.kappa / ck)) / ck


def mean_reinfection_time(model, x_b, method="auto"):
    """Expected time to the next infection from post-boost status ``x_b``.

    ``method="quadrature"`` integrates Phi; ``"closed"`` uses the preset's
    closed form. ``"auto"`` uses the closed form and, for the power-law
    preset, cross-checks it against quadrature.
    """
    if method == "closed" or (method == "auto" and model.mean_time_fn is not None):
        if model.mean_time_fn is None:
            raise ValueError(f"no closed form for {model.kind!r}")
        closed = float(model.mean_time_fn(x_b))
        if method == "auto" and model.kind == "power_law":
            quad = _quadrature_mean(model, x_b)
            if abs(quad - closed) > 1e-8 * closed:
                raise ArithmeticError(f"power-law mean mismatch: closed {closed!r} vs quadrature {quad!r}")
        return closed
    return _quadrature_mean(model, x_b)


def _quadrature_mean(model, x_b):
    try:
        a_max = horizon(model, x_b)
    except ValueError as exc:
        raise ValueError(f"mean waiting time diverges at x_b={x_b!r} (B2 fails)") from exc
    d = support_start(model, x_b)
    pts = [d] if 0 < d < a_max else None
    phi = model.survival_fn if model.survival_fn is not None else None
    if phi is None:
        return mean_time(replace(model, mean_time_fn=None), x_b)
    val, _ = integrate.quad(lambda s: float(phi(x_b, s)), 0.0, a_max, points=pts, epsabs=1e-14, epsrel=1e-12, limit=400)
    return val


def density_mode(model, x_b):
    """Age maximizing q(x_b, .) and the peak value, refined by bounded Brent."""
    d = support_start(model, x_b)
    a_max = horizon(model, x_b)
    grid = np.linspace(d, a_max, 4097)
    vals = np.asarray(model.q(x_b, grid), dtype=float)
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda s: -float(model.q(x_b, s)), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    a_star = float(res.x)
    q_star = float(model.q(x_b, a_star))
    if vals[i] > q_star:
        a_star, q_star = float(grid[i]), float(vals[i])
    return a_star, q_star


def peaked_power_law_params():
    """Power-law parameters with ck = 1 and x_b^k = 100 kappa, and that x_b."""
    params = PresetParams(kind="power_law", c=1.0, k=1.0, kappa=0.01, K_boost=1.0)
    return params, 1.0


def seasonal_example_params(T_season=1.0):
    """Seasonal parameters with ck ~ 0.953 and x_b^k n_bar ~ 125 kappa, and that x_b."""
    kappa = 0.01
    profile = default_profile(T_season, 125.0 * kappa)
    params = PresetParams(kind="seasonal", c=0.953, k=1.0, kappa=kappa, K_boost=1.0,
                          n_profile=profile, T_season=T_season)
    return params, 1.0
