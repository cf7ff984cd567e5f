"""Model core: waning flow, boost map, inter-infection law and checks on them.

A model is the triple (F, G, q): immune status decays along ``x' = F(x)``,
jumps to ``G(x)`` at an infection, and the waiting time to the next infection
has density ``a -> q(x_b, a)`` given the post-boost status ``x_b``.
All callables stored on a :class:`ModelSpec` are expected to broadcast over
numpy arrays.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from scipy import integrate, optimize

from .quadrature import panel_quad

log = logging.getLogger(__name__)

FLOW_RTOL = 1e-10
SURVIVAL_FLOOR = 1e-12
A5_CANDIDATES = tuple(2.0 ** -j for j in range(1, 21))
DENSE_PROBES = 2 ** 10


class FlowIntegrationError(RuntimeError):
    pass


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Immutable bundle of F, G, q plus whatever closed forms are known.

    ``decay_rate`` set means ``F(x) = -decay_rate * x`` and the flow is
    evaluated in closed form; otherwise an adaptive Runge-Kutta pair is used.
    The optional ``*_fn`` callables short-circuit quadrature and root finding.
    """

    F: Callable
    G: Callable
    q: Callable
    decay_rate: Optional[float] = None
    kind: str = "generic"
    domain_floor: float = 0.0
    survival_fn: Optional[Callable] = None
    hazard_fn: Optional[Callable] = None
    survival_integral_fn: Optional[Callable] = None
    inverse_survival_fn: Optional[Callable] = None
    support_start_fn: Optional[Callable] = None
    mean_time_fn: Optional[Callable] = None
    G_inverse: Optional[Callable] = None
    G_increasing: bool = False
    q_status_free: bool = False
    params: Mapping = field(default_factory=dict)

    @property
    def flow_kind(self):
        if self.decay_rate is not None:
            return ("closed_form_exponential", self.decay_rate)
        return ("numeric_ode", None)


@dataclass(frozen=True)
class SurvivalCurve:
    x_b: float
    evaluator: Callable
    closed_form: Optional[str] = None

    def __call__(self, a):
        return self.evaluator(a)


@dataclass(frozen=True)
class HazardCurve:
    """Hazard ``a -> p(x_b, a)``; zero before ``support_start``.

    ``capped_from`` is the first age at which the survival underflowed to zero
    (the hazard is reported as +inf beyond it), ``inf`` if it never did within
    the checked range. Under (B1) the support is unbounded.
    """

    x_b: float
    evaluator: Callable
    support_start: float = 0.0
    unbounded_support: bool = True
    capped_from: float = math.inf

    def __call__(self, a):
        return self.evaluator(a)


@dataclass(frozen=True)
class AssumptionCheck:
    id: str
    status: str  # "pass" | "fail" | "not-applicable"
    margin: float
    probe: str = ""


@dataclass
class AssumptionReport:
    entries: dict
    epsilon_A5: Optional[float] = None
    M1_bound: Optional[float] = None
    L_C2: Optional[float] = None

    def status(self, key):
        return self.entries[key].status

    def passed(self, ids=None):
        ids = self.entries.keys() if ids is None else ids
        return all(self.entries[i].status != "fail" for i in ids)

    def failures(self):
        return [e.id for e in self.entries.values() if e.status == "fail"]

    def to_text(self):
        lines = []
        for e in self.entries.values():
            lines.append(f"{e.id}.status = {e.status}")
            lines.append(f"{e.id}.margin = {e.margin!r}")
            if e.probe:
                lines.append(f"{e.id}.probe = {e.probe}")
        lines.append(f"epsilon_A5 = {self.epsilon_A5!r}")
        lines.append(f"M1_bound = {self.M1_bound!r}")
        lines.append(f"L_C2 = {self.L_C2!r}")
        return "\n".join(lines) + "\n"


@dataclass
class StatusInterval:
    x_min: float
    x_max: float
    iterations_used: int
    converged: bool
    unbounded: bool = False
    history: list = field(default_factory=list)


# ---------------------------------------------------------------- flow


def _ode_flow(model, x0, t):
    floor = model.domain_floor
    if t == 0.0 or x0 <= floor:
        return x0
    # integrate z = log(x - floor) so the tolerance is relative in the distance to the floor
    sol = integrate.solve_ivp(
        lambda _, z: [float(model.F(floor + math.exp(z[0]))) * math.exp(-z[0])],
        (0.0, t),
        [math.log(x0 - floor)],
        method="RK45",
        rtol=FLOW_RTOL,
        atol=FLOW_RTOL * 1e-2,
    )
    if not sol.success:
        raise FlowIntegrationError(f"flow from x0={x0} over t={t}: {sol.message}")
    return floor + math.exp(float(sol.y[0, -1]))


def flow_array(model, x0, t):
    """pi_t x0 without argument checks; broadcasts."""
    if model.decay_rate is not None:
        return np.asarray(x0, dtype=float) * np.exp(-model.decay_rate * np.asarray(t, dtype=float))
    x0, t = np.broadcast_arrays(np.asarray(x0, dtype=float), np.asarray(t, dtype=float))
    out = np.empty(x0.shape)
    for idx in np.ndindex(x0.shape):
        out[idx] = _ode_flow(model, float(x0[idx]), float(t[idx]))
    return out


def flow(model, x0, t):
    """Status reached from ``x0`` after waning for time ``t``."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("flow time must be non-negative")
    if np.any(np.asarray(x0) < model.domain_floor):
        raise ValueError(f"x0 below the domain floor {model.domain_floor}")
    out = flow_array(model, x0, t)
    return float(out) if np.ndim(out) == 0 else out


def inverse_flow(model, x, a):
    """The status ``y`` with ``flow(y, a) == x``, or ``None`` if the backward
    orbit leaves the admissible domain (blows up) before time ``a``."""
    if a < 0:
        raise ValueError("backward time must be non-negative")
    if x < model.domain_floor:
        raise ValueError(f"x below the domain floor {model.domain_floor}")
    if a == 0:
        return float(x)
    if model.decay_rate is not None:
        y = x * math.exp(model.decay_rate * a)
        return y if math.isfinite(y) else None

    blow_up = 1e15 * max(1.0, abs(x))

    def escaped(_, y):
        return blow_up - abs(y[0])

    escaped.terminal = True
    sol = integrate.solve_ivp(
        lambda _, y: [-float(model.F(y[0]))],
        (0.0, a),
        [float(x)],
        method="RK45",
        rtol=FLOW_RTOL,
        atol=FLOW_RTOL * 1e-2 * max(1.0, abs(x)),
        events=escaped,
    )
    if sol.status == 1 or not sol.success:
        return None
    y = float(sol.y[0, -1])
    return y if math.isfinite(y) else None


def flow_time(model, x_from, x_to):
    """Time for the orbit of ``x_from`` to decay to ``x_to``.

    0 when ``x_to >= x_from``; ``inf`` when ``x_to`` is at or below the floor
    (the floor is an equilibrium and is only approached asymptotically).
    """
    xf, xt = np.broadcast_arrays(np.asarray(x_from, dtype=float), np.asarray(x_to, dtype=float))
    if model.decay_rate is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.log(xf / xt) / model.decay_rate
        t = np.where(xt <= model.domain_floor, np.inf, t)
        t = np.where(xt >= xf, 0.0, t)
        return float(t) if t.ndim == 0 else t
    out = np.empty(xf.shape)
    for idx in np.ndindex(xf.shape):
        a, b = float(xf[idx]), float(xt[idx])
        if b >= a:
            out[idx] = 0.0
        elif b <= model.domain_floor:
            out[idx] = math.inf
        else:
            val, _ = integrate.quad(lambda y: -1.0 / float(model.F(y)), b, a, epsabs=0.0, epsrel=1e-12, limit=200)
            out[idx] = val
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- q, Phi, p


def support_start(model, x_b):
    """Largest age before which q(x_b, .) vanishes identically."""
    if model.support_start_fn is not None:
        return float(model.support_start_fn(x_b))
    if float(model.q(x_b, 0.0)) > 0:
        return 0.0
    ages = np.linspace(0.0, _horizon_guess(model, x_b), DENSE_PROBES + 1)
    vals = np.asarray(model.q(x_b, ages), dtype=float)
    positive = np.nonzero(vals > 0)[0]
    if positive.size == 0:
        raise ValueError(f"q({x_b}, .) vanishes on the probed range")
    hi = ages[positive[0]]
    lo = ages[positive[0] - 1]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if float(model.q(x_b, mid)) > 0:
            hi = mid
        else:
            lo = mid
    return lo


def _horizon_guess(model, x_b):
    # generic path: doubling on the tail mass of q
    a = 1.0
    while a < 1e8:
        tail, _ = integrate.quad(lambda s: float(model.q(x_b, s)), a, np.inf, limit=200)
        if tail < SURVIVAL_FLOOR:
            return a
        a *= 2.0
    raise ValueError(f"no quadrature horizon found for x_b={x_b}")


def survival_array(model, x_b, a):
    """Phi(x_b, a) = P(waiting time > a); broadcasts."""
    if model.survival_fn is not None:
        return np.asarray(model.survival_fn(x_b, a), dtype=float)
    xb, aa = np.broadcast_arrays(np.asarray(x_b, dtype=float), np.asarray(a, dtype=float))
    out = np.empty(xb.shape)
    for idx in np.ndindex(xb.shape):
        xv, av = float(xb[idx]), float(aa[idx])
        if av <= 0:
            out[idx] = 1.0
            continue
        val, _ = integrate.quad(lambda s: float(model.q(xv, s)), av, np.inf, epsabs=1e-15, epsrel=1e-12, limit=200)
        out[idx] = min(1.0, max(0.0, val))
    return out


def survival_integral_array(model, x_b, a):
    """int_0^a Phi(x_b, r) dr; broadcasts."""
    if model.survival_integral_fn is not None:
        return np.asarray(model.survival_integral_fn(x_b, a), dtype=float)
    xb, aa = np.broadcast_arrays(np.asarray(x_b, dtype=float), np.asarray(a, dtype=float))
    out = np.empty(xb.shape)
    for idx in np.ndindex(xb.shape):
        xv, av = float(xb[idx]), float(aa[idx])
        if not math.isfinite(av):
            out[idx] = mean_time(model, xv)
            continue
        # integration by parts: int_0^a Phi = a Phi(a) + int_0^a r q(r) dr
        m, _ = integrate.quad(lambda s: s * float(model.q(xv, s)), 0.0, av, epsabs=1e-14, epsrel=1e-12, limit=200)
        out[idx] = av * float(survival_array(model, xv, av)) + m
    return out


def horizon(model, x_b, target=SURVIVAL_FLOOR):
    """Smallest doubled age A_max with Phi(x_b, A_max) < target."""
    a = max(1.0, 2.0 * support_start(model, x_b) + 1.0)
    while a < 1e8:
        if float(survival_array(model, x_b, a)) < target:
            return a
        a *= 2.0
    raise ValueError(f"survival at x_b={x_b} does not fall below {target}")


def integrate_q(model, x_b, lo, hi):
    """int_lo^hi q(x_b, a) da with the support start as a breakpoint."""
    d = support_start(model, x_b)
    pieces = [(lo, hi)] if not lo < d < hi else [(lo, d), (d, hi)]
    total = 0.0
    for a, b in pieces:
        val, _ = panel_quad(lambda s: np.asarray(model.q(x_b, s), dtype=float), a, b)
        total += val
    return total


def survival(model, x_b):
    """Survival curve a -> Phi(x_b, a)."""
    tag = model.kind if model.survival_fn is not None else None

    def evaluator(a):
        out = survival_array(model, x_b, a)
        return float(out) if np.ndim(out) == 0 else out

    return SurvivalCurve(x_b=float(x_b), evaluator=evaluator, closed_form=tag)


def _check_normalized(model, x_b, tol=1e-7):
    total = integrate_q(model, x_b, 0.0, horizon(model, x_b))
    if abs(total - 1.0) > tol:
        raise ValueError(f"q({x_b}, .) integrates to {total!r}, not 1")


def _underflow_age(model, x_b):
    a = horizon(model, x_b)
    for _ in range(60):
        if float(survival_array(model, x_b, a)) == 0.0:
            lo, hi = a / 2.0, a
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if float(survival_array(model, x_b, mid)) == 0.0:
                    hi = mid
                else:
                    lo = mid
            return hi
        a *= 2.0
        if a > 1e6:
            break
    return math.inf


def hazard_from_density(model, x_b):
    """Hazard p = q / Phi for the waiting-time law at ``x_b``.

    Presets that know their hazard in closed form use it; otherwise the ratio
    is evaluated directly.
    """
    _check_normalized(model, x_b)
    d = support_start(model, x_b)

    def evaluator(a):
        aa = np.asarray(a, dtype=float)
        if model.hazard_fn is not None:
            p = np.asarray(model.hazard_fn(x_b, aa), dtype=float)
        else:
            qa = np.asarray(model.q(x_b, aa), dtype=float)
            phi = survival_array(model, x_b, aa)
            with np.errstate(divide="ignore", invalid="ignore"):
                p = np.where(phi > 0, qa / np.where(phi > 0, phi, 1.0), np.inf)
        p = np.where(aa < d, 0.0, p)
        return float(p) if p.ndim == 0 else p

    return HazardCurve(x_b=float(x_b), evaluator=evaluator, support_start=d, capped_from=_underflow_age(model, x_b))


def cumulative_hazard(hazard, a):
    """int_0^a p(r) dr; ``a`` may be an array, integrated piecewise in sorted order."""
    aa = np.asarray(a, dtype=float)
    ages = np.unique(np.clip(aa.ravel(), 0.0, None))
    d = hazard.support_start
    knots = np.union1d(ages, [0.0] + ([d] if 0.0 < d < ages.max(initial=0.0) else []))
    pieces = np.zeros(knots.size)
    for i in range(1, knots.size):
        lo, hi = knots[i - 1], knots[i]
        if hi <= d:
            continue
        val, _ = integrate.quad(lambda s: float(hazard(s)), lo, hi, epsabs=1e-14, epsrel=1e-12, limit=400)
        pieces[i] = val
    cum = np.cumsum(pieces)
    out = cum[np.searchsorted(knots, np.clip(aa, 0.0, None))]
    return float(out) if out.ndim == 0 else out


def density_from_hazard(hazard):
    """Density a -> p(a) exp(-int_0^a p) rebuilt from a hazard curve."""
    probe = 1e-3 * max(1.0, hazard.support_start)
    head = cumulative_hazard(hazard, hazard.support_start + probe)
    if not math.isfinite(head):
        raise ValueError("hazard is not integrable near the support start")

    def q(a):
        aa = np.asarray(a, dtype=float)
        lam = cumulative_hazard(hazard, aa)
        p = np.asarray(hazard(aa), dtype=float)
        with np.errstate(invalid="ignore"):
            out = np.where(np.isinf(p), 0.0, p * np.exp(-lam))
        out = np.where(aa < 0, 0.0, out)
        return float(out) if out.ndim == 0 else out

    return q


def inverse_survival(model, x_b, u):
    """Age ``a`` with Phi(x_b, a) = u; broadcasts over x_b and u."""
    if model.inverse_survival_fn is not None:
        return np.asarray(model.inverse_survival_fn(x_b, u), dtype=float)
    xb, uu = np.broadcast_arrays(np.asarray(x_b, dtype=float), np.asarray(u, dtype=float))
    out = np.empty(xb.shape)
    for idx in np.ndindex(xb.shape):
        out[idx] = _invert_survival_scalar(model, float(xb[idx]), float(uu[idx]))
    return out


def _invert_survival_scalar(model, x_b, u, hard_cap=1e6):
    lo = support_start(model, x_b)
    if u >= 1.0:
        return lo
    hi = max(2.0 * lo, lo + 1.0)
    while float(survival_array(model, x_b, hi)) > u:
        lo = hi
        hi *= 2.0
        if hi > hard_cap:
            raise SamplingError(f"survival root for u={u} at x_b={x_b} lies beyond {hard_cap}")
    return optimize.brentq(lambda s: float(survival_array(model, x_b, s)) - u, lo, hi, xtol=1e-13, rtol=1e-15)


def sample_interjump(model, x_b, rng):
    """Draw a waiting time from q(x_b, .) by inversion of Phi.

    ``rng`` is any object with a ``random()`` method returning a uniform on
    (0, 1), owned by the caller.
    """
    u = rng.random()
    return float(inverse_survival(model, x_b, u))


def mean_time(model, x_b):
    """int_0^inf a q(x_b, a) da = int_0^inf Phi(x_b, a) da."""
    if model.mean_time_fn is not None:
        return float(model.mean_time_fn(x_b))
    d = support_start(model, x_b)
    a_max = horizon(model, x_b)
    pts = [d] if 0.0 < d < a_max else None
    val, _ = integrate.quad(lambda s: float(survival_array(model, x_b, s)), 0.0, a_max, points=pts,
                            epsabs=1e-13, epsrel=1e-11, limit=400)
    return val


# ---------------------------------------------------------------- assumptions


def _extrapolation_points(x_top, n=31):
    return float(x_top) * 2.0 ** np.arange(n)


def validate_assumptions(model, probe_grid):
    """Probe (A1)-(A5), (B1)-(B2), (C1)-(C2) on a finite status grid.

    Failures are data: each entry records a margin (positive when the
    inequality holds with room to spare) and the witness probe.
    """
    probes = np.unique(np.asarray(probe_grid, dtype=float))
    if probes.size == 0 or not np.all(np.isfinite(probes)):
        raise ValueError("probe grid must be nonempty and finite")
    entries = {}

    # A1: F < 0 above the floor, F(0) = 0 when the floor is 0
    above = probes[probes > model.domain_floor]
    Fp = np.asarray(model.F(above), dtype=float)
    ok = bool(np.all(Fp < 0))
    margin = float(-Fp.max()) if Fp.size else math.inf
    witness = f"x={float(above[np.argmax(Fp)])!r}" if Fp.size else ""
    if model.domain_floor == 0.0:
        f0 = float(model.F(0.0))
        if f0 != 0.0:
            ok, margin, witness = False, -abs(f0), "x=0.0"
    entries["A1"] = AssumptionCheck("A1", "pass" if ok else "fail", margin, witness)

    # A2: G(x) > x and G(x) > 0
    Gp = np.asarray(model.G(probes), dtype=float)
    gap = np.minimum(Gp - probes, Gp)
    k = int(np.argmin(gap))
    entries["A2"] = AssumptionCheck("A2", "pass" if gap[k] > 0 else "fail", float(gap[k]), f"x={float(probes[k])!r}")

    # A3: G' vanishes only on a null set; probed as no flat stretch on a dense grid
    dense = np.union1d(np.linspace(probes[0], probes[-1], DENSE_PROBES + 1), probes)
    dG = np.diff(np.asarray(model.G(dense), dtype=float))
    flat = np.nonzero(dG == 0)[0]
    if flat.size:
        entries["A3"] = AssumptionCheck("A3", "fail", 0.0, f"flat near x={float(dense[flat[0]])!r}")
    else:
        turns = int(np.count_nonzero(np.diff(np.sign(dG)) != 0))
        entries["A3"] = AssumptionCheck("A3", "pass", float(np.min(np.abs(dG))), f"{turns + 1} monotone piece(s)")

    # A4: q(x_b, .) is a probability density
    worst, wx = 0.0, probes[0]
    for x in probes:
        err = abs(integrate_q(model, x, 0.0, horizon(model, x)) - 1.0)
        qa = np.asarray(model.q(x, np.linspace(0.0, horizon(model, x), 65)), dtype=float)
        if np.any(qa < 0):
            err = math.inf
        if err > worst:
            worst, wx = err, x
    entries["A4"] = AssumptionCheck("A4", "pass" if worst <= 1e-8 else "fail", 1e-8 - worst, f"x_b={float(wx)!r}")

    # A5: exists eps with int_0^eps q < 1 - eps for every x_b
    best_eps, best_margin, best_wit = None, -math.inf, ""
    for eps in A5_CANDIDATES:
        head = 1.0 - survival_array(model, probes, eps)
        j = int(np.argmax(head))
        m = (1.0 - eps) - float(head[j])
        if m > best_margin:
            best_eps, best_margin, best_wit = eps, m, f"eps={float(eps)!r} worst x_b={float(probes[j])!r}"
    a5_ok = best_margin > 0
    entries["A5"] = AssumptionCheck("A5", "pass" if a5_ok else "fail", best_margin, best_wit)

    # B1: q = 0 before the support start and q > 0 after it
    b1_ok, b1_margin, b1_wit = True, math.inf, ""
    for x in probes:
        d = support_start(model, x)
        a_max = horizon(model, x)
        before = np.linspace(0.0, d, 17, endpoint=False)[1:] if d > 0 else np.empty(0)
        after = np.linspace(d, a_max, 65)[1:]
        after = after[survival_array(model, x, after) > SURVIVAL_FLOOR]
        q_before = np.asarray(model.q(x, before), dtype=float)
        q_after = np.asarray(model.q(x, after), dtype=float)
        if np.any(q_before != 0) or np.any(q_after <= 0):
            b1_ok, b1_wit = False, f"x_b={float(x)!r}"
            b1_margin = min(b1_margin, float(q_after.min()) if q_after.size else 0.0)
            break
        if q_after.size:
            b1_margin = min(b1_margin, float(q_after.min()))
    entries["B1"] = AssumptionCheck("B1", "pass" if b1_ok else "fail", b1_margin, b1_wit)

    # B2: bounded mean waiting time
    means = np.array([mean_time(model, x) for x in probes])
    j = int(np.argmax(means))
    m1 = float(means[j])
    b2_ok = math.isfinite(m1)
    entries["B2"] = AssumptionCheck("B2", "pass" if b2_ok else "fail", m1, f"max at x_b={float(probes[j])!r}")

    # C1: F -> -inf, probed by geometric extrapolation (no flattening of the decrease)
    xs = _extrapolation_points(probes[-1])
    Fx = np.asarray(model.F(xs), dtype=float)
    d1 = Fx[0] - Fx[15]
    d2 = Fx[15] - Fx[30]
    c1_ok = bool(np.all(np.diff(Fx) < 0) and d1 > 0 and d2 >= 0.5 * d1)
    entries["C1"] = AssumptionCheck("C1", "pass" if c1_ok else "fail", float(-Fx[-1]),
                                    f"F({float(xs[-1])!r})={float(Fx[-1])!r}")

    # C2: G(x) <= x + L
    L = float(np.max(Gp - probes))
    Gx = np.asarray(model.G(xs), dtype=float)
    over = (Gx - xs) - (L + 1e-9 * abs(L) + 4 * np.finfo(float).eps * xs)
    c2_ok = bool(L > 0 and np.all(over <= 0))
    entries["C2"] = AssumptionCheck("C2", "pass" if c2_ok else "fail",
                                    float(-over.max()), f"L={float(L)!r}")

    return AssumptionReport(
        entries=entries,
        epsilon_A5=best_eps if a5_ok else None,
        M1_bound=m1 if b2_ok else None,
        L_C2=L if c2_ok else None,
    )


# ---------------------------------------------------------------- reachable statuses


def _range_of_G(model, lo, hi):
    """Closure of G((lo, hi]) as (min, max)."""
    if hi <= lo:
        g = float(model.G(hi))
        return g, g
    if model.G_increasing:
        return float(model.G(lo)), float(model.G(hi))
    z = np.linspace(lo, hi, DENSE_PROBES + 1)
    g = np.asarray(model.G(z), dtype=float)
    i_min, i_max = int(np.argmin(g)), int(np.argmax(g))
    g_min, g_max = g[i_min], g[i_max]
    # local refinement around the sampled extremes
    for i, sign in ((i_min, 1.0), (i_max, -1.0)):
        a, b = z[max(i - 1, 0)], z[min(i + 1, z.size - 1)]
        if b > a:
            res = optimize.minimize_scalar(lambda s: sign * float(model.G(s)), bounds=(a, b), method="bounded",
                                           options={"xatol": 1e-12})
            val = float(model.G(res.x))
            g_min, g_max = min(g_min, val), max(g_max, val)
    return float(g_min), float(g_max)


def _farthest_jump_point(model, lo, hi):
    """max over x_b in [lo, hi] of the status at the support start, pi_{d(x_b)} x_b."""
    xs = np.array([lo]) if hi <= lo else np.linspace(lo, hi, DENSE_PROBES + 1)
    d = np.array([support_start(model, x) for x in xs])
    return float(np.max(flow_array(model, xs, d)))


def support_interval(model, max_iter=200, tol=1e-10, start=None, cap=1e12, window=20):
    """Closure of the union of reachable post-boost status intervals I_n.

    I_1 is the image of the start point (default ``G(floor)``), and
    I_{n+1} = {G(pi_a x_b): x_b in I_n, q(x_b, a) > 0}. Growth is declared
    unbounded when the upper end exceeds ``cap`` or its increments stop
    shrinking over ``window`` consecutive iterations.
    """
    floor = model.domain_floor
    x_start = float(model.G(floor)) if start is None else float(start)
    lo = hi = x_start
    history = []
    increments = []
    for n in range(1, max_iter + 1):
        z = _farthest_jump_point(model, lo, hi)
        g_lo, g_hi = _range_of_G(model, floor, z)
        if history:
            g_lo, g_hi = min(g_lo, history[-1][0]), max(g_hi, history[-1][1])
        history.append((g_lo, g_hi))
        if n > 1:
            move = abs(g_lo - lo) + abs(g_hi - hi)
            increments.append(g_hi - hi)
            if move < tol:
                return StatusInterval(g_lo, g_hi, n, True, False, history)
            if g_hi > cap and increments[-1] > 0:
                return StatusInterval(g_lo, math.inf, n, True, True, history)
            if len(increments) >= window:
                recent = np.array(increments[-window:])
                if np.all(recent > 0) and np.all(recent[1:] >= 0.999 * recent[:-1]):
                    return StatusInterval(g_lo, math.inf, n, True, True, history)
        lo, hi = g_lo, g_hi
    log.warning("support interval did not converge in %d iterations", max_iter)
    return StatusInterval(lo, hi, max_iter, False, False, history)
