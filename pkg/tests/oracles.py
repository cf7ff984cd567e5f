"""Reference computations that share no code with the package."""

import math

import numpy as np
from scipy import integrate, optimize

EULER = 0.5772156649015329


def rk_flow(F, x0, t, rtol=1e-12):
    """Status after waning for ``t`` by a tightly toleranced Dormand-Prince run."""
    sol = integrate.solve_ivp(lambda _, y: [F(y[0])], (0.0, t), [x0], method="DOP853", rtol=rtol, atol=1e-14)
    return float(sol.y[0, -1])


def backward_root(F, x, a):
    """y with rk_flow(F, y, a) == x, by bracketing the forward map."""
    hi = x + 1.0
    while rk_flow(F, hi, a) < x:
        hi *= 2.0
    return optimize.brentq(lambda y: rk_flow(F, y, a) - x, x, hi, xtol=1e-14)


def crossing_time(F, x0, level):
    """First time the forward orbit of ``x0`` reaches ``level`` (root finding on the flow)."""
    hi = 1.0
    while rk_flow(F, x0, hi) > level:
        hi *= 2.0
    return optimize.brentq(lambda t: rk_flow(F, x0, t) - level, 0.0, hi, xtol=1e-14)


def e1_quadrature(x):
    val, _ = integrate.quad(lambda y: math.exp(-y) / y, x, np.inf, epsabs=0.0, epsrel=1e-13, limit=400)
    return val


def dickman(u, du=1e-4, u_max=40.0):
    """Dickman rho from u rho'(u) = -rho(u - 1), rho = 1 on [0, 1], by trapezoidal stepping."""
    grid = np.arange(0.0, u_max + du, du)
    rho = np.ones_like(grid)
    n1 = int(round(1.0 / du))
    for i in range(n1, grid.size - 1):
        f0 = -rho[i - n1] / grid[i]
        f1 = -rho[i + 1 - n1] / grid[i + 1]
        rho[i + 1] = rho[i] + 0.5 * du * (f0 + f1)
    u = np.asarray(u, dtype=float)
    return np.where(u < 0, 0.0, np.interp(u, grid, rho))


def benchmark_stationary_cells(edges):
    """Cell masses of exp(-gamma) rho(x - 1), the stationary post-jump law of x' = -x, x -> x + 1, q = e^{-a}."""
    fine = np.linspace(edges[0], edges[-1], 64 * (len(edges) - 1) + 1)
    dens = math.exp(-EULER) * dickman(fine - 1.0)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(fine))))
    return np.diff(np.interp(edges, fine, cdf))


def quadrature_cdf(q, a):
    """int_0^a q by adaptive quadrature."""
    val, _ = integrate.quad(q, 0.0, a, epsabs=1e-14, epsrel=1e-12, limit=400)
    return val


def ks_distance(samples, cdf):
    x = np.sort(np.asarray(samples))
    n = x.size
    F = np.asarray(cdf(x))
    return float(max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n)))
