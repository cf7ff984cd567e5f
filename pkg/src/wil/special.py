"""Exponential integral E1 and helpers."""

import math

import numpy as np

EULER_GAMMA = 0.57721566490153286061

# below this argument the power series is used, above it the continued fraction
SERIES_SWITCH = 1.0


def _e1_series(x):
    # E1(x) = -gamma - ln x - sum_{n>=1} (-x)^n / (n n!)
    total = 0.0
    term = 1.0
    n = 1
    while True:
        term *= -x / n
        contrib = term / n
        total += contrib
        if abs(contrib) < 1e-17 * max(abs(total), 1e-300):
            break
        n += 1
        if n > 500:
            break
    return -EULER_GAMMA - math.log(x) - total


def _e1_scaled_cf(x):
    # e^x E1(x) = 1/(x+1-1/(x+3-4/(x+5-...))), modified Lentz
    tiny = 1e-300
    b = x + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -float(i * i)
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h


def _scalar_e1(x):
    if not x > 0.0:
        raise ValueError(f"E1 requires x > 0, got {x!r}")
    if x <= SERIES_SWITCH:
        return _e1_series(x)
    if x > 745.0:
        return 0.0
    return _e1_scaled_cf(x) * math.exp(-x)


def _scalar_e1_scaled(x):
    if not x > 0.0:
        raise ValueError(f"E1 requires x > 0, got {x!r}")
    if x <= SERIES_SWITCH:
        return math.exp(x) * _e1_series(x)
    return _e1_scaled_cf(x)


def exp_integral_e1(x):
    """E1(x) = int_x^inf e^{-y}/y dy for x > 0 (scalar or array)."""
    if np.ndim(x) == 0:
        return _scalar_e1(float(x))
    arr = np.asarray(x, dtype=float)
    return np.array([_scalar_e1(v) for v in arr.ravel()]).reshape(arr.shape)


def exp_integral_e1_scaled(x):
    """e^x E1(x), finite for large x where E1 itself underflows."""
    if np.ndim(x) == 0:
        return _scalar_e1_scaled(float(x))
    arr = np.asarray(x, dtype=float)
    return np.array([_scalar_e1_scaled(v) for v in arr.ravel()]).reshape(arr.shape)


def e1_scaled_array(x):
    """Vectorized e^x E1(x) for positive arrays (fixed-depth series / fraction)."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("E1 requires x > 0")
    out = np.empty_like(x)
    small = x <= SERIES_SWITCH
    if np.any(small):
        xs = x[small]
        total = np.zeros_like(xs)
        term = np.ones_like(xs)
        for n in range(1, 40):
            term = term * (-xs / n)
            total += term / n
        out[small] = np.exp(xs) * (-EULER_GAMMA - np.log(xs) - total)
    big = ~small
    if np.any(big):
        xb = x[big]
        # backward evaluation of the continued fraction; depth covers x just above 1
        depth = 400 if xb.min() < 4.0 else 120
        t = np.zeros_like(xb)
        for i in range(depth, 0, -1):
            t = (i * i) / (xb + 2 * i + 1 - t)
        out[big] = 1.0 / (xb + 1.0 - t)
    return out
