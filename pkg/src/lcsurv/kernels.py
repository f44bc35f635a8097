"""Stable exponential integral kernels for piecewise log-linear densities.

Every kernel is an integral of exp((1 - u) a + u b) against a polynomial
weight on [0, 1], plus one half-line kernel for exponential tails.  The
closed forms all contain a removable singularity at b = a where naive
evaluation cancels catastrophically, so each kernel switches to a power
series in d = b - a on |d| < 1.
"""

from __future__ import annotations

import math

import numpy as np

_TERMS = 26
_K = np.arange(_TERMS)
_FACT = np.array([math.factorial(k) for k in range(_TERMS + 3)], dtype=float)

# ascending coefficients of sum_k c_k d^k for each weight polynomial
_C_T = (_K + 1.0) / _FACT[2 : _TERMS + 2]        # weight u
_C_T_OMT = (_K + 1.0) / _FACT[3 : _TERMS + 3]    # weight u(1-u)
_C_OMT_SQ = 2.0 / _FACT[3 : _TERMS + 3]          # weight (1-u)^2

_SERIES_RADIUS = 1.0


def _poly(d, coeffs):
    return np.polynomial.polynomial.polyval(d, coeffs)


def _ret(x):
    return float(x) if np.ndim(x) == 0 else x


def J(a, b):
    """Mean of exp over a log-linear segment: integral_0^1 exp((1-u)a + ub) du.

    Equals exp(a) when a == b and (exp(b) - exp(a)) / (b - a) otherwise;
    evaluated via expm1 so the removable singularity costs no precision.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    ad = np.abs(d)
    hi = np.maximum(a, b)
    safe = np.where(ad > 0.0, ad, 1.0)
    out = np.exp(hi) * np.where(ad > 0.0, -np.expm1(-ad) / safe, 1.0)
    return _ret(out)


def J_tilde(a, c):
    """Tail integral: integral_0^inf exp(a + c u) du = exp(a) / (-c), c < 0."""
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(c >= 0.0):
        raise ValueError("tail slope must be negative: the tail integral is unbounded for c >= 0")
    return _ret(np.exp(a) / (-c))


def J01(a, b):
    """First-moment kernel: integral_0^1 exp((1-u)a + ub) u du.

    Closed form ((d - 1) e^b + e^a) / d^2 with d = b - a; power series
    on |d| < 1.  This is d/db of J(a, b); d/da of J(a, b) is J01(b, a).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    small = np.abs(d) < _SERIES_RADIUS
    dd = np.where(small, 1.0, d)
    closed = ((d - 1.0) * np.exp(b) + np.exp(a)) / (dd * dd)
    series = np.exp(a) * _poly(np.where(small, d, 0.0), _C_T)
    return _ret(np.where(small, series, closed))


def J11(a, b):
    """Cross kernel integral_0^1 exp((1-u)a + ub) u(1-u) du (symmetric in a, b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    small = np.abs(d) < _SERIES_RADIUS
    dd = np.where(small, 1.0, d)
    closed = ((d - 2.0) * np.exp(b) + (d + 2.0) * np.exp(a)) / (dd * dd * dd)
    series = np.exp(a) * _poly(np.where(small, d, 0.0), _C_T_OMT)
    return _ret(np.where(small, series, closed))


def J20(a, b):
    """Second-moment kernel integral_0^1 exp((1-u)a + ub) (1-u)^2 du.

    The mirrored kernel with weight u^2 is J20(b, a).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    small = np.abs(d) < _SERIES_RADIUS
    dd = np.where(small, 1.0, d)
    closed = 2.0 * (np.exp(b) - np.exp(a) * (1.0 + d + 0.5 * d * d)) / (dd * dd * dd)
    series = np.exp(a) * _poly(np.where(small, d, 0.0), _C_OMT_SQ)
    return _ret(np.where(small, series, closed))
