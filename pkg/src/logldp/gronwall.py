"""Closed-form bounds of two nonlinear Gronwall inequalities.

Coefficient functions are scalar callables of time; their integrals are
computed with :func:`scipy.integrate.quad`.
"""

from __future__ import annotations

import math

from scipy.integrate import quad

_QUAD_OPTS = dict(epsabs=1e-13, epsrel=1e-12, limit=200)


def _integral(f, lo, hi):
    if hi == lo:
        return 0.0
    return quad(f, lo, hi, **_QUAD_OPTS)[0]


def gronwall_bound_61(c, alpha, a, b, t0, t):
    """Bound for ``Y(t) <= c + int_{t0}^t (a Y + b Y^alpha) ds``, ``0 <= alpha < 1``.

    Returns ``{c^(1-alpha) exp((1-alpha) A(t0,t))
    + (1-alpha) int_{t0}^t b(s) exp((1-alpha) A(s,t)) ds}^(1/(1-alpha))``
    with ``A(s,t) = int_s^t a``.
    """
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    if c < 0:
        raise ValueError("c must be nonnegative")
    if t < t0:
        raise ValueError("t must not precede t0")
    q = 1.0 - alpha
    A_total = _integral(a, t0, t)

    def weighted_b(s):
        return b(s) * math.exp(q * (A_total - _integral(a, t0, s)))

    inner = c**q * math.exp(q * A_total) + q * _integral(weighted_b, t0, t)
    return inner ** (1.0 / q)


def gronwall_bound_62(M, c1, c2, t):
    """Bound for ``X + a <= M(t) + int c1 X + int c2 X log X`` with ``M(0) > 1``.

    Returns ``M(t)^exp(C2(t)) * exp(exp(C2(t)) int_0^t c1(s) exp(-C2(s)) ds)``
    where ``C2(t) = int_0^t c2``.
    """
    if not M(0.0) > 1.0:
        raise ValueError("M(0) must exceed 1")
    if t < 0:
        raise ValueError("t must be nonnegative")
    C2t = _integral(c2, 0.0, t)
    inner = _integral(lambda s: c1(s) * math.exp(-_integral(c2, 0.0, s)), 0.0, t)
    g = math.exp(C2t)
    return M(t) ** g * math.exp(g * inner)


def gronwall_bound_62_log(logM_t, C1w, C2t):
    """Log of the logarithmic Gronwall bound from precomputed integrals.

    ``logM_t = log M(t)``, ``C1w = int_0^t c1 exp(-C2)``, ``C2t = C2(t)``.
    Used where the coefficients are piecewise constant and the integrals are
    exact sums.
    """
    g = math.exp(C2t)
    return g * (logM_t + C1w)
