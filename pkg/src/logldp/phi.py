"""Lyapunov transform ``Phi(z) = exp(int_0^z dx / (1 + x + x rho(x)))``.

``rho(x) = x/e`` below the switch point e and ``log x`` above it, so the
integrand is continuous with a kink at e.  Scalar evaluation integrates by
adaptive Simpson with e as a fixed breakpoint.  Array evaluation uses a
cached table of ``log Phi`` on panel edges plus Gauss-Legendre on the last
partial panel.
"""

from __future__ import annotations

import math
import threading

import numpy as np

E = math.e


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-13, max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature of a scalar function on [a, b]."""
    if b == a:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _asr(f, a, b, fa, fm, fb, whole, tol, max_depth)


def _asr(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return _asr(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + _asr(
        f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1
    )


class PhiFunction:
    rho_switch = E

    def __init__(self, tol: float = 1e-13):
        self.tol = tol
        self._lock = threading.Lock()
        # panel edges: uniform on [0, e], geometric above
        lo = np.linspace(0.0, E, 17)
        hi = E * np.geomspace(1.0, 1e3 / E, 161)[1:]
        self._edges = np.concatenate([lo, hi])
        self._cum = self._tabulate(self._edges)
        self._gl_x, self._gl_w = np.polynomial.legendre.leggauss(12)

    @staticmethod
    def rho(x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= E, np.log(np.maximum(x, E)), x / E)

    @staticmethod
    def _integrand_scalar(x: float) -> float:
        r = math.log(x) if x >= E else x / E
        return 1.0 / (1.0 + x + x * r)

    @classmethod
    def integrand(cls, x):
        x = np.asarray(x, dtype=float)
        return 1.0 / (1.0 + x + x * cls.rho(x))

    def _tabulate(self, edges):
        pieces = [
            adaptive_simpson(self._integrand_scalar, a, b, self.tol)
            for a, b in zip(edges[:-1], edges[1:])
        ]
        return np.concatenate([[0.0], np.cumsum(pieces)])

    def _extend(self, zmax: float):
        with self._lock:
            edges = self._edges
            if zmax <= edges[-1]:
                return
            new = [edges[-1]]
            while new[-1] < zmax:
                new.append(new[-1] * 1.05)
            new = np.asarray(new)
            cum_new = self._cum[-1] + self._tabulate(new)[1:]
            self._edges = np.concatenate([edges, new[1:]])
            self._cum = np.concatenate([self._cum, cum_new])

    def log_phi_scalar(self, z: float) -> float:
        """``log Phi(z)`` by direct adaptive Simpson (no table)."""
        z = float(z)
        if z < 0:
            raise ValueError("Phi is defined for z >= 0")
        if z <= E:
            return adaptive_simpson(self._integrand_scalar, 0.0, z, self.tol)
        return adaptive_simpson(self._integrand_scalar, 0.0, E, self.tol) + adaptive_simpson(
            self._integrand_scalar, E, z, self.tol
        )

    def log_phi(self, z):
        z = np.asarray(z, dtype=float)
        if np.any(z < 0):
            raise ValueError("Phi is defined for z >= 0")
        if z.size and z.max() > self._edges[-1]:
            self._extend(float(z.max()))
        edges, cum = self._edges, self._cum
        k = np.clip(np.searchsorted(edges, z, side="right") - 1, 0, len(edges) - 2)
        a = edges[k]
        half = 0.5 * (z - a)
        nodes = a[..., None] + half[..., None] * (self._gl_x + 1.0)
        rem = half * np.sum(self.integrand(nodes) * self._gl_w, axis=-1)
        return cum[k] + rem

    def __call__(self, z):
        if np.ndim(z) == 0:
            return math.exp(self.log_phi_scalar(z))
        return np.exp(self.log_phi(z))

    def prime(self, z):
        """``Phi'(z) = Phi(z) / (1 + z + z rho(z))``."""
        if np.ndim(z) == 0:
            z = float(z)
            if z < 0:
                raise ValueError("Phi is defined for z >= 0")
            return self(z) * self._integrand_scalar(z)
        return np.exp(self.log_phi(z)) * self.integrand(z)


_default = None


def default_phi() -> PhiFunction:
    global _default
    if _default is None:
        _default = PhiFunction()
    return _default


def phi(z):
    return default_phi()(z)


def phi_prime(z):
    return default_phi().prime(z)
