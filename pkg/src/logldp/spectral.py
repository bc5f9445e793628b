"""Dirichlet sine basis on (0, L), spectral fields, norms and path metrics.

Fields are stored as coefficient vectors on the orthonormal eigenbasis
``e_i(x) = sqrt(2/L) sin(i pi x / L)`` of the negative Dirichlet Laplacian.
Physical samples live on the interior grid ``x_k = k L / (M + 1)``,
``k = 1..M``, where the discrete sine transform and the trapezoid rule
coincide (the boundary values vanish).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Universal relative slack for quadrature-based inequality checks.
TOL_QUAD = 1e-8


def xlogabs(z):
    """``z * log|z|`` with the continuous extension 0 at z = 0."""
    z = np.asarray(z, dtype=float)
    a = np.abs(z)
    out = np.zeros_like(z)
    nz = a > 0
    out[nz] = z[nz] * np.log(a[nz])
    return out


def x2logabs(z):
    """``z**2 * log|z|`` with the continuous extension 0 at z = 0."""
    z = np.asarray(z, dtype=float)
    a = np.abs(z)
    out = np.zeros_like(z)
    nz = a > 0
    out[nz] = z[nz] ** 2 * np.log(a[nz])
    return out


@dataclass(frozen=True)
class DomainConfig:
    """Interval (0, L) truncated to ``n_modes`` sine modes.

    ``n_quad`` collocation points must satisfy ``n_quad >= 2 n_modes + 1``
    unless ``dealias=False`` (pure collocation, used by pointwise oracles).
    ``d`` only enters inequality constants.
    """

    L: float = 1.0
    n_modes: int = 16
    n_quad: int | None = None
    d: int = 1
    dealias: bool = True

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if int(self.n_modes) < 1:
            raise ValueError(f"n_modes must be >= 1, got {self.n_modes}")
        object.__setattr__(self, "n_modes", int(self.n_modes))
        if self.n_quad is None:
            object.__setattr__(self, "n_quad", 2 * self.n_modes + 1)
        object.__setattr__(self, "n_quad", int(self.n_quad))
        if self.dealias and self.n_quad < 2 * self.n_modes + 1:
            raise ValueError(
                f"n_quad={self.n_quad} < 2*n_modes+1={2 * self.n_modes + 1}"
            )
        if self.n_quad < self.n_modes:
            raise ValueError("n_quad must be at least n_modes")
        if int(self.d) < 1:
            raise ValueError("d must be >= 1")

    @property
    def measure(self) -> float:
        return float(self.L)

    @property
    def h(self) -> float:
        """Node spacing, which is also the trapezoid weight."""
        return self.L / (self.n_quad + 1)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        i = np.arange(1, self.n_modes + 1, dtype=float)
        lam = (i * np.pi / self.L) ** 2
        lam.setflags(write=False)
        return lam

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.arange(1, self.n_quad + 1, dtype=float) * self.h
        x.setflags(write=False)
        return x

    @cached_property
    def synthesis(self) -> np.ndarray:
        """(M, n) matrix mapping coefficients to node values."""
        k = np.arange(1, self.n_quad + 1, dtype=float)[:, None]
        i = np.arange(1, self.n_modes + 1, dtype=float)[None, :]
        S = np.sqrt(2.0 / self.L) * np.sin(np.pi * k * i / (self.n_quad + 1))
        S.setflags(write=False)
        return S

    @cached_property
    def analysis(self) -> np.ndarray:
        """(n, M) trapezoid projection ``g -> <g, e_i>``."""
        P = np.ascontiguousarray(self.h * self.synthesis.T)
        P.setflags(write=False)
        return P

    def integrate(self, values) -> np.ndarray:
        """Trapezoid rule over the last axis of node values (zero ends)."""
        return self.h * np.sum(values, axis=-1)

    def zeros(self) -> "SpectralField":
        return SpectralField(np.zeros(self.n_modes), self)

    def field(self, coeffs) -> "SpectralField":
        return SpectralField(coeffs, self)


@dataclass(frozen=True, eq=False)
class SpectralField:
    coeffs: np.ndarray
    domain: DomainConfig = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (self.domain.n_modes,):
            raise ValueError(
                f"expected {self.domain.n_modes} coefficients, got shape {c.shape}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other):
        _same_domain(self, other)
        return SpectralField(self.coeffs + other.coeffs, self.domain)

    def __sub__(self, other):
        _same_domain(self, other)
        return SpectralField(self.coeffs - other.coeffs, self.domain)

    def __mul__(self, a):
        return SpectralField(float(a) * self.coeffs, self.domain)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(-self.coeffs, self.domain)

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def physical(self) -> np.ndarray:
        return to_physical(self)

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.coeffs, self.coeffs)))

    @property
    def v_norm(self) -> float:
        return float(np.sqrt(np.dot(self.domain.eigenvalues, self.coeffs**2)))

    @property
    def vstar_norm(self) -> float:
        return float(np.sqrt(np.dot(self.coeffs**2, 1.0 / self.domain.eigenvalues)))


def _same_domain(u, v):
    if u.domain != v.domain:
        raise ValueError("fields live on different domains")


def eigenpair(i: int, dom: DomainConfig) -> tuple[float, SpectralField]:
    """Dirichlet eigenvalue ``(i pi / L)^2`` and the i-th basis field."""
    if not 1 <= i <= dom.n_modes:
        raise IndexError(f"mode index {i} outside 1..{dom.n_modes}")
    c = np.zeros(dom.n_modes)
    c[i - 1] = 1.0
    return float(dom.eigenvalues[i - 1]), SpectralField(c, dom)


def to_physical(u: SpectralField) -> np.ndarray:
    return u.domain.synthesis @ u.coeffs


def from_physical(values, dom: DomainConfig) -> SpectralField:
    values = np.asarray(values, dtype=float)
    if values.shape != (dom.n_quad,):
        raise ValueError(f"expected {dom.n_quad} node values, got {values.shape}")
    return SpectralField(dom.analysis @ values, dom)


def norms(u: SpectralField) -> tuple[float, float, float]:
    """``(||u||_H, ||u||_V, ||u||_V*)`` by Parseval."""
    return u.norm, u.v_norm, u.vstar_norm


def _lsi_rhs(u: SpectralField, eps: float) -> float:
    h2 = u.norm**2
    d = u.domain.d
    return eps * u.v_norm**2 + 0.25 * d * np.log(1.0 / eps) * h2 + h2 * np.log(u.norm)


def _check_lsi_args(u, eps):
    if u.is_zero():
        raise ValueError("log-Sobolev gap undefined for u = 0")
    if not eps > 0:
        raise ValueError("eps must be positive")


def log_sobolev_terms(u: SpectralField, eps: float) -> tuple[float, float]:
    """``(lhs, rhs)`` of the logarithmic Sobolev inequality.

    LHS is ``int |u|^2 log|u| dx`` by trapezoid quadrature.
    """
    _check_lsi_args(u, eps)
    lhs = u.domain.integrate(x2logabs(to_physical(u)))
    return float(lhs), float(_lsi_rhs(u, eps))


def log_sobolev_gap(u: SpectralField, eps: float) -> float:
    """RHS minus LHS; a negative value beyond quadrature noise would falsify the inequality."""
    lhs, rhs = log_sobolev_terms(u, eps)
    return rhs - lhs


def log_sobolev_plus_terms(u: SpectralField, eps: float) -> tuple[float, float]:
    """Terms of the log_+ variant, which carries the extra ``m(D)/(2e)``."""
    _check_lsi_args(u, eps)
    x = to_physical(u)
    lhs = u.domain.integrate(x**2 * np.log(np.maximum(np.abs(x), 1.0)))
    rhs = _lsi_rhs(u, eps) + u.domain.measure / (2.0 * np.e)
    return float(lhs), float(rhs)


def log_sobolev_plus_gap(u: SpectralField, eps: float) -> float:
    lhs, rhs = log_sobolev_plus_terms(u, eps)
    return rhs - lhs


@dataclass(frozen=True)
class PathMetricReport:
    sup_H: float
    int_V: float
    rho: float
    window: tuple[float, float]


def _window_slice(times, a, b):
    times = np.asarray(times)
    a = times[0] if a is None else a
    b = times[-1] if b is None else b
    if b < a:
        raise ValueError("window end precedes start")
    tol = 1e-12 * max(1.0, abs(times[-1]))
    idx = np.nonzero((times >= a - tol) & (times <= b + tol))[0]
    if idx.size == 0:
        raise ValueError("window contains no grid times")
    return slice(idx[0], idx[-1] + 1), (float(a), float(b))


def path_metric(u, v, a=None, b=None) -> PathMetricReport:
    """Discrete ``rho_{a,b}``: sup-in-time H distance plus trapezoid V energy.

    ``u`` and ``v`` are trajectories (anything with ``times``, ``coeffs`` of
    shape (n_times, n_modes) and ``domain``) on a common grid.
    """
    if u.domain != v.domain:
        raise ValueError("trajectories live on different domains")
    tu, tv = np.asarray(u.times), np.asarray(v.times)
    if tu.shape != tv.shape or not np.allclose(tu, tv, rtol=0, atol=1e-12):
        raise ValueError("trajectories are on different time grids")
    sl, window = _window_slice(tu, a, b)
    diff = np.asarray(u.coeffs)[sl] - np.asarray(v.coeffs)[sl]
    return metric_from_diff(tu[sl], diff, u.domain.eigenvalues, window)


def metric_from_diff(times, diff, eigenvalues, window=None) -> PathMetricReport:
    h2 = np.sum(diff**2, axis=-1)
    v2 = diff**2 @ eigenvalues
    sup_h = float(np.sqrt(np.max(h2)))
    int_v = float(np.trapezoid(v2, times)) if len(times) > 1 else 0.0
    if window is None:
        window = (float(times[0]), float(times[-1]))
    return PathMetricReport(sup_h, int_v, float(np.sqrt(sup_h**2 + int_v)), window)


def wbeta2_norm(u, beta: float) -> float:
    """Discrete fractional Sobolev norm of a trajectory in ``W^{beta,2}(0,T; V*)``.

    Both time integrals use trapezoid weights; the singular diagonal
    ``t = s`` is dropped from the double sum.
    """
    if not 0 < beta < 0.5:
        raise ValueError(f"beta must lie in (0, 1/2), got {beta}")
    t = np.asarray(u.times, dtype=float)
    C = np.asarray(u.coeffs, dtype=float)
    inv_lam = 1.0 / u.domain.eigenvalues
    w = _trapezoid_weights(t)
    q = (C**2) @ inv_lam
    first = float(np.dot(w, q))
    G = (C * inv_lam) @ C.T
    dist2 = np.maximum(q[:, None] + q[None, :] - 2.0 * G, 0.0)
    gap = np.abs(t[:, None] - t[None, :])
    np.fill_diagonal(gap, np.inf)
    second = float(w @ (dist2 / gap ** (1.0 + 2.0 * beta)) @ w)
    return float(np.sqrt(first + second))


def _trapezoid_weights(t):
    w = np.zeros_like(t)
    if t.size > 1:
        dt = np.diff(t)
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
    return w
