"""Drift ``b(z) = z log|z|``, diffusion coefficients and their hypothesis checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spectral import SpectralField, to_physical, xlogabs

# Floor inside log|z| when differentiating b; inert unless a node is exactly 0.
Z_FLOOR = 1e-300

SIGMA_KINDS = ("constant", "linear", "sqrt_log", "table", "user")


def b(z):
    """``z log|z|`` with ``b(0) = 0``."""
    if np.ndim(z) == 0:
        return float(xlogabs(np.asarray([z], dtype=float))[0])
    return xlogabs(z)


def b_prime(z):
    """``log|z| + 1`` with ``|z|`` floored at ``Z_FLOOR``."""
    return np.log(np.maximum(np.abs(np.asarray(z, dtype=float)), Z_FLOOR)) + 1.0


def log_plus(z):
    return np.log(np.maximum(np.asarray(z, dtype=float), 1.0))


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Diffusion coefficient with its (H) constants ``L1, L2`` and growth ``L3, L4``.

    ``params`` holds what the compiled stepper needs to evaluate sigma
    without calling back into Python (``c`` / ``k`` / ``xs, ys``).
    """

    sigma: Callable
    sigma_prime: Callable
    sigma_kind: str
    params: dict = field(default_factory=dict)
    L1: float = float("nan")
    L2: float = float("nan")
    L3: float = float("nan")
    L4: float = float("nan")
    verified: bool = False
    notes: str = ""

    def __post_init__(self):
        if self.sigma_kind not in SIGMA_KINDS:
            raise ValueError(f"unknown sigma kind {self.sigma_kind!r}")

    @property
    def is_zero(self) -> bool:
        return self.sigma_kind == "constant" and self.params.get("c", 0.0) == 0.0

    def describe(self) -> dict:
        out = {"kind": self.sigma_kind, "L1": self.L1, "L2": self.L2, "L3": self.L3, "L4": self.L4,
               "verified": self.verified}
        out.update({k: v for k, v in self.params.items() if np.isscalar(v)})
        if self.notes:
            out["notes"] = self.notes
        return out


def _constant(c: float) -> CoefficientSet:
    c = float(c)
    return CoefficientSet(
        sigma=lambda z: np.full(np.shape(z), c) if np.ndim(z) else c,
        sigma_prime=lambda z: np.zeros(np.shape(z)) if np.ndim(z) else 0.0,
        sigma_kind="constant",
        params={"c": c},
        L1=0.0, L2=0.0, L3=abs(c), L4=0.0,
        verified=True,
    )


def _linear(k: float) -> CoefficientSet:
    k = float(k)
    return CoefficientSet(
        sigma=lambda z: k * np.asarray(z, dtype=float) if np.ndim(z) else k * float(z),
        sigma_prime=lambda z: np.full(np.shape(z), k) if np.ndim(z) else k,
        sigma_kind="linear",
        params={"k": k},
        # |kz| <= k e + k |z| (log_+|z|)^(1/2): z <= e is covered by the constant,
        # z > e by the log factor exceeding 1.
        L1=abs(k), L2=0.0, L3=abs(k) * np.e, L4=abs(k),
        verified=True,
    )


def sqrt_log_sigma(z):
    z = np.asarray(z, dtype=float)
    return z * np.sqrt(log_plus(np.abs(z)))


def sqrt_log_sigma_prime(z):
    """Derivative ``sqrt(l) + 1/(2 sqrt(l))``, ``l = log|z|``, for |z| > 1; 0 inside.

    Unbounded as |z| -> 1+; ``l`` is floored at ``Z_FLOOR``.
    """
    z = np.asarray(z, dtype=float)
    lg = np.log(np.maximum(np.abs(z), 1.0))
    out = np.zeros_like(z)
    outside = np.abs(z) > 1.0
    l = np.maximum(lg[outside], Z_FLOOR)
    out[outside] = np.sqrt(l) + 0.5 / np.sqrt(l)
    return out


def _sqrt_log(grid_half_width: float = 100.0, n_grid: int = 201) -> CoefficientSet:
    pts = np.linspace(-grid_half_width, grid_half_width, n_grid)
    L1, L2, viol = fit_H(sqrt_log_sigma, pair_grid(pts))
    return CoefficientSet(
        sigma=lambda z: sqrt_log_sigma(z) if np.ndim(z) else float(sqrt_log_sigma(np.asarray([z]))[0]),
        sigma_prime=sqrt_log_sigma_prime,
        sigma_kind="sqrt_log",
        params={},
        L1=L1, L2=L2, L3=0.0, L4=1.0,
        verified=bool(viol <= 0),
        notes=(
            f"(H) certified only on the lattice [-{grid_half_width:g}, {grid_half_width:g}] "
            f"with {n_grid} points; sigma is not Lipschitz near |z| = 1"
        ),
    )


def builtin_sigma(kind: str, value: float | None = None) -> CoefficientSet:
    """``constant(c)``, ``linear(k)`` or ``sqrt_log`` (constants fitted on a lattice)."""
    if kind == "constant":
        return _constant(1.0 if value is None else value)
    if kind == "linear":
        return _linear(1.0 if value is None else value)
    if kind == "sqrt_log":
        return _sqrt_log()
    raise ValueError(f"unknown builtin sigma {kind!r}")


def tabulated_sigma(zs, values) -> CoefficientSet:
    """Piecewise-linear sigma through ``(z, sigma(z))`` pairs, constant outside."""
    xs = np.asarray(zs, dtype=float)
    ys = np.asarray(values, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
        raise ValueError("table needs at least two (z, sigma) pairs")
    order = np.argsort(xs)
    xs, ys = xs[order], ys[order]
    if np.any(np.diff(xs) <= 0):
        raise ValueError("table abscissae must be distinct")
    slopes = np.diff(ys) / np.diff(xs)
    xs.setflags(write=False)
    ys.setflags(write=False)

    def sigma(z):
        out = np.interp(z, xs, ys)
        return float(out) if np.ndim(z) == 0 else out

    def sigma_prime(z):
        z = np.asarray(z, dtype=float)
        idx = np.clip(np.searchsorted(xs, z, side="right") - 1, 0, xs.size - 2)
        out = slopes[idx]
        return np.where((z < xs[0]) | (z > xs[-1]), 0.0, out)

    L1 = float(np.max(np.abs(slopes)))
    L3 = float(np.max(np.abs(ys)))
    return CoefficientSet(
        sigma=sigma, sigma_prime=sigma_prime, sigma_kind="table",
        params={"xs": xs, "ys": ys},
        L1=L1, L2=0.0, L3=L3, L4=0.0, verified=True,
    )


def read_sigma_table(path) -> CoefficientSet:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in rows])
    except ValueError:
        data = np.array([[float(r[0]), float(r[1])] for r in rows[1:]])
    return tabulated_sigma(data[:, 0], data[:, 1])


def user_sigma(sigma, sigma_prime=None, L1=float("nan"), L2=float("nan"),
               L3=float("nan"), L4=float("nan")) -> CoefficientSet:
    """Arbitrary vectorised callable; runs on the pure-Python stepper only."""
    if sigma_prime is None:
        def sigma_prime(z, _h=1e-6):
            z = np.asarray(z, dtype=float)
            return (sigma(z + _h) - sigma(z - _h)) / (2 * _h)
    return CoefficientSet(sigma=sigma, sigma_prime=sigma_prime, sigma_kind="user",
                          L1=L1, L2=L2, L3=L3, L4=L4, verified=False)


# ---------------------------------------------------------------------------
# hypothesis checks


def pair_grid(points) -> np.ndarray:
    """All ordered pairs ``(x, y)`` with ``x < y`` from a 1-D point set."""
    p = np.unique(np.asarray(points, dtype=float))
    i, j = np.triu_indices(p.size, k=1)
    return np.column_stack([p[i], p[j]])


def _h_terms(sigma, pairs):
    x, y = pairs[:, 0], pairs[:, 1]
    r = np.abs(np.asarray(sigma(x), dtype=float) - np.asarray(sigma(y), dtype=float))
    a = np.abs(x - y)
    bb = a * np.sqrt(log_plus(np.maximum(np.abs(x), np.abs(y))))
    return r, a, bb


def h_violation(sigma, pairs, L1, L2) -> float:
    r, a, bb = _h_terms(sigma, pairs)
    return float(np.max(r - (L1 * a + L2 * bb)))


def _least_L1(r, a, bb, L2, step):
    need = np.max((r - L2 * bb) / a)
    need = max(need, 0.0)
    return np.ceil(need / step - 1e-12) * step


def fit_H(sigma, grid, step: float = 0.125, top: float = 16.0):
    """Least lattice constants ``(L1, L2)`` certifying (H) on sampled pairs.

    For each candidate ``L2`` the smallest admissible lattice ``L1`` is exact
    (the constraint is linear in ``L1``); the pair minimising ``L1 + L2`` wins,
    ties going to the smaller ``L2``.  One refinement pass with step/8 is made
    around the winner.  If nothing on the lattice is admissible, ``L2 = 0`` and
    the exact required ``L1`` is returned.

    Returns ``(L1, L2, max_violation)``; ``max_violation <= 0`` certifies the grid.
    """
    pairs = np.asarray(grid, dtype=float)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    if pairs.size == 0:
        return 0.0, 0.0, 0.0
    r, a, bb = _h_terms(sigma, pairs)

    def search(L2_values, step_):
        best = None
        for L2 in L2_values:
            L1 = _least_L1(r, a, bb, L2, step_)
            if L1 > top + 1e-12:
                continue
            key = (L1 + L2, L2)
            if best is None or key < best[0]:
                best = (key, L1, L2)
        return best

    n = int(round(top / step))
    best = search(np.arange(n + 1) * step, step)
    if best is None:
        L1 = float(max(np.max(r / a), 0.0))
        return L1, 0.0, h_violation(sigma, pairs, L1, 0.0)
    _, L1, L2 = best
    fine = step / 8
    lo = max(L2 - step, 0.0)
    cand = lo + np.arange(int(round((min(L2 + step, top) - lo) / fine)) + 1) * fine
    refined = search(cand, fine)
    if refined is not None and refined[0] < (L1 + L2, L2):
        _, L1, L2 = refined
    L1, L2 = float(L1), float(L2)
    return L1, L2, h_violation(sigma, pairs, L1, L2)


def check_growth(sigma, L3, L4, grid) -> float:
    """Max over the grid of ``|sigma(z)| - (L3 + L4 |z| (log_+|z|)^(1/2))``."""
    z = np.asarray(grid, dtype=float)
    s = np.abs(np.asarray(sigma(z), dtype=float))
    return float(np.max(s - (L3 + L4 * np.abs(z) * np.sqrt(log_plus(np.abs(z))))))


# ---------------------------------------------------------------------------
# pairing inequalities for the logarithmic drift


def _pairing_rhs_common(u, v, eps, alpha):
    w = u - v
    d = u.domain.d
    wn = w.norm
    q = 1.0 - alpha
    cross = (u.norm ** (2 * q) + v.norm ** (2 * q)) * wn ** (2 * alpha) / (2 * q * np.e)
    return w, eps * w.v_norm**2 + 0.25 * d * np.log(1 / eps) * wn**2 + wn**2 * np.log(wn) + cross


def _check_pair_args(u, v, eps, alpha):
    if u.domain != v.domain:
        raise ValueError("fields live on different domains")
    if np.array_equal(u.coeffs, v.coeffs):
        raise ValueError("u = v: log||u - v|| is undefined")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")


def b_pairing_terms(u: SpectralField, v: SpectralField, eps: float, alpha: float):
    """``(lhs, rhs)`` of the log-Lipschitz pairing estimate for ``b``.

    LHS ``(u log|u| - v log|v|, u - v)`` is integrated on the collocation grid.
    """
    _check_pair_args(u, v, eps, alpha)
    x, y = to_physical(u), to_physical(v)
    lhs = u.domain.integrate((xlogabs(x) - xlogabs(y)) * (x - y))
    w, rhs = _pairing_rhs_common(u, v, eps, alpha)
    rhs += w.norm**2
    return float(lhs), float(rhs)


def b_pairing_gap(u: SpectralField, v: SpectralField, eps: float, alpha: float) -> float:
    """RHS minus LHS of the pairing estimate for ``b``."""
    lhs, rhs = b_pairing_terms(u, v, eps, alpha)
    return rhs - lhs


def logplus_pairing_terms(u: SpectralField, v: SpectralField, eps: float, alpha: float):
    """Terms for ``int |u - v|^2 log_+(|u| v |v|)`` including the ``(4 m(D))^(1-alpha)`` term."""
    _check_pair_args(u, v, eps, alpha)
    x, y = to_physical(u), to_physical(v)
    lhs = u.domain.integrate((x - y) ** 2 * log_plus(np.maximum(np.abs(x), np.abs(y))))
    w, rhs = _pairing_rhs_common(u, v, eps, alpha)
    q = 1.0 - alpha
    rhs += (4 * u.domain.measure) ** q * w.norm ** (2 * alpha) / (2 * q * np.e)
    return float(lhs), float(rhs)


def logplus_pairing_gap(u: SpectralField, v: SpectralField, eps: float, alpha: float) -> float:
    lhs, rhs = logplus_pairing_terms(u, v, eps, alpha)
    return rhs - lhs
