"""Galerkin solver for the controlled (skeleton) equation and its discrete adjoint."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .coefficients import CoefficientSet
from .errors import ConfigError, NonFiniteError, SolverOverflow
from .gronwall import gronwall_bound_62_log
from .spectral import DomainConfig, SpectralField, from_physical, to_physical

SCHEMES = ("exp_euler", "imex_euler")
ORACLE_MODES = ("full", "heat_only", "reaction_only")


@dataclass(frozen=True, eq=False)
class Control:
    """Piecewise-constant control on ``K`` equal pieces of ``[0, T]``."""

    values: np.ndarray
    T: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size < 1:
            raise ValueError("control needs at least one piece")
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        if not self.T > 0:
            raise ValueError("T must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def K(self) -> int:
        return self.values.size

    @property
    def piece_length(self) -> float:
        return self.T / self.K

    def energy(self) -> float:
        return float(np.sum(self.values**2) * self.piece_length)

    def in_ball(self, N: float) -> bool:
        return self.energy() <= N

    def per_step(self, n_steps: int) -> np.ndarray:
        if n_steps % self.K:
            raise ConfigError(f"{self.K} control pieces do not divide {n_steps} steps")
        return np.repeat(self.values, n_steps // self.K)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip((t / self.piece_length).astype(int), 0, self.K - 1)
        return self.values[idx]

    @classmethod
    def zeros(cls, K: int, T: float) -> "Control":
        return cls(np.zeros(K), T)

    @classmethod
    def constant(cls, value: float, K: int, T: float) -> "Control":
        return cls(np.full(K, float(value)), T)

    @classmethod
    def from_function(cls, f, K: int, T: float) -> "Control":
        """Sample ``f`` at piece midpoints."""
        mid = (np.arange(K) + 0.5) * (T / K)
        return cls(np.asarray([f(t) for t in mid], dtype=float), T)


@dataclass(frozen=True, eq=False)
class SkeletonConfig:
    dom: DomainConfig
    coeffs: CoefficientSet
    dt: float
    T: float
    scheme: str = "exp_euler"
    oracle_mode: str = "full"
    overflow_guard: float = 1e12

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.T > 0:
            raise ConfigError(f"T must be positive, got {self.T}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.oracle_mode not in ORACLE_MODES:
            raise ConfigError(f"unknown oracle_mode {self.oracle_mode!r}")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
            raise ConfigError(f"T/dt = {n} is not an integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def drift_on(self) -> bool:
        return self.oracle_mode != "heat_only"

    @property
    def sigma_on(self) -> bool:
        return self.oracle_mode != "reaction_only" and not self.coeffs.is_zero

    @property
    def laplacian_on(self) -> bool:
        return self.oracle_mode != "reaction_only"

    def decay(self) -> np.ndarray:
        lam = self.dom.eigenvalues
        if not self.laplacian_on:
            return np.ones_like(lam)
        if self.scheme == "exp_euler":
            return np.exp(-lam * self.dt)
        return 1.0 / (1.0 + lam * self.dt)

    def with_(self, **kw) -> "SkeletonConfig":
        return replace(self, **kw)


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    coeffs: np.ndarray
    domain: DomainConfig
    control: Control | None = None
    noise: object | None = None
    eps: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.times.size, self.domain.n_modes):
            raise ValueError(
                f"coeffs shape {self.coeffs.shape} != ({self.times.size}, {self.domain.n_modes})"
            )

    def __len__(self):
        return self.times.size

    @property
    def states(self) -> list[SpectralField]:
        return [SpectralField(c, self.domain) for c in self.coeffs]

    @property
    def terminal(self) -> SpectralField:
        return SpectralField(self.coeffs[-1], self.domain)

    def h_norms2(self) -> np.ndarray:
        return np.sum(self.coeffs**2, axis=1)

    def v_norms2(self) -> np.ndarray:
        return self.coeffs**2 @ self.domain.eigenvalues


def project_nonlinearity(u: SpectralField, f) -> SpectralField:
    """``P_n f(u)``: node values, pointwise ``f``, trapezoid projection."""
    vals = np.asarray(f(to_physical(u)), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteError("nonlinearity produced non-finite values")
    return from_physical(vals, u.domain)


def _check_u0(u0: SpectralField, cfg: SkeletonConfig):
    if u0.domain != cfg.dom:
        raise ConfigError("initial condition lives on a different domain")


def _control_steps(h: Control | None, cfg: SkeletonConfig) -> np.ndarray:
    if h is None:
        return np.zeros(cfg.n_steps)
    if abs(h.T - cfg.T) > 1e-12 * cfg.T:
        raise ConfigError(f"control horizon {h.T} != solver horizon {cfg.T}")
    return h.per_step(cfg.n_steps)


def march(C0, hsteps, cfg: SkeletonConfig, dW=None, eps=0.0, record_every=1,
          store_predictor=False, backend=None):
    """Thin wrapper around the kernel for a batch of initial coefficient vectors."""
    dom = cfg.dom
    return kernels.forward(
        C0, dom.synthesis, dom.analysis, cfg.decay(), cfg.dt, hsteps,
        cfg.drift_on, cfg.sigma_on, kernels.sigma_spec(cfg.coeffs),
        dW=dW, eps=eps, guard=cfg.overflow_guard, record_every=record_every,
        store_predictor=store_predictor, backend=backend,
    )


def solve_skeleton(u0: SpectralField, h: Control | None, cfg: SkeletonConfig,
                   record_every: int = 1, backend=None) -> Trajectory:
    """March the Galerkin system from ``u0`` under control ``h``.

    Raises :class:`SolverOverflow` if the H-norm exceeds ``cfg.overflow_guard``,
    which signals an unstable step size rather than blow-up of the equation.
    """
    _check_u0(u0, cfg)
    hsteps = _control_steps(h, cfg)
    states, status = march(u0.coeffs[None, :], hsteps, cfg, record_every=record_every,
                           backend=backend)
    if status[0]:
        bad = np.nonzero(~np.all(np.isfinite(states[0]), axis=1))[0]
        raise SolverOverflow(
            f"H-norm exceeded {cfg.overflow_guard:g}; reduce dt", step=int(bad[0]) if bad.size else None
        )
    return Trajectory(cfg.times[::record_every], states[0], cfg.dom, control=h)


# ---------------------------------------------------------------------------
# a-priori bound


@dataclass(frozen=True)
class UniformBoundReport:
    sup_H2: float
    int_V2: float
    observed: float
    bound_62: float

    @property
    def dominated(self) -> bool:
        return self.observed <= self.bound_62


def _bound_coefficients(hval: float, coeffs: CoefficientSet, dom: DomainConfig,
                        drift_on: bool, sigma_on: bool):
    """Constants ``(c1, c2)`` of the log-Gronwall inequality for ``Y = ||u||^2 + 1``.

    Derived from the energy identity with the log-Sobolev inequality at
    ``eps = 1/4`` for the drift and at ``theta = 1/(2 L4 max(|h|, 1))`` for the
    superlinear part of the growth bound on sigma.
    """
    d, m = dom.d, dom.measure
    a = abs(hval) if sigma_on else 0.0
    L3 = coeffs.L3 if sigma_on else 0.0
    L4 = coeffs.L4 if sigma_on else 0.0
    if not (math.isfinite(L3) and math.isfinite(L4)):
        raise ConfigError("growth constants L3, L4 are required for the a-priori bound")
    c1 = 0.0
    c2 = 0.0
    if drift_on:
        c1 += 0.5 * d * math.log(4.0)
        c2 += 1.0
    if a > 0:
        f = a * L3**2 * m + a * L4 * m / (2 * math.e)
        c1 += f + a
        if L4 > 0:
            c1 += a * L4 * (1.0 + max(0.25 * d * math.log(2 * L4 * max(a, 1.0)), 0.0))
            c2 += 0.5 * a * L4
    return c1, c2


def uniform_bound_report(traj: Trajectory, cfg: SkeletonConfig) -> UniformBoundReport:
    """Observed ``sup ||u||^2 + int ||u||_V^2`` against a logarithmic-Gronwall bound.

    The bound is ``2 (B(T) - 1)`` where ``B`` is the Gronwall bound for
    ``Y = ||u||^2 + 1`` with constant ``M = ||u0||^2 + 1``; coefficients are
    piecewise constant so the time integrals are exact sums.
    """
    if traj.control is None:
        raise ValueError("trajectory carries no control record")
    h = traj.control
    y0 = float(np.sum(traj.coeffs[0] ** 2)) + 1.0
    C2 = 0.0
    C1w = 0.0
    tau = h.piece_length
    for hv in h.values:
        c1, c2 = _bound_coefficients(float(hv), cfg.coeffs, cfg.dom, cfg.drift_on, cfg.sigma_on)
        # int over the piece of c1 exp(-C2(s)) with C2 linear on the piece
        if c2 > 0:
            C1w += c1 * math.exp(-C2) * (1.0 - math.exp(-c2 * tau)) / c2
        else:
            C1w += c1 * math.exp(-C2) * tau
        C2 += c2 * tau
    log_b = gronwall_bound_62_log(math.log(y0), C1w, C2)
    bound = 2.0 * (math.exp(log_b) - 1.0) if log_b < 700 else math.inf
    h2 = traj.h_norms2()
    v2 = traj.v_norms2()
    sup_h2 = float(np.max(h2))
    int_v2 = float(np.trapezoid(v2, traj.times))
    return UniformBoundReport(sup_h2, int_v2, sup_h2 + int_v2, bound)


# ---------------------------------------------------------------------------
# adjoint


def objective_and_gradient(u0: SpectralField, h: Control, cfg: SkeletonConfig,
                           terminal_cost, backend=None):
    """``J(h) = terminal_cost(u(T))`` and its exact discrete gradient over control pieces.

    ``terminal_cost(c)`` returns ``(value, gradient)`` for terminal coefficients.
    Returns ``(J, grad, terminal_coeffs)``.
    """
    _check_u0(u0, cfg)
    hsteps = _control_steps(h, cfg)
    dom = cfg.dom
    spec = kernels.sigma_spec(cfg.coeffs)
    states, status, preds = march(u0.coeffs[None, :], hsteps, cfg, store_predictor=True,
                                  backend=backend)
    if status[0]:
        raise SolverOverflow(f"forward sweep exceeded {cfg.overflow_guard:g}")
    Cs, Ys = states[0], preds[0]
    value, gT = terminal_cost(Cs[-1])
    grad_steps, _ = kernels.adjoint(
        Cs, Ys, np.asarray(gT, dtype=float), dom.synthesis, dom.analysis, cfg.decay(), cfg.dt,
        hsteps, cfg.drift_on, cfg.sigma_on, spec, backend=backend,
    )
    if not np.all(np.isfinite(grad_steps)):
        raise NonFiniteError("reverse sweep produced non-finite values")
    grad = grad_steps.reshape(h.K, -1).sum(axis=1)
    return float(value), grad, Cs[-1].copy()


def adjoint_gradient(u0: SpectralField, h: Control, cfg: SkeletonConfig, terminal_cost,
                     backend=None) -> np.ndarray:
    return objective_and_gradient(u0, h, cfg, terminal_cost, backend=backend)[1]


def linear_cost(g):
    """Terminal cost ``<g, u(T)>``."""
    g = np.asarray(g, dtype=float)
    return lambda c: (float(np.dot(g, c)), g)


def quadratic_cost(target):
    """Terminal cost ``||u(T) - target||^2``."""
    target = np.asarray(target, dtype=float)

    def cost(c):
        r = c - target
        return float(np.dot(r, r)), 2.0 * r

    return cost
