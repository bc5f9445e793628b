"""Small-noise and controlled SPDE paths driven by one scalar Brownian motion.

Randomness comes from Philox streams keyed by ``(seed, path_index)``; step
``k`` of a path is the k-th draw of its stream.  Ensembles are processed in
chunks of fixed size, so per-path results do not depend on the number of
worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SolverOverflow
from .phi import default_phi
from .skeleton import Control, SkeletonConfig, Trajectory, _check_u0, _control_steps, march, solve_skeleton
from .spectral import SpectralField, metric_from_diff

DEFAULT_CHUNK = 64


@dataclass(frozen=True, eq=False)
class NoisePath:
    increments: np.ndarray
    seed: int
    dt: float
    T: float
    path_index: int = 0

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        n = int(round(self.T / self.dt))
        if inc.shape != (n,):
            raise ValueError(f"expected {n} increments, got {inc.shape}")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    def coarsen(self, factor: int) -> "NoisePath":
        """Sum consecutive blocks of ``factor`` increments (same Brownian path, coarser grid)."""
        if len(self.increments) % factor:
            raise ValueError("factor must divide the number of increments")
        inc = self.increments.reshape(-1, factor).sum(axis=1)
        return NoisePath(inc, self.seed, self.dt * factor, self.T, self.path_index)

    def brownian(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.increments)])


def _stream(seed: int, path_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(path_index)])))


def noise_increments(seed: int, n_steps: int, dt: float, start: int, stop: int) -> np.ndarray:
    """Increments for paths ``start..stop-1`` as an array (stop - start, n_steps)."""
    out = np.empty((stop - start, n_steps))
    sd = np.sqrt(dt)
    for j, p in enumerate(range(start, stop)):
        out[j] = sd * _stream(seed, p).standard_normal(n_steps)
    return out


def sample_noise(seed: int, dt: float, T: float, path_index: int = 0) -> NoisePath:
    """Brownian increments ``N(0, dt)``; identical for identical arguments."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = int(round(T / dt))
    return NoisePath(noise_increments(seed, n, dt, path_index, path_index + 1)[0],
                     int(seed), float(dt), float(T), int(path_index))


@dataclass(frozen=True, eq=False)
class EnsembleConfig:
    n_paths: int
    eps: float
    base: SkeletonConfig
    control: Control | None = None
    seed: int = 0
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        if int(self.n_paths) < 1:
            raise ConfigError("n_paths must be >= 1")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if int(self.chunk_size) < 1:
            raise ConfigError("chunk_size must be >= 1")


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("LOGLDP_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def map_chunks(fn, n_items: int, chunk_size: int, threads: int | None = None) -> list:
    """Apply ``fn(start, stop)`` over fixed chunks; results in chunk order."""
    bounds = [(s, min(s + chunk_size, n_items)) for s in range(0, n_items, chunk_size)]
    threads = resolve_threads(threads)
    if threads == 1 or len(bounds) == 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))


def solve_spde(u0: SpectralField, eps: float, h: Control | None, noise: NoisePath | None,
               cfg: SkeletonConfig, record_every: int = 1, backend=None) -> Trajectory:
    """Exponential (or IMEX) Euler-Maruyama path of the controlled SPDE.

    With ``h`` absent this is the small-noise equation; with ``eps = 0`` the
    call is routed through the deterministic skeleton solver and is
    bit-identical to it.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if eps == 0 or noise is None:
        traj = solve_skeleton(u0, h, cfg, record_every=record_every, backend=backend)
        traj.noise, traj.eps = noise, float(eps)
        return traj
    _check_u0(u0, cfg)
    if noise.increments.size != cfg.n_steps or abs(noise.dt - cfg.dt) > 1e-15 * cfg.dt:
        raise ConfigError("noise grid does not match solver grid")
    hsteps = _control_steps(h, cfg)
    states, status = march(u0.coeffs[None, :], hsteps, cfg, dW=noise.increments[None, :],
                           eps=eps, record_every=record_every, backend=backend)
    if status[0]:
        raise SolverOverflow(f"H-norm exceeded {cfg.overflow_guard:g}; reduce dt")
    return Trajectory(cfg.times[::record_every], states[0], cfg.dom, control=h, noise=noise,
                      eps=float(eps))


@dataclass(eq=False)
class Ensemble:
    """Paths stored as one array ``coeffs[path, time, mode]``; failed paths hold NaN."""

    times: np.ndarray
    coeffs: np.ndarray
    domain: object
    eps: float
    status: np.ndarray
    control: Control | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.coeffs.shape[0]

    @property
    def ok(self) -> np.ndarray:
        return self.status == 0

    def trajectories(self) -> list[Trajectory]:
        return [Trajectory(self.times, c, self.domain, control=self.control, eps=self.eps)
                for c, s in zip(self.coeffs, self.status) if s == 0]


def simulate_ensemble(u0: SpectralField, ens: EnsembleConfig, threads: int | None = None,
                      record_every: int = 1, backend=None) -> Ensemble:
    cfg = ens.base
    _check_u0(u0, cfg)
    hsteps = _control_steps(ens.control, cfg)
    N = cfg.n_steps

    def run(a, b):
        dW = noise_increments(ens.seed, N, cfg.dt, a, b)
        C0 = np.repeat(u0.coeffs[None, :], b - a, axis=0)
        return march(C0, hsteps, cfg, dW=dW, eps=ens.eps, record_every=record_every, backend=backend)

    parts = map_chunks(run, int(ens.n_paths), int(ens.chunk_size), threads)
    coeffs = np.concatenate([p[0] for p in parts])
    status = np.concatenate([p[1] for p in parts])
    return Ensemble(cfg.times[::record_every], coeffs, cfg.dom, ens.eps, status, ens.control)


# ---------------------------------------------------------------------------
# Lyapunov moment diagnostic


@dataclass(frozen=True)
class PhiMomentReport:
    n_paths: int
    phi_u0: float
    sup_phi_mean: float
    sup_phi_se: float
    int_mean: float
    int_se: float

    @property
    def ratio(self) -> float:
        return (self.sup_phi_mean + self.int_mean) / self.phi_u0

    def ci95(self, which="sup"):
        m, se = (self.sup_phi_mean, self.sup_phi_se) if which == "sup" else (self.int_mean, self.int_se)
        return m - 1.96 * se, m + 1.96 * se


def phi_moment_samples(times, coeffs, eigenvalues):
    """Per-path ``sup_t Phi(||X_t||^2)`` and ``int Phi'(||X||^2) ||X||_V^2 dt``."""
    phi = default_phi()
    h2 = np.sum(coeffs**2, axis=-1)
    v2 = coeffs**2 @ eigenvalues
    sup_phi = np.exp(phi.log_phi(np.max(h2, axis=-1)))
    integrand = phi.prime(h2.reshape(-1)).reshape(h2.shape) * v2
    integral = np.trapezoid(integrand, times, axis=-1)
    return sup_phi, integral


def phi_moment_report(ensemble) -> PhiMomentReport:
    """Monte Carlo means (and standard errors) of the two Lyapunov moments."""
    if isinstance(ensemble, Ensemble):
        if ensemble.n_paths == 0:
            raise ValueError("empty ensemble")
        coeffs = ensemble.coeffs[ensemble.ok]
        times, eig = ensemble.times, ensemble.domain.eigenvalues
    else:
        trajs = list(ensemble)
        if not trajs:
            raise ValueError("empty ensemble")
        coeffs = np.stack([t.coeffs for t in trajs])
        times, eig = trajs[0].times, trajs[0].domain.eigenvalues
    if coeffs.shape[0] == 0:
        raise ValueError("no successful paths in ensemble")
    u0 = coeffs[0, 0]
    if not np.allclose(coeffs[:, 0], u0, rtol=0, atol=0):
        raise ValueError("ensemble paths do not share an initial condition")
    sup_phi, integral = phi_moment_samples(times, coeffs, eig)
    n = sup_phi.size
    se = (lambda x: float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else 0.0)
    return PhiMomentReport(n, float(default_phi()(float(np.dot(u0, u0)))),
                           float(np.mean(sup_phi)), se(sup_phi),
                           float(np.mean(integral)), se(integral))


# ---------------------------------------------------------------------------
# condition (a): controlled SPDE against the skeleton


@dataclass(frozen=True)
class ConditionARow:
    eps: float
    n_paths: int
    n_failed: int
    median_rho: float
    q10: float
    q90: float
    p_exceed_delta: float


@dataclass(frozen=True)
class ConditionAResult:
    delta: float
    rows: list
    rho: dict  # eps -> per-path distances (NaN for failures)


def condition_a_experiment(u0: SpectralField, h: Control, eps_list, n_paths: int,
                           cfg: SkeletonConfig, delta: float | None = None, seed: int = 0,
                           threads: int | None = None, chunk_size: int = DEFAULT_CHUNK,
                           backend=None) -> ConditionAResult:
    """Distance ``rho_T(X^{h,eps}, Y^h)`` over an eps sweep with common random numbers.

    ``delta`` defaults to half the median distance at the first (largest) eps.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(e <= 0 for e in eps_list):
        raise ConfigError("eps_list must hold positive values")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("eps_list must be strictly decreasing")
    Y = solve_skeleton(u0, h, cfg, backend=backend)
    hsteps = _control_steps(h, cfg)
    N = cfg.n_steps
    eig = cfg.dom.eigenvalues

    def run(a, b):
        dW = noise_increments(seed, N, cfg.dt, a, b)
        C0 = np.repeat(u0.coeffs[None, :], b - a, axis=0)
        out = np.full((len(eps_list), b - a), np.nan)
        for j, eps in enumerate(eps_list):
            states, status = march(C0, hsteps, cfg, dW=dW, eps=eps, backend=backend)
            for p in range(b - a):
                if status[p] == 0:
                    out[j, p] = metric_from_diff(Y.times, states[p] - Y.coeffs, eig).rho
        return out

    parts = map_chunks(run, int(n_paths), chunk_size, threads)
    rho = np.concatenate(parts, axis=1)
    if delta is None:
        first = rho[0][np.isfinite(rho[0])]
        delta = 0.5 * float(np.median(first)) if first.size else float("nan")
    rows = []
    for j, eps in enumerate(eps_list):
        r = rho[j]
        good = r[np.isfinite(r)]
        if good.size:
            q10, med, q90 = np.quantile(good, [0.1, 0.5, 0.9])
            p_ex = float(np.mean(good > delta))
        else:
            q10 = med = q90 = p_ex = float("nan")
        rows.append(ConditionARow(eps, int(n_paths), int(r.size - good.size), float(med),
                                  float(q10), float(q90), p_ex))
    return ConditionAResult(float(delta), rows, {e: rho[j] for j, e in enumerate(eps_list)})
