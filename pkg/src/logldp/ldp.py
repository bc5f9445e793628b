"""Rate-function evaluation by optimal control, rare-event Monte Carlo and
weak-convergence experiments."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import binomtest

from .errors import ConfigError, NumericalError
from .skeleton import Control, SkeletonConfig, _control_steps, march, objective_and_gradient, solve_skeleton
from .spde import DEFAULT_CHUNK, map_chunks, noise_increments
from .spectral import SpectralField, path_metric

TARGET_KINDS = ("terminal_norm_above", "terminal_halfspace", "terminal_ball")


@dataclass(frozen=True, eq=False)
class TargetSet:
    """Set of terminal states, with a smooth squared-distance penalty from outside.

    * ``terminal_norm_above``: ``||u|| >= r``
    * ``terminal_halfspace``: ``<g, u> >= c``
    * ``terminal_ball``: ``||u - center|| <= r``
    """

    kind: str
    r: float = 0.0
    g: np.ndarray | None = None
    c: float = 0.0
    center: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ConfigError(f"unknown target kind {self.kind!r}")
        if self.kind == "terminal_halfspace":
            g = np.asarray(self.g, dtype=float)
            if g.ndim != 1 or not np.any(g):
                raise ConfigError("halfspace normal must be a nonzero vector")
            object.__setattr__(self, "g", g)
        if self.kind == "terminal_ball":
            object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
            if self.r < 0:
                raise ConfigError("ball radius must be nonnegative")

    @classmethod
    def norm_above(cls, r):
        return cls("terminal_norm_above", r=float(r))

    @classmethod
    def halfspace(cls, g, c):
        return cls("terminal_halfspace", g=g, c=float(c))

    @classmethod
    def ball(cls, center, r):
        return cls("terminal_ball", center=center, r=float(r))

    def signed_excess(self, C) -> np.ndarray:
        """Distance outside the set (positive) or depth inside (<= 0), batched."""
        C = np.asarray(C, dtype=float)
        if self.kind == "terminal_norm_above":
            return self.r - np.linalg.norm(C, axis=-1)
        if self.kind == "terminal_halfspace":
            gn = np.linalg.norm(self.g)
            return (self.c - C @ self.g) / gn
        return np.linalg.norm(C - self.center, axis=-1) - self.r

    def contains(self, C):
        return self.signed_excess(C) <= 0

    def gap(self, c) -> float:
        return float(max(self.signed_excess(c), 0.0))

    def penalty(self, c):
        """``gap(c)^2`` and its gradient in coefficient space."""
        c = np.asarray(c, dtype=float)
        s = float(self.signed_excess(c))
        if s <= 0:
            return 0.0, np.zeros_like(c)
        if self.kind == "terminal_norm_above":
            nrm = np.linalg.norm(c)
            direction = -c / nrm if nrm > 0 else -np.eye(c.size)[0]
        elif self.kind == "terminal_halfspace":
            direction = -self.g / np.linalg.norm(self.g)
        else:
            diff = c - self.center
            direction = diff / np.linalg.norm(diff)
        return s * s, 2.0 * s * direction

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "terminal_norm_above":
            out["r"] = self.r
        elif self.kind == "terminal_halfspace":
            out.update(g=self.g.tolist(), c=self.c)
        else:
            out.update(center=self.center.tolist(), r=self.r)
        return out


@dataclass(frozen=True)
class OptimizerParams:
    K: int = 32
    n_starts: int = 8
    start_scale: float = 1.0
    penalty_start: float = 1.0
    penalty_factor: float = 10.0
    penalty_max: float = 1e6
    feas_tol: float = 1e-4
    max_iter: int = 2000
    gtol: float = 1e-10
    armijo: float = 1e-4
    memory: int = 10
    seed: int = 0
    check_gradients: bool = False
    fd_step: float = float(np.cbrt(np.finfo(float).eps))  # balances roundoff against truncation

    def __post_init__(self):
        if self.K < 1 or self.n_starts < 1:
            raise ConfigError("K and n_starts must be >= 1")
        if not (self.penalty_factor > 1 and self.penalty_start > 0):
            raise ConfigError("penalty schedule must increase from a positive weight")
        if not self.feas_tol > 0:
            raise ConfigError("feas_tol must be positive")


@dataclass
class RateFunctionResult:
    h_star: Control
    cost: float
    terminal: SpectralField
    feasibility_gap: float
    feasible: bool
    optimizer_trace: list = field(default_factory=list)
    gradient_checks: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cost": self.cost,
            "feasibility_gap": self.feasibility_gap,
            "feasible": self.feasible,
            "h_star": {"T": self.h_star.T, "values": self.h_star.values.tolist()},
            "terminal": self.terminal.coeffs.tolist(),
            "optimizer_trace": self.optimizer_trace,
            "gradient_checks": self.gradient_checks,
        }


def _descend(fun, x, params: OptimizerParams):
    """Gradient descent, Barzilai-Borwein steps, nonmonotone Armijo backtracking."""
    f, g = fun(x)
    hist = [f]
    gn = float(np.linalg.norm(g))
    step = 1.0 / max(gn, 1e-12)
    it = 0
    n_backtracks = 0
    for it in range(1, params.max_iter + 1):
        if gn <= params.gtol * (1.0 + abs(f)):
            break
        ref = max(hist[-params.memory:])
        a = step
        while True:
            xn = x - a * g
            try:
                fn, gn_vec = fun(xn)
            except NumericalError:
                fn = math.inf
            if fn <= ref - params.armijo * a * gn * gn:
                break
            a *= 0.5
            n_backtracks += 1
            if a < 1e-20:
                return x, f, g, it, a, n_backtracks
        s, y = xn - x, gn_vec - g
        sy = float(np.dot(s, y))
        step = float(np.dot(s, s)) / sy if sy > 0 else 2.0 * a
        small = (abs(f - fn) <= 1e-15 * max(1.0, abs(f))
                 and float(np.linalg.norm(s)) <= 1e-15 * (1 + float(np.linalg.norm(x))))
        x, f, g = xn, fn, gn_vec
        gn = float(np.linalg.norm(g))
        hist.append(f)
        if small:
            break
    return x, f, g, it, step, n_backtracks


def _fd_check(u0, h, cfg, cost_fn, grad, base, rng, n_dirs=3):
    worst = 0.0
    for _ in range(n_dirs):
        v = rng.standard_normal(h.K)
        v /= np.linalg.norm(v)
        step = base * max(1.0, float(np.linalg.norm(h.values, np.inf)))
        jp = objective_and_gradient(u0, Control(h.values + step * v, h.T), cfg, cost_fn)[0]
        jm = objective_and_gradient(u0, Control(h.values - step * v, h.T), cfg, cost_fn)[0]
        fd = (jp - jm) / (2 * step)
        ad = float(np.dot(grad, v))
        worst = max(worst, abs(fd - ad) / max(abs(fd), abs(ad), 1e-300))
    return worst


def rate_function(u0: SpectralField, target: TargetSet, cfg: SkeletonConfig,
                  opt: OptimizerParams | None = None, backend=None) -> RateFunctionResult:
    """Minimal control energy ``1/2 int h^2`` steering the skeleton into ``target`` at T.

    Quadratic-penalty continuation (weight times ``penalty_factor`` per stage,
    warm-started, stopped once the terminal gap is within ``feas_tol``) over
    ``n_starts`` starts; the zero control is always the first start.  The
    result with the least cost among feasible ones is returned; if none is
    feasible the closest one is returned with ``feasible=False``.
    """
    opt = opt or OptimizerParams()
    K, T = opt.K, cfg.T
    zero = Control.zeros(K, T)
    y0 = solve_skeleton(u0, zero, cfg, record_every=cfg.n_steps, backend=backend)
    if target.contains(y0.coeffs[-1]):
        return RateFunctionResult(zero, 0.0, y0.terminal, 0.0, True,
                                  [{"start": 0, "note": "zero control reaches target"}])
    if not cfg.sigma_on:
        return RateFunctionResult(zero, 0.0, y0.terminal, target.gap(y0.coeffs[-1]), False,
                                  [{"note": "sigma vanishes: control cannot act"}])
    tau = T / K
    rng = np.random.default_rng(opt.seed)
    starts = [np.zeros(K)] + [opt.start_scale * rng.standard_normal(K) for _ in range(opt.n_starts - 1)]
    best = None
    closest = None
    trace, checks = [], []
    for si, x0 in enumerate(starts):
        if opt.check_gradients:
            g_only = objective_and_gradient(u0, Control(x0, T), cfg, target.penalty, backend=backend)[1]
            checks.append({"start": si, "rel_err": _fd_check(u0, Control(x0, T), cfg, target.penalty,
                                                             g_only, opt.fd_step, rng)})
        x = np.array(x0, dtype=float)
        w = opt.penalty_start
        while True:
            def fun(v, w=w):
                pen, g, _ = objective_and_gradient(u0, Control(v, T), cfg, target.penalty, backend=backend)
                return w * pen + 0.5 * tau * float(np.dot(v, v)), w * g + tau * v

            try:
                x, f, g, iters, step, nbt = _descend(fun, x, opt)
            except NumericalError as exc:
                trace.append({"start": si, "weight": w, "error": str(exc)})
                break
            h = Control(x, T)
            term = solve_skeleton(u0, h, cfg, record_every=cfg.n_steps, backend=backend).coeffs[-1]
            gap = target.gap(term)
            cost = 0.5 * h.energy()
            feasible = gap <= opt.feas_tol
            trace.append({"start": si, "weight": w, "iterations": iters, "step": step,
                          "backtracks": nbt, "grad_norm": float(np.linalg.norm(g)),
                          "objective": f, "cost": cost, "gap": gap, "feasible": feasible})
            cand = (cost, gap, h, term)
            if feasible:
                if best is None or cost < best[0]:
                    best = cand
                break
            if closest is None or gap < closest[1]:
                closest = cand
            if w >= opt.penalty_max:
                break
            w = min(w * opt.penalty_factor, opt.penalty_max)
    pick, ok = (best, True) if best is not None else (closest, False)
    cost, gap, h, term = pick
    return RateFunctionResult(h, float(cost), SpectralField(term, cfg.dom), float(gap), ok, trace, checks)


# ---------------------------------------------------------------------------
# direct Monte Carlo


@dataclass(frozen=True)
class RareEventRow:
    eps: float
    n_paths: int
    n_failed: int
    hits: int
    p_hat: float
    ci_low: float
    ci_high: float
    ldp_diag: float
    ldp_ci_low: float
    ldp_ci_high: float
    rate_cost: float
    censored: bool


def _neg_eps2_log(eps, p):
    return math.inf if p <= 0 else -eps * eps * math.log(p)


def mc_rare_event(u0: SpectralField, target: TargetSet, eps_list, n_paths: int,
                  cfg: SkeletonConfig, seed: int = 0, threads: int | None = None,
                  chunk_size: int = 1024, rate_cost: float = float("nan"),
                  confidence: float = 0.95, backend=None) -> list[RareEventRow]:
    """Direct estimate of ``P(u^eps(T) in target)`` per eps (common random numbers).

    Wilson intervals; rows with zero hits are marked censored and carry only
    the one-sided bound.
    """
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list):
        raise ConfigError("eps values must be positive")
    N = cfg.n_steps
    hsteps = np.zeros(N)

    def run(a, b):
        dW = noise_increments(seed, N, cfg.dt, a, b)
        C0 = np.repeat(u0.coeffs[None, :], b - a, axis=0)
        hits = np.zeros(len(eps_list), dtype=np.int64)
        fails = np.zeros(len(eps_list), dtype=np.int64)
        for j, eps in enumerate(eps_list):
            states, status = march(C0, hsteps, cfg, dW=dW, eps=eps, record_every=N, backend=backend)
            ok = status == 0
            hits[j] = int(np.sum(target.contains(states[ok, -1])))
            fails[j] = int(np.sum(~ok))
        return hits, fails

    parts = map_chunks(run, int(n_paths), chunk_size, threads)
    hits = np.sum([p[0] for p in parts], axis=0)
    fails = np.sum([p[1] for p in parts], axis=0)
    rows = []
    for j, eps in enumerate(eps_list):
        n_ok = int(n_paths - fails[j])
        k = int(hits[j])
        if n_ok == 0:
            raise NumericalError("every Monte Carlo path failed")
        ci = binomtest(k, n_ok).proportion_ci(confidence_level=confidence, method="wilson")
        p_hat = k / n_ok
        rows.append(RareEventRow(
            eps, int(n_paths), int(fails[j]), k, p_hat, float(ci.low), float(ci.high),
            _neg_eps2_log(eps, p_hat), _neg_eps2_log(eps, float(ci.high)),
            _neg_eps2_log(eps, float(ci.low)), float(rate_cost), k == 0,
        ))
    return rows


# ---------------------------------------------------------------------------
# condition (b): weakly converging controls


def oscillatory_control(h: Control, eps: float, amplitude: float, n_steps: int) -> Control:
    """``h(t) + A sin(t/eps)`` sampled at step midpoints (one piece per step)."""
    base = h.per_step(n_steps)
    dt = h.T / n_steps
    mid = (np.arange(n_steps) + 0.5) * dt
    return Control(base + amplitude * np.sin(mid / eps), h.T)


@dataclass(frozen=True)
class ConditionBRow:
    eps: float
    rho: float
    sup_H: float
    int_V: float
    energy: float


def condition_b_experiment(u0: SpectralField, h: Control, eps_list, cfg: SkeletonConfig,
                           amplitude: float = 1.0, N: float | None = None,
                           backend=None) -> list[ConditionBRow]:
    """``rho_T(Y^{h_eps}, Y^h)`` for ``h_eps = h + A sin(t/eps)``."""
    n = cfg.n_steps
    base = Control(h.per_step(n), h.T)
    Yh = solve_skeleton(u0, base, cfg, backend=backend)
    rows = []
    for eps in eps_list:
        he = oscillatory_control(h, float(eps), amplitude, n)
        energy = he.energy()
        if N is not None and energy > N:
            raise ConfigError(f"control energy {energy:.4g} exceeds N = {N}")
        Ye = solve_skeleton(u0, he, cfg, backend=backend)
        rep = path_metric(Ye, Yh)
        rows.append(ConditionBRow(float(eps), rep.rho, rep.sup_H, rep.int_V, energy))
    return rows


def default_test_functions(T: float):
    polys = [(f"poly{p}", (lambda t, p=p: (t / T) ** p)) for p in range(4)]
    sines = [(f"sin{j}", (lambda t, j=j: np.sin(j * np.pi * t / T))) for j in range(1, 5)]
    return polys + sines


def weak_energy_check(h_eps: Control, h: Control, test_functions=None, N: float | None = None) -> dict:
    """Max over a test dictionary of ``|int (h_eps - h) phi|`` plus both energies."""
    if h_eps.K != h.K or abs(h_eps.T - h.T) > 1e-12 * h.T:
        raise ValueError("controls must share a grid")
    tests = test_functions or default_test_functions(h.T)
    x, w = np.polynomial.legendre.leggauss(6)
    tau = h.piece_length
    left = np.arange(h.K) * tau
    nodes = left[:, None] + 0.5 * tau * (x[None, :] + 1.0)
    diff = h_eps.values - h.values
    gaps = {}
    for name, phi in tests:
        piece_int = 0.5 * tau * (np.asarray(phi(nodes), dtype=float) @ w)
        gaps[name] = float(abs(np.dot(diff, piece_int)))
    out = {"max_gap": max(gaps.values()), "gaps": gaps,
           "energy_eps": h_eps.energy(), "energy_h": h.energy()}
    if N is not None:
        out["N"] = N
        out["within_N"] = bool(out["energy_eps"] <= N and out["energy_h"] <= N)
    return out


def rows_to_dicts(rows) -> list[dict]:
    return [asdict(r) for r in rows]
