"""Command-line entry point.

``logldp <experiment> --config <path> [--threads N] [--output DIR] [--seed S]``
and ``logldp report DIR``.  Exit codes: 0 success, 2 invalid configuration,
3 numerical failure (overflow, non-finite values, infeasible target).
"""

from __future__ import annotations

import argparse
import json
import math
import platform
import subprocess
import sys
import time
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__, config as C
from .coefficients import check_growth, h_violation, pair_grid
from .errors import ConfigError, NumericalError
from .io import sha256_file, write_json, write_table, write_trajectory_bin, write_trajectory_csv
from .kernels import BACKEND
from .ldp import condition_b_experiment, mc_rare_event, oscillatory_control, rate_function, weak_energy_check
from .phi import default_phi
from .skeleton import Control, Trajectory, _control_steps, march, solve_skeleton, uniform_bound_report
from .spde import (EnsembleConfig, condition_a_experiment, noise_increments, phi_moment_samples,
                   resolve_threads, simulate_ensemble)
from .spectral import to_physical
from .verify import inequality_suite

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

COLUMNS = {
    "phi_moment": ["eps", "n_paths", "n_failed", "phi_u0", "sup_phi_mean", "sup_phi_se",
                   "int_mean", "int_se", "ratio"],
    "paths": ["eps", "path", "status", "terminal_norm", "sup_h2", "int_v2"],
    "h_star": ["piece", "t_left", "t_right", "h"],
    "mc_estimate": ["eps", "n_paths", "n_failed", "hits", "p_hat", "ci_low", "ci_high", "ldp_diag",
                    "ldp_ci_low", "ldp_ci_high", "rate_cost", "censored"],
    "condition_a": ["eps", "n_paths", "median_rho", "q10", "q90", "p_exceed_delta"],
    "condition_b": ["eps", "rho", "sup_H", "int_V", "energy", "weak_gap"],
    "inequalities": ["inequality", "eps", "alpha", "n_fields", "min_gap", "min_rel_gap", "mean_rel_gap"],
    "convergence": ["dt", "error", "order"],
}


class Run:
    """Output directory bookkeeping for one experiment."""

    def __init__(self, cfg, out: Path, threads: int):
        self.cfg, self.out, self.threads = cfg, out, threads
        self.files: list[Path] = []
        self.results: dict = {}
        self.contracts: dict = {}
        self.main_table: str | None = None

    def table(self, name, rows, columns=None, main=False):
        path = write_table(self.out / f"{name}.csv", columns or COLUMNS[name], rows)
        self.files.append(path)
        if main:
            self.main_table = path.name
        return path

    def json(self, name, obj):
        self.files.append(write_json(self.out / f"{name}.json", obj))

    def add(self, path):
        self.files.append(Path(path))


def _strictly_decreasing(xs):
    xs = [x for x in xs]
    return all(b < a for a, b in zip(xs, xs[1:]))


# ---------------------------------------------------------------------------
# experiments


def exp_skeleton(run: Run):
    cfg = run.cfg
    sk = C.build_skeleton(cfg)
    u0, h = C.build_u0(cfg, sk.dom), C.build_control(cfg, sk)
    rec = cfg["solver"]["record_every"]
    traj = solve_skeleton(u0, h, sk, record_every=rec)
    run.add(write_trajectory_csv(traj, run.out / "trajectory.csv"))
    run.main_table = "trajectory.csv"
    full = solve_skeleton(u0, h, sk) if rec > 1 else traj
    rep = uniform_bound_report(full, sk)
    run.results.update(terminal_norm=traj.terminal.norm, sup_h2=rep.sup_H2, int_v2=rep.int_V2,
                       bound=rep.bound_62)
    run.contracts["uniform_bound_dominates"] = rep.dominated
    err = _oracle_error(traj, u0, h, sk)
    if err is not None:
        run.results["oracle_max_error"] = err
        run.contracts["oracle_error_below_1e-8"] = err < 1e-8


def _oracle_error(traj, u0, h, sk):
    """Max deviation from the closed form where one exists (heat_only / reaction_only, h = 0)."""
    if np.any(h.values != 0) and sk.sigma_on:
        return None
    if sk.oracle_mode == "heat_only":
        exact = u0.coeffs[None, :] * np.exp(-np.outer(traj.times, sk.dom.eigenvalues))
        return float(np.max(np.abs(exact - traj.coeffs)))
    if sk.oracle_mode == "reaction_only" and not sk.dom.dealias and sk.dom.n_quad == sk.dom.n_modes:
        y0 = to_physical(u0)
        mag = np.abs(y0)
        with np.errstate(divide="ignore"):
            logs = np.where(mag > 0, np.log(np.where(mag > 0, mag, 1.0)), -np.inf)
        T = traj.times[-1]
        exact = np.sign(y0) * np.exp(np.exp(T) * logs)
        return float(np.max(np.abs(to_physical(traj.terminal) - exact)))
    return None


def exp_simulate(run: Run):
    cfg = run.cfg
    sk = C.build_skeleton(cfg)
    u0, h = C.build_u0(cfg, sk.dom), C.build_control(cfg, sk)
    e = cfg["ensemble"]
    rec = cfg["solver"]["record_every"]
    phi_rows, path_rows = [], []
    any_failed = False
    for j, eps in enumerate(e["eps"]):
        ens = simulate_ensemble(u0, EnsembleConfig(e["n_paths"], eps, sk, h, cfg["seed"], e["chunk_size"]),
                                threads=run.threads, record_every=rec)
        ok = ens.ok
        any_failed |= not ok.all()
        h2 = np.sum(ens.coeffs**2, axis=-1)
        v2 = ens.coeffs**2 @ sk.dom.eigenvalues
        for p in range(ens.n_paths):
            path_rows.append([eps, p, int(ens.status[p]), math.sqrt(h2[p, -1]), np.max(h2[p]),
                              np.trapezoid(v2[p], ens.times)])
        if ok.any():
            sup_phi, integral = phi_moment_samples(ens.times, ens.coeffs[ok], sk.dom.eigenvalues)
            n = sup_phi.size
            se = (lambda x: float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
            phi_u0 = float(default_phi()(float(u0.norm**2)))
            row = [eps, e["n_paths"], int((~ok).sum()), phi_u0, np.mean(sup_phi), se(sup_phi),
                   np.mean(integral), se(integral), (np.mean(sup_phi) + np.mean(integral)) / phi_u0]
        else:
            row = [eps, e["n_paths"], e["n_paths"]] + [float("nan")] * 6
        phi_rows.append(row)
        if e["dump_paths"]:
            size = ens.coeffs.size
            if size > e["max_dump_values"]:
                run.results.setdefault("dump_skipped", []).append(eps)
            else:
                ddir = run.out / "paths"
                ddir.mkdir(exist_ok=True)
                for p in range(ens.n_paths):
                    t = Trajectory(ens.times, ens.coeffs[p], sk.dom)
                    run.add(write_trajectory_bin(t, ddir / f"eps{j}_path{p:06d}.bin"))
    run.table("phi_moment", phi_rows, main=True)
    run.table("paths", path_rows)
    run.contracts["all_paths_ok"] = not any_failed
    run.results["phi_ratio"] = {str(r[0]): r[-1] for r in phi_rows}


def _rate(run: Run, sk, u0, target):
    opt = C.build_optimizer(run.cfg, run.cfg["seed"])
    res = rate_function(u0, target, sk, opt)
    run.json("rate_function", {"target": target.describe(), **res.to_dict()})
    tau = res.h_star.piece_length
    run.table("h_star", [[k, k * tau, (k + 1) * tau, v] for k, v in enumerate(res.h_star.values)])
    run.results.update(rate_cost=res.cost, feasibility_gap=res.feasibility_gap, feasible=res.feasible)
    run.contracts["rate_feasible"] = res.feasible
    if res.gradient_checks:
        worst = max(c["rel_err"] for c in res.gradient_checks)
        run.results["gradient_check_max_rel_err"] = worst
        run.contracts["gradient_checks_below_1e-5"] = worst < 1e-5
    return res


def exp_rate_function(run: Run):
    cfg = run.cfg
    sk = C.build_skeleton(cfg)
    u0, target = C.build_u0(cfg, sk.dom), C.build_target(cfg, sk.dom)
    res = _rate(run, sk, u0, target)
    run.main_table = "h_star.csv"
    if not res.feasible:
        raise _Infeasible(res.feasibility_gap)


class _Infeasible(NumericalError):
    reason = "infeasible"

    def __init__(self, gap):
        super().__init__(f"target not reached: feasibility gap {gap:.3g}")


def exp_mc_estimate(run: Run):
    cfg = run.cfg
    sk = C.build_skeleton(cfg)
    u0, target = C.build_u0(cfg, sk.dom), C.build_target(cfg, sk.dom)
    cost = float("nan")
    if cfg["optimizer"]["enabled"]:
        res = _rate(run, sk, u0, target)
        cost = res.cost if res.feasible else float("nan")
    m = cfg["mc"]
    rows = mc_rare_event(u0, target, m["eps"], m["n_paths"], sk, seed=cfg["seed"], threads=run.threads,
                         chunk_size=m["chunk_size"], rate_cost=cost, confidence=m["confidence"])
    run.table("mc_estimate", [asdict(r) for r in rows], main=True)
    run.results["ldp_diag"] = {str(r.eps): r.ldp_diag for r in rows}
    run.contracts["no_failed_paths"] = all(r.n_failed == 0 for r in rows)
    if math.isfinite(cost):
        dist = [abs(r.ldp_diag - cost) for r in rows if not r.censored]
        run.contracts["ldp_trend_toward_cost"] = len(dist) > 1 and _strictly_decreasing(dist)


def exp_condition_a(run: Run):
    cfg = run.cfg
    sk = C.build_skeleton(cfg)
    u0, h = C.build_u0(cfg, sk.dom), C.build_control(cfg, sk)
    e = cfg["ensemble"]
    res = condition_a_experiment(u0, h, e["eps"], e["n_paths"], sk, delta=e["delta"], seed=cfg["seed"],
                                 threads=run.threads, chunk_size=e["chunk_size"])
    run.table("condition_a", [asdict(r) for r in res.rows], main=True)
    eps = list(res.rho)
    run.table("condition_a_rho", [[p] + [res.rho[x][p] for x in eps] for p in range(e["n_paths"])],
              columns=["path"] + [f"rho_eps_{x:g}" for x in eps])
    meds = [r.median_rho for r in res.rows]
    run.results.update(delta=res.delta, n_failed={str(r.eps): r.n_failed for r in res.rows})
    run.contracts["medians_decreasing"] = _strictly_decreasing(meds)
    run.contracts["p_exceed_zero_at_smallest_eps"] = res.rows[-1].p_exceed_delta == 0.0


def exp_condition_b(run: Run):
    cfg = run.cfg
    sk = C.build_skeleton(cfg)
    u0, h = C.build_u0(cfg, sk.dom), C.build_control(cfg, sk)
    b = cfg["condition_b"]
    rows = condition_b_experiment(u0, h, b["eps"], sk, amplitude=b["amplitude"], N=b["N"])
    base = Control(h.per_step(sk.n_steps), h.T)
    out = []
    for r in rows:
        he = oscillatory_control(h, r.eps, b["amplitude"], sk.n_steps)
        out.append({**asdict(r), "weak_gap": weak_energy_check(he, base)["max_gap"]})
    run.table("condition_b", out, main=True)
    run.contracts["rho_decreasing"] = _strictly_decreasing([r.rho for r in rows])


def exp_verify(run: Run):
    cfg = run.cfg
    dom = C.build_domain(cfg)
    q = cfg["inequalities"]
    rows = inequality_suite(dom, q["n_fields"], q["eps"], q["alpha"], seed=cfg["seed"])
    run.table("inequalities", [asdict(r) for r in rows], main=True)
    worst = min(r.min_rel_gap for r in rows)
    run.results["min_rel_gap"] = worst
    run.contracts["all_gaps_above_tolerance"] = worst >= -q["tolerance"]
    sig = C.build_sigma(cfg)
    grid = np.linspace(-q["h_grid_half_width"], q["h_grid_half_width"], q["h_grid_points"])
    hv = h_violation(sig.sigma, pair_grid(grid), sig.L1, sig.L2)
    gv = check_growth(sig.sigma, sig.L3, sig.L4, grid)
    run.results["sigma"] = {**sig.describe(), "H_violation": hv, "growth_violation": gv}
    run.contracts["sigma_H_on_grid"] = hv <= 1e-12
    run.contracts["sigma_growth_on_grid"] = gv <= 1e-12


def exp_convergence(run: Run):
    cfg = run.cfg
    sk0 = C.build_skeleton(cfg)
    u0, h = C.build_u0(cfg, sk0.dom), C.build_control(cfg, sk0)
    c = cfg["convergence"]
    dts = sorted(c["dt_list"], reverse=True)
    fine = dts[-1]
    factors = [d / fine for d in dts]
    if any(abs(f - round(f)) > 1e-9 for f in factors):
        raise ConfigError("every dt must be an integer multiple of the finest dt")
    cfgs = [sk0.with_(dt=d) for d in dts]
    for s in cfgs:
        if s.n_steps % h.K:
            raise ConfigError(f"control pieces K={h.K} must divide n_steps={s.n_steps}")
    eps = c["eps"]
    n_paths = c["n_paths"] if eps > 0 else 1
    dW = noise_increments(cfg["seed"], cfgs[-1].n_steps, fine, 0, n_paths) if eps > 0 else None
    terms = []
    for s, f in zip(cfgs, factors):
        f = int(round(f))
        dws = dW.reshape(n_paths, -1, f).sum(axis=2) if dW is not None else None
        C0 = np.repeat(u0.coeffs[None, :], n_paths, axis=0)
        states, status = march(C0, _control_steps(h, s), s, dW=dws, eps=eps, record_every=s.n_steps)
        if np.any(status):
            raise NumericalError("overflow in convergence study")
        terms.append(states[:, -1])
    errs = [float(np.sqrt(np.mean(np.sum((terms[i] - terms[i + 1]) ** 2, axis=1))))
            for i in range(len(dts) - 1)]
    rows = []
    for i, e_ in enumerate(errs):
        order = math.log(errs[i - 1] / e_) / math.log(dts[i - 1] / dts[i]) if i > 0 and e_ > 0 else float("nan")
        rows.append([dts[i], e_, order])
    run.table("convergence", rows, main=True)
    run.results["orders"] = [r[2] for r in rows[1:]]
    run.contracts["errors_decreasing"] = _strictly_decreasing(errs)


EXPERIMENT_FUNCS = {
    "simulate": exp_simulate,
    "skeleton": exp_skeleton,
    "rate-function": exp_rate_function,
    "mc-estimate": exp_mc_estimate,
    "condition-a": exp_condition_a,
    "condition-b": exp_condition_b,
    "verify-inequalities": exp_verify,
    "convergence-study": exp_convergence,
}


# ---------------------------------------------------------------------------
# manifest and driver


def _git_describe() -> str:
    try:
        r = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                           cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5)
        return r.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _versions() -> dict:
    out = {"logldp": __version__, "python": platform.python_version()}
    for pkg in ("numpy", "scipy", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    return x


def run_experiment(experiment: str, raw: dict, threads=None, output=None, seed=None) -> int:
    """Validate, run and write artifacts; returns the exit code."""
    try:
        if raw.get("experiment") not in (None, experiment):
            raise ConfigError(f"config is for experiment {raw['experiment']!r}, not {experiment!r}")
        raw = dict(raw)
        if seed is not None:
            raw["seed"] = seed
        if output is not None:
            raw["output_dir"] = str(output)
        raw["experiment"] = experiment
        cfg = C.resolve(raw)
        if threads is not None and threads < 1:
            raise ConfigError("--threads must be >= 1")
        nthreads = resolve_threads(threads)
        # build once up front so invalid combinations fail before any output is written
        sk = C.build_skeleton(cfg)
        C.build_u0(cfg, sk.dom)
        if experiment in ("skeleton", "simulate", "condition-a", "condition-b", "convergence-study"):
            C.build_control(cfg, sk)
        if experiment in ("rate-function", "mc-estimate"):
            C.build_target(cfg, sk.dom)
            C.build_optimizer(cfg, cfg["seed"])
    except (ConfigError, ValueError) as exc:
        print(f"logldp: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, out, nthreads)
    t0 = time.perf_counter()
    status, reason, message, code = "ok", None, None, EXIT_OK
    try:
        EXPERIMENT_FUNCS[experiment](run)
    except ConfigError as exc:
        status, reason, message, code = "error", "config", str(exc), EXIT_CONFIG
    except NumericalError as exc:
        status, reason, message, code = "failed", exc.reason, str(exc), EXIT_NUMERIC
    except (FloatingPointError, OverflowError) as exc:
        status, reason, message, code = "failed", "numerical", str(exc), EXIT_NUMERIC
    wall = time.perf_counter() - t0
    manifest = {
        "experiment": experiment,
        "status": status,
        "reason": reason,
        "message": message,
        "config": cfg,
        "config_hash": C.config_hash(cfg),
        "seeds": {"base_seed": cfg["seed"], "policy": "Philox(SeedSequence([seed, path_index]))"},
        "threads": nthreads,
        "backend": BACKEND,
        "versions": _versions(),
        "git_describe": _git_describe(),
        "timings": {"wall_seconds": wall},
        "results": _jsonable(run.results),
        "contracts": _jsonable(run.contracts),
        "main_table": run.main_table,
        "files": [{"path": str(p.relative_to(out)), "sha256": sha256_file(p), "bytes": p.stat().st_size}
                  for p in run.files],
    }
    write_json(out / "manifest.json", manifest)
    if code:
        print(f"logldp: {status}: {message}", file=sys.stderr)
    return code


def report(output_dir, stream=None) -> int:
    stream = stream or sys.stdout
    path = Path(output_dir) / "manifest.json"
    try:
        man = json.loads(path.read_text())
        experiment = man["experiment"]
    except FileNotFoundError:
        print(f"logldp: no manifest.json in {output_dir}", file=sys.stderr)
        return EXIT_CONFIG
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"logldp: corrupt manifest in {output_dir}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    w = stream.write
    w(f"experiment: {experiment}\nstatus: {man.get('status')}")
    if man.get("reason"):
        w(f" ({man['reason']}: {man.get('message')})")
    w(f"\nseed: {man.get('seeds', {}).get('base_seed')}  backend: {man.get('backend')}"
      f"  wall: {man.get('timings', {}).get('wall_seconds', float('nan')):.2f}s\n")
    for k, v in (man.get("results") or {}).items():
        w(f"  {k}: {json.dumps(v)}\n")
    main = man.get("main_table")
    if main and (Path(output_dir) / main).exists():
        w(f"\n{main}\n")
        lines = (Path(output_dir) / main).read_text().splitlines()
        rows = [ln.split(",") for ln in lines[:41]]
        widths = [max(len(_short(r[i])) for r in rows if i < len(r)) for i in range(len(rows[0]))]
        for r in rows:
            w("  " + "  ".join(_short(c).rjust(wd) for c, wd in zip(r, widths)) + "\n")
        if len(lines) > 41:
            w(f"  ... {len(lines) - 41} more rows\n")
    contracts = man.get("contracts") or {}
    if contracts:
        w("\ncontracts\n")
        for k, v in contracts.items():
            w(f"  {'PASS' if v else 'FAIL'}  {k}\n")
    return EXIT_OK


def _short(s: str) -> str:
    try:
        x = float(s)
    except ValueError:
        return s
    if s.lstrip("-").isdigit():
        return s
    return f"{x:.6g}"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="logldp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"logldp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in C.EXPERIMENTS:
        s = sub.add_parser(name, help=f"run the {name} experiment")
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $LOGLDP_THREADS or CPU count)")
        s.add_argument("--output", default=None, help="output directory (overrides output_dir)")
        s.add_argument("--seed", type=int, default=None, help="base seed (overrides config)")
    r = sub.add_parser("report", help="summarize a finished run")
    r.add_argument("dir")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "report":
        return report(args.dir)
    try:
        raw = C.load(args.config)
    except ConfigError as exc:
        print(f"logldp: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and args.seed < 0:
        print("logldp: configuration error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    return run_experiment(args.command, raw, threads=args.threads, output=args.output, seed=args.seed)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
