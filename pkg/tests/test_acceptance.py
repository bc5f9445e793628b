"""Acceptance criteria 1-10, each at its stated size and tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line (collected again in the
terminal summary).  Runtime limits are part of the verdict.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.stats import norm

from logldp import cli, config as C
from logldp.coefficients import builtin_sigma
from logldp.gronwall import gronwall_bound_61, gronwall_bound_62
from logldp.ldp import TargetSet, condition_b_experiment, mc_rare_event, rate_function
from logldp.skeleton import Control, SkeletonConfig, objective_and_gradient, quadratic_cost, solve_skeleton
from logldp.spde import EnsembleConfig, condition_a_experiment, phi_moment_report, simulate_ensemble
from logldp.spectral import DomainConfig, SpectralField, from_physical, to_physical
from logldp.verify import inequality_suite

from conftest import ACCEPTANCE_LINES

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

pytestmark = pytest.mark.acceptance


def verdict(n, ok, detail, elapsed, limit=None):
    in_time = limit is None or elapsed < limit
    passed = bool(ok) and in_time
    budget = f"{elapsed:.1f}s" + (f" / {limit:g}s" if limit else "")
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}  [{budget}]"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert passed, line


def load(name):
    return C.resolve(C.load(CONFIGS / name))


def ou_reference(cfg):
    """Mean and standard deviation of the first mode at T for the heat-only chain, sigma = 1."""
    sk = C.build_skeleton(cfg)
    dom = sk.dom
    p1 = float((dom.analysis @ np.ones(dom.n_quad))[0])
    E = math.exp(-dom.eigenvalues[0] * sk.dt)
    N = sk.n_steps
    mean = C.build_u0(cfg, dom).coeffs[0] * E**N
    sd = abs(p1) * math.sqrt(sk.dt * sum(E ** (2 * j) for j in range(1, N + 1)))
    weights = p1 * sk.dt * E ** (N - np.arange(N))
    return sk, mean, sd, weights


# ---------------------------------------------------------------------------


def test_criterion_01_inequality_suite():
    t0 = time.perf_counter()
    dom = DomainConfig(L=1.0, n_modes=32, n_quad=128)
    rows = inequality_suite(dom, 1000, [1e-3, 1e-2, 1e-1, 1.0], [0.5, 0.9, 0.99], seed=0)
    elapsed = time.perf_counter() - t0
    worst = min(r.min_rel_gap for r in rows)
    kinds = sorted({r.inequality for r in rows})
    verdict(1, worst >= -1e-8 and len(kinds) == 4,
            f"min relative gap {worst:.3g} over {len(rows)} cells of {len(kinds)} inequalities", elapsed, 60)


def test_criterion_02_gronwall_dominates_extremal_odes():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)

    def coef():
        a0, a1, w = rng.uniform(0, 1.5), rng.uniform(0, 1), rng.uniform(0.5, 6)
        return lambda s: a0 + a1 * (1 + math.sin(w * s))

    slack = []
    for _ in range(50):
        a, b = coef(), coef()
        alpha, c, T = rng.uniform(0, 0.95), rng.uniform(0.1, 3), rng.uniform(0.2, 2)
        sol = solve_ivp(lambda t, y: [a(t) * y[0] + b(t) * y[0] ** alpha], (0, T), [c], rtol=1e-11, atol=1e-12)
        bound = gronwall_bound_61(c, alpha, a, b, 0.0, T)
        slack.append((bound - sol.y[0, -1]) / bound)
    for _ in range(50):
        c1, c2 = coef(), coef()
        M, T = rng.uniform(1.1, 5), rng.uniform(0.2, 1.5)
        sol = solve_ivp(lambda t, y: [c1(t) * y[0] + c2(t) * y[0] * math.log(y[0])], (0, T), [M],
                        rtol=1e-11, atol=1e-12)
        bound = gronwall_bound_62(lambda t: M, c1, c2, T)
        slack.append((bound - sol.y[0, -1]) / bound)
    elapsed = time.perf_counter() - t0
    verdict(2, min(slack) >= -1e-6, f"min relative slack {min(slack):.3g} over {len(slack)} draws", elapsed, 10)


def test_criterion_03_solver_oracles():
    t0 = time.perf_counter()
    lin = builtin_sigma("linear")
    rng = np.random.default_rng(3)
    dom = DomainConfig(L=1.0, n_modes=16)
    u0 = SpectralField(rng.standard_normal(16), dom)
    heat_err = 0.0
    for dt in (1e-4, 1e-3, 1e-2, 0.1):
        cfg = SkeletonConfig(dom, lin, dt=dt, T=1.0, oracle_mode="heat_only")
        tr = solve_skeleton(u0, None, cfg)
        exact = u0.coeffs * np.exp(-np.outer(tr.times, dom.eigenvalues))
        heat_err = max(heat_err, float(np.max(np.abs(tr.coeffs - exact))))

    coll = DomainConfig(L=1.0, n_modes=8, n_quad=8, dealias=False)
    y0 = np.array([2.0, 1.5, 0.5, -1.2, 1.0, 0.3, -2.0, 2.2])
    cfg = SkeletonConfig(coll, lin, dt=1e-5, T=1.0, oracle_mode="reaction_only")
    end = to_physical(solve_skeleton(from_physical(y0, coll), None, cfg, record_every=cfg.n_steps).terminal)
    react_err = float(np.max(np.abs(end - np.sign(y0) * np.exp(math.e * np.log(np.abs(y0))))))

    u1 = 3 * SpectralField(np.eye(16)[0], dom)
    ends = []
    for dt in (1e-3, 5e-4, 2.5e-4, 1.25e-4):
        c = SkeletonConfig(dom, lin, dt=dt, T=0.5)
        ends.append(solve_skeleton(u1, Control.constant(0.5, 10, 0.5), c, record_every=c.n_steps).coeffs[-1])
    errs = [np.linalg.norm(ends[i] - ends[i + 1]) for i in range(3)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    elapsed = time.perf_counter() - t0
    ok = heat_err < 1e-12 and react_err < 1e-6 and all(0.8 <= o <= 1.2 for o in orders)
    verdict(3, ok, f"heat_only max err {heat_err:.2g}, reaction_only max err {react_err:.2g}, "
                   f"orders {orders[0]:.3f} {orders[1]:.3f}", elapsed, 60)


def test_criterion_04_adjoint_vs_finite_differences():
    t0 = time.perf_counter()
    dom = DomainConfig(L=math.pi, n_modes=16)
    cfg = SkeletonConfig(dom, builtin_sigma("linear"), dt=0.5 / 320, T=0.5)
    rng = np.random.default_rng(4)
    K = 32
    base = np.cbrt(np.finfo(float).eps)
    worst = 0.0
    for _ in range(20):
        u0 = SpectralField(rng.standard_normal(16) * np.r_[1.5, 1.0, np.full(14, 0.5)], dom)
        h = Control(rng.standard_normal(K), cfg.T)
        cost = quadratic_cost(rng.standard_normal(16))
        _, grad, _ = objective_and_gradient(u0, h, cfg, cost)
        fd = np.empty(K)
        for k in range(K):
            step = base * max(1.0, abs(h.values[k]))
            e = np.zeros(K)
            e[k] = step
            jp = objective_and_gradient(u0, Control(h.values + e, cfg.T), cfg, cost)[0]
            jm = objective_and_gradient(u0, Control(h.values - e, cfg.T), cfg, cost)[0]
            fd[k] = (jp - jm) / (2 * step)
        worst = max(worst, float(np.linalg.norm(grad - fd) / np.linalg.norm(fd)))
    elapsed = time.perf_counter() - t0
    verdict(4, worst < 1e-5, f"max relative gradient error {worst:.2g} over 20 instances", elapsed, 120)


def test_criterion_05_lq_rate_function():
    t0 = time.perf_counter()
    cfg = load("rate_function.json")
    sk, mean, sd, w = ou_reference(cfg)
    opt = C.build_optimizer(cfg, cfg["seed"])
    K = opt.K
    A = w.reshape(K, -1).sum(axis=1)
    u0 = C.build_u0(cfg, sk.dom)
    g = np.zeros(sk.dom.n_modes)
    g[0] = 1.0
    costs, rel = {}, []
    for f in (0.3, 0.6, 1.2):
        d = f * sd
        res = rate_function(u0, TargetSet.halfspace(g, mean + d), sk, opt)
        closed = 0.5 * (sk.T / K) * d * d / float(A @ A)
        costs[f] = res.cost
        rel.append(abs(res.cost / closed - 1) if res.feasible else math.inf)
    scale = [costs[0.6] / costs[0.3] / 4 - 1, costs[1.2] / costs[0.6] / 4 - 1]
    elapsed = time.perf_counter() - t0
    ok = max(rel) < 0.01 and max(abs(s) for s in scale) < 0.02
    verdict(5, ok, f"max rel err vs closed form {max(rel):.2g}, quadratic scaling dev "
                   f"{max(abs(s) for s in scale):.2g}", elapsed, 60)


def test_criterion_06_condition_a():
    t0 = time.perf_counter()
    cfg = load("condition_a.json")
    sk = C.build_skeleton(cfg)
    assert sk.dom.n_modes == 16 and sk.T == 0.5 and cfg["ensemble"]["n_paths"] == 64
    eps = [0.4, 0.2, 0.1, 0.05]
    res = condition_a_experiment(C.build_u0(cfg, sk.dom), C.build_control(cfg, sk), eps, 64, sk,
                                 seed=cfg["seed"], threads=8)
    elapsed = time.perf_counter() - t0
    med = [r.median_rho for r in res.rows]
    dec = all(b < a for a, b in zip(med, med[1:]))
    ratio = med[-1] / med[0]
    p_last = res.rows[-1].p_exceed_delta
    verdict(6, dec and ratio < 0.15 and p_last == 0.0,
            f"medians {' '.join(f'{m:.4g}' for m in med)}, final/initial {ratio:.3f}, "
            f"P(rho > {res.delta:.3g}) at eps=0.05 is {p_last:g}", elapsed, 300)


def duhamel_rho(dom, T, eps, A, n_t=40001):
    lam = dom.eigenvalues
    p = dom.analysis @ np.ones(dom.n_quad)
    w = 1.0 / eps
    t = np.linspace(0.0, T, n_t)[:, None]
    delta = p * A * (lam * np.sin(w * t) - w * np.cos(w * t) + w * np.exp(-lam * t)) / (lam**2 + w**2)
    return math.sqrt(float(np.max(np.sum(delta**2, axis=1))) + float(np.trapezoid(delta**2 @ lam, t[:, 0])))


def test_criterion_07_condition_b():
    t0 = time.perf_counter()
    cfg = load("condition_b.json")
    sk = C.build_skeleton(cfg)
    u0, h = C.build_u0(cfg, sk.dom), C.build_control(cfg, sk)
    eps = [0.2, 0.1, 0.05, 0.025]
    A = cfg["condition_b"]["amplitude"]
    rho = [r.rho for r in condition_b_experiment(u0, h, eps, sk, amplitude=A)]
    dec = all(b < a for a, b in zip(rho, rho[1:]))
    ratio = rho[-1] / rho[0]
    linear = sk.with_(coeffs=builtin_sigma("constant", 1.0), oracle_mode="heat_only")
    lin_rows = condition_b_experiment(u0, h, eps, linear, amplitude=A)
    dev = max(abs(r.rho / duhamel_rho(sk.dom, sk.T, r.eps, A) - 1) for r in lin_rows)
    elapsed = time.perf_counter() - t0
    verdict(7, dec and ratio < 0.2 and dev < 0.2,
            f"rho {' '.join(f'{r:.4g}' for r in rho)}, final/initial {ratio:.3f}, "
            f"linear case max dev from Duhamel {dev:.2g}", elapsed, 60)


def test_criterion_08_ldp_consistency():
    t0 = time.perf_counter()
    cfg = load("mc_estimate.json")
    sk, mean, sd, _ = ou_reference(cfg)
    u0, target = C.build_u0(cfg, sk.dom), C.build_target(cfg, sk.dom)
    d = cfg["target"]["c"] - mean
    res = rate_function(u0, target, sk, C.build_optimizer(cfg, cfg["seed"]))
    m = cfg["mc"]
    assert m["n_paths"] == 100_000 and m["eps"] == [0.4, 0.3, 0.2]
    rows = mc_rare_event(u0, target, m["eps"], m["n_paths"], sk, seed=cfg["seed"], threads=8,
                         chunk_size=m["chunk_size"], rate_cost=res.cost)
    elapsed = time.perf_counter() - t0
    diag = [r.ldp_diag for r in rows]
    dist = [abs(x - res.cost) for x in diag]
    toward = all(b < a for a, b in zip(dist, dist[1:]))
    eps = rows[-1].eps
    gauss = -eps * eps * norm.logsf(d / (eps * sd))
    rel = abs(diag[-1] / gauss - 1)
    verdict(8, res.feasible and toward and rel < 0.25,
            f"-eps^2 log p {' '.join(f'{x:.4g}' for x in diag)} toward cost {res.cost:.4g}, "
            f"eps={eps:g} vs Gaussian tail {gauss:.4g} (rel {rel:.2g})", elapsed, 300)


PHI_PATHS = 1000


def test_criterion_09_phi_moments_no_trend():
    t0 = time.perf_counter()
    cfg = load("simulate.json")
    sk = C.build_skeleton(cfg)
    u0, h = C.build_u0(cfg, sk.dom), C.build_control(cfg, sk)
    eps = [0.05, 0.1, 0.2]
    reps = [phi_moment_report(simulate_ensemble(u0, EnsembleConfig(PHI_PATHS, e, sk, h, cfg["seed"]), threads=8))
            for e in eps]
    elapsed = time.perf_counter() - t0
    ok, parts = True, []
    for which in ("sup", "int"):
        cis = [r.ci95(which) for r in reps]
        # an increase is significant when a larger-eps interval lies wholly above a smaller-eps one
        rising = [(eps[i], eps[j]) for i in range(3) for j in range(i + 1, 3) if cis[j][0] > cis[i][1]]
        ok &= not rising
        means = [0.5 * (lo + hi) for lo, hi in cis]
        parts.append(f"{which} means {' '.join(f'{x:.5g}' for x in means)}"
                     + (f" significant rise {rising}" if rising else ""))
    verdict(9, ok, "; ".join(parts) + f" ({PHI_PATHS} paths)", elapsed, 180)


def test_criterion_10_threads_byte_identical(tmp_path):
    t0 = time.perf_counter()
    mismatched, n_csv = [], 0
    for path in sorted(CONFIGS.glob("*.json")):
        experiment = json.loads(path.read_text())["experiment"]
        outs = []
        for threads in (1, 8):
            out = tmp_path / f"{path.stem}-{threads}"
            code = cli.main([experiment, "--config", str(path), "--threads", str(threads), "--output", str(out)])
            assert code == 0, f"{experiment} exited {code}"
            outs.append(out)
        for csv in sorted(outs[0].rglob("*.csv")):
            n_csv += 1
            other = outs[1] / csv.relative_to(outs[0])
            if not other.exists() or other.read_bytes() != csv.read_bytes():
                mismatched.append(f"{path.stem}/{csv.name}")
    elapsed = time.perf_counter() - t0
    verdict(10, not mismatched and n_csv > 0,
            f"{n_csv} CSVs from {len(list(CONFIGS.glob('*.json')))} experiments compared"
            + (f", mismatched {mismatched}" if mismatched else ", all byte-identical"), elapsed)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
