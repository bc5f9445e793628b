import math

import numpy as np
import pytest
from scipy.stats import norm

from logldp.coefficients import builtin_sigma
from logldp.errors import ConfigError
from logldp.ldp import (
    OptimizerParams, TargetSet, condition_b_experiment, mc_rare_event, oscillatory_control,
    rate_function, weak_energy_check,
)
from logldp.skeleton import Control, SkeletonConfig
from logldp.spectral import DomainConfig, SpectralField

ONE = builtin_sigma("constant", 1.0)


def _u0(dom, c=(1.0, 0.5)):
    v = np.zeros(dom.n_modes)
    v[: len(c)] = c
    return SpectralField(v, dom)


class OU:
    """First mode of the heat-only chain driven by a constant noise coefficient."""

    def __init__(self, n_modes=8, dt=0.01, T=0.5):
        self.dom = DomainConfig(L=1.0, n_modes=n_modes)
        self.cfg = SkeletonConfig(self.dom, ONE, dt=dt, T=T, oracle_mode="heat_only")
        self.u0 = _u0(self.dom)
        self.p1 = float((self.dom.analysis @ np.ones(self.dom.n_quad))[0])
        self.E = math.exp(-self.dom.eigenvalues[0] * dt)
        N = self.cfg.n_steps
        self.mean = self.u0.coeffs[0] * self.E**N
        self.sd1 = abs(self.p1) * math.sqrt(dt * sum(self.E ** (2 * j) for j in range(1, N + 1)))

    def target(self, d):
        g = np.zeros(self.dom.n_modes)
        g[0] = math.copysign(1.0, self.p1)
        return TargetSet.halfspace(g, g[0] * self.mean + d)

    def lq_cost(self, d, K):
        N = self.cfg.n_steps
        w = self.p1 * self.cfg.dt * self.E ** (N - np.arange(N))
        A = w.reshape(K, N // K).sum(axis=1)
        return 0.5 * (self.cfg.T / K) * d * d / float(A @ A)


def test_target_sets():
    t = TargetSet.norm_above(2.0)
    assert t.contains(np.array([3.0, 0.0])) and not t.contains(np.array([1.0, 1.0]))
    assert t.gap(np.array([1.0, 0.0])) == pytest.approx(1.0)
    h = TargetSet.halfspace([0.0, 2.0], 1.0)
    assert h.gap(np.array([0.0, 0.0])) == pytest.approx(0.5)
    b = TargetSet.ball([1.0, 1.0], 0.5)
    assert b.contains(np.array([1.2, 1.0])) and b.gap(np.array([1.0, 2.0])) == pytest.approx(0.5)
    assert np.array_equal(t.signed_excess(np.zeros((3, 2))), [2.0, 2.0, 2.0])
    with pytest.raises(ConfigError):
        TargetSet("terminal_box")
    with pytest.raises(ConfigError):
        TargetSet.halfspace([0.0, 0.0], 1.0)
    with pytest.raises(ConfigError):
        TargetSet.ball([0.0], -1.0)


@pytest.mark.parametrize("target", [TargetSet.norm_above(2.0), TargetSet.halfspace([1.0, -1.0, 0.5], 0.7),
                                    TargetSet.ball([1.0, 2.0, 0.0], 0.3)], ids=["norm", "half", "ball"])
def test_penalty_gradient(target):
    rng = np.random.default_rng(0)
    for _ in range(5):
        c = rng.standard_normal(3)
        val, g = target.penalty(c)
        if val == 0:
            continue
        assert val == pytest.approx(target.gap(c) ** 2)
        for i in range(3):
            e = np.eye(3)[i] * 1e-6
            fd = (target.penalty(c + e)[0] - target.penalty(c - e)[0]) / 2e-6
            assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_rate_function_trivial_and_infeasible():
    dom = DomainConfig(n_modes=6)
    cfg = SkeletonConfig(dom, builtin_sigma("linear"), dt=1e-3, T=0.1)
    res = rate_function(_u0(dom), TargetSet.norm_above(0.0), cfg, OptimizerParams(K=10))
    assert res.feasible and res.cost == 0.0 and not np.any(res.h_star.values)
    off = SkeletonConfig(dom, builtin_sigma("constant", 0.0), dt=1e-3, T=0.1)
    res = rate_function(_u0(dom), TargetSet.norm_above(100.0), off, OptimizerParams(K=10))
    assert not res.feasible and res.feasibility_gap > 90


def test_rate_function_lq_closed_form():
    ou = OU()
    d = 0.6 * ou.sd1
    opt = OptimizerParams(K=10, n_starts=3, check_gradients=True)
    res = rate_function(ou.u0, ou.target(d), ou.cfg, opt)
    assert res.feasible
    assert res.cost == pytest.approx(ou.lq_cost(d, 10), rel=1e-2)
    assert all(c["rel_err"] < 1e-5 for c in res.gradient_checks)
    assert res.to_dict()["feasible"] is True


def test_rate_function_quadratic_scaling():
    ou = OU()
    opt = OptimizerParams(K=10, n_starts=2)
    c1 = rate_function(ou.u0, ou.target(0.3), ou.cfg, opt).cost
    c2 = rate_function(ou.u0, ou.target(0.6), ou.cfg, opt).cost
    assert c2 / c1 == pytest.approx(4.0, rel=0.02)


def test_rate_function_penalty_stages_tighten():
    ou = OU()
    res = rate_function(ou.u0, ou.target(0.5), ou.cfg,
                        OptimizerParams(K=10, n_starts=2, feas_tol=1e-6, penalty_max=1e8))
    for start in (0, 1):
        gaps = [e["gap"] for e in res.optimizer_trace if e.get("start") == start and "gap" in e]
        assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    assert res.feasible and res.feasibility_gap <= 1e-6
    # the penalty gap shrinks like 1/weight, so a capped weight reports the closest point instead
    capped = rate_function(ou.u0, ou.target(0.5), ou.cfg,
                           OptimizerParams(K=10, n_starts=1, feas_tol=1e-6, penalty_max=1e3))
    assert not capped.feasible and capped.feasibility_gap > 1e-6


def test_mc_whole_space_and_empty():
    ou = OU()
    rows = mc_rare_event(ou.u0, TargetSet.norm_above(0.0), [0.3], 500, ou.cfg, seed=1, threads=2)
    assert rows[0].p_hat == 1.0 and rows[0].hits == 500
    rows = mc_rare_event(ou.u0, TargetSet.norm_above(1e6), [0.3], 500, ou.cfg, seed=1, threads=2)
    assert rows[0].hits == 0 and rows[0].censored and math.isinf(rows[0].ldp_diag)
    assert 0 < rows[0].ci_high < 0.01
    with pytest.raises(ConfigError):
        mc_rare_event(ou.u0, TargetSet.norm_above(0.0), [0.0], 10, ou.cfg)


def test_mc_gaussian_tail():
    ou = OU()
    d = 0.6 * ou.sd1
    eps, n = 0.3, 20000
    rows = mc_rare_event(ou.u0, ou.target(d), [eps], n, ou.cfg, seed=2, threads=4)
    p = norm.sf(d / (eps * ou.sd1))
    assert abs(rows[0].p_hat - p) < 3 * math.sqrt(p * (1 - p) / n)
    assert rows[0].ci_low < p < rows[0].ci_high


def test_mc_thread_invariance():
    ou = OU()
    kw = dict(seed=4, chunk_size=128)
    a = mc_rare_event(ou.u0, ou.target(0.2), [0.4, 0.2], 700, ou.cfg, threads=1, **kw)
    b = mc_rare_event(ou.u0, ou.target(0.2), [0.4, 0.2], 700, ou.cfg, threads=8, **kw)
    assert a == b


def test_oscillatory_control():
    h = Control.constant(0.5, 4, 1.0)
    he = oscillatory_control(h, 0.1, 2.0, 100)
    assert he.K == 100
    mid = (np.arange(100) + 0.5) / 100
    assert np.allclose(he.values, 0.5 + 2 * np.sin(mid / 0.1))
    assert np.array_equal(oscillatory_control(h, 0.1, 0.0, 100).values, np.full(100, 0.5))


def test_condition_b_zero_amplitude():
    dom = DomainConfig(n_modes=8)
    cfg = SkeletonConfig(dom, builtin_sigma("linear"), dt=1e-3, T=0.2)
    rows = condition_b_experiment(_u0(dom), Control.constant(0.5, 4, 0.2), [0.1, 0.05], cfg, amplitude=0.0)
    assert all(r.rho == 0 for r in rows)
    with pytest.raises(ConfigError):
        condition_b_experiment(_u0(dom), Control.constant(0.5, 4, 0.2), [0.01], cfg, amplitude=10.0, N=1.0)


def duhamel_rho(dom, T, eps, A, n_t=20001):
    """rho between the linear skeletons driven by h + A sin(t/eps) and h."""
    lam = dom.eigenvalues
    p = dom.analysis @ np.ones(dom.n_quad)
    w = 1.0 / eps
    t = np.linspace(0.0, T, n_t)[:, None]
    delta = p * A * (lam * np.sin(w * t) - w * np.cos(w * t) + w * np.exp(-lam * t)) / (lam**2 + w**2)
    sup_h = float(np.max(np.sum(delta**2, axis=1)))
    int_v = float(np.trapezoid(delta**2 @ lam, t[:, 0]))
    return math.sqrt(sup_h + int_v)


def test_condition_b_duhamel_linear():
    dom = DomainConfig(L=1.0, n_modes=8)
    T = 0.5
    cfg = SkeletonConfig(dom, ONE, dt=1e-4, T=T, oracle_mode="heat_only")
    eps_list = [0.1, 0.05, 0.025]
    rows = condition_b_experiment(_u0(dom), Control.constant(0.3, 5, T), eps_list, cfg, amplitude=1.0)
    for r in rows:
        assert r.rho == pytest.approx(duhamel_rho(dom, T, r.eps, 1.0), rel=0.02)
    assert rows[0].rho > rows[1].rho > rows[2].rho


def test_weak_energy_check():
    h = Control.constant(0.5, 200, 1.0)
    same = weak_energy_check(h, h, N=1.0)
    assert same["max_gap"] == 0 and same["within_N"]
    gaps = [weak_energy_check(oscillatory_control(h, e, 1.0, 200), h)["max_gap"] for e in (0.1, 0.03, 0.01)]
    assert gaps[0] > gaps[1] > gaps[2]
    # int_0^1 sin(t/eps) dt = eps (1 - cos(1/eps)), the poly0 entry
    out = weak_energy_check(oscillatory_control(h, 0.1, 1.0, 200), h)
    assert out["gaps"]["poly0"] == pytest.approx(0.1 * (1 - math.cos(10.0)), rel=1e-3)
    with pytest.raises(ValueError):
        weak_energy_check(Control.zeros(3, 1.0), h)
