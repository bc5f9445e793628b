"""Compare the compiled and numpy time-stepping kernels.

    python3 benchmarks/bench_kernels.py [--paths 256] [--modes 16] [--steps 500] [--repeat 3]

Reports best-of-N wall time for a batched stochastic forward sweep and for a
single-path forward + adjoint, plus the max difference between backends.
"""

import argparse
import time

import numpy as np

from logldp import kernels
from logldp.coefficients import builtin_sigma
from logldp.skeleton import Control, SkeletonConfig, march, objective_and_gradient, quadratic_cost
from logldp.spde import noise_increments
from logldp.spectral import DomainConfig, SpectralField


def best_of(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=256)
    ap.add_argument("--modes", type=int, default=16)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    dom = DomainConfig(L=np.pi, n_modes=args.modes)
    T = 0.5
    cfg = SkeletonConfig(dom, builtin_sigma("linear", 1.0), dt=T / args.steps, T=T)
    u0 = SpectralField(np.r_[1.0, 0.5, np.zeros(args.modes - 2)], dom)
    h = Control.constant(0.5, 10 if args.steps % 10 == 0 else 1, T)
    hsteps = h.per_step(cfg.n_steps)
    C0 = np.repeat(u0.coeffs[None, :], args.paths, axis=0)
    dW = noise_increments(0, cfg.n_steps, cfg.dt, 0, args.paths)
    cost = quadratic_cost(np.zeros(args.modes))

    backends = ["python"] + (["cython"] if kernels.HAVE_COMPILED else [])
    fwd, adj = {}, {}
    print(f"modes={args.modes} n_quad={dom.n_quad} steps={cfg.n_steps} paths={args.paths}")
    for be in backends:
        t_f, (states, _) = best_of(
            lambda: march(C0, hsteps, cfg, dW=dW, eps=0.2, record_every=cfg.n_steps, backend=be), args.repeat)
        t_a, (_, g, _) = best_of(lambda: objective_and_gradient(u0, h, cfg, cost, backend=be), args.repeat)
        fwd[be], adj[be] = (t_f, states), (t_a, g)
        print(f"{be:>7}: ensemble forward {t_f * 1e3:9.2f} ms   forward+adjoint {t_a * 1e3:8.2f} ms")
    if len(backends) == 2:
        dstate = np.max(np.abs(fwd["python"][1] - fwd["cython"][1]))
        dgrad = np.max(np.abs(adj["python"][1] - adj["cython"][1]))
        print(f"speedup: forward x{fwd['python'][0] / fwd['cython'][0]:.1f}"
              f"  adjoint x{adj['python'][0] / adj['cython'][0]:.1f}")
        print(f"max |python - cython|: states {dstate:.2e}  gradient {dgrad:.2e}")
    else:
        print("compiled backend not built; only the numpy kernel was timed")


if __name__ == "__main__":
    main()
