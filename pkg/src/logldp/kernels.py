"""Backend selection for the time-stepping kernels.

The compiled ``_kernels`` extension is used when importable; set
``LOGLDP_BACKEND=python`` to force the numpy implementation.  User-supplied
sigma callables always run on the numpy backend.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _pykernels
from ._pykernels import SIG_CONST, SIG_LINEAR, SIG_SQRTLOG, SIG_TABLE, SIG_USER

try:
    from . import _kernels as _ckernels
except ImportError:  # pragma: no cover - depends on build
    _ckernels = None

HAVE_COMPILED = _ckernels is not None


def default_backend() -> str:
    want = os.environ.get("LOGLDP_BACKEND", "").strip().lower()
    if want == "python" or not HAVE_COMPILED:
        return "python"
    return "cython"


BACKEND = default_backend()

_EMPTY = np.zeros(2)


@dataclass(frozen=True)
class SigmaSpec:
    code: int
    c: float = 0.0
    k: float = 0.0
    xs: np.ndarray = _EMPTY
    ys: np.ndarray = _EMPTY
    func: Callable | None = None
    dfunc: Callable | None = None


def sigma_spec(coeffs) -> SigmaSpec:
    kind = coeffs.sigma_kind
    common = dict(func=coeffs.sigma, dfunc=coeffs.sigma_prime)
    if kind == "constant":
        return SigmaSpec(SIG_CONST, c=coeffs.params["c"], **common)
    if kind == "linear":
        return SigmaSpec(SIG_LINEAR, k=coeffs.params["k"], **common)
    if kind == "sqrt_log":
        return SigmaSpec(SIG_SQRTLOG, **common)
    if kind == "table":
        return SigmaSpec(SIG_TABLE, xs=coeffs.params["xs"], ys=coeffs.params["ys"], **common)
    return SigmaSpec(SIG_USER, **common)


def _pick(backend, spec):
    backend = backend or BACKEND
    if backend == "cython" and (not HAVE_COMPILED or spec.code == SIG_USER):
        backend = "python"
    if backend not in ("python", "cython"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend


def forward(C0, S, P, decay, dt, hsteps, drift_on, sigma_on, spec, dW=None, eps=0.0,
            guard=1e12, record_every=1, store_predictor=False, backend=None):
    """Batch time-march; see :mod:`logldp._pykernels` for the scheme."""
    C0 = np.atleast_2d(np.asarray(C0, dtype=float))
    hsteps = np.asarray(hsteps, dtype=float)
    if hsteps.shape[0] % record_every:
        raise ValueError("record_every must divide the number of steps")
    if dW is not None:
        dW = np.asarray(dW, dtype=float)
        if dW.shape != (C0.shape[0], hsteps.shape[0]):
            raise ValueError(f"noise shape {dW.shape} does not match batch/steps")
    if _pick(backend, spec) == "cython":
        return _ckernels.forward(
            C0, S, P, decay, float(dt), hsteps, bool(drift_on), bool(sigma_on),
            spec.code, float(spec.c), float(spec.k), spec.xs, spec.ys,
            dW, float(eps), float(guard), int(record_every), bool(store_predictor),
        )
    return _pykernels.forward(
        C0, np.asarray(S), np.asarray(P), np.asarray(decay), float(dt), hsteps,
        bool(drift_on), bool(sigma_on), spec, dW, float(eps), float(guard),
        int(record_every), bool(store_predictor),
    )


def adjoint(Cs, Ys, pT, S, P, decay, dt, hsteps, drift_on, sigma_on, spec, backend=None):
    """Reverse sweep for a single stored path; returns ``(dJ/dh per step, dJ/dc0)``."""
    hsteps = np.asarray(hsteps, dtype=float)
    if _pick(backend, spec) == "cython":
        return _ckernels.adjoint(
            Cs, Ys, pT, S, P, decay, float(dt), hsteps, bool(drift_on), bool(sigma_on),
            spec.code, float(spec.c), float(spec.k), spec.xs, spec.ys,
        )
    return _pykernels.adjoint(
        np.asarray(Cs), np.asarray(Ys), pT, np.asarray(S), np.asarray(P), np.asarray(decay),
        float(dt), hsteps, bool(drift_on), bool(sigma_on), spec,
    )
