"""Pure-numpy time-stepping kernels (reference and fallback backend).

One step of the scheme, for coefficients ``c`` and control value ``h``::

    F(c)  = P[b(S c)] + h P[sigma(S c)]          (drift, projected)
    G(c)  = P[sigma(S c)]                        (noise direction)
    y     = c + dt F(c) + eps dW G(c)            (predictor)
    c'    = decay * (c + dt/2 (F(c) + F(y)) + eps dW G(c))

``decay`` is ``exp(-lambda dt)`` (exponential Euler) or ``1/(1 + lambda dt)``
(IMEX), or ones when the Laplacian is switched off.
"""

from __future__ import annotations

import numpy as np

from .spectral import xlogabs
from .coefficients import b_prime

SIG_CONST, SIG_LINEAR, SIG_SQRTLOG, SIG_TABLE, SIG_USER = range(5)

OK, OVERFLOW = 0, 1


def eval_sigma(spec, U):
    code = spec.code
    if code == SIG_CONST:
        return np.full_like(U, spec.c)
    if code == SIG_LINEAR:
        return spec.k * U
    if code == SIG_SQRTLOG:
        return U * np.sqrt(np.log(np.maximum(np.abs(U), 1.0)))
    if code == SIG_TABLE:
        return np.interp(U, spec.xs, spec.ys)
    return np.asarray(spec.func(U), dtype=float)


def eval_sigma_prime(spec, U):
    return np.asarray(spec.dfunc(U), dtype=float)


def forward(C0, S, P, decay, dt, hsteps, drift_on, sigma_on, spec, dW, eps,
            guard, record_every, store_predictor=False):
    """March a batch of states; returns ``(states, status[, predictors])``.

    ``C0`` is (B, n); ``dW`` is (B, N) or None; ``hsteps`` is (N,).
    ``states`` has shape (B, N // record_every + 1, n).  Paths that leave the
    overflow guard (H-norm) or go non-finite are frozen as NaN with status 1.
    """
    C = np.array(C0, dtype=float, copy=True)
    B, n = C.shape
    N = hsteps.shape[0]
    R = N // record_every + 1
    out = np.empty((B, R, n))
    out[:, 0] = C
    preds = np.empty((B, N, n)) if store_predictor else None
    status = np.zeros(B, dtype=np.int64)
    alive = np.ones(B, dtype=bool)
    ST, PT = S.T, P.T
    noisy = dW is not None and eps != 0.0 and sigma_on
    for k in range(N):
        h = float(hsteps[k])
        use_h = sigma_on and h != 0.0
        U = C @ ST
        sig = eval_sigma(spec, U) if (use_h or noisy) else None
        phys = xlogabs(U) if drift_on else np.zeros_like(U)
        if use_h:
            phys = phys + h * sig
        Fc = phys @ PT
        Y = C + dt * Fc
        if noisy:
            Gc = (eps * dW[:, k])[:, None] * (sig @ PT)
            Y = Y + Gc
        if store_predictor:
            preds[:, k] = Y
        U2 = Y @ ST
        phys2 = xlogabs(U2) if drift_on else np.zeros_like(U2)
        if use_h:
            phys2 = phys2 + h * eval_sigma(spec, U2)
        Fy = phys2 @ PT
        Cn = C + (0.5 * dt) * (Fc + Fy)
        if noisy:
            Cn = Cn + Gc
        Cn = decay * Cn
        nrm = np.sqrt(np.sum(Cn * Cn, axis=1))
        bad = alive & ~(nrm <= guard)
        if np.any(bad):
            status[bad] = OVERFLOW
            alive &= ~bad
            Cn[bad] = np.nan
        C = Cn
        if (k + 1) % record_every == 0:
            out[:, (k + 1) // record_every] = C
    if store_predictor:
        return out, status, preds
    return out, status


def adjoint(Cs, Ys, pT, S, P, decay, dt, hsteps, drift_on, sigma_on, spec):
    """Reverse sweep of the deterministic scheme for one path.

    ``Cs`` (N+1, n) and ``Ys`` (N, n) are the stored states and predictors,
    ``pT`` the terminal-cost gradient.  Returns ``(dJ/dh_k for each step,
    dJ/dc_0)``.
    """
    N, n = Ys.shape
    grad_h = np.zeros(N)
    p = np.array(pT, dtype=float)
    ST, PT = S.T, P.T
    for k in range(N - 1, -1, -1):
        h = float(hsteps[k])
        q = decay * p
        Uc = S @ Cs[k]
        Uy = S @ Ys[k]
        dy = np.zeros_like(Uy)
        dc = np.zeros_like(Uc)
        if drift_on:
            dy += b_prime(Uy)
            dc += b_prime(Uc)
        if sigma_on:
            sy = eval_sigma(spec, Uy)
            sc = eval_sigma(spec, Uc)
            if h != 0.0:
                dy += h * eval_sigma_prime(spec, Uy)
                dc += h * eval_sigma_prime(spec, Uc)
        # r = dJ/dy = dt/2 J_F(y)^T q
        r = (0.5 * dt) * (ST @ (dy * (PT @ q)))
        w = 0.5 * dt * q + dt * r
        p = q + r + ST @ (dc * (PT @ w))
        if sigma_on:
            grad_h[k] = np.dot(P @ sc, w) + np.dot(P @ sy, 0.5 * dt * q)
    return grad_h, p
