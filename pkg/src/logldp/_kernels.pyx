# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twin of ``_pykernels``: same scheme, explicit loops, GIL released."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, fabs, isfinite, NAN
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef enum:
    SIG_CONST = 0
    SIG_LINEAR = 1
    SIG_SQRTLOG = 2
    SIG_TABLE = 3

cdef double Z_FLOOR = 1e-300


cdef inline double xlogabs(double z) noexcept nogil:
    if z == 0.0:
        return 0.0
    return z * log(fabs(z))


cdef inline double bprime(double z) noexcept nogil:
    cdef double a = fabs(z)
    if a < Z_FLOOR:
        a = Z_FLOOR
    return log(a) + 1.0


cdef inline Py_ssize_t _seg(const double[::1] xs, double z) noexcept nogil:
    # index j with xs[j] <= z < xs[j+1], clipped to [0, len-2]
    cdef Py_ssize_t lo = 0, hi = xs.shape[0] - 1, mid
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= z:
            lo = mid
        else:
            hi = mid
    return lo


cdef inline double sigma(int code, double c, double k, const double[::1] xs,
                         const double[::1] ys, double z) noexcept nogil:
    cdef Py_ssize_t j
    cdef double a, t
    if code == SIG_CONST:
        return c
    elif code == SIG_LINEAR:
        return k * z
    elif code == SIG_SQRTLOG:
        a = fabs(z)
        if a <= 1.0:
            return 0.0
        return z * sqrt(log(a))
    else:
        if z <= xs[0]:
            return ys[0]
        if z >= xs[xs.shape[0] - 1]:
            return ys[ys.shape[0] - 1]
        j = _seg(xs, z)
        t = (z - xs[j]) / (xs[j + 1] - xs[j])
        return ys[j] + t * (ys[j + 1] - ys[j])


cdef inline double sigma_prime(int code, double c, double k, const double[::1] xs,
                               const double[::1] ys, double z) noexcept nogil:
    cdef Py_ssize_t j
    cdef double a, l
    if code == SIG_CONST:
        return 0.0
    elif code == SIG_LINEAR:
        return k
    elif code == SIG_SQRTLOG:
        a = fabs(z)
        if a <= 1.0:
            return 0.0
        l = log(a)
        if l < Z_FLOOR:
            l = Z_FLOOR
        return sqrt(l) + 0.5 / sqrt(l)
    else:
        if z < xs[0] or z > xs[xs.shape[0] - 1]:
            return 0.0
        j = _seg(xs, z)
        return (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j])


cdef inline void synth(const double[:, ::1] S, const double[::1] c, double[::1] u) noexcept nogil:
    cdef Py_ssize_t m, i
    cdef double acc
    for m in range(S.shape[0]):
        acc = 0.0
        for i in range(S.shape[1]):
            acc += S[m, i] * c[i]
        u[m] = acc


cdef inline void analyse(const double[:, ::1] P, const double[::1] g, double[::1] out) noexcept nogil:
    cdef Py_ssize_t m, i
    cdef double acc
    for i in range(P.shape[0]):
        acc = 0.0
        for m in range(P.shape[1]):
            acc += P[i, m] * g[m]
        out[i] = acc


cdef inline void synth_T(const double[:, ::1] S, const double[::1] g, double[::1] out) noexcept nogil:
    # out = S^T g
    cdef Py_ssize_t m, i
    for i in range(S.shape[1]):
        out[i] = 0.0
    for m in range(S.shape[0]):
        for i in range(S.shape[1]):
            out[i] += S[m, i] * g[m]


cdef inline void analyse_T(const double[:, ::1] P, const double[::1] v, double[::1] out) noexcept nogil:
    # out = P^T v
    cdef Py_ssize_t m, i
    for m in range(P.shape[1]):
        out[m] = 0.0
    for i in range(P.shape[0]):
        for m in range(P.shape[1]):
            out[m] += P[i, m] * v[i]


cdef inline void gemm_rows(const double[:, ::1] A, const double[:, ::1] X, double[:, ::1] out) noexcept nogil:
    # out = X @ A.T for row-major X (B x k), A (r x k), out (B x r)
    cdef char ta = b'T', tb = b'N'
    cdef int m = <int>A.shape[0], nn = <int>X.shape[0], kk = <int>A.shape[1]
    cdef int lda = kk, ldb = kk, ldc = m
    cdef double one = 1.0, zero = 0.0
    dgemm(&ta, &tb, &m, &nn, &kk, &one, <double*>&A[0, 0], &lda, <double*>&X[0, 0], &ldb,
          &zero, &out[0, 0], &ldc)


def forward(C0, S, P, decay, double dt, hsteps, bint drift_on, bint sigma_on,
            int code, double c, double k, xs, ys, dW, double eps, double guard,
            Py_ssize_t record_every, bint store_predictor=False):
    cdef const double[:, ::1] C0v = np.ascontiguousarray(C0, dtype=np.float64)
    cdef const double[:, ::1] Sv = np.ascontiguousarray(S, dtype=np.float64)
    cdef const double[:, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[::1] dec = np.ascontiguousarray(decay, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(hsteps, dtype=np.float64)
    cdef const double[::1] xsv = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const double[::1] ysv = np.ascontiguousarray(ys, dtype=np.float64)
    cdef Py_ssize_t B = C0v.shape[0], n = C0v.shape[1], M = Sv.shape[0]
    cdef Py_ssize_t N = hv.shape[0]
    cdef Py_ssize_t R = N // record_every + 1
    cdef bint noisy = (dW is not None) and eps != 0.0 and sigma_on
    cdef const double[:, ::1] dWv
    if noisy:
        dWv = np.ascontiguousarray(dW, dtype=np.float64)
    else:
        dWv = np.zeros((1, 1))

    out_arr = np.empty((B, R, n))
    status_arr = np.zeros(B, dtype=np.int64)
    if store_predictor:
        pred_arr = np.empty((B, N, n))
    else:
        pred_arr = np.empty((1, 1, n))
    cdef double[:, :, ::1] out = out_arr
    cdef long long[::1] status = status_arr
    cdef double[:, :, ::1] pred = pred_arr

    cdef double[:, ::1] C = np.array(C0v, dtype=np.float64), Y = np.empty((B, n))
    cdef double[:, ::1] Fc = np.empty((B, n)), Fy = np.empty((B, n)), G = np.empty((B, n))
    cdef double[:, ::1] U = np.empty((B, M)), phys = np.empty((B, M)), sig = np.empty((B, M))

    cdef Py_ssize_t b, kk, i, m, r
    cdef double h, nrm, w, v
    cdef bint use_h, need_sig

    with nogil:
        for b in range(B):
            for i in range(n):
                out[b, 0, i] = C[b, i]
        for kk in range(N):
            h = hv[kk]
            use_h = sigma_on and h != 0.0
            need_sig = use_h or noisy
            gemm_rows(Sv, C, U)
            for b in range(B):
                for m in range(M):
                    v = U[b, m]
                    if need_sig:
                        sig[b, m] = sigma(code, c, k, xsv, ysv, v)
                    phys[b, m] = xlogabs(v) if drift_on else 0.0
                    if use_h:
                        phys[b, m] = phys[b, m] + h * sig[b, m]
            gemm_rows(Pv, phys, Fc)
            if noisy:
                gemm_rows(Pv, sig, G)
            for b in range(B):
                w = eps * dWv[b, kk] if noisy else 0.0
                for i in range(n):
                    if noisy:
                        G[b, i] = w * G[b, i]
                    Y[b, i] = C[b, i] + dt * Fc[b, i]
                    if noisy:
                        Y[b, i] = Y[b, i] + G[b, i]
                    if store_predictor:
                        pred[b, kk, i] = Y[b, i] if status[b] == 0 else NAN
            gemm_rows(Sv, Y, U)
            for b in range(B):
                for m in range(M):
                    v = U[b, m]
                    phys[b, m] = xlogabs(v) if drift_on else 0.0
                    if use_h:
                        phys[b, m] = phys[b, m] + h * sigma(code, c, k, xsv, ysv, v)
            gemm_rows(Pv, phys, Fy)
            for b in range(B):
                if status[b] != 0:
                    continue
                nrm = 0.0
                for i in range(n):
                    v = C[b, i] + (0.5 * dt) * (Fc[b, i] + Fy[b, i])
                    if noisy:
                        v = v + G[b, i]
                    v = dec[i] * v
                    C[b, i] = v
                    nrm += v * v
                nrm = sqrt(nrm)
                if not (nrm <= guard):
                    status[b] = 1
                    for r in range((kk + 1) // record_every, R):
                        if r * record_every >= kk + 1:
                            for i in range(n):
                                out[b, r, i] = NAN
                    # keep dead rows finite and cheap; their outputs are already NaN
                    for i in range(n):
                        C[b, i] = 0.0
                    continue
                if (kk + 1) % record_every == 0:
                    r = (kk + 1) // record_every
                    for i in range(n):
                        out[b, r, i] = C[b, i]
    if store_predictor:
        return out_arr, status_arr, pred_arr
    return out_arr, status_arr


def adjoint(Cs, Ys, pT, S, P, decay, double dt, hsteps, bint drift_on, bint sigma_on,
            int code, double c, double k, xs, ys):
    cdef const double[:, ::1] Cv = np.ascontiguousarray(Cs, dtype=np.float64)
    cdef const double[:, ::1] Yv = np.ascontiguousarray(Ys, dtype=np.float64)
    cdef const double[:, ::1] Sv = np.ascontiguousarray(S, dtype=np.float64)
    cdef const double[:, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[::1] dec = np.ascontiguousarray(decay, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(hsteps, dtype=np.float64)
    cdef const double[::1] xsv = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const double[::1] ysv = np.ascontiguousarray(ys, dtype=np.float64)
    cdef Py_ssize_t N = Yv.shape[0], n = Yv.shape[1], M = Sv.shape[0]

    grad_arr = np.zeros(N)
    p_arr = np.array(pT, dtype=np.float64)
    cdef double[::1] grad = grad_arr
    cdef double[::1] p = p_arr
    cdef double[::1] q = np.empty(n), rr = np.empty(n), wv = np.empty(n)
    cdef double[::1] tmp_n = np.empty(n), half_q = np.empty(n)
    cdef double[::1] Uc = np.empty(M), Uy = np.empty(M), dc = np.empty(M), dy = np.empty(M)
    cdef double[::1] g = np.empty(M), sc = np.empty(M), sy = np.empty(M)
    cdef double[::1] psc = np.empty(n), psy = np.empty(n)
    cdef Py_ssize_t kk, i, m
    cdef double h, acc

    with nogil:
        for kk in range(N - 1, -1, -1):
            h = hv[kk]
            for i in range(n):
                q[i] = dec[i] * p[i]
            synth(Sv, Cv[kk], Uc)
            synth(Sv, Yv[kk], Uy)
            for m in range(M):
                dy[m] = 0.0
                dc[m] = 0.0
                if drift_on:
                    dy[m] = dy[m] + bprime(Uy[m])
                    dc[m] = dc[m] + bprime(Uc[m])
                if sigma_on:
                    sy[m] = sigma(code, c, k, xsv, ysv, Uy[m])
                    sc[m] = sigma(code, c, k, xsv, ysv, Uc[m])
                    if h != 0.0:
                        dy[m] = dy[m] + h * sigma_prime(code, c, k, xsv, ysv, Uy[m])
                        dc[m] = dc[m] + h * sigma_prime(code, c, k, xsv, ysv, Uc[m])
            analyse_T(Pv, q, g)
            for m in range(M):
                g[m] = dy[m] * g[m]
            synth_T(Sv, g, rr)
            for i in range(n):
                rr[i] = (0.5 * dt) * rr[i]
                wv[i] = 0.5 * dt * q[i] + dt * rr[i]
            analyse_T(Pv, wv, g)
            for m in range(M):
                g[m] = dc[m] * g[m]
            synth_T(Sv, g, tmp_n)
            for i in range(n):
                p[i] = q[i] + rr[i] + tmp_n[i]
            if sigma_on:
                analyse(Pv, sc, psc)
                analyse(Pv, sy, psy)
                acc = 0.0
                for i in range(n):
                    acc += psc[i] * wv[i] + psy[i] * (0.5 * dt * q[i])
                grad[kk] = acc
    return grad_arr, p_arr
