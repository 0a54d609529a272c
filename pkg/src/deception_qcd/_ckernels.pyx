# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batch kernels for the filter bank.

Every function here has a line-for-line counterpart in ``_pykernels`` and the
two are cross-checked by the test suite. Arrays are float64, C-contiguous,
with the chain index as the leading axis.
"""

from libc.math cimport sqrt, log, exp, fabs, INFINITY
from libc.stdlib cimport malloc, free

import numpy as np

cdef double LOG_2PI = 1.8378770664093453
cdef int N_JITTER = 4
cdef double JITTER[4]
JITTER[:] = [0.0, 1e-12, 1e-9, 1e-6]

FLAG_CONVERGED = 1
FLAG_FAILED = 2


cdef int _chol(const double* A, double* L, int n, double jitter) noexcept nogil:
    """Lower Cholesky factor of the symmetric part of A plus jitter*I."""
    cdef int i, j, k
    cdef double s
    for i in range(n):
        for j in range(i + 1):
            s = 0.5 * (A[i * n + j] + A[j * n + i])
            if i == j:
                s += jitter
            for k in range(j):
                s -= L[i * n + k] * L[j * n + k]
            if i == j:
                if not (s > 0.0):
                    return -1
                L[i * n + i] = sqrt(s)
            else:
                L[i * n + j] = s / L[j * n + j]
        for j in range(i + 1, n):
            L[i * n + j] = 0.0
    return 0


cdef int _chol_ladder(const double* A, double* L, int n) noexcept nogil:
    cdef int t
    for t in range(N_JITTER):
        if _chol(A, L, n, JITTER[t]) == 0:
            return 0
    return -1


cdef void _chol_solve(const double* L, double* x, int n) noexcept nogil:
    """In-place solve (L L^T) x = b."""
    cdef int i, k
    cdef double s
    for i in range(n):
        s = x[i]
        for k in range(i):
            s -= L[i * n + k] * x[k]
        x[i] = s / L[i * n + i]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, n):
            s -= L[k * n + i] * x[k]
        x[i] = s / L[i * n + i]


def cubature_points(double[:, ::1] means, double[:, :, ::1] covs):
    """Spherical-cubature points, shape (B, 2n, n), and a per-chain ok mask."""
    cdef Py_ssize_t B = means.shape[0]
    cdef int n = <int>means.shape[1]
    out = np.empty((B, 2 * n, n))
    ok = np.ones(B, dtype=np.uint8)
    cdef double[:, :, ::1] pts = out
    cdef unsigned char[::1] okv = ok
    cdef double* L = <double*>malloc(n * n * sizeof(double))
    cdef double scale = sqrt(<double>n)
    cdef Py_ssize_t b
    cdef int i, j
    try:
        with nogil:
            for b in range(B):
                if _chol_ladder(&covs[b, 0, 0], L, n) != 0:
                    okv[b] = 0
                    for j in range(2 * n):
                        for i in range(n):
                            pts[b, j, i] = means[b, i]
                    continue
                for j in range(n):
                    for i in range(n):
                        pts[b, j, i] = means[b, i] + scale * L[i * n + j]
                        pts[b, n + j, i] = means[b, i] - scale * L[i * n + j]
    finally:
        free(L)
    return out, ok


def vb_update_linear(double[:, ::1] m_pred, double[:, :, ::1] P_pred,
                     double[:, ::1] H, double[::1] y, double[::1] R,
                     double[::1] theta, double varsigma, double tol, int max_iters):
    """Variational-Bayes measurement update for a linear channel.

    Returns ``(m_post, P_post, phi, iters, flags)``; bit 1 of ``flags`` marks
    convergence and bit 2 a factorization failure.
    """
    cdef Py_ssize_t B = m_pred.shape[0]
    cdef int n = <int>m_pred.shape[1]
    cdef int m = <int>H.shape[0]
    m_out = np.empty((B, n))
    P_out = np.empty((B, n, n))
    phi_out = np.empty((B, m))
    iters_out = np.zeros(B, dtype=np.int64)
    flags_out = np.zeros(B, dtype=np.int64)
    cdef double[:, ::1] mo = m_out
    cdef double[:, :, ::1] Po = P_out
    cdef double[:, ::1] po = phi_out
    cdef long long[::1] io = iters_out
    cdef long long[::1] fo = flags_out

    cdef double* P = <double*>malloc(n * n * sizeof(double))
    cdef double* HP = <double*>malloc(m * n * sizeof(double))
    cdef double* U = <double*>malloc(m * m * sizeof(double))
    cdef double* mu = <double*>malloc(m * sizeof(double))
    cdef double* E = <double*>malloc(m * sizeof(double))
    cdef double* S = <double*>malloc(m * m * sizeof(double))
    cdef double* LS = <double*>malloc(m * m * sizeof(double))
    cdef double* K = <double*>malloc(n * m * sizeof(double))
    cdef double* row = <double*>malloc(m * sizeof(double))
    cdef double* mnew = <double*>malloc(n * sizeof(double))
    cdef double* mprev = <double*>malloc(n * sizeof(double))
    cdef double* Pnew = <double*>malloc(n * n * sizeof(double))
    cdef double* logprior = <double*>malloc(m * sizeof(double))

    cdef Py_ssize_t b
    cdef int i, j, l, k, it, failed, converged
    cdef double s, w, z, delta, hm, hph
    cdef double half_log_vs = 0.5 * log(varsigma)
    try:
        with nogil:
            # log(sqrt(varsigma) * (1/theta - 1)); +/-inf at the endpoints
            for l in range(m):
                if theta[l] >= 1.0:
                    logprior[l] = -INFINITY
                elif theta[l] <= 0.0:
                    logprior[l] = INFINITY
                else:
                    logprior[l] = half_log_vs + log(1.0 / theta[l] - 1.0)
            for b in range(B):
                for i in range(n):
                    for j in range(n):
                        P[i * n + j] = 0.5 * (P_pred[b, i, j] + P_pred[b, j, i])
                # predicted observation moments (exact for a linear channel)
                for l in range(m):
                    s = 0.0
                    for i in range(n):
                        s += H[l, i] * m_pred[b, i]
                    mu[l] = s
                    for j in range(n):
                        s = 0.0
                        for i in range(n):
                            s += H[l, i] * P[i * n + j]
                        HP[l * n + j] = s
                for l in range(m):
                    for k in range(m):
                        s = 0.0
                        for j in range(n):
                            s += HP[l * n + j] * H[k, j]
                        U[l * m + k] = s
                    E[l] = theta[l] + varsigma * (1.0 - theta[l])
                failed = 0
                converged = 0
                it = 0
                while it < max_iters:
                    it += 1
                    for l in range(m):
                        for k in range(m):
                            S[l * m + k] = U[l * m + k]
                        S[l * m + l] += R[l] / E[l]
                    if _chol_ladder(S, LS, m) != 0:
                        failed = 1
                        break
                    # K = C S^-1 with C = (HP)^T
                    for i in range(n):
                        for l in range(m):
                            row[l] = HP[l * n + i]
                        _chol_solve(LS, row, m)
                        for l in range(m):
                            K[i * m + l] = row[l]
                    for i in range(n):
                        s = m_pred[b, i]
                        for l in range(m):
                            s += K[i * m + l] * (y[l] - mu[l])
                        mnew[i] = s
                    # P+ = P- - K C^T, symmetrized
                    for i in range(n):
                        for j in range(n):
                            s = P[i * n + j]
                            for l in range(m):
                                s -= K[i * m + l] * HP[l * n + j]
                            Pnew[i * n + j] = s
                    for i in range(n):
                        for j in range(i + 1, n):
                            s = 0.5 * (Pnew[i * n + j] + Pnew[j * n + i])
                            Pnew[i * n + j] = s
                            Pnew[j * n + i] = s
                    # indicator posterior from the updated belief
                    for l in range(m):
                        hm = 0.0
                        for i in range(n):
                            hm += H[l, i] * mnew[i]
                        hph = 0.0
                        for i in range(n):
                            s = 0.0
                            for j in range(n):
                                s += Pnew[i * n + j] * H[l, j]
                            hph += H[l, i] * s
                        w = (y[l] - hm) * (y[l] - hm) + hph
                        z = logprior[l] + w * (1.0 - varsigma) / (2.0 * R[l])
                        if z > 0.0:
                            po[b, l] = exp(-z) / (1.0 + exp(-z))
                        else:
                            po[b, l] = 1.0 / (1.0 + exp(z))
                    if it > 1:
                        delta = 0.0
                        for i in range(n):
                            if fabs(mnew[i] - mprev[i]) > delta:
                                delta = fabs(mnew[i] - mprev[i])
                        if delta < tol:
                            converged = 1
                            break
                    for i in range(n):
                        mprev[i] = mnew[i]
                    for l in range(m):
                        E[l] = varsigma * (1.0 - po[b, l]) + po[b, l]
                if failed:
                    for i in range(n):
                        mo[b, i] = m_pred[b, i]
                        for j in range(n):
                            Po[b, i, j] = P[i * n + j]
                    for l in range(m):
                        po[b, l] = theta[l]
                    fo[b] = 2
                else:
                    for i in range(n):
                        mo[b, i] = mnew[i]
                        for j in range(n):
                            Po[b, i, j] = Pnew[i * n + j]
                    fo[b] = converged
                io[b] = it
    finally:
        free(P); free(HP); free(U); free(mu); free(E); free(S); free(LS)
        free(K); free(row); free(mnew); free(mprev); free(Pnew); free(logprior)
    return m_out, P_out, phi_out, iters_out, flags_out


def predictive_loglik(double[:, ::1] mu, double[:, :, ::1] U, double[::1] y,
                      double[::1] R, double[::1] theta, double varsigma):
    """log sum_I rho(I) N(y; mu, U + R diag(1/I)) per chain.

    Exact enumeration over the 2^m indicator configurations for m <= 10,
    per-sensor marginal product beyond that.
    """
    cdef Py_ssize_t B = mu.shape[0]
    cdef int m = <int>mu.shape[1]
    out = np.empty(B)
    cdef double[::1] ov = out
    cdef double* S = <double*>malloc(m * m * sizeof(double))
    cdef double* LS = <double*>malloc(m * m * sizeof(double))
    cdef double* r = <double*>malloc(m * sizeof(double))
    cdef double* lt = <double*>malloc(m * sizeof(double))
    cdef double* lf = <double*>malloc(m * sizeof(double))
    cdef Py_ssize_t b
    cdef long c, ncfg
    cdef int l, k, bad
    cdef double logw, logdet, quad, ll, best, acc, s, v, a1, a2
    try:
        with nogil:
            for l in range(m):
                lt[l] = log(theta[l]) if theta[l] > 0.0 else -INFINITY
                lf[l] = log(1.0 - theta[l]) if theta[l] < 1.0 else -INFINITY
            if m <= 10:
                ncfg = 1 << m
                for b in range(B):
                    best = -INFINITY
                    acc = 0.0
                    bad = 0
                    for c in range(ncfg):
                        logw = 0.0
                        for l in range(m):
                            logw += lt[l] if (c >> l) & 1 else lf[l]
                        if logw == -INFINITY:
                            continue
                        for l in range(m):
                            for k in range(m):
                                S[l * m + k] = U[b, l, k]
                            S[l * m + l] += R[l] if (c >> l) & 1 else R[l] / varsigma
                        if _chol_ladder(S, LS, m) != 0:
                            bad = 1
                            break
                        logdet = 0.0
                        for l in range(m):
                            logdet += 2.0 * log(LS[l * m + l])
                        quad = 0.0
                        for l in range(m):
                            s = y[l] - mu[b, l]
                            for k in range(l):
                                s -= LS[l * m + k] * r[k]
                            r[l] = s / LS[l * m + l]
                            quad += r[l] * r[l]
                        ll = logw - 0.5 * (m * LOG_2PI + logdet + quad)
                        # streaming log-sum-exp
                        if ll > best:
                            acc = acc * exp(best - ll) + 1.0
                            best = ll
                        else:
                            acc += exp(ll - best)
                    if bad:
                        ov[b] = -INFINITY
                    else:
                        ov[b] = best + log(acc)
            else:
                for b in range(B):
                    ll = 0.0
                    for l in range(m):
                        s = y[l] - mu[b, l]
                        v = U[b, l, l] + R[l]
                        a1 = lt[l] - 0.5 * (LOG_2PI + log(v) + s * s / v)
                        v = U[b, l, l] + R[l] / varsigma
                        a2 = lf[l] - 0.5 * (LOG_2PI + log(v) + s * s / v)
                        if a1 > a2:
                            ll += a1 + log(1.0 + exp(a2 - a1))
                        elif a2 > -INFINITY:
                            ll += a2 + log(1.0 + exp(a1 - a2))
                        else:
                            ll += -INFINITY
                    ov[b] = ll
    finally:
        free(S); free(LS); free(r); free(lt); free(lf)
    return out
