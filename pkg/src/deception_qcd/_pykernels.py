"""Pure-numpy batch kernels.

Reference counterpart of the compiled ``_ckernels`` module. Used when the
extension is not built, or when ``DECEPTION_QCD_BACKEND=python`` is set.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import expit, logsumexp

FLAG_CONVERGED = 1
FLAG_FAILED = 2

JITTER = (0.0, 1e-12, 1e-9, 1e-6)
LOG_2PI = np.log(2.0 * np.pi)


def _sym(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def chol_ladder(covs):
    """Batched lower Cholesky with an additive jitter ladder.

    Returns ``(L, ok)``; rows that fail every rung come back as zeros with
    ``ok`` False.
    """
    covs = _sym(np.asarray(covs, dtype=float))
    n = covs.shape[-1]
    L = np.zeros_like(covs)
    ok = np.zeros(covs.shape[0], dtype=bool)
    todo = np.arange(covs.shape[0])
    eye = np.eye(n)
    for jitter in JITTER:
        if todo.size == 0:
            break
        A = covs[todo] + jitter * eye
        try:
            L[todo] = np.linalg.cholesky(A)
            ok[todo] = True
            todo = todo[:0]
        except np.linalg.LinAlgError:
            # fall back to one-by-one for the failing subset
            still = []
            for idx, a in zip(todo, A):
                try:
                    L[idx] = np.linalg.cholesky(a)
                    ok[idx] = True
                except np.linalg.LinAlgError:
                    still.append(idx)
            todo = np.asarray(still, dtype=int)
    return L, ok


def cubature_points(means, covs):
    means = np.ascontiguousarray(means, dtype=float)
    n = means.shape[1]
    L, ok = chol_ladder(covs)
    cols = np.sqrt(n) * np.swapaxes(L, 1, 2)  # (B, n, n): row j is column j of L
    pts = np.concatenate([means[:, None, :] + cols, means[:, None, :] - cols], axis=1)
    pts[~ok] = means[~ok, None, :]
    return pts, ok.astype(np.uint8)


def vb_loop(m_pred, P_pred, mu, U, C, y, R, theta, varsigma, tol, max_iters, second_moment):
    """Coordinate ascent between the Gaussian state factor and the indicators.

    ``second_moment(m_new, P_new)`` must return ``E[(y_l - H_l(X))^2]`` under
    the updated belief, shape ``(B, m)``.
    """
    m_pred = np.asarray(m_pred, dtype=float)
    P = _sym(np.asarray(P_pred, dtype=float))
    y = np.asarray(y, dtype=float)
    R = np.asarray(R, dtype=float)
    theta = np.asarray(theta, dtype=float)
    B, n = m_pred.shape
    m = R.size

    with np.errstate(divide="ignore"):
        logprior = 0.5 * np.log(varsigma) + np.log(1.0 / theta - 1.0)

    E = np.broadcast_to(theta + varsigma * (1.0 - theta), (B, m)).copy()
    eye = np.eye(m)

    m_out = m_pred.copy()
    P_out = P.copy()
    phi = np.broadcast_to(theta, (B, m)).copy()
    iters = np.zeros(B, dtype=np.int64)
    flags = np.zeros(B, dtype=np.int64)
    m_prev = np.zeros((B, n))
    active = np.ones(B, dtype=bool)

    for it in range(1, max_iters + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        iters[idx] = it
        Vinv = E[idx] / R  # diagonal of V^-1
        Ui = U[idx]
        # K = C (V^-1 - V^-1 (I + U V^-1)^-1 U V^-1)
        try:
            inner = np.linalg.solve(eye + Ui * Vinv[:, None, :], Ui)
        except np.linalg.LinAlgError:
            inner = np.full_like(Ui, np.nan)
        bad = ~np.all(np.isfinite(inner), axis=(1, 2))
        if bad.any():
            flags[idx[bad]] = FLAG_FAILED
            active[idx[bad]] = False
            idx, Vinv, inner = idx[~bad], Vinv[~bad], inner[~bad]
            if idx.size == 0:
                break
        G = Vinv[:, :, None] * eye - Vinv[:, :, None] * inner * Vinv[:, None, :]
        K = C[idx] @ G
        m_new = m_pred[idx] + np.einsum("bij,bj->bi", K, y - mu[idx])
        P_new = _sym(P[idx] - K @ np.swapaxes(C[idx], 1, 2))

        W = second_moment(m_new, P_new)
        z = logprior + W * (1.0 - varsigma) / (2.0 * R)
        phi_i = expit(-z)

        m_out[idx] = m_new
        P_out[idx] = P_new
        phi[idx] = phi_i
        if it > 1:
            done = np.max(np.abs(m_new - m_prev[idx]), axis=1) < tol
            flags[idx[done]] = FLAG_CONVERGED
            active[idx[done]] = False
        m_prev[idx] = m_new
        E[idx] = varsigma * (1.0 - phi_i) + phi_i

    failed = flags == FLAG_FAILED
    m_out[failed] = m_pred[failed]
    P_out[failed] = P[failed]
    phi[failed] = theta
    return m_out, P_out, phi, iters, flags


def vb_update_linear(m_pred, P_pred, H, y, R, theta, varsigma, tol, max_iters):
    m_pred = np.asarray(m_pred, dtype=float)
    P = _sym(np.asarray(P_pred, dtype=float))
    H = np.asarray(H, dtype=float)
    y = np.asarray(y, dtype=float)
    mu = m_pred @ H.T
    C = P @ H.T  # (B, n, m)
    U = H @ C  # (B, m, m)

    def second_moment(m_new, P_new):
        resid = y - m_new @ H.T
        return resid**2 + np.einsum("li,bij,lj->bl", H, P_new, H)

    return vb_loop(m_pred, P, mu, U, C, y, R, theta, varsigma, tol, max_iters, second_moment)


def _configurations(m):
    # bit l of the config index set <=> sensor l nominal (indicator 1)
    return np.array(list(itertools.product((0, 1), repeat=m)), dtype=bool)[:, ::-1]


def predictive_loglik(mu, U, y, R, theta, varsigma):
    mu = np.asarray(mu, dtype=float)
    U = np.asarray(U, dtype=float)
    y = np.asarray(y, dtype=float)
    R = np.asarray(R, dtype=float)
    theta = np.asarray(theta, dtype=float)
    B, m = mu.shape
    with np.errstate(divide="ignore"):
        lt = np.log(theta)
        lf = np.log1p(-theta)
    r = y - mu
    if m > 10:
        v1 = np.einsum("bll->bl", U) + R
        v2 = np.einsum("bll->bl", U) + R / varsigma
        a1 = lt - 0.5 * (LOG_2PI + np.log(v1) + r**2 / v1)
        a2 = lf - 0.5 * (LOG_2PI + np.log(v2) + r**2 / v2)
        return np.logaddexp(a1, a2).sum(axis=1)

    cfg = _configurations(m)
    logw = np.where(cfg, lt, lf).sum(axis=1)
    keep = np.isfinite(logw)
    cfg, logw = cfg[keep], logw[keep]
    var = np.where(cfg, R, R / varsigma)  # (c, m)
    S = U[:, None, :, :] + var[None, :, :, None] * np.eye(m)
    L, ok = chol_ladder(S.reshape(-1, m, m))
    L[~ok] = np.eye(m)
    bad = ~ok.reshape(B, -1).all(axis=1)
    L = L.reshape(B, -1, m, m)
    diag = np.einsum("bcii->bci", L)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.linalg.solve(L, np.broadcast_to(r[:, None, :, None], L.shape[:-1] + (1,)))[..., 0]
        logdet = 2.0 * np.log(diag).sum(axis=-1)
    quad = (z**2).sum(axis=-1)
    ll = logw - 0.5 * (m * LOG_2PI + logdet + quad)
    out = logsumexp(ll, axis=1)
    out[bad] = -np.inf
    return out
