"""Brute-force reference computations used for validation.

Nothing here is on a performance path. The particle filter, the exact
linear-Gaussian change-point recursion, the textbook Kalman filter, the RK4
integrator and the Hamiltonian-eigenvector Riccati solver are written
independently of the production modules so they can serve as oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .dynamics import ChangePrior, DualModeModel, discretize
from .sensing import ObservationModel

LOG_2PI = np.log(2.0 * np.pi)


class OracleError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# particle filter


@dataclass
class ParticleEnsemble:
    particles: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.log_weights = np.asarray(self.log_weights, dtype=float).reshape(self.particles.shape[0])

    @classmethod
    def from_gaussian(cls, mean, cov, n_particles: int, rng: np.random.Generator) -> "ParticleEnsemble":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        pts = rng.multivariate_normal(mean, cov, size=n_particles, method="eigh")
        return cls(pts, np.full(n_particles, -np.log(n_particles)))

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    def normalized_log_weights(self) -> np.ndarray:
        return self.log_weights - logsumexp(self.log_weights)

    @property
    def ess(self) -> float:
        lw = self.normalized_log_weights()
        return float(np.exp(-logsumexp(2.0 * lw)))

    def mean(self) -> np.ndarray:
        return np.exp(self.normalized_log_weights()) @ self.particles


def _systematic_resample(log_w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    w = np.exp(log_w - logsumexp(log_w))
    N = w.size
    u = (rng.random() + np.arange(N)) / N
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, u, side="left")


def marginal_measurement_loglik(y, hx, obs: ObservationModel) -> np.ndarray:
    """``log sum_I rho(I) h(y | x, I)`` per particle; sensors are independent."""
    R = obs.noise_var
    theta = obs.outlier_free_prob
    vs = obs.indicator_value
    r2 = (np.asarray(y, dtype=float) - hx) ** 2
    with np.errstate(divide="ignore", over="ignore"):
        nominal = np.log(theta) - 0.5 * (LOG_2PI + np.log(R) + r2 / R)
        outlier = np.log1p(-theta) - 0.5 * (LOG_2PI + np.log(R / vs) + r2 * vs / R)
    return np.logaddexp(nominal, outlier).sum(axis=-1)


def pf_step(ensemble: ParticleEnsemble, mode: str, y, model: DualModeModel, obs: ObservationModel,
            rng, q_jitter: float = 0.0):
    """One bootstrap step; returns ``(ensemble', log p(y | past))``.

    Resamples systematically when the effective sample size drops below half
    the ensemble.
    """
    if ensemble.size < 100:
        raise ValueError("particle filter needs at least 100 particles")
    rng = np.random.default_rng(rng)
    step = discretize(model, mode)
    n = model.dim_state
    Q = step.process_cov + q_jitter * np.eye(n)
    x = step(ensemble.particles)
    if np.any(Q):
        x = x + rng.multivariate_normal(np.zeros(n), Q, size=ensemble.size, method="eigh")
    g = marginal_measurement_loglik(y, obs.h(x), obs)
    prior_lw = ensemble.normalized_log_weights()
    lw = prior_lw + g
    if not np.any(np.isfinite(lw)) or np.isnan(lw).any():
        raise OracleError("particle degeneracy")
    log_pred = float(logsumexp(lw))
    out = ParticleEnsemble(x, lw - log_pred)
    if out.ess < 0.5 * out.size:
        idx = _systematic_resample(out.log_weights, rng)
        out = ParticleEnsemble(x[idx], np.full(out.size, -np.log(out.size)))
    return out, log_pred


def particle_filter_loglik(observations, model: DualModeModel, obs: ObservationModel, modes: Sequence[str],
                           initial_state, initial_cov, n_particles: int = 100_000, seed=None,
                           q_jitter: float = 0.0) -> np.ndarray:
    """Per-step predictive log-likelihoods of ``Y_1..Y_N`` under a known mode sequence."""
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    if len(modes) != Y.shape[0]:
        raise ValueError("need one mode per observation")
    rng = np.random.default_rng(seed)
    ens = ParticleEnsemble.from_gaussian(initial_state, initial_cov, n_particles, rng)
    out = np.empty(Y.shape[0])
    for i, (mode, y) in enumerate(zip(modes, Y)):
        ens, out[i] = pf_step(ens, mode, y, model, obs, rng, q_jitter)
    return out


# --------------------------------------------------------------------------
# linear-Gaussian references


def affine_drift(model: DualModeModel, mode: str, probes: int = 8, rtol: float = 1e-9):
    """Recover ``(A, b)`` with ``F(x) = A x + b``; raise if the drift is not affine."""
    f = model.drift(mode)
    n = model.dim_state
    b = np.asarray(f(np.zeros(n)), dtype=float)
    A = np.column_stack([np.asarray(f(e), dtype=float) - b for e in np.eye(n)])
    rng = np.random.default_rng(12345)
    for _ in range(probes):
        x = rng.normal(scale=3.0, size=n)
        got = np.asarray(f(x), dtype=float)
        want = A @ x + b
        if not np.allclose(got, want, rtol=rtol, atol=rtol * (1.0 + np.abs(want).max())):
            raise ValueError(f"drift of mode {mode} is not affine")
    return A, b


def kalman_filter(observations, F, c, Q, H, R, m0, P0):
    """Textbook Kalman filter for ``X' = F X + c + w``, ``Y = H X + v``.

    Returns filtered means, covariances and innovation log-likelihoods.
    """
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    F, Q, H = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (F, Q, H))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape[0] != R.shape[1] or R.shape[0] != H.shape[0]:
        R = np.diag(np.ravel(R))
    c = np.zeros(F.shape[0]) if c is None else np.asarray(c, dtype=float)
    m = np.asarray(m0, dtype=float).copy()
    P = np.asarray(P0, dtype=float).copy()
    N, n = Y.shape[0], m.size
    means, covs, ll = np.empty((N, n)), np.empty((N, n, n)), np.empty(N)
    I = np.eye(n)
    for i in range(N):
        m = F @ m + c
        P = F @ P @ F.T + Q
        S = H @ P @ H.T + R
        r = Y[i] - H @ m
        K = P @ H.T @ np.linalg.inv(S)
        m = m + K @ r
        P = (I - K @ H) @ P
        P = 0.5 * (P + P.T)
        _, logdet = np.linalg.slogdet(S)
        ll[i] = -0.5 * (r.size * LOG_2PI + logdet + r @ np.linalg.solve(S, r))
        means[i], covs[i] = m, P
    return means, covs, ll


def _linear_pieces(model: DualModeModel, obs: ObservationModel, q_jitter: float):
    if not obs.is_linear:
        raise ValueError("exact recursion needs a linear observation channel")
    if np.any(obs.outlier_free_prob != 1.0):
        raise ValueError("exact recursion needs theta = 1 (no outliers)")
    n = model.dim_state
    out = {}
    for mode in ("alpha", "beta"):
        A, b = affine_drift(model, mode)
        Bm = model.diffusion(mode)
        Q = model.epsilon**2 * model.dt * Bm @ Bm.T + q_jitter * np.eye(n)
        out[mode] = (np.eye(n) + model.dt * A, model.dt * b, Q)
    return out


def exact_linear_change_posterior(observations, model: DualModeModel, obs: ObservationModel,
                                  prior: ChangePrior, initial_state, initial_cov,
                                  q_jitter: float = 0.0):
    """Exact ``(log L_n, p_n)`` for affine dynamics, linear sensing and no outliers.

    One independent Kalman filter per candidate ``k`` (mode alpha before ``k``,
    beta from ``k`` on) plus the no-change filter; no window, no cubature.
    """
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    N = Y.shape[0]
    pieces = _linear_pieces(model, obs, q_jitter)
    H, R = obs.matrix, np.diag(obs.noise_var)
    m0 = np.asarray(initial_state, dtype=float)
    P0 = np.asarray(initial_cov, dtype=float)

    Fa, ca, Qa = pieces["alpha"]
    Fb, cb, Qb = pieces["beta"]
    ma, Pa, ll_inf = kalman_filter(Y, Fa, ca, Qa, H, R, m0, P0)

    # cum[k-1, n-1] = sum_{i=k}^{n} log Lambda_i^(k)
    cum = np.full((N, N), -np.inf)
    for k in range(1, N + 1):
        start_m = m0 if k == 1 else ma[k - 2]
        start_P = P0 if k == 1 else Pa[k - 2]
        _, _, ll_k = kalman_filter(Y[k - 1:], Fb, cb, Qb, H, R, start_m, start_P)
        cum[k - 1, k - 1:] = np.cumsum(ll_k - ll_inf[k - 1:])

    ks = np.arange(1, N + 1)
    log_pi = prior.log_pmf(ks)
    log_L = np.empty(N)
    for n in range(1, N + 1):
        log_L[n - 1] = logsumexp(log_pi[:n] + cum[:n, n - 1]) - prior.log_survival(n)
    p = 1.0 / (1.0 + np.exp(-log_L))
    return log_L, p


# --------------------------------------------------------------------------
# integration and Riccati references


def rk4_step(f, x, dt: float):
    x = np.asarray(x, dtype=float)
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(f, x0, t_end: float, n_steps: int):
    """RK4 solution at ``t_end`` using ``n_steps`` equal steps."""
    x = np.asarray(x0, dtype=float)
    h = t_end / n_steps
    for _ in range(n_steps):
        x = rk4_step(f, x, h)
    return x


def care_eigenvector(A, B, Q, R):
    """Continuous-time ARE solution from the stable invariant subspace of the Hamiltonian."""
    A, B, Q, R = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A, B, Q, R))
    n = A.shape[0]
    G = B @ np.linalg.solve(R, B.T)
    Ham = np.block([[A, -G], [-Q, -A.T]])
    w, V = np.linalg.eig(Ham)
    stable = V[:, w.real < 0]
    if stable.shape[1] != n:
        raise OracleError("Hamiltonian has eigenvalues on the imaginary axis")
    X = np.real(stable[n:] @ np.linalg.inv(stable[:n]))
    return 0.5 * (X + X.T)

