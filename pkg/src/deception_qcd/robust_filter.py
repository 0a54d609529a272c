"""Outlier-robust variational-Bayes Gaussian filter.

The state posterior is Gaussian, the indicator posterior is a product of
per-sensor two-point masses with no-outlier probabilities ``phi``. Gaussian
integrals use the third-degree spherical cubature rule. All batch functions
take the chain index as leading axis so the hypothesis bank can advance every
chain with one call.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from . import _pykernels
from . import kernels as _kernels
from .dynamics import DiscreteMap, DualModeModel, discretize, wrap_angle
from .sensing import ObservationModel

log = logging.getLogger(__name__)


class FilterError(RuntimeError):
    """Covariance factorization failed even after jitter."""


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        P = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if P.shape != (m.size, m.size):
            raise ValueError("covariance shape does not match mean")
        P = 0.5 * (P + P.T)
        w, V = np.linalg.eigh(P)
        if w.min() < 0:
            P = (V * np.maximum(w, 0.0)) @ V.T
            P = 0.5 * (P + P.T)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", P)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class IndicatorPosterior:
    """Posterior no-outlier probability ``phi_l`` per sensor."""

    phi: np.ndarray
    indicator_value: float

    def expected(self) -> np.ndarray:
        """``E[I_l] = varsigma (1 - phi_l) + phi_l``."""
        return self.indicator_value * (1.0 - self.phi) + self.phi


@dataclass(frozen=True)
class SphericalCubature:
    """``2n`` points ``m +/- sqrt(n) L e_j`` with equal weights ``1 / (2n)``."""

    def weights(self, n: int) -> np.ndarray:
        return np.full(2 * n, 1.0 / (2 * n))

    def points(self, means, covs, backend=None):
        k = _kernels if backend is None else backend
        means = np.ascontiguousarray(np.atleast_2d(means), dtype=float)
        covs = np.ascontiguousarray(np.reshape(covs, (means.shape[0],) + (means.shape[1],) * 2), dtype=float)
        return k.cubature_points(means, covs)


CUBATURE = SphericalCubature()


@dataclass(frozen=True)
class FilterSettings:
    """Numerical controls of the robust filter.

    ``q_jitter`` is added to the process covariance of every prediction.
    """

    q_jitter: float = 1e-6
    tol: float = 1e-6
    max_iters: int = 10
    initial_var: float = 1e-6

    def __post_init__(self):
        if self.q_jitter < 0 or self.initial_var < 0:
            raise ValueError("q_jitter and initial_var must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class VBResult:
    belief: GaussianBelief
    indicators: IndicatorPosterior
    iters: int
    converged: bool


# --------------------------------------------------------------------------
# batch primitives


def _moment_match(fx, angle_indices):
    """Mean and centered deviations of equally weighted points ``(B, S, n)``."""
    if angle_indices:
        idx = list(angle_indices)
        fx = fx.copy()
        ref = fx[:, :1, idx]
        fx[..., idx] = ref + wrap_angle(fx[..., idx] - ref)
    mean = fx.mean(axis=1)
    dev = fx - mean[:, None, :]
    if angle_indices:
        mean[:, idx] = wrap_angle(mean[:, idx])
    return mean, dev


def predict_batch(means, covs, step: DiscreteMap, q_jitter: float = 0.0, backend=None):
    """Cubature prediction of every belief through ``step``.

    Returns ``(means, covs, ok)``; ``ok`` is False where the input covariance
    could not be factorized.
    """
    pts, ok = CUBATURE.points(means, covs, backend)
    B, S, n = pts.shape
    fx = step(pts.reshape(B * S, n)).reshape(B, S, n)
    mean, dev = _moment_match(fx, step.angle_indices)
    P = np.einsum("bsi,bsj->bij", dev, dev) / S + step.process_cov
    if q_jitter:
        P = P + q_jitter * np.eye(n)
    return mean, P, ok.astype(bool)


def observation_moments(means, covs, obs: ObservationModel, backend=None):
    """Moments of ``H(X)`` under each belief: ``(mu, U, C, ok)``.

    ``C`` is the state/observation cross-covariance, shape ``(B, n, m)``.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    covs = np.asarray(covs, dtype=float).reshape(means.shape[0], means.shape[1], means.shape[1])
    if obs.is_linear:
        H = obs.matrix
        C = 0.5 * (covs + np.swapaxes(covs, 1, 2)) @ H.T
        return means @ H.T, H @ C, C, np.ones(means.shape[0], dtype=bool)
    pts, ok = CUBATURE.points(means, covs, backend)
    S = pts.shape[1]
    hx = obs.h(pts)
    mu = hx.mean(axis=1)
    dh = hx - mu[:, None, :]
    U = np.einsum("bsi,bsj->bij", dh, dh) / S
    C = np.einsum("bsi,bsj->bij", pts - means[:, None, :], dh) / S
    return mu, U, C, ok.astype(bool)


def vb_update_batch(m_pred, P_pred, y, obs: ObservationModel, tol: float = 1e-6,
                    max_iters: int = 10, backend=None):
    """VB measurement update of every predicted belief.

    Returns ``(means, covs, phi, iters, flags)`` where ``flags`` carries
    ``kernels.FLAG_CONVERGED`` / ``kernels.FLAG_FAILED`` bits.
    """
    k = _kernels if backend is None else backend
    m_pred = np.ascontiguousarray(np.atleast_2d(m_pred), dtype=float)
    P_pred = np.ascontiguousarray(P_pred, dtype=float).reshape(m_pred.shape + (m_pred.shape[1],))
    y = np.ascontiguousarray(y, dtype=float)
    if obs.is_linear:
        return k.vb_update_linear(
            m_pred, P_pred, np.ascontiguousarray(obs.matrix), y, obs.noise_var,
            obs.outlier_free_prob, obs.indicator_value, float(tol), int(max_iters),
        )
    mu, U, C, ok = observation_moments(m_pred, P_pred, obs, backend)

    def second_moment(m_new, P_new):
        pts, _ = CUBATURE.points(m_new, P_new, backend)
        return np.mean((y - obs.h(pts)) ** 2, axis=1)

    out = _pykernels.vb_loop(
        m_pred, P_pred, mu, U, C, y, obs.noise_var, obs.outlier_free_prob,
        obs.indicator_value, tol, max_iters, second_moment,
    )
    out[4][~ok] = _kernels.FLAG_FAILED
    return out


def predictive_loglik_batch(m_pred, P_pred, y, obs: ObservationModel, backend=None):
    """``log p(y | past)`` under each predicted belief, indicators marginalized."""
    k = _kernels if backend is None else backend
    mu, U, _, ok = observation_moments(m_pred, P_pred, obs, backend)
    ll = k.predictive_loglik(
        np.ascontiguousarray(mu), np.ascontiguousarray(U), np.ascontiguousarray(y, dtype=float),
        obs.noise_var, obs.outlier_free_prob, obs.indicator_value,
    )
    ll[~ok] = -np.inf
    return ll


# --------------------------------------------------------------------------
# single-belief API


def predict(belief: GaussianBelief, mode: str, model: DualModeModel, q_jitter: float = 0.0) -> GaussianBelief:
    step = discretize(model, mode)
    m, P, ok = predict_batch(belief.mean[None], belief.cov[None], step, q_jitter)
    if not ok[0]:
        raise FilterError("covariance factorization failed")
    return GaussianBelief(m[0], P[0])


def vb_update(predicted: GaussianBelief, y, obs: ObservationModel, tol: float = 1e-6,
              max_iters: int = 10) -> VBResult:
    m, P, phi, iters, flags = vb_update_batch(predicted.mean[None], predicted.cov[None], y, obs, tol, max_iters)
    if flags[0] & _kernels.FLAG_FAILED:
        raise FilterError("innovation covariance factorization failed")
    converged = bool(flags[0] & _kernels.FLAG_CONVERGED)
    if not converged:
        log.warning("VB update stopped at max_iters=%d without converging", max_iters)
    return VBResult(
        GaussianBelief(m[0], P[0]),
        IndicatorPosterior(phi[0], obs.indicator_value),
        int(iters[0]),
        converged,
    )


def predictive_log_likelihood(predicted: GaussianBelief, y, obs: ObservationModel) -> float:
    return float(predictive_loglik_batch(predicted.mean[None], predicted.cov[None], y, obs)[0])


def indicator_posterior(W, R, theta, varsigma):
    """No-outlier posterior ``phi`` from expected squared residuals ``W``.

    ``phi = 1 / (1 + sqrt(varsigma) (1/theta - 1) exp(W (1 - varsigma) / (2 R)))``,
    evaluated in the log domain.
    """
    W, R, theta = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (W, R, theta)))
    with np.errstate(divide="ignore"):
        z = 0.5 * np.log(varsigma) + np.log(1.0 / theta - 1.0) + W * (1.0 - varsigma) / (2.0 * R)
    return expit(-z)


def run_filter(observations, model: DualModeModel, obs: ObservationModel, modes: Sequence[str],
               initial_state, settings: FilterSettings = FilterSettings(),
               initial_cov: Optional[np.ndarray] = None):
    """Filter ``Y_1..Y_N`` with a known mode per step.

    Returns posterior means ``(N, n)``, covariances ``(N, n, n)`` and
    indicator posteriors ``(N, m)``.
    """
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    N = Y.shape[0]
    if len(modes) != N:
        raise ValueError("need one mode per observation")
    n = model.dim_state
    m = np.asarray(initial_state, dtype=float)[None].copy()
    P = (settings.initial_var * np.eye(n) if initial_cov is None else np.asarray(initial_cov, dtype=float))[None]
    steps = {j: discretize(model, j) for j in ("alpha", "beta")}
    means = np.empty((N, n))
    covs = np.empty((N, n, n))
    phis = np.empty((N, obs.dim_obs))
    for i in range(N):
        m, P, ok = predict_batch(m, P, steps[modes[i]], settings.q_jitter)
        if not ok[0]:
            raise FilterError(f"prediction failed at step {i + 1}")
        m, P, phi, _, flags = vb_update_batch(m, P, Y[i], obs, settings.tol, settings.max_iters)
        if flags[0] & _kernels.FLAG_FAILED:
            raise FilterError(f"update failed at step {i + 1}")
        means[i], covs[i], phis[i] = m[0], P[0], phi[0]
    return means, covs, phis
