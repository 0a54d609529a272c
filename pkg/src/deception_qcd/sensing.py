"""Observation model with independent two-point outlier indicators.

Each sensor ``l`` reports ``y_l = H_l(x) + noise`` where the noise variance
is ``R_ll / I_l`` and the indicator ``I_l`` equals 1 with probability
``theta_l`` and ``varsigma`` otherwise.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ObservationModel:
    """Measurement channel, diagonal noise and outlier parameters.

    Exactly one of ``matrix`` (linear channel ``H x``) or ``channel`` (any
    callable mapping ``(..., n) -> (..., m)``) must be given.
    """

    noise_var: np.ndarray
    outlier_free_prob: np.ndarray
    indicator_value: float
    matrix: Optional[np.ndarray] = None
    channel: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        R = np.atleast_1d(np.asarray(self.noise_var, dtype=float))
        if R.ndim == 2:
            if np.any(R - np.diag(np.diag(R))):
                raise ValueError("noise covariance must be diagonal")
            R = np.diag(R).copy()
        if np.any(R <= 0):
            raise ValueError("noise variances must be positive")
        theta = np.broadcast_to(np.asarray(self.outlier_free_prob, dtype=float), R.shape).copy()
        if np.any((theta < 0) | (theta > 1)):
            raise ValueError("outlier-free probabilities must lie in [0, 1]")
        vs = float(self.indicator_value)
        if not 0.0 < vs <= 1.0:
            # varsigma = 1 is admitted as the degenerate no-outlier limit
            raise ValueError("indicator value must lie in (0, 1]")
        if (self.matrix is None) == (self.channel is None):
            raise ValueError("give exactly one of matrix or channel")
        object.__setattr__(self, "noise_var", R)
        object.__setattr__(self, "outlier_free_prob", theta)
        object.__setattr__(self, "indicator_value", vs)
        if self.matrix is not None:
            H = np.atleast_2d(np.asarray(self.matrix, dtype=float))
            if H.shape[0] != R.size:
                raise ValueError("channel matrix rows must match the number of sensors")
            object.__setattr__(self, "matrix", H)

    @property
    def dim_obs(self) -> int:
        return self.noise_var.size

    @property
    def is_linear(self) -> bool:
        return self.matrix is not None

    def h(self, x):
        x = np.asarray(x, dtype=float)
        if self.matrix is not None:
            return x @ self.matrix.T
        return np.asarray(self.channel(x), dtype=float)

    def with_outlier_free_prob(self, theta) -> "ObservationModel":
        return replace(self, outlier_free_prob=theta)

    def indicator_density(self) -> "IndicatorDensity":
        return IndicatorDensity(self.outlier_free_prob, self.indicator_value)


def position_observation(dim_state: int, noise_var, outlier_free_prob, indicator_value,
                         n_position: int = 2) -> ObservationModel:
    """Observe the first ``n_position`` state coordinates."""
    H = np.eye(n_position, dim_state)
    return ObservationModel(noise_var, outlier_free_prob, indicator_value, matrix=H)


@dataclass(frozen=True)
class IndicatorDensity:
    """Product of per-sensor two-point masses: ``theta`` at 1, ``1 - theta`` at varsigma."""

    outlier_free_prob: np.ndarray
    indicator_value: float

    def log_pmf(self, indicators) -> float:
        ind = np.asarray(indicators, dtype=float)
        nominal = ind == 1.0
        outlier = np.isclose(ind, self.indicator_value) & ~nominal
        if not np.all(nominal | outlier):
            return -np.inf
        with np.errstate(divide="ignore"):
            return float(
                np.sum(np.where(nominal, np.log(self.outlier_free_prob), np.log1p(-self.outlier_free_prob)))
            )

    def configurations(self):
        """All ``2^m`` indicator vectors with their log-probabilities."""
        m = np.size(self.outlier_free_prob)
        cfg = np.array(list(itertools.product((self.indicator_value, 1.0), repeat=m)))
        logw = np.array([self.log_pmf(c) for c in cfg])
        return cfg, logw

    def sample(self, rng: np.random.Generator, size=None):
        theta = np.asarray(self.outlier_free_prob, dtype=float)
        shape = theta.shape if size is None else (size,) + theta.shape
        nominal = rng.random(shape) < theta
        return np.where(nominal, 1.0, self.indicator_value)


def observe(x, model: ObservationModel, rng: np.random.Generator):
    """Draw one observation of state ``x``.

    Returns ``(y, indicators)``; the indicators are diagnostics only.
    """
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    ind = model.indicator_density().sample(rng)
    std = np.sqrt(model.noise_var / ind)
    y = model.h(np.asarray(x, dtype=float)) + std * rng.standard_normal(model.dim_obs)
    return y, ind


def observe_sequence(states, model: ObservationModel, rng: np.random.Generator):
    """Observe every row of ``states``; returns ``(Y, indicators)`` both ``(N, m)``."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    N = states.shape[0]
    ind = model.indicator_density().sample(rng, size=N)
    noise = rng.standard_normal((N, model.dim_obs)) * np.sqrt(model.noise_var / ind)
    return model.h(states) + noise, ind


def measurement_log_likelihood(y, x, indicators, model: ObservationModel) -> float:
    """``log prod_l N(y_l; H_l(x), R_ll / I_l)``."""
    ind = np.asarray(indicators, dtype=float)
    if not np.all(ind > 0):
        raise ValueError("non-positive measurement variance")
    var = model.noise_var / ind
    r = np.asarray(y, dtype=float) - model.h(np.asarray(x, dtype=float))
    return float(-0.5 * np.sum(LOG_2PI + np.log(var) + r**2 / var))


def measurement_likelihood(y, x, indicators, model: ObservationModel) -> float:
    return float(np.exp(measurement_log_likelihood(y, x, indicators, model)))
