"""Hypothesis bank and the sequential change statistics.

The bank runs one robust filter under the no-change hypothesis and one per
candidate change step ``k``. Chain ``k`` uses mode alpha before ``k`` and
mode beta from ``k`` on, so at step ``n`` its per-step log ratio is the
difference between its predictive log-likelihood and the no-change one.
"""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit, logsumexp

from . import kernels
from .dynamics import ChangePrior, DualModeModel, discretize
from .robust_filter import (
    FilterError,
    FilterSettings,
    GaussianBelief,
    IndicatorPosterior,
    predict_batch,
    predictive_loglik_batch,
    vb_update_batch,
)
from .sensing import ObservationModel

log = logging.getLogger(__name__)

NO_CHANGE = math.inf


@dataclass(frozen=True)
class HypothesisChain:
    change_index: float
    belief: GaussianBelief
    indicators: IndicatorPosterior
    cum_log_ratio: float


@dataclass(frozen=True)
class StepStats:
    step: int
    log_L: float
    p: float
    T: float
    n_chains: int
    argmax_k: int
    loglik_no_change: float


class HypothesisBank:
    """Filter bank over the candidate change steps.

    Parameters
    ----------
    model, obs:
        Agent and observation models known to the observer.
    prior:
        Geometric change prior.
    initial_state:
        Mean of the initial belief; its covariance is
        ``settings.initial_var * I`` unless ``initial_cov`` is given.
    window:
        Maximum number of change chains kept; ``None`` keeps all of them.
        Excess chains are dropped by smallest ``pi_k * L_n^k``.
    keep_history:
        Record every per-step log ratio, keyed by ``k`` (testing aid).
    """

    def __init__(
        self,
        model: DualModeModel,
        obs: ObservationModel,
        prior: ChangePrior,
        initial_state,
        settings: FilterSettings = FilterSettings(),
        window: Optional[int] = 200,
        initial_cov=None,
        backend=None,
        keep_history: bool = False,
    ):
        if window is not None and window < 1:
            raise ValueError("window must be positive or None")
        self.model = model
        self.obs = obs
        self.prior = prior
        self.settings = settings
        self.window = window
        self.backend = backend
        n = model.dim_state
        self._step_alpha = discretize(model, "alpha")
        self._step_beta = discretize(model, "beta")
        self._inf_mean = np.asarray(initial_state, dtype=float).reshape(n).copy()
        self._inf_cov = settings.initial_var * np.eye(n) if initial_cov is None else np.asarray(initial_cov, dtype=float)
        self._inf_phi = obs.outlier_free_prob.copy()
        self._means = np.empty((0, n))
        self._covs = np.empty((0, n, n))
        self._phis = np.empty((0, obs.dim_obs))
        self._ks = np.empty(0, dtype=np.int64)
        self._cum = np.empty(0)
        self._n = 0
        self.history = {} if keep_history else None
        self.dropped: list[int] = []

    # -- state -------------------------------------------------------------

    @property
    def step(self) -> int:
        return self._n

    @property
    def change_indices(self) -> np.ndarray:
        return self._ks.copy()

    @property
    def cum_log_ratios(self) -> np.ndarray:
        return self._cum.copy()

    @property
    def infinity_chain(self) -> HypothesisChain:
        return HypothesisChain(
            NO_CHANGE,
            GaussianBelief(self._inf_mean, self._inf_cov),
            IndicatorPosterior(self._inf_phi, self.obs.indicator_value),
            0.0,
        )

    @property
    def change_chains(self) -> list[HypothesisChain]:
        vs = self.obs.indicator_value
        return [
            HypothesisChain(int(k), GaussianBelief(m, P), IndicatorPosterior(phi, vs), float(c))
            for k, m, P, phi, c in zip(self._ks, self._means, self._covs, self._phis, self._cum)
        ]

    def copy(self) -> "HypothesisBank":
        return copy.deepcopy(self)

    # -- statistics --------------------------------------------------------

    def _log_weights(self):
        return self.prior.log_pmf(self._ks) + self._cum

    def log_shiryaev(self) -> float:
        """``log L_n``; ``-inf`` before the first step."""
        if self._n == 0 or self._ks.size == 0:
            return -np.inf
        return float(logsumexp(self._log_weights()) - self.prior.log_survival(self._n))

    def posterior(self) -> float:
        return float(expit(self.log_shiryaev()))

    def cusum(self) -> float:
        if self._n == 0:
            raise ValueError("CUSUM statistic needs at least one observation")
        return float(self._cum.max()) if self._cum.size else -np.inf

    # -- recursion ---------------------------------------------------------

    def advance(self, y) -> StepStats:
        """Absorb observation ``Y_n`` (n = previous step + 1)."""
        y = np.asarray(y, dtype=float).reshape(self.obs.dim_obs)
        n = self._n + 1
        s = self.settings

        # chain k = n starts from the no-change posterior at n - 1
        means = np.concatenate([self._means, self._inf_mean[None]])
        covs = np.concatenate([self._covs, self._inf_cov[None]])
        ks = np.append(self._ks, n)
        cum = np.append(self._cum, 0.0)

        mi, Pi, oki = predict_batch(self._inf_mean[None], self._inf_cov[None], self._step_alpha, s.q_jitter, self.backend)
        mc, Pc, okc = predict_batch(means, covs, self._step_beta, s.q_jitter, self.backend)
        M = np.concatenate([mi, mc])
        P = np.concatenate([Pi, Pc])
        ok = np.concatenate([oki, okc])

        ll = predictive_loglik_batch(M, P, y, self.obs, self.backend)
        mpost, Ppost, phi, _, flags = vb_update_batch(M, P, y, self.obs, s.tol, s.max_iters, self.backend)
        bad = ~ok | ((flags & kernels.FLAG_FAILED) != 0) | ~np.isfinite(ll)
        if bad[0]:
            raise FilterError(f"no-change filter failed at step {n}")
        if bad[1:].any():
            lost = ks[bad[1:]]
            log.warning("step %d: dropping failed chains k=%s", n, lost.tolist())
            self.dropped.extend(int(k) for k in lost)

        keep = ~bad[1:]
        incr = ll[1:] - ll[0]
        self._inf_mean, self._inf_cov, self._inf_phi = mpost[0], Ppost[0], phi[0]
        self._means = mpost[1:][keep]
        self._covs = Ppost[1:][keep]
        self._phis = phi[1:][keep]
        self._ks = ks[keep]
        self._cum = cum[keep] + incr[keep]
        self._n = n
        if self.history is not None:
            for k, z in zip(self._ks, incr[keep]):
                self.history.setdefault(int(k), []).append(float(z))

        stats = self._stats(float(ll[0]))
        self._prune()
        # statistics use every chain alive this step; report the retained count
        return replace(stats, n_chains=int(self._ks.size))

    def _stats(self, ll0: float) -> StepStats:
        n = self._n
        if self._ks.size == 0:
            return StepStats(n, -np.inf, 0.0, -np.inf, 0, -1, ll0)
        log_L = self.log_shiryaev()
        j = int(np.argmax(self._cum))
        return StepStats(n, log_L, float(expit(log_L)), float(self._cum[j]), int(self._ks.size), int(self._ks[j]), ll0)

    def _prune(self):
        if self.window is None or self._ks.size <= self.window:
            return
        order = np.argsort(self._log_weights(), kind="stable")
        drop = order[: self._ks.size - self.window]
        keep = np.ones(self._ks.size, dtype=bool)
        keep[drop] = False
        self._means, self._covs, self._phis = self._means[keep], self._covs[keep], self._phis[keep]
        self._ks, self._cum = self._ks[keep], self._cum[keep]


def shiryaev_statistic(bank: HypothesisBank) -> float:
    """``L_n`` in the linear domain (0 before any observation)."""
    return float(np.exp(bank.log_shiryaev()))


def posterior_probability(bank: HypothesisBank) -> float:
    return bank.posterior()


def cusum_statistic(bank: HypothesisBank) -> float:
    return bank.cusum()


def posterior_from_log_L(log_L):
    """``p = L / (1 + L)`` computed stably from ``log L``."""
    return expit(np.asarray(log_L, dtype=float))


@dataclass
class DetectionRecord:
    """Per-step statistics of one realization and its stopping times."""

    log_L: np.ndarray
    p: np.ndarray
    T: np.ndarray
    n_chains: np.ndarray
    argmax_k: np.ndarray
    wall_time: np.ndarray
    dt: float = 1.0
    nu: Optional[int] = None
    tau_s: Optional[int] = None
    tau_c: Optional[int] = None
    extras: dict = field(default_factory=dict)

    @property
    def steps(self) -> np.ndarray:
        return np.arange(1, self.log_L.size + 1)

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.dt

    def __len__(self):
        return self.log_L.size


def run_bank(bank: HypothesisBank, observations, nu: Optional[int] = None) -> DetectionRecord:
    """Feed ``Y_1..Y_N`` through ``bank`` and collect the statistics."""
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    N = Y.shape[0]
    out = {k: np.empty(N) for k in ("log_L", "p", "T", "wall_time")}
    n_chains = np.empty(N, dtype=np.int64)
    argmax_k = np.empty(N, dtype=np.int64)
    for i in range(N):
        t0 = time.perf_counter()
        st = bank.advance(Y[i])
        out["wall_time"][i] = time.perf_counter() - t0
        out["log_L"][i], out["p"][i], out["T"][i] = st.log_L, st.p, st.T
        n_chains[i], argmax_k[i] = st.n_chains, st.argmax_k
    return DetectionRecord(out["log_L"], out["p"], out["T"], n_chains, argmax_k, out["wall_time"],
                           dt=bank.model.dt, nu=nu)
