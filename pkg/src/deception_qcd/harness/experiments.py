"""Monte Carlo orchestration for the case study.

Every realization draws from its own child of ``SeedSequence(seed)``, so the
numbers depend only on the seed and the configuration, never on the worker
count or scheduling order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..change_stats import DetectionRecord, HypothesisBank, run_bank
from ..detector import StoppingConfig, calibrate_cusum, cusum_stop, estimate_metrics, shiryaev_stop
from ..dynamics import simulate_truth
from ..robust_filter import run_filter
from ..sensing import observe_sequence
from .config import CALIBRATE, ExperimentConfig, Scenario

log = logging.getLogger(__name__)

# streams spawned from the root seed: 0 = detection runs, 1 = calibration runs
DETECT_STREAM, CALIBRATION_STREAM = 0, 1


@dataclass
class Realization:
    nu: Optional[int]
    states: np.ndarray
    observations: np.ndarray
    indicators: np.ndarray


def child_seeds(seed: int, stream: int, n: int):
    return np.random.SeedSequence([int(seed), int(stream)]).spawn(n)


def simulate(scenario: Scenario, seed_seq, nu: Optional[int]) -> Realization:
    """One true trajectory and its observations; ``nu=None`` draws from the prior.

    A drawn ``nu`` beyond the horizon leaves the run change-free.
    """
    rng = np.random.default_rng(seed_seq)
    if nu is None:
        nu = scenario.prior.sample(rng)
    nu_sim = min(int(nu), scenario.horizon + 1)
    _, X = simulate_truth(scenario.model, scenario.initial_state, scenario.horizon, rng, nu=nu_sim)
    Y, ind = observe_sequence(X[1:], scenario.obs, rng)
    return Realization(int(nu) if nu <= scenario.horizon else None, X, Y, ind)


def detect(scenario: Scenario, real: Realization, keep_history: bool = False) -> DetectionRecord:
    bank = HypothesisBank(
        scenario.model, scenario.obs, scenario.prior, scenario.initial_state,
        scenario.settings, window=scenario.window, keep_history=keep_history,
    )
    rec = run_bank(bank, real.observations, real.nu)
    rec.tau_s = shiryaev_stop(rec.log_L, scenario.stopping)
    rec.tau_c = cusum_stop(rec.T, scenario.stopping)
    if bank.dropped:
        rec.extras["dropped_chains"] = list(bank.dropped)
    return rec


# -- worker pool -----------------------------------------------------------------

_WORKER_SCENARIO: Optional[Scenario] = None


def _init_worker(cfg_dict: dict):
    global _WORKER_SCENARIO
    _WORKER_SCENARIO = ExperimentConfig.from_dict(cfg_dict).build()


def _run_one(args):
    index, seed_seq, nu, no_change = args
    scenario = _WORKER_SCENARIO
    try:
        real = simulate(scenario, seed_seq, scenario.horizon + 1 if no_change else nu)
        return detect(scenario, real)
    except Exception as exc:
        raise RuntimeError(f"realization {index} failed: {exc}") from exc


def monte_carlo(cfg: ExperimentConfig, n: Optional[int] = None, nu="config", stream: int = DETECT_STREAM,
                no_change: bool = False, workers: Optional[int] = None) -> list:
    """Run ``n`` independent detection pipelines; returns their records in index order."""
    n = cfg.run.n_realizations if n is None else n
    nu = cfg.run.nu if nu == "config" else nu
    workers = cfg.run.workers if workers is None else workers
    seeds = child_seeds(cfg.run.seed, stream, n)
    jobs = [(i, s, nu, no_change) for i, s in enumerate(seeds)]
    if workers <= 1:
        _init_worker(cfg.to_dict())
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(cfg.to_dict(),)) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, n // (4 * workers))))


def calibrate(cfg: ExperimentConfig, workers: Optional[int] = None) -> dict:
    """CUSUM threshold leaving at most ``calibration_pfa`` of change-free runs alarmed."""
    d = cfg.detection
    records = monte_carlo(cfg, d.calibration_runs, stream=CALIBRATION_STREAM, no_change=True, workers=workers)
    c = calibrate_cusum(records, d.calibration_pfa, d.max_steps)
    peaks = np.array([np.max(r.T) for r in records])
    return {
        "threshold": c,
        "target_pfa": d.calibration_pfa,
        "runs": len(records),
        "empirical_pfa": float(np.mean(peaks >= c)),
    }


def resolve_stopping(cfg: ExperimentConfig, workers: Optional[int] = None):
    """Stopping config with a calibrated ``c`` when requested, plus calibration info."""
    scenario = cfg.build()
    if cfg.detection.cusum_threshold != CALIBRATE:
        return scenario.stopping, None
    info = calibrate(cfg, workers)
    s = scenario.stopping
    return StoppingConfig(s.pfa_budget, info["threshold"], s.max_steps), info


def restop(records: Sequence[DetectionRecord], stopping: StoppingConfig) -> None:
    for r in records:
        r.tau_s = shiryaev_stop(r.log_L, stopping)
        r.tau_c = cusum_stop(r.T, stopping)


# -- sweeps ---------------------------------------------------------------------

SWEEP_PARAMS = ("a", "c", "nu", "theta")


def _metrics_row(records, scenario, stopping, rule, **key):
    rep = estimate_metrics(records, scenario.prior, stopping, rule, allow_all_censored=True)
    taus = [t for t in rep.stopping_times if t is not None]
    row = dict(key)
    row.update(
        rule=rule,
        pfa=rep.pfa,
        add=rep.add,
        cadd=rep.cadd,
        censored=rep.n_censored,
        median_tau=float(np.median(taus)) if taus else math.nan,
        phi_hat=rep.phi_hat,
        predicted_add=rep.predicted_add,
    )
    return row


def sweep(cfg: ExperimentConfig, param: str, grid: Sequence[float], rule: str = "shiryaev",
          workers: Optional[int] = None) -> list:
    """One metrics row per grid value.

    ``a`` and ``c`` only move the thresholds, so the statistic streams are
    computed once and re-stopped. ``nu`` and ``theta`` rerun the pipeline.
    """
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}; expected one of {SWEEP_PARAMS}")
    if len(grid) == 0:
        raise ValueError("empty sweep grid")
    scenario = cfg.build()
    base, _ = resolve_stopping(cfg, workers) if param != "c" else (scenario.stopping, None)
    rows = []
    if param in ("a", "c"):
        records = monte_carlo(cfg, workers=workers)
        for v in grid:
            if param == "a":
                st = StoppingConfig(float(v), base.cusum_threshold, base.max_steps)
                rows.append(_metrics_row(records, scenario, st, "shiryaev", a=float(v)))
            else:
                st = StoppingConfig(base.pfa_budget, float(v), base.max_steps)
                rows.append(_metrics_row(records, scenario, st, "cusum", c=float(v)))
    elif param == "nu":
        for v in grid:
            records = monte_carlo(cfg, nu=int(v), workers=workers)
            rows.append(_metrics_row(records, scenario, base, rule, nu=int(v)))
    else:
        for v in grid:
            rows.append(robustness_row(cfg, float(v)))
    return rows


def robustness_row(cfg: ExperimentConfig, theta: float, n: Optional[int] = None) -> dict:
    """Paired comparison of the robust filter against the same filter with theta forced to 1.

    Both filters see identical data generated with outlier-free probability
    ``theta`` and run with the true mode sequence; the score is position RMSE.
    """
    n = cfg.run.n_realizations if n is None else n
    sub = cfg.replace(sensing={"outlier_free_prob": theta})
    scenario = sub.build()
    naive_obs = scenario.obs.with_outlier_free_prob(1.0)
    seeds = child_seeds(cfg.run.seed, DETECT_STREAM, n)
    robust, naive = np.empty(n), np.empty(n)
    for i, s in enumerate(seeds):
        real = simulate(scenario, s, cfg.run.nu)
        nu = real.nu if real.nu is not None else scenario.horizon + 1
        modes = ["alpha" if k < nu else "beta" for k in range(1, scenario.horizon + 1)]
        truth = real.states[1:, :2]
        for out, obs in ((robust, scenario.obs), (naive, naive_obs)):
            means, _, _ = run_filter(real.observations, scenario.model, obs, modes, scenario.initial_state,
                                     scenario.settings)
            out[i] = np.sqrt(np.mean(np.sum((means[:, :2] - truth) ** 2, axis=1)))
    return {
        "theta": theta,
        "robust_rmse": float(robust.mean()),
        "nonrobust_rmse": float(naive.mean()),
        "robust_wins": float(np.mean(robust < naive)),
        "runs": n,
    }
