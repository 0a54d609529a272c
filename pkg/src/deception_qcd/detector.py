"""Stopping rules and Monte Carlo performance metrics.

Stopping indices are 1-based observation steps; ``None`` marks a run that
never crossed its threshold within ``max_steps`` (censored).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .change_stats import DetectionRecord
from .dynamics import ChangePrior

SCHEMA_VERSION = "1.0"
RULES = ("shiryaev", "cusum")


@dataclass(frozen=True)
class StoppingConfig:
    """Thresholds of both stopping rules.

    ``pfa_budget`` is the false-alarm budget ``a`` of the Shiryaev rule, which
    stops once ``L_n >= B_a = (1 - a) / a``. ``cusum_threshold`` is ``c`` on
    the natural-log scale of ``T_n``.
    """

    pfa_budget: float = 1e-3
    cusum_threshold: float = 4e4
    max_steps: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.pfa_budget < 1.0:
            raise ValueError("pfa_budget must lie in (0, 1)")
        if not self.cusum_threshold > 0:
            raise ValueError("cusum_threshold must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    @property
    def shiryaev_threshold(self) -> float:
        return (1.0 - self.pfa_budget) / self.pfa_budget

    @property
    def log_shiryaev_threshold(self) -> float:
        a = self.pfa_budget
        return math.log1p(-a) - math.log(a)


def _first_crossing(stream, level: float, max_steps: Optional[int]) -> Optional[int]:
    s = np.asarray(stream, dtype=float)
    if max_steps is not None:
        s = s[:max_steps]
    hit = np.flatnonzero(s >= level)
    return int(hit[0]) + 1 if hit.size else None


def shiryaev_stop(log_L_stream, config: StoppingConfig) -> Optional[int]:
    """First ``n`` with ``log L_n >= log B_a``."""
    return _first_crossing(log_L_stream, config.log_shiryaev_threshold, config.max_steps)


def cusum_stop(T_stream, config: StoppingConfig) -> Optional[int]:
    """First ``n`` with ``T_n >= c``."""
    return _first_crossing(T_stream, config.cusum_threshold, config.max_steps)


def stop(record: DetectionRecord, config: StoppingConfig, rule: str) -> Optional[int]:
    if rule == "shiryaev":
        return shiryaev_stop(record.log_L, config)
    if rule == "cusum":
        return cusum_stop(record.T, config)
    raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")


def drift_slope(T, nu: int, start: int = 5, stop_: int = 50) -> float:
    """Least-squares slope of ``T_n`` over steps ``[nu + start, nu + stop_]``."""
    T = np.asarray(T, dtype=float)
    lo, hi = nu + start, min(nu + stop_, T.size)
    if hi - lo < 1:
        return math.nan
    n = np.arange(lo, hi + 1)
    y = T[n - 1]
    if not np.all(np.isfinite(y)):
        return math.nan
    return float(np.polyfit(n, y, 1)[0])


@dataclass
class MetricsReport:
    """Monte Carlo summary of one stopping rule over a set of runs.

    Delays are in steps. ``delays`` holds ``tau - nu`` per run, or ``None``
    when the run raised a false alarm, was censored, or had no change.
    """

    rule: str
    n_runs: int
    n_censored: int
    n_false_alarms: int
    pfa: float
    add: float
    cadd: float
    delays: list
    stopping_times: list
    phi_hat: float
    predicted_add: float
    pfa_budget: float
    threshold: float
    dt: float = 1.0
    cadd_bins: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cadd_bins"] = {str(k): v for k, v in self.cadd_bins.items()}
        return _nan_to_none(d)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported metrics schema version {version!r}")
        for key in ("add", "cadd", "pfa", "phi_hat", "predicted_add", "threshold"):
            if d.get(key) is None:
                d[key] = math.nan
        d["cadd_bins"] = {int(k): v for k, v in d.get("cadd_bins", {}).items()}
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def summary(self) -> str:
        lines = [
            f"rule            {self.rule}",
            f"runs            {self.n_runs} (censored {self.n_censored})",
            f"PFA             {self.pfa:.4f} (budget {self.pfa_budget:g})",
            f"ADD [steps]     {self.add:.3f}",
            f"CADD [steps]    {self.cadd:.3f}",
            f"phi_hat         {self.phi_hat:.4f}",
            f"predicted ADD   {self.predicted_add:.3f}",
        ]
        return "\n".join(lines)


def _nan_to_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    return obj


def estimate_metrics(
    records: Sequence[DetectionRecord],
    prior: ChangePrior,
    config: StoppingConfig,
    rule: str = "shiryaev",
    bin_width: int = 5,
    min_bin_count: int = 20,
    allow_all_censored: bool = False,
) -> MetricsReport:
    """PFA, ADD, binned CADD and the drift-rate diagnostic over ``records``.

    Runs whose ``nu`` is None are treated as change-free, so any alarm in them
    is false. Censored runs enter the PFA denominator only. A set in which
    every run is censored raises unless ``allow_all_censored`` is set, in
    which case the delay metrics come back as NaN.
    """
    records = list(records)
    if not records:
        raise ValueError("no runs to summarize")
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
    if bin_width < 1:
        raise ValueError("bin_width must be positive")

    taus, delays, nus_hit, slopes = [], [], [], []
    n_false = n_cens = 0
    for rec in records:
        tau = stop(rec, config, rule)
        taus.append(tau)
        nu = math.inf if rec.nu is None else rec.nu
        if tau is None:
            n_cens += 1
            delays.append(None)
        elif tau < nu:
            n_false += 1
            delays.append(None)
        else:
            delays.append(int(tau - nu))
            nus_hit.append(int(nu))
        if rec.nu is not None:
            slopes.append(drift_slope(rec.T, int(rec.nu)))

    if n_cens == len(records) and not allow_all_censored:
        raise ValueError("every run is censored")

    dl = np.array([x for x in delays if x is not None], dtype=float)
    add = float(dl.mean()) if dl.size else math.nan

    bins = {}
    if dl.size:
        keys = (np.asarray(nus_hit) - 1) // bin_width
        for b in np.unique(keys):
            sel = keys == b
            if sel.sum() >= min_bin_count:
                bins[int(b) * bin_width + 1] = float(dl[sel].mean())
    cadd = max(bins.values()) if bins else math.nan

    s = np.asarray(slopes, dtype=float)
    s = s[np.isfinite(s)]
    phi_hat = float(s.mean()) if s.size else math.nan
    a = config.pfa_budget
    predicted = abs(math.log(a)) / (phi_hat + abs(math.log1p(-prior.d))) if s.size else math.nan

    threshold = config.shiryaev_threshold if rule == "shiryaev" else config.cusum_threshold
    return MetricsReport(
        rule=rule,
        n_runs=len(records),
        n_censored=n_cens,
        n_false_alarms=n_false,
        pfa=n_false / len(records),
        add=add,
        cadd=cadd,
        delays=delays,
        stopping_times=taus,
        phi_hat=phi_hat,
        predicted_add=predicted,
        pfa_budget=a,
        threshold=float(threshold),
        dt=float(records[0].dt),
        cadd_bins=bins,
    )


def calibrate_cusum(records: Iterable[DetectionRecord], target_pfa: float = 0.01,
                    max_steps: Optional[int] = None) -> float:
    """Smallest ``c`` at which at most ``target_pfa`` of change-free runs alarm.

    Each run contributes its running maximum of ``T_n``; the threshold is the
    next float above the order statistic that leaves the allowed number of
    runs at or above it.
    """
    peaks = []
    for rec in records:
        T = np.asarray(rec.T, dtype=float)
        if max_steps is not None:
            T = T[:max_steps]
        peaks.append(np.max(T))
    peaks = np.sort(np.asarray(peaks))
    if peaks.size == 0:
        raise ValueError("no runs to calibrate on")
    allowed = int(math.floor(target_pfa * peaks.size))
    c = peaks[peaks.size - 1 - allowed]
    return float(np.nextafter(max(c, 0.0), np.inf))
