"""Quickest detection of a deceptive target switch from outlier-prone observations."""

from .change_stats import DetectionRecord, HypothesisBank, StepStats, run_bank
from .detector import MetricsReport, StoppingConfig, cusum_stop, estimate_metrics, shiryaev_stop
from .dynamics import (
    ChangePrior,
    DualModeModel,
    Target,
    UnicycleConfig,
    discretize,
    simulate_truth,
    unicycle_model,
)
from .kernels import BACKEND
from .robust_filter import FilterSettings, GaussianBelief, IndicatorPosterior, run_filter
from .sensing import ObservationModel, observe, observe_sequence, position_observation

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ChangePrior",
    "DetectionRecord",
    "DualModeModel",
    "FilterSettings",
    "GaussianBelief",
    "HypothesisBank",
    "IndicatorPosterior",
    "MetricsReport",
    "ObservationModel",
    "StepStats",
    "StoppingConfig",
    "Target",
    "UnicycleConfig",
    "cusum_stop",
    "discretize",
    "estimate_metrics",
    "observe",
    "observe_sequence",
    "position_observation",
    "run_bank",
    "run_filter",
    "shiryaev_stop",
    "simulate_truth",
    "unicycle_model",
]
