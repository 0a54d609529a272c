"""Experiment configuration: nested YAML sections with strict validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import yaml

from ..detector import StoppingConfig
from ..dynamics import ChangePrior, Target, UnicycleConfig, unicycle_model
from ..robust_filter import FilterSettings
from ..sensing import ObservationModel

CALIBRATE = "calibrate"
OBSERVE_CHOICES = ("position", "full")


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class ModelSection:
    initial_state: list = field(default_factory=lambda: [-2.0, 0.0, -math.pi / 4])
    target_alpha: list = field(default_factory=lambda: [0.0, 0.0])
    target_beta: list = field(default_factory=lambda: [-0.2, 0.4])
    target_radius: float = 0.1
    state_weight: float = 10.0
    control_weight: float = 1.0
    lookahead: float = 0.05
    speed_bounds: Optional[list] = None
    turn_bounds: Optional[list] = None
    dt: float = 0.01
    epsilon: float = 0.0
    prior_d: float = 0.05


@dataclass
class SensingSection:
    noise_var: list = field(default_factory=lambda: [0.1, 0.06])
    outlier_free_prob: float = 0.98
    indicator_value: float = 0.08
    observe: str = "position"


@dataclass
class FilterSection:
    q_jitter: float = 1e-6
    tol: float = 1e-6
    max_iters: int = 10
    initial_var: float = 1e-6
    window: Optional[int] = 200


@dataclass
class DetectionSection:
    pfa_budget: float = 1e-3
    cusum_threshold: Union[float, str] = 4e4
    calibration_pfa: float = 0.01
    calibration_runs: int = 1000
    max_steps: Optional[int] = None


@dataclass
class RunSection:
    n_realizations: int = 1000
    seed: int = 0
    nu: Optional[int] = 10
    horizon: int = 100
    workers: int = 1
    out_dir: str = "runs/default"


SECTIONS = {
    "model": ModelSection,
    "sensing": SensingSection,
    "filter": FilterSection,
    "detection": DetectionSection,
    "run": RunSection,
}


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    sensing: SensingSection = field(default_factory=SensingSection)
    filter: FilterSection = field(default_factory=FilterSection)
    detection: DetectionSection = field(default_factory=DetectionSection)
    run: RunSection = field(default_factory=RunSection)

    # -- (de)serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Any) -> "ExperimentConfig":
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("configuration root must be a mapping")
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown section(s): {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in SECTIONS.items():
            raw = data.get(name) or {}
            if not isinstance(raw, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            allowed = {f.name for f in dataclasses.fields(section_cls)}
            bad = set(raw) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in {name!r}: {sorted(bad)}")
            kwargs[name] = section_cls(**raw)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with per-section overrides, e.g. ``replace(run={"seed": 3})``."""
        d = self.to_dict()
        for name, over in sections.items():
            d[name].update(over)
        return ExperimentConfig.from_dict(d)

    # -- validation ----------------------------------------------------------

    def validate(self) -> None:
        try:
            self._validate()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def _validate(self):
        m, s, f, d, r = self.model, self.sensing, self.filter, self.detection, self.run
        if len(m.initial_state) != 3:
            raise ConfigError("model.initial_state must have three entries (x1, x2, heading)")
        for key in ("target_alpha", "target_beta"):
            if len(getattr(m, key)) != 2:
                raise ConfigError(f"model.{key} must be a planar point")
        if s.observe not in OBSERVE_CHOICES:
            raise ConfigError(f"sensing.observe must be one of {OBSERVE_CHOICES}")
        if s.observe == "full" and len(s.noise_var) != 3:
            raise ConfigError("sensing.noise_var needs three entries when observe = full")
        if s.observe == "position" and len(s.noise_var) != 2:
            raise ConfigError("sensing.noise_var needs two entries when observe = position")
        if isinstance(d.cusum_threshold, str) and d.cusum_threshold != CALIBRATE:
            # YAML 1.1 reads "4e4" as a string
            try:
                d.cusum_threshold = float(d.cusum_threshold)
            except ValueError:
                raise ConfigError(f"detection.cusum_threshold must be a number or {CALIBRATE!r}") from None
        if not 0.0 < d.calibration_pfa < 1.0:
            raise ConfigError("detection.calibration_pfa must lie in (0, 1)")
        if d.calibration_runs < 1:
            raise ConfigError("detection.calibration_runs must be positive")
        if r.n_realizations < 1 or r.horizon < 1 or r.workers < 1:
            raise ConfigError("run.n_realizations, run.horizon and run.workers must be positive")
        if r.nu is not None and r.nu < 1:
            raise ConfigError("run.nu must be >= 1 or null")
        if f.window is not None and f.window < 1:
            raise ConfigError("filter.window must be positive or null")
        # re-run the invariants of the domain objects
        self.build()

    # -- domain objects ------------------------------------------------------

    def build(self) -> "Scenario":
        m, s, f, d, r = self.model, self.sensing, self.filter, self.detection, self.run
        case = unicycle_model(
            UnicycleConfig(
                initial_state=tuple(float(v) for v in m.initial_state),
                state_weight=m.state_weight,
                control_weight=m.control_weight,
                lookahead=m.lookahead,
                speed_bounds=None if m.speed_bounds is None else tuple(m.speed_bounds),
                turn_bounds=None if m.turn_bounds is None else tuple(m.turn_bounds),
            ),
            Target(np.asarray(m.target_alpha, float), m.target_radius),
            Target(np.asarray(m.target_beta, float), m.target_radius),
            dt=m.dt,
            epsilon=m.epsilon,
        )
        H = np.eye(2, 3) if s.observe == "position" else np.eye(3)
        obs = ObservationModel(np.asarray(s.noise_var, float), s.outlier_free_prob, s.indicator_value, matrix=H)
        threshold = 1.0 if d.cusum_threshold == CALIBRATE else float(d.cusum_threshold)
        return Scenario(
            case=case,
            obs=obs,
            prior=ChangePrior(m.prior_d),
            settings=FilterSettings(f.q_jitter, f.tol, f.max_iters, f.initial_var),
            window=f.window,
            stopping=StoppingConfig(d.pfa_budget, threshold, d.max_steps),
            horizon=r.horizon,
        )


@dataclass
class Scenario:
    """Validated domain objects derived from a configuration."""

    case: Any
    obs: ObservationModel
    prior: ChangePrior
    settings: FilterSettings
    window: Optional[int]
    stopping: StoppingConfig
    horizon: int

    @property
    def model(self):
        return self.case.model

    @property
    def initial_state(self) -> np.ndarray:
        return self.case.initial_state


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def default_config_yaml() -> str:
    return default_config().to_yaml()


def load_config(path: Optional[Union[str, Path]]) -> ExperimentConfig:
    if path is None:
        return default_config()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)
