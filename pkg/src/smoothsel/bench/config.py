"""Experiment configuration: defaults, JSON config files, CLI overrides."""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from smoothsel.errors import ConfigurationError
from smoothsel.noise import Sidedness


class SpsCase(str, enum.Enum):
    """How the smooth bound is built (exact gd form or thresholded ud form) and noise sidedness."""

    THM4_TWO_SIDED = "thm4_two_sided"
    THM4_ONE_SIDED = "thm4_one_sided"
    THM5_TWO_SIDED = "thm5_two_sided"
    THM5_ONE_SIDED = "thm5_one_sided"

    @property
    def thresholded(self) -> bool:
        return self.value.startswith("thm5")

    @property
    def sidedness(self) -> Sidedness:
        return Sidedness.ONE_SIDED if self.value.endswith("one_sided") else Sidedness.TWO_SIDED

    @property
    def roman(self) -> str:
        return {"thm4_two_sided": "I", "thm4_one_sided": "II",
                "thm5_two_sided": "III", "thm5_one_sided": "IV"}[self.value]


MECHANISMS = ("em", "pf", "sps")


@dataclass
class ExperimentConfig:
    n_families: int = 150
    m_values: tuple = (5, 10, 15, 20)
    epsilon_values: tuple = (3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 21.0)
    gamma: float = 4.0
    gamma_values: tuple = (2.0, 4.0, 6.0, 10.0)
    trials_per_cell: int = 40
    repetitions: int = 5
    mechanisms: tuple = MECHANISMS
    sps_cases: tuple = tuple(SpsCase)
    threshold_T: float = 6.0
    seed: int = 0
    k_min: float = 0.5
    timing_m_values: tuple = (20, 50, 100, 200, 500, 1000)
    timing_runs: int = 10
    cache_dir: Optional[str] = None

    def __post_init__(self):
        self.m_values = tuple(int(m) for m in _as_tuple(self.m_values))
        self.epsilon_values = tuple(float(e) for e in _as_tuple(self.epsilon_values))
        self.gamma_values = tuple(float(g) for g in _as_tuple(self.gamma_values))
        self.timing_m_values = tuple(int(m) for m in _as_tuple(self.timing_m_values))
        self.mechanisms = tuple(str(m).lower() for m in _as_tuple(self.mechanisms))
        try:
            self.sps_cases = tuple(SpsCase(c) for c in _as_tuple(self.sps_cases))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        self.validate()

    def validate(self):
        counts = {"n_families": self.n_families, "trials_per_cell": self.trials_per_cell,
                  "repetitions": self.repetitions, "timing_runs": self.timing_runs}
        for name, v in counts.items():
            if int(v) != v or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v}")
        if not self.m_values or any(m < 1 for m in self.m_values):
            raise ConfigurationError("m values must be positive")
        if any(m < 1 for m in self.timing_m_values):
            raise ConfigurationError("timing m values must be positive")
        if not self.epsilon_values or any(not e > 0 for e in self.epsilon_values):
            raise ConfigurationError("epsilon values must be positive")
        if not self.gamma > 1 or any(not g > 1 for g in self.gamma_values):
            raise ConfigurationError("gamma must exceed 1")
        unknown = set(self.mechanisms) - set(MECHANISMS)
        if unknown:
            raise ConfigurationError(f"unknown mechanisms {sorted(unknown)}")
        if not 0 < self.k_min < 1:
            raise ConfigurationError("k_min must lie in (0, 1)")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sps_cases"] = [c.value for c in self.sps_cases]
        return d


# Keys accepted in config files besides the field names themselves.
_ALIASES = {"sps_case": "sps_cases", "case": "sps_cases", "trials": "trials_per_cell",
            "reps": "repetitions", "m": "m_values", "epsilon": "epsilon_values",
            "threshold_t": "threshold_T", "T": "threshold_T", "N": "n_families"}


def _as_tuple(v):
    if isinstance(v, (str, bytes)) or not hasattr(v, "__iter__"):
        return (v,)
    return tuple(v)


def normalize_keys(raw: dict) -> dict:
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    out = {}
    for key, value in raw.items():
        key = _ALIASES.get(key, key)
        if key not in names:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        out[key] = value
    return out


def load_config(path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Defaults, then the flat JSON object in ``path``, then ``overrides``."""
    values: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object")
        values.update(normalize_keys(raw))
    if overrides:
        values.update(normalize_keys({k: v for k, v in overrides.items() if v is not None}))
    return ExperimentConfig(**values)
