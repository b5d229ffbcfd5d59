"""Pipeline configuration: defaults, key=value files, CLI overrides, echoing."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError
from .losses import LossWeights

__all__ = ["PipelineConfig", "load_config", "apply_overrides", "format_config"]


@dataclass
class PipelineConfig:
    """Every knob of the end-to-end pipeline.

    Defaults follow the complete-matching setting: basis size 80 (use 50 for
    large-cut partial data and 30 for hole-riddled or partial-view data),
    descriptor-preservation weight 100, Sinkhorn with 10 iterations at
    temperature 0.2, and the loss weights of LossWeights. noise_sigma has no
    published default; 0 disables perturbation.
    """

    k: int = 80
    lambda_reg: float = 100.0
    resolvent_gamma: float = 0.5
    sinkhorn_iterations: int = 10
    sinkhorn_temperature: float = 0.2
    lambda_bij: float = 1.0
    lambda_orth: float = 1.0
    lambda_align: float = 1e-3
    lambda_nce: float = 10.0
    tau: float = 0.07
    descriptor: str = "wks"
    descriptor_size: int = 128
    standardize_features: bool = True
    noise_sigma: float = 0.0
    seed: int = 0
    partial: bool = False
    pc_knn: int = 8
    refine_steps: int = 30
    refine_step_size: float = 0.1
    pck_thresholds: tuple = (0.01, 0.02, 0.05, 0.10, 0.15, 0.20, 0.25)

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.lambda_reg < 0:
            raise ConfigError("lambda_reg must be nonnegative")
        if self.resolvent_gamma <= 0:
            raise ConfigError("resolvent_gamma must be positive")
        if self.sinkhorn_iterations < 1:
            raise ConfigError("sinkhorn_iterations must be >= 1")
        if self.sinkhorn_temperature <= 0:
            raise ConfigError("sinkhorn_temperature must be positive")
        if self.descriptor not in ("hks", "wks", "xyz", "external"):
            raise ConfigError(f"unknown descriptor {self.descriptor!r}")
        if self.descriptor_size < 1:
            raise ConfigError("descriptor_size must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if self.pc_knn < 3:
            raise ConfigError("pc_knn must be >= 3")
        if self.refine_steps < 0:
            raise ConfigError("refine_steps must be >= 0")
        if self.refine_step_size <= 0:
            raise ConfigError("refine_step_size must be positive")
        self.pck_thresholds = tuple(float(t) for t in self.pck_thresholds)
        if any(b < a for a, b in zip(self.pck_thresholds, self.pck_thresholds[1:])):
            raise ConfigError("pck_thresholds must be ascending")
        try:
            self.weights  # delegate weight validation
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def weights(self) -> LossWeights:
        return LossWeights(
            lambda_bij=self.lambda_bij,
            lambda_orth=self.lambda_orth,
            lambda_align=self.lambda_align,
            lambda_nce=self.lambda_nce,
            tau=self.tau,
        )


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _parse_value(name: str, text: str):
    field = _FIELDS[name]
    text = text.strip()
    try:
        if field.type == "bool":
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if field.type == "int":
            return int(text)
        if field.type == "float":
            return float(text)
        if field.type == "tuple":
            return tuple(float(t) for t in text.replace(",", " ").split())
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from exc


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    """Read a line-oriented key=value file; unknown keys are rejected."""
    values = dataclasses.asdict(base) if base is not None else {}
    path = str(path)
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for ln, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key=value, got {line!r}")
        name, text = (part.strip() for part in line.split("=", 1))
        if name not in _FIELDS:
            raise ConfigError(f"{path}:{ln}: unknown configuration key {name!r}")
        values[name] = _parse_value(name, text)
    return PipelineConfig(**values)


def apply_overrides(config: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Return a copy with non-None override values applied (CLI beats file)."""
    updates = {}
    for name, value in overrides.items():
        if value is None:
            continue
        if name not in _FIELDS:
            raise ConfigError(f"unknown configuration key {name!r}")
        updates[name] = value
    return dataclasses.replace(config, **updates)


def format_config(config: PipelineConfig) -> str:
    """Effective configuration as the same key=value format, keys sorted."""
    lines = []
    for name in sorted(_FIELDS):
        value = getattr(config, name)
        if isinstance(value, tuple):
            value = ",".join(f"{v:g}" for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"
