"""Runtime configuration shared between the CLI, pipeline and service."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

MODEL_ENV_VAR = "FIBERSCOPE_MODEL"

# Confidence presets surfaced to users.  "paper-f1-optimal" is the operating
# point at which the published model reached its best F1 score.
CONFIDENCE_PRESETS = {
    "default": 0.25,
    "paper-f1-optimal": 0.66,
}

DEFAULT_MICRONS_PER_PIXEL = 0.65


@dataclass(frozen=True)
class CalibrationConfig:
    """Physical pixel size of the acquisition setup."""

    microns_per_pixel: float = DEFAULT_MICRONS_PER_PIXEL

    def __post_init__(self) -> None:
        if self.microns_per_pixel <= 0:
            raise ValueError(
                f"microns_per_pixel must be positive, got {self.microns_per_pixel}"
            )


@dataclass(frozen=True)
class MorphometryConfig:
    """Knobs for skeleton-based measurement."""

    spur_min_px: int = 5
    euclidean_length: bool = False  # weight diagonal skeleton steps by sqrt(2)
    tip_compensation: bool = True  # extend path ends by local inscribed radius - 1


@dataclass(frozen=True)
class InferenceParams:
    """Detection thresholds applied during a single inference pass."""

    conf_threshold: float = CONFIDENCE_PRESETS["default"]
    nms_iou: float = 0.7
    mask_threshold: float = 0.5  # strict > comparison
    box_dilation_px: float = 2.0

    def __post_init__(self) -> None:
        for name in ("conf_threshold", "nms_iou", "mask_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class TilingParams:
    """How a large image is split for per-tile inference."""

    tile_size: int = 1024
    overlap: int = 256
    dedup_iou: float = 0.5
    border_margin: int = 0
    workers: int = 4

    def __post_init__(self) -> None:
        if self.tile_size <= 0:
            raise ValueError(f"tile_size must be positive, got {self.tile_size}")
        if not 0 <= self.overlap < self.tile_size:
            raise ValueError(
                f"overlap must satisfy 0 <= overlap < tile_size, got {self.overlap}"
            )
        if self.border_margin < 0:
            raise ValueError(f"border_margin must be >= 0, got {self.border_margin}")


@dataclass(frozen=True)
class ServiceConfig:
    """Settings for the analysis service / CLI front door."""

    data_root: Path = Path("fiberscope-data")
    model_path: str = "stub"
    workers: int = 2
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    inference: InferenceParams = field(default_factory=InferenceParams)
    tiling: TilingParams = field(default_factory=TilingParams)
    morphometry: MorphometryConfig = field(default_factory=MorphometryConfig)


def resolve_model_path(explicit: str | None = None) -> str:
    """Pick the model reference: explicit arg, then env var, then stub."""
    if explicit:
        return explicit
    return os.environ.get(MODEL_ENV_VAR, "stub")


def load_service_config(path: str | Path | None = None, **overrides) -> ServiceConfig:
    """Build a ServiceConfig from an optional YAML file plus keyword overrides.

    The file may set top-level keys (data_root, model_path, workers) and
    nested sections (calibration, inference, tiling, morphometry).
    """
    raw: dict = {}
    if path is not None:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    raw.update({k: v for k, v in overrides.items() if v is not None})

    def build(cls, key):
        section = raw.get(key, {})
        if isinstance(section, cls):
            return section
        allowed = {f.name for f in fields(cls)}
        unknown = set(section) - allowed
        if unknown:
            raise ValueError(f"unknown {key} config keys: {sorted(unknown)}")
        return cls(**section)

    return ServiceConfig(
        data_root=Path(raw.get("data_root", "fiberscope-data")),
        model_path=resolve_model_path(raw.get("model_path")),
        workers=int(raw.get("workers", 2)),
        calibration=build(CalibrationConfig, "calibration"),
        inference=build(InferenceParams, "inference"),
        tiling=build(TilingParams, "tiling"),
        morphometry=build(MorphometryConfig, "morphometry"),
    )
