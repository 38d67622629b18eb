"""Pipeline configuration: JSON file, strict key validation, CLI overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .codes import SUPPORTED_BITS
from .errors import ConfigError
from .loss import LossConfig
from .ood import ResidualKind

ENV_CONFIG_PATH = "ACIR_CONFIG"

# JSON key -> dataclass attribute ("lambda" is reserved in Python)
_KEY_TO_ATTR = {
    "bits": "bits",
    "fingerprint_size": "fingerprint_size",
    "neutral_threshold": "neutral_threshold",
    "alpha": "alpha",
    "lambda": "lam",
    "epsilon": "eps",
    "ood_metric": "ood_metric",
    "radius": "radius",
    "image_size": "image_size",
    "seed": "seed",
    "gallery_dir": "gallery_dir",
    "index_path": "index_path",
    "calibration_path": "calibration_path",
}


@dataclass
class PipelineConfig:
    bits: int = 64
    fingerprint_size: int = 32
    neutral_threshold: float = 0.5
    alpha: float = 0.5
    lam: float = 2.0
    eps: float = 1e-6
    ood_metric: str = "l1"
    radius: int | None = None
    image_size: int = 224
    seed: int = 0
    gallery_dir: str | None = None
    index_path: str | None = None
    calibration_path: str | None = None

    def validate(self) -> "PipelineConfig":
        if self.bits not in SUPPORTED_BITS:
            raise ConfigError(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")
        if self.fingerprint_size < 1:
            raise ConfigError("fingerprint_size must be positive")
        if not 0.0 <= self.neutral_threshold <= 1.0:
            raise ConfigError("neutral_threshold must lie in [0, 1]")
        try:
            LossConfig(lam=self.lam, alpha=self.alpha, eps=self.eps)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        try:
            ResidualKind(self.ood_metric)
        except ValueError as exc:
            raise ConfigError(
                f"ood_metric must be one of "
                f"{[k.value for k in ResidualKind]}, got {self.ood_metric!r}"
            ) from exc
        if self.radius is not None and not 0 <= self.radius <= self.bits:
            raise ConfigError(f"radius must lie in [0, {self.bits}]")
        if self.image_size % 32 or self.image_size < 32:
            raise ConfigError("image_size must be a positive multiple of 32")
        return self

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        unknown = set(raw) - set(_KEY_TO_ATTR)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {_KEY_TO_ATTR[key]: value for key, value in raw.items()}
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path=None) -> "PipelineConfig":
        """Read the JSON config at ``path``, falling back to $ACIR_CONFIG,
        falling back to defaults."""
        if path is None:
            path = os.environ.get(ENV_CONFIG_PATH) or None
        if path is None:
            return cls().validate()
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def override(self, **updates) -> "PipelineConfig":
        """New config with the non-None entries of ``updates`` applied."""
        current = {f.name: getattr(self, f.name) for f in fields(self)}
        current.update({k: v for k, v in updates.items() if v is not None})
        return PipelineConfig(**current).validate()

    def effective_radius(self) -> int:
        return self.radius if self.radius is not None else self.bits // 4 + 1

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam, alpha=self.alpha, eps=self.eps)

    def residual_kind(self) -> ResidualKind:
        return ResidualKind(self.ood_metric)
