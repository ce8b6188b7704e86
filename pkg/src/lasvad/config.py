"""Training configuration and the flat ``key = value`` config-file format."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .errors import ConfigurationError


@dataclass
class TrainConfig:
    """Hyperparameters of the full pipeline.

    Field names double as config-file keys and CLI flags.
    """

    learning_rate: float = 2e-5
    batch_size: int = 64
    epochs: int = 10
    reg_weight: float = 0.3  # weight of the agnostic/aware consistency loss
    contrastive_weight: float = 1.0
    rectify_strength: float = 0.5  # cross-modal boost of the similarity graph
    graph_threshold: float = 0.9  # binarization threshold of the rectified graph
    prototype_momentum: float = 0.1
    prototype_threshold: float = 0.5  # min score for a frame to update a prototype
    num_negatives: int = 16  # hard negatives per anchor in the contrastive loss
    align_temperature: float = 0.07  # softmax temperature over cosine alignments
    window_length: int = 64
    nms_iou: float = 0.5
    video_threshold: float = 0.1  # category gate on video-level scores
    frame_threshold: float = 0.2  # frame gate when extracting instances
    max_frames: int = 256
    seed: int = 0
    weight_decay: float = 0.01
    acc_warmup_epochs: int = 1  # epochs before pseudo-label supervision kicks in
    soft_pseudo_labels: bool = False  # renormalized prototype scores instead of one-hot

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        for name in ("video_threshold", "frame_threshold", "nms_iou"):
            value = getattr(self, name)
            if not (0.0 < value < 1.0):
                raise ConfigurationError(f"{name} must lie in (0, 1), got {value}")
        if not (0.0 <= self.prototype_momentum <= 1.0):
            raise ConfigurationError("prototype_momentum must lie in [0, 1]")
        if not (0.0 < self.prototype_threshold < 1.0):
            raise ConfigurationError("prototype_threshold must lie in (0, 1)")
        if self.rectify_strength < 0:
            raise ConfigurationError("rectify_strength must be >= 0")
        if self.align_temperature <= 0:
            raise ConfigurationError("align_temperature must be positive")
        if self.window_length < 2:
            raise ConfigurationError("window_length must be >= 2")
        if self.max_frames < 1:
            raise ConfigurationError("max_frames must be >= 1")
        if self.num_negatives < 1:
            raise ConfigurationError("num_negatives must be >= 1")
        if self.acc_warmup_epochs < 0:
            raise ConfigurationError("acc_warmup_epochs must be >= 0")


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; blank lines and # comments allowed."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigurationError(
                    f"{path}: line {lineno}: expected 'key = value'"
                )
            key, _, value = stripped.partition("=")
            values[key.strip()] = value.strip()
    return values


def _coerce(raw: str, target_type: type) -> Any:
    if target_type is bool:
        return raw.lower() in ("1", "true", "yes")
    return target_type(raw)


def build_config(
    config_cls: type,
    file_values: dict[str, str] | None = None,
    overrides: dict[str, Any] | None = None,
) -> Any:
    """Assemble a config dataclass from file values and CLI overrides.

    Overrides with value None are ignored; unknown keys are rejected.
    """
    spec = {f.name: f.type for f in fields(config_cls)}

    def field_type(annotation: str) -> type:
        if "bool" in annotation:
            return bool
        if "int" in annotation:
            return int
        if "float" in annotation:
            return float
        return str

    types = {name: field_type(str(t)) for name, t in spec.items()}
    merged: dict[str, Any] = {}
    for key, raw in (file_values or {}).items():
        if key not in spec:
            raise ConfigurationError(f"unknown config key: {key}")
        try:
            merged[key] = _coerce(raw, types[key])
        except ValueError:
            raise ConfigurationError(f"config key {key}: cannot parse {raw!r}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in spec:
            raise ConfigurationError(f"unknown config key: {key}")
        merged[key] = value
    try:
        return config_cls(**merged)
    except TypeError as exc:
        raise ConfigurationError(str(exc))
