"""Config dataclasses for training, sampling, classification and prediction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional


@dataclass
class ConditionSpec:
    """Concept layout of the conditioning input.

    Each concept becomes one one-hot vector and one encoder token; two-concept
    conditions are concatenated as two tokens.
    """

    fields: tuple[str, ...]  # label fields, e.g. ("count",) or ("count", "object_color")
    classes_per_field: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.classes_per_field:
            self.classes_per_field = tuple(10 for _ in self.fields)
        if len(self.fields) not in (1, 2):
            raise ValueError("condition spec supports one or two concepts")

    @property
    def n_tokens(self) -> int:
        return len(self.fields)


@dataclass
class DiffusionConfig:
    manifest: str
    out_dir: str
    backbone: str = "unet"              # unet | dit
    objective: str = "score_matching"   # score_matching | rectified_flow
    preset: str = "small"               # small (desk scale) | paper
    resolution: int = 64
    steps: int = 20000
    batch_size: int = 64
    lr: float = 1e-4
    validation_interval: int = 500
    sampler_steps: int = 50
    seed: int = 0
    condition_fields: Optional[list[str]] = None  # derived from manifest when None
    # validation-by-generation (requires a classifier checkpoint)
    val_classifier: Optional[str] = None
    val_samples_per_condition: int = 4
    val_sampler_steps: int = 20
    # condition-encoder options
    aux_condition_loss: str = "none"    # none | cross_entropy | infonce
    aux_loss_weight: float = 0.1
    freeze_condition_encoder: bool = False
    pretrained_condition_encoder: Optional[str] = None
    # reserved hook: when set, images are encoded/decoded by an external codec
    latent_codec: Optional[str] = None
    # rectified-flow weighting: uniform timesteps with unit weight by default
    flow_time_sampling: str = "uniform"  # uniform | logit_normal
    log_interval: int = 50

    @classmethod
    def from_dict(cls, data: dict) -> "DiffusionConfig":
        return cls(**data)


@dataclass
class SampleConfig:
    checkpoint: str
    out_dir: str
    conditions: Optional[list[str]] = None       # condition slugs
    conditions_from: Optional[str] = None        # manifest/unseen-list path
    n_per_condition: int = 50
    sampler_steps: int = 50
    seed: int = 0
    batch_size: int = 50

    @classmethod
    def from_dict(cls, data: dict) -> "SampleConfig":
        return cls(**data)


@dataclass
class ClassifierConfig:
    manifest: str
    out_path: str
    head: str                          # count | relation | attribution | color
    resolution: int = 64
    batch_size: int = 128
    lr: float = 1e-3
    max_epochs: int = 60
    patience: int = 25                 # early stop on stalled validation loss
    val_fraction: float = 0.05
    test_fraction: float = 0.05
    augment_prob: float = 0.3
    seed: int = 0
    # optional early exit once validation accuracy reaches the target
    target_accuracy: Optional[float] = None

    @classmethod
    def from_dict(cls, data: dict) -> "ClassifierConfig":
        return cls(**data)


@dataclass
class PredictConfig:
    generated_dir: str
    out_path: str
    classifiers: dict[str, str] = field(default_factory=dict)  # head -> checkpoint
    batch_size: int = 128

    @classmethod
    def from_dict(cls, data: dict) -> "PredictConfig":
        return cls(**data)


@dataclass
class EmbedConfig:
    checkpoint: str
    out_path: str

    @classmethod
    def from_dict(cls, data: dict) -> "EmbedConfig":
        return cls(**data)


def load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
