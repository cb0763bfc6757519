"""Bit-exact file formats: dataset configs, manifests, prediction files and
frequency tables.

Everything is UTF-8 with LF line endings. JSON lines use a fixed key order
and compact separators so that serialize(parse(f)) is byte-identical for
files the toolkit wrote itself. Scene coordinates are rounded to 9
significant digits at creation time, which makes the float round-trip exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .sampling import ConfigError, DatasetConfig, Distribution
from .scene import (
    COLOR_NAMES,
    ConditionLabel,
    SceneObject,
    SceneSpec,
    Shape,
    Task,
    Variant,
)

LABEL_FIELD_ORDER = ("count", "relation_sector", "sphere_color", "cube_color", "object_color")

# Prediction heads and their inclusive class-index ranges. The count head
# runs to 20: evaluation classifiers predict up to twice the generation
# range because generators overshoot.
HEAD_RANGES = {
    "count": (1, 20),
    "relation": (1, 10),
    "attribution": (0, 99),
    "color": (0, 9),
}


class ParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(ValueError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=True, separators=(",", ":"))


# --- labels and scenes ------------------------------------------------------


_SLUG_KEYS = {
    "count": "count",
    "relation_sector": "sector",
    "sphere_color": "sphere",
    "cube_color": "cube",
    "object_color": "color",
}
_SLUG_FIELDS = {v: k for k, v in _SLUG_KEYS.items()}


def label_slug(label: ConditionLabel) -> str:
    """Filesystem-safe condition name, e.g. 'count-3_color-RED'."""
    parts = [f"{_SLUG_KEYS[k]}-{getattr(label, k)}"
             for k in LABEL_FIELD_ORDER if getattr(label, k) is not None]
    return "_".join(parts)


def label_from_slug(slug: str) -> ConditionLabel:
    kwargs = {}
    for part in slug.split("_"):
        key, _, value = part.partition("-")
        if key not in _SLUG_FIELDS:
            raise ValidationError(f"bad condition slug {slug!r}")
        field_name = _SLUG_FIELDS[key]
        kwargs[field_name] = int(value) if field_name in ("count", "relation_sector") else value
    return ConditionLabel(**kwargs)


def label_to_dict(label: ConditionLabel) -> dict:
    return {k: getattr(label, k) for k in LABEL_FIELD_ORDER if getattr(label, k) is not None}


def label_from_dict(data: dict) -> ConditionLabel:
    unknown = set(data) - set(LABEL_FIELD_ORDER)
    if unknown:
        raise ValidationError(f"unknown label fields {sorted(unknown)}")
    return ConditionLabel(**data)


def scene_to_dict(scene: SceneSpec) -> dict:
    return {
        "task": scene.task.value,
        "variant": scene.variant.value,
        "labels": label_to_dict(scene.labels),
        "objects": [
            {"shape": o.shape.value, "color": o.color, "x": o.x, "y": o.y, "r": o.radius}
            for o in scene.objects
        ],
        "seed": scene.seed,
    }


def scene_from_dict(data: dict) -> SceneSpec:
    return SceneSpec(
        task=Task(data["task"]),
        variant=Variant(data["variant"]),
        labels=label_from_dict(data["labels"]),
        objects=tuple(
            SceneObject(shape=Shape(o["shape"]), color=o["color"],
                        x=o["x"], y=o["y"], radius=o["r"])
            for o in data["objects"]
        ),
        seed=data["seed"],
    )


# --- manifests --------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    image: Optional[str]  # relative path; None for unseen-condition records
    task: Task
    variant: Variant
    labels: ConditionLabel
    seen: bool
    scene: Optional[SceneSpec]
    seed: Optional[int]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image": self.image,
            "task": self.task.value,
            "variant": self.variant.value,
            "labels": label_to_dict(self.labels),
            "seen": self.seen,
            "scene": scene_to_dict(self.scene) if self.scene is not None else None,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ManifestRecord":
        return cls(
            id=data["id"],
            image=data.get("image"),
            task=Task(data["task"]),
            variant=Variant(data["variant"]),
            labels=label_from_dict(data["labels"]),
            seen=bool(data["seen"]),
            scene=scene_from_dict(data["scene"]) if data.get("scene") is not None else None,
            seed=data.get("seed"),
        )


def write_manifest(records: Iterable[ManifestRecord], path) -> None:
    """Canonical JSONL: one record per line, sorted by id."""
    ordered = sorted(records, key=lambda r: r.id)
    seen_ids = set()
    for r in ordered:
        if r.id in seen_ids:
            raise ValidationError(f"duplicate id {r.id!r}")
        seen_ids.add(r.id)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in ordered:
            f.write(_dumps(r.to_dict()) + "\n")


def read_manifest(path) -> list[ManifestRecord]:
    records = []
    ids = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = ManifestRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if record.id in ids:
                raise ValidationError(f"duplicate id {record.id!r} at line {lineno}")
            ids.add(record.id)
            records.append(record)
    return records


# --- predictions -------------------------------------------------------------


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    true_labels: ConditionLabel
    predicted: dict[str, Optional[int]]  # head name -> class index (None = unreadable)
    image: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "true_labels": label_to_dict(self.true_labels),
            "predicted": {h: self.predicted[h] for h in sorted(self.predicted)},
            "image": self.image,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PredictionRecord":
        return cls(
            id=data["id"],
            true_labels=label_from_dict(data["true_labels"]),
            predicted=dict(data["predicted"]),
            image=data.get("image"),
        )


@dataclass
class PredictionSet:
    records: list[PredictionRecord]
    per_condition: dict[tuple, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def write_predictions(records: Iterable[PredictionRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in sorted(records, key=lambda r: r.id):
            f.write(_dumps(r.to_dict()) + "\n")


def read_predictions(path) -> PredictionSet:
    """Parse and validate a predictions file; reports per-condition counts."""
    records = []
    per_condition: dict[tuple, int] = {}
    warnings = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = PredictionRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
            for head, value in record.predicted.items():
                if head not in HEAD_RANGES:
                    raise ValidationError(f"line {lineno}: unknown head {head!r}")
                lo, hi = HEAD_RANGES[head]
                if value is not None and not lo <= value <= hi:
                    raise ValidationError(
                        f"line {lineno}: head {head!r} value {value} outside {lo}..{hi}")
            key = record.true_labels.key()
            per_condition[key] = per_condition.get(key, 0) + 1
            records.append(record)
    if not records:
        warnings.append("prediction file is empty")
    return PredictionSet(records=records, per_condition=per_condition, warnings=warnings)


# --- configs ------------------------------------------------------------------

CONFIG_FIELDS = {
    "task", "variant", "size", "distribution", "diagonals_removed", "resolution",
    "seed", "max_count", "output_dir", "counting_color", "relation_target_color",
}


def validate_config(data: dict) -> tuple[Optional[DatasetConfig], list[str]]:
    """Parse a config dict, collecting every violation instead of failing fast."""
    problems = []
    if not isinstance(data, dict):
        return None, ["config must be a JSON object"]
    unknown = set(data) - CONFIG_FIELDS
    if unknown:
        problems.append(f"unknown config fields {sorted(unknown)}")
    kwargs = {}

    def parse_enum(key, enum_cls, default=None, required=False):
        raw = data.get(key)
        if raw is None:
            if required:
                problems.append(f"missing required field {key!r}")
            return default
        try:
            return enum_cls(str(raw).lower())
        except ValueError:
            options = ", ".join(e.value for e in enum_cls)
            problems.append(f"{key} must be one of: {options}")
            return default

    def parse_int(key, default=None, required=False):
        raw = data.get(key)
        if raw is None:
            if required:
                problems.append(f"missing required field {key!r}")
            return default
        if isinstance(raw, bool) or not isinstance(raw, int):
            problems.append(f"{key} must be an integer")
            return default
        return raw

    kwargs["task"] = parse_enum("task", Task, required=True)
    kwargs["variant"] = parse_enum("variant", Variant, required=True)
    kwargs["size"] = parse_int("size", required=True)
    kwargs["distribution"] = parse_enum("distribution", Distribution, Distribution.UNIFORM)
    kwargs["diagonals_removed"] = parse_int("diagonals_removed", 0)
    kwargs["resolution"] = parse_int("resolution", 128)
    kwargs["seed"] = parse_int("seed", 0)
    kwargs["max_count"] = parse_int("max_count", 10)
    kwargs["output_dir"] = str(data.get("output_dir", "dataset"))
    kwargs["counting_color"] = str(data.get("counting_color", "GRAY")).upper()
    kwargs["relation_target_color"] = str(data.get("relation_target_color", "RED")).upper()

    if any(kwargs[k] is None for k in ("task", "variant", "size")):
        return None, problems
    config = DatasetConfig(**kwargs)
    problems.extend(config.violations())
    return (config, problems) if not problems else (None, problems)


def load_config(path) -> DatasetConfig:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    config, problems = validate_config(data)
    if problems:
        raise ConfigError("; ".join(problems))
    return config


def config_to_dict(config: DatasetConfig) -> dict:
    return {
        "task": config.task.value,
        "variant": config.variant.value,
        "size": config.size,
        "distribution": config.distribution.value,
        "diagonals_removed": config.diagonals_removed,
        "resolution": config.resolution,
        "seed": config.seed,
        "max_count": config.max_count,
        "output_dir": config.output_dir,
        "counting_color": config.counting_color,
        "relation_target_color": config.relation_target_color,
    }


# --- frequency tables ---------------------------------------------------------


def write_frequency_csv(counts: dict[str, int], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("class,count\n")
        for cls in counts:
            f.write(f"{cls},{counts[cls]}\n")


def read_frequency_csv(path) -> dict[str, int]:
    counts: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "class,count":
            raise ParseError(f"unexpected header {header!r}", line=1)
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            cls, _, value = line.rpartition(",")
            try:
                counts[cls] = int(value)
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
    return counts
