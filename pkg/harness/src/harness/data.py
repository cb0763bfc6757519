"""Dataset-side contract with the generator toolkit: JSONL manifests, PNG
images, condition slugs, and prediction rows.

The harness deliberately reads and writes the toolkit's file formats rather
than importing it; the files are the interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

LABEL_FIELDS = ("count", "relation_sector", "sphere_color", "cube_color", "object_color")
SLUG_KEYS = {
    "count": "count",
    "relation_sector": "sector",
    "sphere_color": "sphere",
    "cube_color": "cube",
    "object_color": "color",
}
SLUG_FIELDS = {v: k for k, v in SLUG_KEYS.items()}

COLOR_NAMES = ("RED", "GREEN", "BLUE", "YELLOW", "PURPLE",
               "ORANGE", "CYAN", "GRAY", "WHITE", "BLACK")
COLOR_INDEX = {name: i for i, name in enumerate(COLOR_NAMES)}

# Head name -> (number of classes, lowest class index) in the evaluator schema.
HEADS = {
    "count": (20, 1),
    "relation": (10, 1),
    "attribution": (100, 0),
    "color": (10, 0),
}


@dataclass(frozen=True)
class Condition:
    """One conditioning cell, as a sorted tuple of (label field, value)."""

    items: tuple[tuple[str, object], ...]

    @classmethod
    def from_labels(cls, labels: dict) -> "Condition":
        items = tuple((f, labels[f]) for f in LABEL_FIELDS if labels.get(f) is not None)
        return cls(items=items)

    def labels(self) -> dict:
        return dict(self.items)

    def slug(self) -> str:
        return "_".join(f"{SLUG_KEYS[f]}-{v}" for f, v in self.items)

    @classmethod
    def from_slug(cls, slug: str) -> "Condition":
        labels = {}
        for part in slug.split("_"):
            key, _, value = part.partition("-")
            field = SLUG_FIELDS[key]
            labels[field] = int(value) if field in ("count", "relation_sector") else value
        return cls.from_labels(labels)

    def heads(self) -> dict[str, int]:
        """Ground-truth class index per evaluator head."""
        labels = self.labels()
        out = {}
        if "count" in labels:
            out["count"] = int(labels["count"])
        if "relation_sector" in labels:
            out["relation"] = int(labels["relation_sector"])
        if "sphere_color" in labels and "cube_color" in labels:
            out["attribution"] = (COLOR_INDEX[labels["sphere_color"]] * 10
                                  + COLOR_INDEX[labels["cube_color"]])
        if "object_color" in labels:
            out["color"] = COLOR_INDEX[labels["object_color"]]
        return out


@dataclass
class ManifestRow:
    id: str
    image: Optional[str]
    task: str
    variant: str
    condition: Condition
    seen: bool


def read_manifest(path) -> list[ManifestRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            rows.append(ManifestRow(
                id=data["id"],
                image=data.get("image"),
                task=data["task"],
                variant=data["variant"],
                condition=Condition.from_labels(data["labels"]),
                seen=bool(data.get("seen", True)),
            ))
    return rows


def load_image(path, resolution: Optional[int] = None) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if resolution is not None and im.size != (resolution, resolution):
            im = im.resize((resolution, resolution), Image.BILINEAR)
        return np.asarray(im, dtype=np.uint8)


def save_image(array: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array, mode="RGB").save(path, format="PNG")


@dataclass
class ImageDataset:
    """All images of a manifest in memory as uint8 (desk-scale datasets)."""

    images: np.ndarray  # (N, H, W, 3) uint8
    conditions: list[Condition]
    rows: list[ManifestRow]

    def __len__(self) -> int:
        return len(self.rows)

    @classmethod
    def from_manifest(cls, manifest_path, resolution: Optional[int] = None,
                      limit: Optional[int] = None) -> "ImageDataset":
        manifest_path = Path(manifest_path)
        root = manifest_path.parent
        rows = [r for r in read_manifest(manifest_path) if r.seen and r.image]
        if limit is not None:
            rows = rows[:limit]
        images = np.stack([load_image(root / r.image, resolution) for r in rows])
        return cls(images=images, conditions=[r.condition for r in rows], rows=rows)

    def distinct_conditions(self) -> list[Condition]:
        seen, out = set(), []
        for c in self.conditions:
            if c.items not in seen:
                seen.add(c.items)
                out.append(c)
        return out


def write_predictions(rows: list[dict], path) -> None:
    """rows: {"id", "true_labels", "predicted", "image"} in evaluator schema."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in sorted(rows, key=lambda r: r["id"]):
            f.write(json.dumps(row, ensure_ascii=True, separators=(",", ":")) + "\n")
