"""Condition-directed sampling and prediction emission in the evaluator's
JSONL schema."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import torch

from .classifiers import classify_images, load_classifier
from .config import PredictConfig, SampleConfig
from .data import Condition, load_image, read_manifest, save_image, write_predictions
from .objectives import condition_class_indices, condition_spec_for
from .samplers import sample_batch
from .training import load_diffusion_checkpoint


def _conditions_from_source(config: SampleConfig) -> list[Condition]:
    conditions: list[Condition] = []
    if config.conditions:
        conditions.extend(Condition.from_slug(s) for s in config.conditions)
    if config.conditions_from:
        seen = set()
        for row in read_manifest(config.conditions_from):
            if row.condition.items not in seen:
                seen.add(row.condition.items)
                conditions.append(row.condition)
    if not conditions:
        raise ValueError("no conditions given (use conditions or conditions_from)")
    return conditions


def sample_conditions(config: SampleConfig) -> Path:
    """Generate n images per condition under <out>/<condition-slug>/<k>.png."""
    model, payload = load_diffusion_checkpoint(config.checkpoint)
    cfg = payload["config"]
    spec = condition_spec_for(payload["condition_fields"])
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    for c_idx, cond in enumerate(_conditions_from_source(config)):
        if tuple(f for f, _ in cond.items) != spec.fields:
            print(f"warning: condition {cond.slug()!r} does not match the model's "
                  f"condition fields {spec.fields}; skipped", file=sys.stderr)
            continue
        cls = condition_class_indices([cond], spec)
        produced = 0
        while produced < config.n_per_condition:
            n = min(config.batch_size, config.n_per_condition - produced)
            idx = cls.repeat(n, 1)
            seed = config.seed * 1_000_003 + c_idx * 1013 + produced
            images = sample_batch(model, cfg["objective"], idx, cfg["resolution"],
                                  config.sampler_steps, seed=seed)
            for k in range(n):
                save_image(images[k], out_dir / cond.slug() / f"{produced + k:03d}.png")
            produced += n
    return out_dir


def emit_predictions(config: PredictConfig) -> Path:
    """One prediction row per generated image; unreadable images predict null."""
    classifiers = {head: load_classifier(path)
                   for head, path in config.classifiers.items()}
    generated_dir = Path(config.generated_dir)
    paths = sorted(generated_dir.rglob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no PNG files under {generated_dir}")

    rows = []
    readable_paths, readable_rows = [], []
    for p in paths:
        rel = p.relative_to(generated_dir)
        cond = Condition.from_slug(rel.parent.as_posix())
        row = {
            "id": rel.with_suffix("").as_posix(),
            "true_labels": cond.labels(),
            "predicted": {head: None for head in classifiers},
            "image": rel.as_posix(),
        }
        rows.append(row)
        try:
            img = load_image(p)
        except OSError:
            continue  # row keeps null predictions and scores as incorrect
        readable_paths.append(img)
        readable_rows.append(row)

    if readable_paths:
        images = np.stack(readable_paths)
        for head, (model, _) in classifiers.items():
            preds = classify_images(model, images, head,
                                    batch_size=config.batch_size)
            for row, value in zip(readable_rows, preds):
                row["predicted"][head] = int(value)

    out_path = Path(config.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(rows, out_path)
    return out_path
