"""Diffusion training loop: joint model + condition-encoder optimization,
periodic validation by generation, best-checkpoint selection by validation
accuracy, atomic checkpoint writes."""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .classifiers import classify_images, load_classifier
from .config import DiffusionConfig
from .data import HEADS, ImageDataset
from .models import build_model
from .objectives import (
    CosineSchedule,
    condition_class_indices,
    condition_spec_for,
    ddpm_noise,
    flow_noise,
    rectified_flow_loss,
    sample_flow_times,
    score_matching_loss,
)
from .samplers import sample_batch


@dataclass
class TrainingResult:
    out_dir: Path
    steps: int
    final_loss: float
    best_val_accuracy: Optional[float]
    best_val_step: Optional[int]
    val_history: list[tuple[int, float]] = field(default_factory=list)


def _aux_condition_loss(kind: str, model, class_indices: torch.Tensor) -> torch.Tensor:
    """Auxiliary supervision on the condition-encoder tokens only."""
    tokens = model.condition_encoder(class_indices)  # (B, n_tokens, D)
    loss = tokens.new_zeros(())
    if kind == "cross_entropy":
        # cosine-similarity logits against each class's own embedding
        for k in range(tokens.shape[1]):
            n_classes = model.condition_encoder.spec.classes_per_field[k]
            all_idx = class_indices.new_zeros((n_classes, class_indices.shape[1]))
            all_idx[:, k] = torch.arange(n_classes)
            table = model.condition_encoder(all_idx)[:, k]  # (C, D)
            logits = F.normalize(tokens[:, k], dim=1) @ F.normalize(table, dim=1).T
            loss = loss + F.cross_entropy(logits * 10.0, class_indices[:, k])
    elif kind == "infonce":
        for k in range(tokens.shape[1]):
            z = F.normalize(tokens[:, k], dim=1)
            sim = z @ z.T / 0.1
            same = class_indices[:, k][:, None] == class_indices[:, k][None, :]
            eye = torch.eye(len(z), dtype=torch.bool)
            pos = same & ~eye
            has_pos = pos.any(dim=1)
            if not has_pos.any():
                continue
            sim = sim.masked_fill(eye, -1e9)
            log_prob = sim.log_softmax(dim=1)
            pos_log = (log_prob.masked_fill(~pos, 0).sum(1)
                       / pos.sum(1).clamp(min=1))
            loss = loss - pos_log[has_pos].mean()
    return loss


def _atomic_save(payload: dict, path: Path) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def _dump_diagnostics(out_dir: Path, step: int, loss, batch_stats: dict) -> None:
    with open(out_dir / "abort_diagnostics.json", "w", encoding="utf-8") as f:
        json.dump({"step": step, "loss": repr(loss), **batch_stats}, f, indent=2)


def train_diffusion(config: DiffusionConfig) -> TrainingResult:
    torch.manual_seed(config.seed)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.latent_codec:
        raise NotImplementedError(
            "external latent codecs are a config hook; pixel space is the "
            "supported desk-scale path")

    dataset = ImageDataset.from_manifest(config.manifest, resolution=config.resolution)
    fields = config.condition_fields or [f for f, _ in dataset.conditions[0].items]
    spec = condition_spec_for(list(fields))
    class_indices = condition_class_indices(dataset.conditions, spec)
    images = torch.from_numpy(dataset.images.astype(np.float32) / 127.5 - 1.0)
    images = images.permute(0, 3, 1, 2).contiguous()

    model = build_model(config.backbone, spec, config.preset, config.resolution)
    if config.pretrained_condition_encoder:
        state = torch.load(config.pretrained_condition_encoder,
                           map_location="cpu", weights_only=True)
        model.condition_encoder.load_state_dict(state)
    if config.freeze_condition_encoder:
        for p in model.condition_encoder.parameters():
            p.requires_grad_(False)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=config.lr)
    schedule = CosineSchedule()
    gen = torch.Generator().manual_seed(config.seed + 1)

    val_classifier = None
    if config.val_classifier:
        val_classifier, payload = load_classifier(config.val_classifier)
        val_head = payload["head"]
        val_lo = HEADS[val_head][1]
    distinct = dataset.distinct_conditions()
    distinct_idx = condition_class_indices(distinct, spec)

    def validation_accuracy(step: int) -> float:
        reps = config.val_samples_per_condition
        idx = distinct_idx.repeat_interleave(reps, dim=0)
        imgs = sample_batch(model, config.objective, idx, config.resolution,
                            config.val_sampler_steps, seed=config.seed + step)
        preds = classify_images(val_classifier, imgs, val_head)
        truth = []
        for cond in distinct:
            truth.extend([cond.heads()[val_head]] * reps)
        model.train()
        return float(np.mean([p == t for p, t in zip(preds, truth)]))

    curves_path = out_dir / "curves.csv"
    curves = open(curves_path, "w", encoding="utf-8", newline="\n")
    curves.write("step,loss,val_accuracy\n")

    n = len(images)
    best_val = -1.0
    best_step = None
    val_history: list[tuple[int, float]] = []
    loss_value = float("nan")
    model.train()
    started = time.perf_counter()
    for step in range(1, config.steps + 1):
        sel = torch.randint(0, n, (config.batch_size,), generator=gen)
        x0 = images[sel]
        cls = class_indices[sel]
        eps = torch.randn(x0.shape, generator=gen)
        if config.objective == "rectified_flow":
            t = sample_flow_times(config.batch_size, config.flow_time_sampling, gen)
            z_t = flow_noise(x0, t, eps)
            loss = rectified_flow_loss(model, z_t, t, eps, cls, w=1.0)
        else:
            t_idx = torch.randint(1, schedule.T + 1, (config.batch_size,), generator=gen)
            z_t = ddpm_noise(x0, t_idx, schedule, eps)
            loss = score_matching_loss(model, z_t, t_idx.float() / schedule.T, eps, cls)
        if config.aux_condition_loss != "none" and not config.freeze_condition_encoder:
            loss = loss + config.aux_loss_weight * _aux_condition_loss(
                config.aux_condition_loss, model, cls)

        if not torch.isfinite(loss):
            _dump_diagnostics(out_dir, step, loss.item(), {
                "x0_minmax": [float(x0.min()), float(x0.max())],
                "zt_minmax": [float(z_t.min()), float(z_t.max())],
            })
            curves.close()
            raise RuntimeError(f"non-finite loss at step {step}; diagnostics dumped")

        opt.zero_grad()
        loss.backward()
        opt.step()
        loss_value = float(loss.item())

        validate_now = (val_classifier is not None
                        and step % config.validation_interval == 0)
        if step % config.log_interval == 0 or validate_now or step == config.steps:
            val_str = ""
            if validate_now:
                acc = validation_accuracy(step)
                val_history.append((step, acc))
                val_str = f"{acc:.4f}"
                if acc > best_val:
                    best_val = acc
                    best_step = step
                    _atomic_save({"model": model.state_dict(), "step": step,
                                  "val_accuracy": acc, "config": config.__dict__,
                                  "condition_fields": list(spec.fields)},
                                 out_dir / "best.pt")
            curves.write(f"{step},{loss_value:.6f},{val_str}\n")
            curves.flush()

    _atomic_save({"model": model.state_dict(), "step": config.steps,
                  "val_accuracy": best_val if best_val >= 0 else None,
                  "config": config.__dict__,
                  "condition_fields": list(spec.fields)},
                 out_dir / "last.pt")
    if best_step is None:  # no validation configured: last is best
        _atomic_save({"model": model.state_dict(), "step": config.steps,
                      "val_accuracy": None, "config": config.__dict__,
                      "condition_fields": list(spec.fields)},
                     out_dir / "best.pt")
    curves.write(f"# wall_time_s={time.perf_counter() - started:.1f}\n")
    curves.close()
    return TrainingResult(
        out_dir=out_dir, steps=config.steps, final_loss=loss_value,
        best_val_accuracy=best_val if best_val >= 0 else None,
        best_val_step=best_step, val_history=val_history)


def load_diffusion_checkpoint(path) -> tuple[torch.nn.Module, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg = payload["config"]
    spec = condition_spec_for(payload["condition_fields"])
    model = build_model(cfg["backbone"], spec, cfg["preset"], cfg["resolution"])
    model.load_state_dict(payload["model"])
    model.eval()
    return model, payload
