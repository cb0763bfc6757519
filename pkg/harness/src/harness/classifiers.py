"""Evaluation classifiers: small CNNs trained from scratch with
cross-entropy, per-task augmentation, and early stopping on validation loss."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ClassifierConfig
from .data import HEADS, ImageDataset

HEAD_AUGMENT = {
    # counting/relation: photometric only; spatial transforms would change
    # the object count or the measured angle
    "count": "photometric",
    "relation": "photometric",
    "attribution": "photometric",
    "color": "blur",
}


class SceneClassifier(nn.Module):
    """Plain BatchNorm CNN; batch statistics keep absolute color levels
    discriminative (palette identity is a DC signal)."""

    def __init__(self, num_classes: int, width: int = 32):
        super().__init__()
        chans = [width, width * 2, width * 4, width * 8]
        layers = []
        cin = 3
        for c in chans:
            layers += [nn.Conv2d(cin, c, 3, stride=2, padding=1),
                       nn.BatchNorm2d(c), nn.SiLU(),
                       nn.Conv2d(c, c, 3, padding=1),
                       nn.BatchNorm2d(c), nn.SiLU()]
            cin = c
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(chans[-1], num_classes)

    def forward(self, x):
        h = self.features(x).mean(dim=(2, 3))
        return self.head(h)


def head_targets(dataset: ImageDataset, head: str) -> np.ndarray:
    lo = HEADS[head][1]
    return np.array([c.heads()[head] - lo for c in dataset.conditions], dtype=np.int64)


def _augment(x: torch.Tensor, mode: str, prob: float,
             gen: torch.Generator) -> torch.Tensor:
    apply = torch.rand(x.shape[0], generator=gen) < prob
    if not apply.any():
        return x
    x = x.clone()
    idx = apply.nonzero(as_tuple=True)[0]
    if mode == "photometric":
        brightness = 1.0 + (torch.rand(len(idx), 1, 1, 1, generator=gen) - 0.5) * 0.2
        shift = (torch.rand(len(idx), 1, 1, 1, generator=gen) - 0.5) * 0.1
        x[idx] = (x[idx] * brightness + shift).clamp(-1, 1)
    else:  # blur: local texture invariance for the color head
        x[idx] = F.avg_pool2d(x[idx], 3, stride=1, padding=1)
    return x


@dataclass
class ClassifierMetrics:
    head: str
    val_loss: float
    val_accuracy: float
    test_accuracy: float
    epochs: int
    n_train: int
    n_val: int
    n_test: int


def _to_float(images: np.ndarray) -> torch.Tensor:
    x = torch.from_numpy(images.astype(np.float32) / 127.5 - 1.0)
    return x.permute(0, 3, 1, 2).contiguous()


def train_classifier(config: ClassifierConfig) -> ClassifierMetrics:
    torch.manual_seed(config.seed)
    dataset = ImageDataset.from_manifest(config.manifest, resolution=config.resolution)
    targets = head_targets(dataset, config.head)
    num_classes = HEADS[config.head][0]

    n = len(dataset)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    n_val = max(1, int(n * config.val_fraction))
    n_test = max(1, int(n * config.test_fraction))
    val_idx, test_idx, train_idx = (order[:n_val], order[n_val:n_val + n_test],
                                    order[n_val + n_test:])

    images = _to_float(dataset.images)
    labels = torch.from_numpy(targets)
    model = SceneClassifier(num_classes)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(config.seed + 1)
    mode = HEAD_AUGMENT[config.head]

    def evaluate(idx) -> tuple[float, float]:
        model.eval()
        losses, correct = [], 0
        with torch.no_grad():
            for s in range(0, len(idx), config.batch_size):
                sel = idx[s:s + config.batch_size]
                logits = model(images[sel])
                losses.append(F.cross_entropy(logits, labels[sel]).item() * len(sel))
                correct += (logits.argmax(1) == labels[sel]).sum().item()
        return sum(losses) / len(idx), correct / len(idx)

    best_val = float("inf")
    best_state = None
    best_epoch = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        perm = torch.randperm(len(train_idx), generator=gen).numpy()
        for s in range(0, len(train_idx), config.batch_size):
            sel = train_idx[perm[s:s + config.batch_size]]
            x = _augment(images[sel], mode, config.augment_prob, gen)
            loss = F.cross_entropy(model(x), labels[sel])
            opt.zero_grad()
            loss.backward()
            opt.step()
        val_loss, val_acc = evaluate(val_idx)
        if val_loss < best_val - 1e-5:
            best_val = val_loss
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if config.target_accuracy is not None and val_acc >= config.target_accuracy:
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            break
        if epoch - best_epoch >= config.patience:
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    val_loss, val_acc = evaluate(val_idx)
    _, test_acc = evaluate(test_idx)

    out_path = Path(config.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "state_dict": model.state_dict(),
        "head": config.head,
        "num_classes": num_classes,
        "resolution": config.resolution,
    }
    tmp = out_path.with_suffix(out_path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, out_path)
    metrics = ClassifierMetrics(
        head=config.head, val_loss=val_loss, val_accuracy=val_acc,
        test_accuracy=test_acc, epochs=epoch,
        n_train=len(train_idx), n_val=len(val_idx), n_test=len(test_idx))
    with open(out_path.with_suffix(".metrics.json"), "w", encoding="utf-8") as f:
        json.dump(metrics.__dict__, f, indent=2)
    return metrics


def load_classifier(path) -> tuple[SceneClassifier, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    model = SceneClassifier(payload["num_classes"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload


@torch.no_grad()
def classify_images(model: SceneClassifier, images: np.ndarray, head: str,
                    batch_size: int = 128) -> list[int]:
    """Predicted class values in evaluator convention (head-dependent base)."""
    lo = HEADS[head][1]
    x = _to_float(images)
    out = []
    for s in range(0, len(x), batch_size):
        logits = model(x[s:s + batch_size])
        out.extend((logits.argmax(1) + lo).tolist())
    return out
