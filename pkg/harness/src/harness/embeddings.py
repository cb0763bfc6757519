"""Condition-embedding export: per-class encoder outputs projected onto
their top two principal components."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .config import EmbedConfig
from .data import COLOR_NAMES
from .objectives import condition_spec_for
from .training import load_diffusion_checkpoint


def _class_names(field: str, n: int) -> list[str]:
    if field in ("count", "relation_sector"):
        return [str(v + 1) for v in range(n)]
    return list(COLOR_NAMES)


def pca_2d(embeddings: np.ndarray) -> np.ndarray:
    """Project rows onto the top-2 principal components (SVD on centered data)."""
    centered = embeddings - embeddings.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:2].T


@torch.no_grad()
def export_embeddings(config: EmbedConfig) -> Path:
    model, payload = load_diffusion_checkpoint(config.checkpoint)
    spec = condition_spec_for(payload["condition_fields"])
    out_path = Path(config.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("concept,class,pc1,pc2\n")
        for k, fld in enumerate(spec.fields):
            n = spec.classes_per_field[k]
            idx = torch.zeros((n, len(spec.fields)), dtype=torch.long)
            idx[:, k] = torch.arange(n)
            tokens = model.condition_encoder(idx)[:, k].numpy()
            proj = pca_2d(tokens)
            for name, (pc1, pc2) in zip(_class_names(fld, n), proj):
                f.write(f"{fld},{name},{pc1:.6f},{pc2:.6f}\n")
    return out_path
