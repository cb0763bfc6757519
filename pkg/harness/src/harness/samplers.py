"""Deterministic samplers: DDIM for score models, Euler ODE for flow models.
No guidance of any kind is applied."""

from __future__ import annotations

import numpy as np
import torch

from .objectives import CosineSchedule


def to_uint8(x: torch.Tensor) -> np.ndarray:
    """[-1, 1] float tensor (B, 3, H, W) -> (B, H, W, 3) uint8."""
    arr = ((x.clamp(-1, 1) + 1) * 127.5).round().to(torch.uint8)
    return arr.permute(0, 2, 3, 1).cpu().numpy()


@torch.no_grad()
def ddim_sample(model, class_indices: torch.Tensor, resolution: int, steps: int,
                seed: int, schedule: CosineSchedule | None = None) -> torch.Tensor:
    """Deterministic DDIM (eta = 0) from pure noise."""
    schedule = schedule or CosineSchedule()
    n = class_indices.shape[0]
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(n, 3, resolution, resolution, generator=gen)
    taus = torch.linspace(schedule.T, 0, steps + 1).round().long()
    for i in range(steps):
        t_cur, t_next = int(taus[i]), int(taus[i + 1])
        ab_cur = schedule.alpha_bar[t_cur]
        ab_next = schedule.alpha_bar[t_next]
        t_in = torch.full((n,), t_cur / schedule.T, dtype=x.dtype)
        eps = model(x, t_in, class_indices)
        x0 = (x - (1 - ab_cur).sqrt() * eps) / ab_cur.sqrt()
        x0 = x0.clamp(-1.5, 1.5)
        x = ab_next.sqrt() * x0 + (1 - ab_next).sqrt() * eps
    return x


@torch.no_grad()
def flow_sample(model, class_indices: torch.Tensor, resolution: int, steps: int,
                seed: int, t_max: float = 0.999) -> torch.Tensor:
    """Euler integration of the interpolation-path ODE from t_max down to 0.

    The network predicts the injected noise; the clean-sample estimate
    (z_t - t * eps) / (1 - t) re-anchors each Euler step.
    """
    n = class_indices.shape[0]
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(n, 3, resolution, resolution, generator=gen)
    ts = torch.linspace(t_max, 0.0, steps + 1)
    for i in range(steps):
        t_cur, t_next = float(ts[i]), float(ts[i + 1])
        t_in = torch.full((n,), t_cur, dtype=x.dtype)
        eps = model(x, t_in, class_indices)
        x0 = (x - t_cur * eps) / (1 - t_cur)
        x0 = x0.clamp(-1.5, 1.5)
        x = (1 - t_next) * x0 + t_next * eps
    return x


def sample_batch(model, objective: str, class_indices: torch.Tensor, resolution: int,
                 steps: int, seed: int) -> np.ndarray:
    model.eval()
    if objective == "rectified_flow":
        x = flow_sample(model, class_indices, resolution, steps, seed)
    else:
        x = ddim_sample(model, class_indices, resolution, steps, seed)
    return to_uint8(x)
