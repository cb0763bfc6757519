"""Training objectives: noise-prediction score matching on a discrete cosine
schedule, and the rectified-flow variant on the linear interpolation path
with a time-dependent weight (unit weight by default)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .config import ConditionSpec
from .data import COLOR_INDEX, Condition


@dataclass
class CosineSchedule:
    """Discrete alpha-bar schedule, squared-cosine shaped."""

    T: int = 1000
    s: float = 0.008

    def __post_init__(self):
        steps = torch.arange(self.T + 1, dtype=torch.float64)
        f = torch.cos(((steps / self.T) + self.s) / (1 + self.s) * math.pi / 2) ** 2
        alpha_bar = (f / f[0]).clamp(min=1e-8)
        self.alpha_bar = alpha_bar.to(torch.float32)  # index by timestep 0..T

    def gather(self, t_idx: torch.Tensor) -> torch.Tensor:
        return self.alpha_bar.to(t_idx.device)[t_idx]


def ddpm_noise(x0: torch.Tensor, t_idx: torch.Tensor, schedule: CosineSchedule,
               eps: torch.Tensor) -> torch.Tensor:
    """Noised sample at discrete timestep t_idx (0 = clean end)."""
    ab = schedule.gather(t_idx).view(-1, 1, 1, 1).to(x0.dtype)
    return ab.sqrt() * x0 + (1 - ab).sqrt() * eps


def flow_noise(x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Linear interpolation path: t=0 is data, t=1 is noise."""
    tt = t.view(-1, 1, 1, 1).to(x0.dtype)
    return (1 - tt) * x0 + tt * eps


def score_matching_loss(model, z_t: torch.Tensor, t: torch.Tensor,
                        eps: torch.Tensor, class_indices: torch.Tensor) -> torch.Tensor:
    """Mean squared error between the injected and predicted noise."""
    pred = model(z_t, t, class_indices)
    return ((pred - eps) ** 2).mean()


def rectified_flow_loss(model, z_t: torch.Tensor, t: torch.Tensor,
                        eps: torch.Tensor, class_indices: torch.Tensor,
                        w: torch.Tensor | float = 1.0) -> torch.Tensor:
    """Time-weighted noise-prediction loss on the interpolation path.

    With w identically 1 this is numerically equal to the score-matching
    loss evaluated on the same (z_t, t, eps) batch.
    """
    pred = model(z_t, t, class_indices)
    if isinstance(w, torch.Tensor):
        w = w.view(-1, 1, 1, 1).to(z_t.dtype)
    return (w * (pred - eps) ** 2).mean()


def sample_flow_times(batch: int, sampling: str, generator: torch.Generator) -> torch.Tensor:
    if sampling == "logit_normal":
        u = torch.randn(batch, generator=generator)
        return torch.sigmoid(u)
    return torch.rand(batch, generator=generator)


# --- condition indexing --------------------------------------------------------


def condition_spec_for(fields: list[str]) -> ConditionSpec:
    return ConditionSpec(fields=tuple(fields), classes_per_field=tuple(10 for _ in fields))


def condition_class_indices(conditions: list[Condition],
                            spec: ConditionSpec) -> torch.Tensor:
    """(N, n_concepts) long tensor of per-concept class indices."""
    rows = []
    for cond in conditions:
        labels = cond.labels()
        row = []
        for f in spec.fields:
            value = labels.get(f)
            if value is None:
                raise ValueError(f"condition {cond.slug()!r} lacks field {f!r}")
            if f == "count":
                row.append(int(value) - 1)
            elif f == "relation_sector":
                row.append(int(value) - 1)
            else:
                row.append(COLOR_INDEX[value])
        rows.append(row)
    return torch.tensor(rows, dtype=torch.long)
