"""Evaluation mathematics: the accuracy family, confusion matrices, exact
nearest-neighbor search over pixels, and the memorization rate.

Distances are sums of squared 8-bit differences accumulated exactly: every
intermediate value is an integer below 2**53, so float64 matrix products are
exact and the optimized kernel is bit-equal to a naive double loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .dataio import HEAD_RANGES, PredictionRecord, ValidationError
from .scene import COLOR_INDEX, COLOR_NAMES, ConditionLabel


# --- accuracy family ---------------------------------------------------------


def head_true_value(head: str, label: ConditionLabel) -> int:
    """Class index of the ground-truth condition under the given head."""
    if head == "count":
        if label.count is None:
            raise ValidationError("record lacks a count condition")
        return label.count
    if head == "relation":
        if label.relation_sector is None:
            raise ValidationError("record lacks a relation condition")
        return label.relation_sector
    if head == "attribution":
        if label.sphere_color is None or label.cube_color is None:
            raise ValidationError("record lacks an attribution condition")
        return COLOR_INDEX[label.sphere_color] * 10 + COLOR_INDEX[label.cube_color]
    if head == "color":
        if label.object_color is None:
            raise ValidationError("record lacks a color condition")
        return COLOR_INDEX[label.object_color]
    raise ValidationError(f"unknown head {head!r}")


def head_class_names(head: str) -> list[str]:
    lo, hi = HEAD_RANGES[head]
    if head == "attribution":
        return [f"{s}_{c}" for s in COLOR_NAMES for c in COLOR_NAMES]
    if head == "color":
        return list(COLOR_NAMES)
    return [str(v) for v in range(lo, hi + 1)]


def _head_index(head: str, value: int) -> int:
    lo, _ = HEAD_RANGES[head]
    return value - lo


@dataclass
class AccuracyReport:
    head: str
    overall: float
    per_class: dict[str, float]
    per_class_n: dict[str, int]
    confusion: np.ndarray  # rows = true class, cols = predicted class
    class_names: list[str]
    n: int
    n_null: int

    def confusion_rows(self) -> Iterable[tuple[str, str, int]]:
        for i, j in zip(*np.nonzero(self.confusion)):
            yield self.class_names[i], self.class_names[j], int(self.confusion[i, j])


def accuracy(records: Sequence[PredictionRecord], head: str) -> AccuracyReport:
    """Fraction of records whose predicted head equals the conditioning label.

    Null predictions (unreadable generations) count as incorrect and are kept
    out of the confusion matrix.
    """
    if not records:
        raise ValidationError("accuracy is undefined for an empty prediction set")
    names = head_class_names(head)
    k = len(names)
    confusion = np.zeros((k, k), dtype=np.int64)
    correct = 0
    n_null = 0
    class_total: dict[int, int] = {}
    class_correct: dict[int, int] = {}
    for record in records:
        if head not in record.predicted:
            raise ValidationError(f"record {record.id!r} lacks head {head!r}")
        true_idx = _head_index(head, head_true_value(head, record.true_labels))
        pred = record.predicted[head]
        class_total[true_idx] = class_total.get(true_idx, 0) + 1
        if pred is None:
            n_null += 1
            continue
        pred_idx = _head_index(head, pred)
        confusion[true_idx, pred_idx] += 1
        if pred_idx == true_idx:
            correct += 1
            class_correct[true_idx] = class_correct.get(true_idx, 0) + 1
    per_class = {names[i]: class_correct.get(i, 0) / t for i, t in sorted(class_total.items())}
    per_class_n = {names[i]: t for i, t in sorted(class_total.items())}
    return AccuracyReport(
        head=head,
        overall=correct / len(records),
        per_class=per_class,
        per_class_n=per_class_n,
        confusion=confusion,
        class_names=names,
        n=len(records),
        n_null=n_null,
    )


def joint_accuracy(records: Sequence[PredictionRecord], heads: Sequence[str]) -> float:
    """Fraction of records where every listed head is simultaneously correct."""
    if not records:
        raise ValidationError("joint accuracy is undefined for an empty prediction set")
    if not heads:
        raise ValidationError("joint accuracy needs at least one head")
    hit = 0
    for record in records:
        ok = True
        for head in heads:
            if head not in record.predicted:
                raise ValidationError(f"record {record.id!r} lacks head {head!r}")
            if record.predicted[head] != head_true_value(head, record.true_labels):
                ok = False
        hit += ok
    return hit / len(records)


# --- nearest-neighbor engine ---------------------------------------------------


@dataclass(frozen=True)
class NeighborResult:
    generated_id: str
    d1: float
    d2: float
    nearest_index: int
    ratio: float
    ss1: int  # exact squared distances behind d1/d2
    ss2: int


@dataclass(frozen=True)
class MemorizationConfig:
    k: float = 1.0 / 3.0
    downsample_to: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.k < 1:
            raise ValueError("memorization threshold k must be in (0, 1)")


def _as_matrix(images) -> np.ndarray:
    arr = np.asarray(images)
    if arr.dtype != np.uint8:
        raise ValidationError("pixel distance space expects 8-bit images")
    return arr.reshape(arr.shape[0], -1)


def nn_search(generated_images, training_images,
              generated_ids: Optional[Sequence[str]] = None,
              block_size: int = 512) -> list[NeighborResult]:
    """Exact nearest and second-nearest training-image pixel distances.

    Blocked over the training set; per-block squared distances come from one
    float64 matrix product (exact for 8-bit inputs), and the running best
    pair per generated image is merged block by block.
    """
    gen = _as_matrix(generated_images)
    train = _as_matrix(training_images)
    if gen.shape[1] != train.shape[1]:
        raise ValidationError(
            f"dimension mismatch: generated {gen.shape[1]} vs training {train.shape[1]}")
    n_gen, n_train = gen.shape[0], train.shape[0]
    if n_train < 2:
        raise ValidationError("need at least two training images for d1/d2")
    if generated_ids is None:
        generated_ids = [str(i) for i in range(n_gen)]

    gen_f = gen.astype(np.float64)
    g2 = np.einsum("ij,ij->i", gen_f, gen_f)
    ss1 = np.full(n_gen, np.inf)
    ss2 = np.full(n_gen, np.inf)
    idx1 = np.full(n_gen, -1, dtype=np.int64)

    for start in range(0, n_train, block_size):
        block = train[start:start + block_size].astype(np.float64)
        t2 = np.einsum("ij,ij->i", block, block)
        cross = gen_f @ block.T
        dist = g2[:, None] + t2[None, :] - 2.0 * cross  # exact integers
        if dist.shape[1] == 1:
            b1 = dist[:, 0]
            b2 = np.full(n_gen, np.inf)
            bmin = np.zeros(n_gen, dtype=np.int64)
        else:
            two = np.partition(dist, 1, axis=1)[:, :2]
            two.sort(axis=1)
            b1, b2 = two[:, 0], two[:, 1]
            bmin = np.argmin(dist, axis=1)
        improved = b1 < ss1  # strict: earlier training index wins ties
        idx1 = np.where(improved, start + bmin, idx1)
        merged = np.sort(np.stack([ss1, ss2, b1, b2], axis=1), axis=1)
        ss1, ss2 = merged[:, 0], merged[:, 1]

    results = []
    for i in range(n_gen):
        s1, s2 = int(ss1[i]), int(ss2[i])
        ratio = 0.0 if s2 == 0 else math.sqrt(s1 / s2)
        results.append(NeighborResult(
            generated_id=str(generated_ids[i]),
            d1=math.sqrt(s1),
            d2=math.sqrt(s2),
            nearest_index=int(idx1[i]),
            ratio=ratio,
            ss1=s1,
            ss2=s2,
        ))
    return results


def downsample_area(images: np.ndarray, out_side: int) -> np.ndarray:
    """Area-average square images down to out_side (must divide the input)."""
    arr = np.asarray(images)
    n, h, w, c = arr.shape
    if h != w or h % out_side != 0:
        raise ValidationError(f"cannot area-average {h}x{w} down to {out_side}")
    f = h // out_side
    small = arr.reshape(n, out_side, f, out_side, f, c).mean(axis=(2, 4))
    return np.floor(small + 0.5).astype(np.uint8)


def memorization_rate(results: Sequence[NeighborResult],
                      config: MemorizationConfig = MemorizationConfig(),
                      ) -> tuple[float, list[bool]]:
    """A sample is memorized iff its nearest/second-nearest distance ratio is
    below the threshold; the rate is the memorized fraction."""
    if not results:
        raise ValidationError("memorization rate is undefined for an empty result set")
    flags = [r.ratio < config.k for r in results]
    return sum(flags) / len(flags), flags


# --- distance histograms --------------------------------------------------------


@dataclass
class HistogramReport:
    bin_edges: np.ndarray
    per_label: dict[str, np.ndarray] = field(default_factory=dict)
    mean_d1: float = 0.0


def distance_histograms(results: Sequence[NeighborResult],
                        labels_by_id: dict[str, str],
                        bins: int = 30) -> HistogramReport:
    """Per-label histograms of the nearest-training distance d1, binned on a
    shared [0, max d1] grid, plus the global mean d1."""
    if not results:
        raise ValidationError("no neighbor results to histogram")
    missing = [r.generated_id for r in results if r.generated_id not in labels_by_id]
    if missing:
        raise ValidationError(f"results without a condition label: {missing[:5]}")
    d1 = np.array([r.d1 for r in results])
    top = float(d1.max())
    edges = np.linspace(0.0, top if top > 0 else 1.0, bins + 1)
    report = HistogramReport(bin_edges=edges, mean_d1=float(d1.mean()))
    by_label: dict[str, list[float]] = {}
    for r in results:
        by_label.setdefault(labels_by_id[r.generated_id], []).append(r.d1)
    for label in sorted(by_label):
        counts, _ = np.histogram(np.array(by_label[label]), bins=edges)
        report.per_label[label] = counts
    return report
