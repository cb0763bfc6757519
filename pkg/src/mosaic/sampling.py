"""Dataset planning and scene sampling.

A dataset is a pure function of its config: sample i draws from an RNG
stream keyed by (config.seed, i), so generation order and worker count can
never change the output.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

import numpy as np

from .scene import (
    BROWN,
    COLOR_NAMES,
    DEFAULT_MAX_COUNT,
    NUM_COLORS,
    NUM_SECTORS,
    OBJECT_RADIUS,
    OVERLAP_MARGIN,
    ConditionLabel,
    SceneObject,
    SceneSpec,
    Shape,
    Task,
    Variant,
    angle_to_direction,
    diagonal_index,
    sector_interval,
)


class ConfigError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


class Distribution(str, Enum):
    UNIFORM = "uniform"
    SKEWED = "skewed"


# Canonical skew weights (per-100k allocation); scaled to other sizes by
# largest-remainder rounding. Class 0 is the most frequent.
SKEW_WEIGHTS = (22550, 17950, 14350, 11450, 9150, 7300, 5850, 4650, 3750, 3000)
SKEW_WEIGHT_TOTAL = 100000

MAX_PLACEMENT_ATTEMPTS = 10000

# Relation-scene distances and the radial band used by grid layouts.
RELATION_DISTANCE = (0.15, 0.35)
GRID_RADIUS_BAND = (0.18, 0.42)
GRID_RADIUS_JITTER = 0.03
GRID_ANGLE_JITTER_DEG = 4.0

# Keeps sampled angles strictly inside their closed-open sector interval so
# the float round-trip through scene coordinates can never cross a boundary.
ANGLE_EPS_DEG = 1e-4

DEFAULT_COUNTING_COLOR = "GRAY"
DEFAULT_RELATION_TARGET_COLOR = "RED"


def _round9(x: float) -> float:
    """Canonical 9-significant-digit coordinate rounding (see dataset IO)."""
    return float(f"{x:.9g}")


@dataclass(frozen=True)
class DatasetConfig:
    task: Task
    variant: Variant
    size: int
    distribution: Distribution = Distribution.UNIFORM
    diagonals_removed: int = 0
    resolution: int = 128
    seed: int = 0
    max_count: int = DEFAULT_MAX_COUNT
    output_dir: str = "dataset"
    # Divergence knobs; defaults match the canonical layouts.
    counting_color: str = DEFAULT_COUNTING_COLOR
    relation_target_color: str = DEFAULT_RELATION_TARGET_COLOR

    def violations(self) -> list[str]:
        """All config rule violations, collected (not fail-fast)."""
        problems = []
        if self.size <= 0:
            problems.append("size must be positive")
        if self.resolution <= 0:
            problems.append("resolution must be positive")
        if not 1 <= self.max_count <= 20:
            problems.append("max_count must be in 1..20")
        if self.task is Task.ATTRIBUTION and self.variant is Variant.GRID:
            problems.append("attribution has no grid variant")
        if self.task is Task.COUNTING and self.variant is Variant.COMPLEX:
            problems.append("counting has no complex variant (base already spans 1..10 objects)")
        if self.task is Task.ATTRIBUTION and self.variant is Variant.COMPOSITION:
            problems.append("attribution is already a two-concept task; use base")
        if not 0 <= self.diagonals_removed <= 9:
            problems.append("diagonals_removed must be in 0..9")
        if self.diagonals_removed > 0 and not self._has_concept_grid():
            problems.append("hold-out requires a composition grid "
                            "(attribution base, or counting/relations composition)")
        if self.diagonals_removed > 0 and self.distribution is Distribution.SKEWED:
            problems.append("hold-out settings require a uniform distribution over seen cells")
        if self.distribution is Distribution.SKEWED:
            if self._num_marginal_classes() != 10:
                problems.append("skewed distribution requires a 10-class marginal")
            if self.size < 10:
                problems.append("size below class count")
        if self.task is Task.COUNTING and self.variant is Variant.GRID \
                and self.max_count > NUM_SECTORS:
            problems.append("grid counting supports at most 10 objects (one sector each)")
        if self._has_concept_grid():
            cells = NUM_COLORS * (NUM_COLORS - self.diagonals_removed)
            if self.size < cells and self.distribution is Distribution.UNIFORM:
                problems.append(f"size below seen-cell count ({cells})")
        elif self.size < self._num_marginal_classes():
            problems.append("size below class count")
        if self.counting_color not in COLOR_NAMES:
            problems.append(f"counting_color {self.counting_color!r} not in palette")
        if self.relation_target_color not in COLOR_NAMES:
            problems.append(f"relation_target_color {self.relation_target_color!r} not in palette")
        return problems

    def _has_concept_grid(self) -> bool:
        if self.task is Task.ATTRIBUTION and self.variant in (Variant.BASE, Variant.COMPLEX):
            return True
        return self.variant is Variant.COMPOSITION

    def _num_marginal_classes(self) -> int:
        if self.task is Task.COUNTING:
            return self.max_count
        return 10

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass(frozen=True)
class ClassAllocation:
    counts: tuple[int, ...]
    total: int


@dataclass(frozen=True)
class HoldoutPlan:
    n: int
    removed_diagonals: frozenset[int]
    per_cell: int
    seen_mask: tuple[tuple[bool, ...], ...]
    realized_total: int

    def is_seen(self, i: int, j: int) -> bool:
        return self.seen_mask[i][j]


def allocate_counts(distribution: Distribution, total: int, num_classes: int) -> ClassAllocation:
    """Per-class sample counts for a single-concept marginal.

    SKEWED scales the canonical weight table by largest-remainder rounding
    (ties broken by ascending class index); UNIFORM floor-divides and gives
    the remainder to the lowest class indices.
    """
    if total < num_classes:
        raise ConfigError(f"total {total} below class count {num_classes}")
    if distribution is Distribution.SKEWED:
        if num_classes != 10:
            raise ConfigError("skewed allocation is defined for exactly 10 classes")
        base = [w * total // SKEW_WEIGHT_TOTAL for w in SKEW_WEIGHTS]
        remainders = [w * total % SKEW_WEIGHT_TOTAL for w in SKEW_WEIGHTS]
        leftover = total - sum(base)
        for c in sorted(range(num_classes), key=lambda c: (-remainders[c], c))[:leftover]:
            base[c] += 1
        counts = tuple(base)
    else:
        q, r = divmod(total, num_classes)
        counts = tuple(q + (1 if c < r else 0) for c in range(num_classes))
    assert sum(counts) == total
    return ClassAllocation(counts=counts, total=total)


def build_holdout_plan(n: int, k: int, budget: int) -> HoldoutPlan:
    """Equal per-cell budget over the seen cells of an n-by-n grid with the
    first k diagonals removed."""
    if not 0 <= k < n:
        raise ConfigError(f"k must be in 0..{n - 1}")
    seen_cells = n * (n - k)
    if budget < seen_cells:
        raise ConfigError(f"budget {budget} below seen-cell count {seen_cells}")
    per_cell = budget // seen_cells
    mask = tuple(
        tuple(diagonal_index(i, j, n) > k for j in range(n))
        for i in range(n)
    )
    return HoldoutPlan(
        n=n,
        removed_diagonals=frozenset(range(1, k + 1)),
        per_cell=per_cell,
        seen_mask=mask,
        realized_total=per_cell * seen_cells,
    )


# --- per-scene samplers -----------------------------------------------------


def _place_free(rng: np.random.Generator, placed: list[tuple[float, float, float]],
                radius: float) -> tuple[float, float]:
    """Uniform position with the whole object inside the canvas and no overlap."""
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        x = rng.uniform(radius, 1 - radius)
        y = rng.uniform(radius, 1 - radius)
        if all(math.hypot(x - px, y - py) >= radius + pr + OVERLAP_MARGIN
               for px, py, pr in placed):
            return x, y
    raise GenerationError("could not place object without overlap")


def _wedge_point(rng: np.random.Generator, sector: int) -> tuple[float, float]:
    """(angle, radius) of a grid-cell point: wedge interior plus jitter."""
    lo, hi = sector_interval(sector)
    jit = GRID_ANGLE_JITTER_DEG
    angle = rng.uniform(lo + jit + ANGLE_EPS_DEG, hi - jit - ANGLE_EPS_DEG)
    angle += rng.uniform(-jit, jit)
    r_lo, r_hi = GRID_RADIUS_BAND
    radius = rng.uniform(r_lo + GRID_RADIUS_JITTER, r_hi - GRID_RADIUS_JITTER)
    radius += rng.uniform(-GRID_RADIUS_JITTER, GRID_RADIUS_JITTER)
    return angle, radius


def _obj(shape: Shape, color: str, x: float, y: float) -> SceneObject:
    return SceneObject(shape=shape, color=color,
                       x=_round9(x), y=_round9(y), radius=OBJECT_RADIUS)


def sample_attribution_scene(config: DatasetConfig, label: ConditionLabel,
                             rng: np.random.Generator, seed: int,
                             n_objects: Optional[int] = None) -> SceneSpec:
    """One colored sphere plus one colored cube; the complex variant pads the
    scene with duplicates of those two identities."""
    label.validate(Task.ATTRIBUTION, config.variant, config.max_count)
    identities = [(Shape.SPHERE, label.sphere_color), (Shape.CUBE, label.cube_color)]
    if config.variant is Variant.COMPLEX:
        total = n_objects if n_objects is not None else int(rng.integers(2, 11))
        if not 2 <= total <= 10:
            raise GenerationError(f"complex attribution total {total} outside 2..10")
    else:
        total = 2
    placed: list[tuple[float, float, float]] = []
    objects = []
    for m in range(total):
        shape, color = identities[m] if m < 2 else identities[int(rng.integers(0, 2))]
        x, y = _place_free(rng, placed, OBJECT_RADIUS)
        placed.append((x, y, OBJECT_RADIUS))
        objects.append(_obj(shape, color, x, y))
    return SceneSpec(task=Task.ATTRIBUTION, variant=config.variant, labels=label,
                     objects=tuple(objects), seed=seed)


def sample_relation_scene(config: DatasetConfig, label: ConditionLabel,
                          rng: np.random.Generator, seed: int,
                          n_objects: Optional[int] = None) -> SceneSpec:
    """Brown reference sphere plus a target sphere inside the labeled sector.

    Base fixes the target color; composition takes it from the label; complex
    adds distractor spheres; grid pins the reference to the canvas center.
    """
    label.validate(Task.SPATIAL_RELATIONS, config.variant, config.max_count)
    sector = label.relation_sector
    target_color = (label.object_color if config.variant is Variant.COMPOSITION
                    else config.relation_target_color)
    r = OBJECT_RADIUS

    if config.variant is Variant.GRID:
        ref_x, ref_y = 0.5, 0.5
        theta, dist = _wedge_point(rng, sector)
    else:
        lo, hi = sector_interval(sector)
        theta = rng.uniform(lo + ANGLE_EPS_DEG, hi - ANGLE_EPS_DEG)
        dist = rng.uniform(*RELATION_DISTANCE)
        dx, dy = angle_to_direction(theta)
        off_x, off_y = dist * dx, dist * dy
        ref_x = rng.uniform(max(r, r - off_x), min(1 - r, 1 - r - off_x))
        ref_y = rng.uniform(max(r, r - off_y), min(1 - r, 1 - r - off_y))
    dx, dy = angle_to_direction(theta)
    tgt_x, tgt_y = ref_x + dist * dx, ref_y + dist * dy

    objects = [_obj(Shape.SPHERE, BROWN, ref_x, ref_y),
               _obj(Shape.SPHERE, target_color, tgt_x, tgt_y)]
    placed = [(ref_x, ref_y, r), (tgt_x, tgt_y, r)]

    if config.variant is Variant.COMPLEX:
        total = n_objects if n_objects is not None else int(rng.integers(2, 11))
        if not 2 <= total <= 10:
            raise GenerationError(f"complex relation total {total} outside 2..10")
        distractor_color = "GRAY" if target_color == "BLUE" else "BLUE"
        for _ in range(total - 2):
            x, y = _place_free(rng, placed, r)
            placed.append((x, y, r))
            objects.append(_obj(Shape.SPHERE, distractor_color, x, y))

    return SceneSpec(task=Task.SPATIAL_RELATIONS, variant=config.variant, labels=label,
                     objects=tuple(objects), seed=seed)


def sample_counting_scene(config: DatasetConfig, label: ConditionLabel,
                          rng: np.random.Generator, seed: int) -> SceneSpec:
    """Exactly `count` same-colored spheres; the grid variant pins object m
    to the annular wedge of sector m."""
    label.validate(Task.COUNTING, config.variant, config.max_count)
    count = label.count
    color = (label.object_color if config.variant is Variant.COMPOSITION
             else config.counting_color)
    r = OBJECT_RADIUS
    placed: list[tuple[float, float, float]] = []
    objects = []
    for m in range(1, count + 1):
        if config.variant is Variant.GRID:
            for _ in range(MAX_PLACEMENT_ATTEMPTS):
                angle, dist = _wedge_point(rng, m)
                dx, dy = angle_to_direction(angle)
                x, y = 0.5 + dist * dx, 0.5 + dist * dy
                if all(math.hypot(x - px, y - py) >= 2 * r + OVERLAP_MARGIN
                       for px, py, _ in placed):
                    break
            else:
                raise GenerationError(f"could not place grid object in sector {m}")
        else:
            x, y = _place_free(rng, placed, r)
        placed.append((x, y, r))
        objects.append(_obj(Shape.SPHERE, color, x, y))
    return SceneSpec(task=Task.COUNTING, variant=config.variant, labels=label,
                     objects=tuple(objects), seed=seed)


# --- whole-dataset planning -------------------------------------------------


@dataclass(frozen=True)
class DatasetPlan:
    """Deterministic index -> condition mapping for one config."""

    config: DatasetConfig
    cells: tuple[tuple[ConditionLabel, int], ...]  # (label, sample count) per seen cell
    unseen_labels: tuple[ConditionLabel, ...]
    cumulative: tuple[int, ...] = field(default=())

    def __post_init__(self):
        acc, cum = 0, []
        for _, c in self.cells:
            acc += c
            cum.append(acc)
        object.__setattr__(self, "cumulative", tuple(cum))

    @property
    def total(self) -> int:
        return self.cumulative[-1] if self.cumulative else 0

    def label_for_index(self, index: int) -> ConditionLabel:
        if not 0 <= index < self.total:
            raise IndexError(index)
        return self.cells[bisect_right(self.cumulative, index)][0]


def _attribution_labels() -> list[tuple[int, int, ConditionLabel]]:
    out = []
    for i, sphere in enumerate(COLOR_NAMES):
        for j, cube in enumerate(COLOR_NAMES):
            out.append((i, j, ConditionLabel(sphere_color=sphere, cube_color=cube)))
    return out


def _composition_labels(task: Task, max_count: int) -> list[tuple[int, int, ConditionLabel]]:
    out = []
    for i in range(NUM_COLORS):
        for j, color in enumerate(COLOR_NAMES):
            if task is Task.COUNTING:
                lab = ConditionLabel(count=i + 1, object_color=color)
            else:
                lab = ConditionLabel(relation_sector=i + 1, object_color=color)
            out.append((i, j, lab))
    return out


def _marginal_labels(config: DatasetConfig) -> list[ConditionLabel]:
    if config.task is Task.COUNTING:
        return [ConditionLabel(count=c) for c in range(1, config.max_count + 1)]
    if config.task is Task.SPATIAL_RELATIONS:
        return [ConditionLabel(relation_sector=s) for s in range(1, NUM_SECTORS + 1)]
    raise ConfigError(f"{config.task} has no single-concept marginal")


def plan_dataset(config: DatasetConfig) -> DatasetPlan:
    config.validate()
    has_grid = (config.task is Task.ATTRIBUTION
                or config.variant is Variant.COMPOSITION)
    if has_grid:
        if config.task is Task.ATTRIBUTION:
            grid_labels = _attribution_labels()
        else:
            grid_labels = _composition_labels(config.task, config.max_count)
        if config.distribution is Distribution.SKEWED:
            # Imbalance on the row concept (sphere color); columns stay uniform.
            rows = allocate_counts(Distribution.SKEWED, config.size, NUM_COLORS)
            cells = []
            for i, j, lab in grid_labels:
                row_alloc = allocate_counts(Distribution.UNIFORM, rows.counts[i], NUM_COLORS)
                cells.append((lab, row_alloc.counts[j]))
            return DatasetPlan(config=config, cells=tuple(cells), unseen_labels=())
        plan = build_holdout_plan(NUM_COLORS, config.diagonals_removed, config.size)
        cells = [(lab, plan.per_cell) for i, j, lab in grid_labels if plan.is_seen(i, j)]
        unseen = tuple(lab for i, j, lab in grid_labels if not plan.is_seen(i, j))
        return DatasetPlan(config=config, cells=tuple(cells), unseen_labels=unseen)

    labels = _marginal_labels(config)
    alloc = allocate_counts(config.distribution, config.size, len(labels))
    cells = [(lab, n) for lab, n in zip(labels, alloc.counts)]
    return DatasetPlan(config=config, cells=tuple(cells), unseen_labels=())


def sample_seed(config_seed: int, index: int) -> int:
    """64-bit per-sample seed; the only coupling between samples is the pair
    (config seed, sample index)."""
    ss = np.random.SeedSequence(entropy=config_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def sample_scene(config: DatasetConfig, label: ConditionLabel, seed: int) -> SceneSpec:
    rng = np.random.default_rng(seed)
    if config.task is Task.ATTRIBUTION:
        return sample_attribution_scene(config, label, rng, seed)
    if config.task is Task.SPATIAL_RELATIONS:
        return sample_relation_scene(config, label, rng, seed)
    return sample_counting_scene(config, label, rng, seed)


def sample_item(config: DatasetConfig, plan: DatasetPlan, index: int) -> SceneSpec:
    return sample_scene(config, plan.label_for_index(index), sample_seed(config.seed, index))


def build_dataset(config: DatasetConfig) -> Iterator[tuple[ConditionLabel, SceneSpec]]:
    """Stream (label, scene) pairs in canonical index order."""
    plan = plan_dataset(config)
    for index in range(plan.total):
        scene = sample_item(config, plan, index)
        yield scene.labels, scene
