"""Core scene types: palette, shapes, angular sectors, concept-grid diagonals.

Everything in this module is a pure value or a pure function; all other
modules (sampling, rendering, metrics, the external training harness) agree
on these constants bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

# Canonical ordered palette. Index order is load-bearing: it fixes class
# indices for sampling, skew allocation, hold-out grids and classifiers.
PALETTE = (
    ("RED", (220, 50, 47)),
    ("GREEN", (40, 160, 60)),
    ("BLUE", (30, 90, 220)),
    ("YELLOW", (235, 210, 40)),
    ("PURPLE", (130, 60, 180)),
    ("ORANGE", (240, 140, 30)),
    ("CYAN", (40, 200, 210)),
    ("GRAY", (128, 128, 128)),
    ("WHITE", (245, 245, 245)),
    ("BLACK", (25, 25, 25)),
)

COLOR_NAMES = tuple(name for name, _ in PALETTE)
COLOR_INDEX = {name: i for i, name in enumerate(COLOR_NAMES)}

# Out-of-palette reference color for spatial-relation scenes. Never a class label.
BROWN = "BROWN"
BROWN_RGB = (120, 80, 40)

NUM_COLORS = 10
NUM_SECTORS = 10

# Geometry constants (canonical unit-square coordinates, y grows downward).
OBJECT_RADIUS = 0.06
OVERLAP_MARGIN = 0.01
DEFAULT_MAX_COUNT = 10
ABSOLUTE_MAX_COUNT = 20


def color_rgb(name: str) -> tuple[int, int, int]:
    if name == BROWN:
        return BROWN_RGB
    return PALETTE[COLOR_INDEX[name]][1]


class Task(str, Enum):
    ATTRIBUTION = "attribution"
    SPATIAL_RELATIONS = "spatial_relations"
    COUNTING = "counting"


class Variant(str, Enum):
    BASE = "base"
    COMPLEX = "complex"
    GRID = "grid"
    COMPOSITION = "composition"


class Shape(str, Enum):
    SPHERE = "sphere"
    CUBE = "cube"


@dataclass(frozen=True)
class SceneObject:
    """One object in canonical coordinates; radius is the cube half-extent."""

    shape: Shape
    color: str  # palette name or BROWN
    x: float
    y: float
    radius: float

    def validate(self) -> None:
        if self.color != BROWN and self.color not in COLOR_INDEX:
            raise ValueError(f"unknown color {self.color!r}")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not (self.radius <= self.x <= 1 - self.radius
                and self.radius <= self.y <= 1 - self.radius):
            raise ValueError("object extends outside the unit square")


@dataclass(frozen=True)
class ConditionLabel:
    """Conditioning label; exactly the fields required by (task, variant) are set."""

    count: Optional[int] = None
    relation_sector: Optional[int] = None
    sphere_color: Optional[str] = None
    cube_color: Optional[str] = None
    object_color: Optional[str] = None

    def fields_present(self) -> tuple[str, ...]:
        return tuple(
            name for name in
            ("count", "relation_sector", "sphere_color", "cube_color", "object_color")
            if getattr(self, name) is not None
        )

    def validate(self, task: Task, variant: Variant, max_count: int = DEFAULT_MAX_COUNT) -> None:
        required = required_label_fields(task, variant)
        present = self.fields_present()
        if present != required:
            raise ValueError(
                f"label fields {present} do not match {required} required by "
                f"({task.value}, {variant.value})"
            )
        if self.count is not None and not 1 <= self.count <= max_count:
            raise ValueError(f"count {self.count} outside 1..{max_count}")
        if self.relation_sector is not None and not 1 <= self.relation_sector <= NUM_SECTORS:
            raise ValueError(f"relation_sector {self.relation_sector} outside 1..10")
        for name in ("sphere_color", "cube_color", "object_color"):
            value = getattr(self, name)
            if value is not None and value not in COLOR_INDEX:
                raise ValueError(f"{name} {value!r} is not a palette color")

    def key(self) -> tuple:
        """Hashable identity of the condition; used to join predictions to cells."""
        return tuple((f, getattr(self, f)) for f in self.fields_present())


def required_label_fields(task: Task, variant: Variant) -> tuple[str, ...]:
    if task is Task.ATTRIBUTION:
        return ("sphere_color", "cube_color")
    if task is Task.SPATIAL_RELATIONS:
        if variant is Variant.COMPOSITION:
            return ("relation_sector", "object_color")
        return ("relation_sector",)
    if task is Task.COUNTING:
        if variant is Variant.COMPOSITION:
            return ("count", "object_color")
        return ("count",)
    raise ValueError(f"unknown task {task}")


@dataclass(frozen=True)
class SceneSpec:
    """Exact geometric ground truth for one image.

    Object order is structural: relation scenes store [reference, target,
    *distractors]; attribution scenes store the sphere before the cube.
    """

    task: Task
    variant: Variant
    labels: ConditionLabel
    objects: tuple[SceneObject, ...]
    seed: int

    def validate(self, max_count: int = DEFAULT_MAX_COUNT) -> None:
        if not 1 <= len(self.objects) <= max(max_count, ABSOLUTE_MAX_COUNT):
            raise ValueError(f"scene has {len(self.objects)} objects")
        for obj in self.objects:
            obj.validate()
        for i in range(len(self.objects)):
            for j in range(i + 1, len(self.objects)):
                a, b = self.objects[i], self.objects[j]
                dist = math.hypot(a.x - b.x, a.y - b.y)
                if dist < a.radius + b.radius + OVERLAP_MARGIN:
                    raise ValueError(f"objects {i} and {j} overlap (distance {dist:.4f})")


# --- angular sectors -------------------------------------------------------
#
# Ten 18-degree sectors separated by 18-degree gaps, counterclockwise from
# the 3-o'clock axis. Sector s covers [36(s-1), 36(s-1)+18).

SECTOR_WIDTH_DEG = 18.0
SECTOR_PITCH_DEG = 36.0


def sector_interval(sector: int) -> tuple[float, float]:
    """Closed-open [lo, hi) degree interval of a sector in 1..10."""
    if not isinstance(sector, int) or not 1 <= sector <= NUM_SECTORS:
        raise ValueError(f"sector must be in 1..10, got {sector!r}")
    lo = SECTOR_PITCH_DEG * (sector - 1)
    return (lo, lo + SECTOR_WIDTH_DEG)


def sector_of_angle(theta_deg: float) -> Optional[int]:
    """Sector containing the angle, or None inside an inter-sector gap."""
    if not math.isfinite(theta_deg):
        raise ValueError("angle must be finite")
    theta = theta_deg % 360.0
    k = int(theta // SECTOR_PITCH_DEG)
    if theta - k * SECTOR_PITCH_DEG < SECTOR_WIDTH_DEG:
        return k + 1
    return None


def angle_to_direction(theta_deg: float) -> tuple[float, float]:
    """Unit direction for an angle, in image coordinates (y grows downward)."""
    rad = math.radians(theta_deg)
    return (math.cos(rad), -math.sin(rad))


def direction_to_angle(dx: float, dy: float) -> float:
    """Inverse of angle_to_direction, normalized to [0, 360)."""
    return math.degrees(math.atan2(-dy, dx)) % 360.0


# --- concept-grid diagonals ------------------------------------------------


def diagonal_index(i: int, j: int, n: int) -> int:
    """Generalized diagonal of cell (i, j) in an n-by-n concept grid, in 1..n.

    Cells with diagonal index <= k are the ones removed when k diagonals are
    held out; removal order starts at the main diagonal.
    """
    if not 0 <= i < n or not 0 <= j < n:
        raise ValueError(f"cell ({i}, {j}) outside {n}x{n} grid")
    return ((j - i) % n) + 1
