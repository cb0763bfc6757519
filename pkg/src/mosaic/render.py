"""Deterministic rasterization of scenes, and the inverse measurement that
re-derives condition labels from scene geometry.

Rendering is supersample-then-box-filter: shapes are painted at
`resolution * supersampling` with hard edges, then averaged down. The output
is a pure function of (scene, settings); no RNG, no platform-dependent paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image as PILImage

from .scene import (
    BROWN,
    ConditionLabel,
    SceneSpec,
    Shape,
    Task,
    Variant,
    color_rgb,
    direction_to_angle,
    sector_of_angle,
)

BACKGROUND_RGB = (200, 198, 195)

# Radial sphere shading: intensity = ambient + diffuse * sqrt(1 - (rho/r)^2).
SPHERE_AMBIENT = 0.55
SPHERE_DIFFUSE = 0.45
CUBE_BORDER_FACTOR = 0.6


class StructuralError(ValueError):
    pass


@dataclass(frozen=True)
class RenderSettings:
    resolution: int = 128
    supersampling: int = 4
    background: tuple[int, int, int] = BACKGROUND_RGB
    sphere_ambient: float = SPHERE_AMBIENT
    sphere_diffuse: float = SPHERE_DIFFUSE
    cube_border_factor: float = CUBE_BORDER_FACTOR

    def __post_init__(self):
        if self.supersampling < 1:
            raise ValueError("supersampling must be >= 1")
        if self.resolution * self.supersampling > 4096:
            raise ValueError("resolution * supersampling above the 4096 cap")


def render_scene(scene: SceneSpec, settings: RenderSettings = RenderSettings()) -> np.ndarray:
    """Render to an (R, R, 3) uint8 array.

    Only object bounding boxes (snapped to output-pixel tiles) are painted
    and box-filtered; everything else is the flat background, so cost scales
    with object area rather than canvas area.
    """
    res, ss = settings.resolution, settings.supersampling
    side = res * ss
    background = np.asarray(settings.background, dtype=np.float32)
    out = np.empty((res, res, 3), dtype=np.uint8)
    out[:] = np.floor(background + 0.5).astype(np.uint8)
    if not scene.objects:
        return out

    canvas = np.empty((side, side, 3), dtype=np.float32)
    regions = []  # output-pixel tiles covered by some object
    for obj in scene.objects:
        cx, cy, r = obj.x * side, obj.y * side, obj.radius * side
        ox0 = max(0, int(np.floor((cx - r - 1) / ss)))
        ox1 = min(res, int(np.ceil((cx + r + 1) / ss)))
        oy0 = max(0, int(np.floor((cy - r - 1) / ss)))
        oy1 = min(res, int(np.ceil((cy + r + 1) / ss)))
        if ox0 < ox1 and oy0 < oy1:
            regions.append((ox0, ox1, oy0, oy1))
            canvas[oy0 * ss:oy1 * ss, ox0 * ss:ox1 * ss] = background

    for obj in scene.objects:
        rgb = np.asarray(color_rgb(obj.color), dtype=np.float32)
        # Canonical [0,1] coords map to subpixel centers (i + 0.5) / side.
        cx, cy, r = obj.x * side, obj.y * side, obj.radius * side
        x0 = max(0, int(np.floor(cx - r - 1)))
        x1 = min(side, int(np.ceil(cx + r + 1)))
        y0 = max(0, int(np.floor(cy - r - 1)))
        y1 = min(side, int(np.ceil(cy + r + 1)))
        if x0 >= x1 or y0 >= y1:
            continue
        xs = np.arange(x0, x1, dtype=np.float32) + 0.5 - cx
        ys = np.arange(y0, y1, dtype=np.float32) + 0.5 - cy
        if obj.shape is Shape.SPHERE:
            rho2 = ys[:, None] ** 2 + xs[None, :] ** 2
            inside = rho2 <= r * r
            shade = settings.sphere_ambient + settings.sphere_diffuse * np.sqrt(
                np.maximum(0.0, 1.0 - rho2 / (r * r)))
            patch = canvas[y0:y1, x0:x1]
            patch[inside] = shade[inside, None] * rgb
        else:
            in_x = np.abs(xs) <= r
            in_y = np.abs(ys) <= r
            inside = in_y[:, None] & in_x[None, :]
            border = ss * 1.0  # one output pixel
            core_x = np.abs(xs) <= r - border
            core_y = np.abs(ys) <= r - border
            core = core_y[:, None] & core_x[None, :]
            patch = canvas[y0:y1, x0:x1]
            patch[inside] = rgb * settings.cube_border_factor
            patch[core] = rgb

    for ox0, ox1, oy0, oy1 in regions:
        block = canvas[oy0 * ss:oy1 * ss, ox0 * ss:ox1 * ss]
        if ss > 1:
            block = block.reshape(oy1 - oy0, ss, ox1 - ox0, ss, 3).mean(axis=(1, 3))
        out[oy0:oy1, ox0:ox1] = np.floor(block + 0.5).clip(0, 255).astype(np.uint8)
    return out


def save_png(image: np.ndarray, path) -> None:
    # fixed low compression level: these synthetic images barely compress
    # further at higher levels, and the level must never vary (byte-identical
    # re-runs are part of the generation contract)
    PILImage.fromarray(image, mode="RGB").save(path, format="PNG", compress_level=1)


def load_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


# --- inverse measurement ----------------------------------------------------


@dataclass(frozen=True)
class MeasuredScene:
    sphere_count: int
    cube_count: int
    colors: tuple[str, ...]
    relation_angle_deg: Optional[float] = None
    relation_sector: Optional[int] = None


def measure_scene(scene: SceneSpec) -> MeasuredScene:
    """Geometry-level measurement used for label round-trip checks.

    For relation scenes the reference is the unique brown object and the
    target is the first non-brown object in scene order.
    """
    spheres = [o for o in scene.objects if o.shape is Shape.SPHERE]
    cubes = [o for o in scene.objects if o.shape is Shape.CUBE]
    angle = sector = None
    if scene.task is Task.SPATIAL_RELATIONS:
        refs = [o for o in scene.objects if o.color == BROWN]
        if len(refs) != 1:
            raise StructuralError(
                f"relation scene needs exactly one brown reference, found {len(refs)}")
        ref = refs[0]
        targets = [o for o in scene.objects if o.color != BROWN]
        if not targets:
            raise StructuralError("relation scene has no target object")
        tgt = targets[0]
        angle = direction_to_angle(tgt.x - ref.x, tgt.y - ref.y)
        sector = sector_of_angle(angle)
    return MeasuredScene(
        sphere_count=len(spheres),
        cube_count=len(cubes),
        colors=tuple(o.color for o in scene.objects),
        relation_angle_deg=angle,
        relation_sector=sector,
    )


def derive_label(scene: SceneSpec) -> ConditionLabel:
    """Reconstruct the condition label from geometry alone."""
    m = measure_scene(scene)
    if scene.task is Task.ATTRIBUTION:
        sphere_colors = {o.color for o in scene.objects if o.shape is Shape.SPHERE}
        cube_colors = {o.color for o in scene.objects if o.shape is Shape.CUBE}
        if len(sphere_colors) != 1 or len(cube_colors) != 1:
            raise StructuralError("attribution scene colors are not uniform per shape")
        return ConditionLabel(sphere_color=sphere_colors.pop(), cube_color=cube_colors.pop())
    if scene.task is Task.COUNTING:
        count = m.sphere_count
        if scene.variant is Variant.COMPOSITION:
            colors = set(m.colors)
            if len(colors) != 1:
                raise StructuralError("composition counting scene colors differ")
            return ConditionLabel(count=count, object_color=colors.pop())
        return ConditionLabel(count=count)
    if m.relation_sector is None:
        raise StructuralError(f"target angle {m.relation_angle_deg:.3f} falls in a sector gap")
    if scene.variant is Variant.COMPOSITION:
        target = next(o for o in scene.objects if o.color != BROWN)
        return ConditionLabel(relation_sector=m.relation_sector, object_color=target.color)
    return ConditionLabel(relation_sector=m.relation_sector)
