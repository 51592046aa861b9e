"""Synthetic microscopy-like scenes for benchmarks, demos and tests.

Draws dark elongated bars (fiber-like) and squat rounded blobs
(vessel-like) on a white background so the classical threshold detector
can find them.  Every generator is seeded and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Polygon, rasterize

INK = 60  # gray level of drawn objects, well under the detector threshold


@dataclass(frozen=True)
class SceneObject:
    """Ground truth for one planted object."""

    polygon: Polygon
    class_name: str
    length_px: float
    width_px: float
    angle_deg: float


def bar_polygon(cx: float, cy: float, length: float, width: float, angle_deg: float) -> Polygon:
    """Rectangle of given center length/width rotated by angle."""
    a = np.deg2rad(angle_deg)
    ux, uy = np.cos(a), np.sin(a)
    vx, vy = -uy, ux
    hl, hw = length / 2.0, width / 2.0
    corners = np.array(
        [
            [cx - hl * ux - hw * vx, cy - hl * uy - hw * vy],
            [cx + hl * ux - hw * vx, cy + hl * uy - hw * vy],
            [cx + hl * ux + hw * vx, cy + hl * uy + hw * vy],
            [cx - hl * ux + hw * vx, cy - hl * uy + hw * vy],
        ]
    )
    return Polygon(corners)


def disk_polygon(cx: float, cy: float, radius: float, segments: int = 48) -> Polygon:
    angles = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    pts = np.column_stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)])
    return Polygon(pts)


def draw_polygon(canvas: np.ndarray, polygon: Polygon, ink: int = INK) -> None:
    """Paint a polygon's raster footprint onto an RGB canvas in place."""
    h, w = canvas.shape[:2]
    x0, y0, x1, y1 = polygon.bounds()
    wx0 = max(int(np.floor(x0)) - 1, 0)
    wy0 = max(int(np.floor(y0)) - 1, 0)
    wx1 = min(int(np.ceil(x1)) + 1, w)
    wy1 = min(int(np.ceil(y1)) + 1, h)
    if wx1 <= wx0 or wy1 <= wy0:
        return
    local = polygon.translated(-wx0, -wy0)
    mask = rasterize(local, wx1 - wx0, wy1 - wy0)
    canvas[wy0:wy1, wx0:wx1][mask.bits] = ink


def blank_canvas(width: int, height: int) -> np.ndarray:
    return np.full((height, width, 3), 255, dtype=np.uint8)


def generate_scene(
    width: int,
    height: int,
    n_objects: int,
    seed: int,
    margin: int = 16,
    max_extent: int = 250,
    n_border_objects: int = 0,
    vessel_fraction: float = 0.1,
) -> tuple[np.ndarray, list[SceneObject]]:
    """Plant non-overlapping objects on a jittered grid.

    Each object's axis-aligned extent stays below max_extent so that tiled
    analysis with overlap >= max_extent sees every object uncut in at least
    one tile.  Interior objects keep `margin` pixels from the image border;
    optional border objects deliberately touch an edge.
    """
    rng = np.random.default_rng(seed)
    cells_per_row = max(int(np.floor((width - 2 * margin) / max_extent)), 1)
    cells_per_col = max(int(np.floor((height - 2 * margin) / max_extent)), 1)
    if n_objects > cells_per_row * cells_per_col:
        raise ValueError(
            f"cannot place {n_objects} objects of extent {max_extent} "
            f"on a {width}x{height} canvas"
        )
    cell_ids = rng.permutation(cells_per_row * cells_per_col)[:n_objects]

    canvas = blank_canvas(width, height)
    objects: list[SceneObject] = []
    for cell in cell_ids:
        cy_idx, cx_idx = divmod(int(cell), cells_per_row)
        cx = margin + cx_idx * max_extent + max_extent / 2
        cy = margin + cy_idx * max_extent + max_extent / 2
        cx += rng.uniform(-max_extent * 0.05, max_extent * 0.05)
        cy += rng.uniform(-max_extent * 0.05, max_extent * 0.05)
        if rng.random() < vessel_fraction:
            length = float(rng.uniform(40, 70))
            width_px = float(rng.uniform(25, 40))
            angle = float(rng.choice([0.0, 90.0]))
            class_name = "vessel"
        else:
            angle = float(rng.choice([0.0, 45.0, 90.0]))
            limit = max_extent * 0.9 if angle != 45.0 else max_extent * 0.6
            length = float(rng.uniform(80, min(240, limit)))
            width_px = float(rng.uniform(8, 24))
            class_name = "fiber"
        poly = bar_polygon(cx, cy, length, width_px, angle)
        draw_polygon(canvas, poly)
        objects.append(SceneObject(poly, class_name, length, width_px, angle))

    # border objects run along the edge inside the margin strip, so they
    # never touch interior objects
    for k in range(n_border_objects):
        side = k % 4
        length, width_px = 120.0, 14.0
        if side == 0:  # left edge, long axis vertical
            poly = bar_polygon(0, height / 2 + k * 150, length, width_px, 90.0)
        elif side == 1:  # top edge, long axis horizontal
            poly = bar_polygon(width / 2 + k * 150, 0, length, width_px, 0.0)
        elif side == 2:  # right edge
            poly = bar_polygon(width, height / 2 - k * 150, length, width_px, 90.0)
        else:  # bottom edge
            poly = bar_polygon(width / 2 - k * 150, height, length, width_px, 0.0)
        draw_polygon(canvas, poly)
        objects.append(SceneObject(poly, "fiber-border", length, width_px, 0.0))

    return canvas, objects
