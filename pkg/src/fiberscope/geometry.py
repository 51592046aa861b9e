"""Vector polygons, raster masks and the conversions between them.

Shared coordinate frame for the whole package: x rightward, y downward,
origin at the top-left image corner.  Pixel (i, j) occupies the unit square
[i, i+1) x [j, j+1) and has its center at (i + 0.5, j + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class GeometryError(ValueError):
    """Invalid geometric input."""


class EmptyGeometryError(GeometryError):
    """Operation on degenerate or empty geometry."""


_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class Polygon:
    """Implicitly closed polygon with sub-pixel vertex coordinates.

    Either winding is accepted; area-based operations use the absolute
    shoelace value.
    """

    vertices: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise GeometryError(f"vertices must be (N, 2), got shape {v.shape}")
        if v.shape[0] < 3:
            raise GeometryError(f"polygon needs >= 3 vertices, got {v.shape[0]}")
        object.__setattr__(self, "vertices", v)
        if abs(_signed_area(v)) == 0.0:
            raise EmptyGeometryError("polygon has zero signed area")

    def __len__(self) -> int:
        return self.vertices.shape[0]

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon(self.vertices + np.array([dx, dy]))

    def bounds(self) -> tuple[float, float, float, float]:
        mn = self.vertices.min(axis=0)
        mx = self.vertices.max(axis=0)
        return float(mn[0]), float(mn[1]), float(mx[0]), float(mx[1])


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Row-major boolean raster; ``bits[j, i]`` is pixel (x=i, y=j)."""

    bits: np.ndarray
    _count: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        b = np.asarray(self.bits)
        if b.dtype != np.bool_:
            b = b.astype(bool)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise GeometryError(f"mask must be 2D with positive dims, got {b.shape}")
        object.__setattr__(self, "bits", b)
        object.__setattr__(self, "_count", int(b.sum()))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return self._count


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with corner coordinates, x0 < x1 and y0 < y1."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise GeometryError(
                f"invalid box ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def dilated(self, margin: float) -> "BoundingBox":
        return BoundingBox(
            self.x0 - margin, self.y0 - margin, self.x1 + margin, self.y1 + margin
        )

    def clipped(self, width: float, height: float) -> "BoundingBox":
        return BoundingBox(
            min(max(self.x0, 0.0), width - 1e-9),
            min(max(self.y0, 0.0), height - 1e-9),
            max(min(self.x1, float(width)), 1e-9),
            max(min(self.y1, float(height)), 1e-9),
        )

    def pixel_window(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Integer window (x0, y0, x1, y1) covering the box, clipped to canvas."""
        ix0 = max(int(np.floor(self.x0)), 0)
        iy0 = max(int(np.floor(self.y0)), 0)
        ix1 = min(int(np.ceil(self.x1)), width)
        iy1 = min(int(np.ceil(self.y1)), height)
        return ix0, iy0, max(ix1, ix0 + 1), max(iy1, iy0 + 1)


def _signed_area(vertices: np.ndarray) -> float:
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_area(polygon: Polygon) -> float:
    """Absolute shoelace area in square pixels."""
    return abs(_signed_area(polygon.vertices))


def rasterize(polygon: Polygon, width: int, height: int) -> BinaryMask:
    """Scan-convert a polygon: a pixel is foreground iff its center lies
    inside under the even-odd rule.  Regions outside the canvas are clipped.
    """
    if width < 1 or height < 1:
        raise GeometryError(f"canvas dims must be positive, got {width}x{height}")
    v = polygon.vertices
    if abs(_signed_area(v)) == 0.0:
        raise EmptyGeometryError("cannot rasterize zero-area polygon")

    bits = np.zeros((height, width), dtype=bool)
    x1s = v[:, 0]
    y1s = v[:, 1]
    x2s = np.roll(x1s, -1)
    y2s = np.roll(y1s, -1)

    ymin = max(int(np.floor(v[:, 1].min() - 0.5)), 0)
    ymax = min(int(np.ceil(v[:, 1].max() - 0.5)) + 1, height)
    # half-open rule: an edge crosses the scanline iff min(y) <= yc < max(y)
    lo = np.minimum(y1s, y2s)
    hi = np.maximum(y1s, y2s)
    for j in range(ymin, ymax):
        yc = j + 0.5
        hit = (lo <= yc) & (yc < hi)
        if not hit.any():
            continue
        t = (yc - y1s[hit]) / (y2s[hit] - y1s[hit])
        xs = np.sort(x1s[hit] + t * (x2s[hit] - x1s[hit]))
        for k in range(0, xs.size - 1, 2):
            i0 = int(np.ceil(xs[k] - 0.5))
            i1 = int(np.ceil(xs[k + 1] - 0.5))
            if i1 > 0 and i0 < width:
                bits[j, max(i0, 0) : min(i1, width)] = True
    return BinaryMask(bits)


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection-over-union of two same-sized masks; 0 when both empty."""
    if a.bits.shape != b.bits.shape:
        raise GeometryError(
            f"mask dimension mismatch: {a.bits.shape} vs {b.bits.shape}"
        )
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = a.count + b.count - inter
    return inter / union if union else 0.0


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def largest_component(bits: np.ndarray) -> np.ndarray:
    """Boolean array keeping only the largest 8-connected component."""
    labels, n = ndimage.label(bits, structure=_EIGHT_CONNECTED)
    if n == 0:
        raise EmptyGeometryError("mask has no foreground")
    if n == 1:
        return bits.copy()
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == int(sizes.argmax())


def extract_contour(mask: BinaryMask) -> Polygon:
    """Outer boundary of the largest 8-connected component.

    Vertices lie on the integer pixel-corner lattice and trace the cracks
    between foreground and background, so re-rasterizing the result
    reproduces the (hole-filled) component exactly.
    """
    if mask.count == 0:
        raise EmptyGeometryError("cannot trace contour of empty mask")
    comp = largest_component(mask.bits)
    h, w = comp.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = comp
    stride = w + 1  # corner lattice is (w+1) x (h+1)

    # Directed crack edges keyed as corner_id * 4 + direction, foreground on
    # a consistent side.  Directions: 0 = +x, 1 = +y, 2 = -x, 3 = -y.
    edges: set[int] = set()
    ys, xs = np.nonzero(comp & ~padded[:-2, 1:-1])  # background above
    edges.update(((ys * stride + xs) * 4 + 0).tolist())
    ys, xs = np.nonzero(comp & ~padded[1:-1, 2:])  # background right
    edges.update(((ys * stride + xs + 1) * 4 + 1).tolist())
    ys, xs = np.nonzero(comp & ~padded[2:, 1:-1])  # background below
    edges.update((((ys + 1) * stride + xs + 1) * 4 + 2).tolist())
    ys, xs = np.nonzero(comp & ~padded[1:-1, :-2])  # background left
    edges.update((((ys + 1) * stride + xs) * 4 + 3).tolist())

    flat_first = int(np.argmax(comp))  # row-major topmost-leftmost pixel
    j0, i0 = divmod(flat_first, w)
    start = j0 * stride + i0
    moves = (1, stride, -1, -stride)
    pos, direction = start, 0
    path = [start]
    while True:
        edges.discard(pos * 4 + direction)
        pos += moves[direction]
        if pos == start:
            break
        path.append(pos)
        # prefer the left turn at pinch corners so diagonally-touching
        # pixels stay on one outer cycle (8-connected foreground)
        base = pos * 4
        for cand in ((direction + 3) % 4, direction, (direction + 1) % 4):
            if base + cand in edges:
                direction = cand
                break
        else:
            raise GeometryError("contour tracing failed to close")

    ids = np.asarray(path, dtype=np.int64)
    pts = np.column_stack([ids % stride, ids // stride]).astype(np.float64)
    return Polygon(_merge_collinear(pts))


def _merge_collinear(points: np.ndarray) -> np.ndarray:
    steps = np.roll(points, -1, axis=0) - points  # step leaving each vertex
    turned = (steps != np.roll(steps, 1, axis=0)).any(axis=1)
    kept = points[turned]
    return kept if len(kept) >= 3 else points


def clip_polygon_to_rect(
    polygon: Polygon, x0: float, y0: float, x1: float, y1: float
) -> Polygon | None:
    """Sutherland-Hodgman clip against an axis-aligned rectangle.

    Returns None when the clipped region is empty or degenerate.
    """
    pts = [tuple(p) for p in polygon.vertices]
    for inside, boundary in (
        (lambda p: p[0] >= x0, ("x", x0)),
        (lambda p: p[0] <= x1, ("x", x1)),
        (lambda p: p[1] >= y0, ("y", y0)),
        (lambda p: p[1] <= y1, ("y", y1)),
    ):
        if not pts:
            return None
        out: list[tuple[float, float]] = []
        axis, level = boundary
        for k in range(len(pts)):
            cur = pts[k]
            prev = pts[k - 1]
            cur_in = inside(cur)
            if inside(prev) != cur_in:
                out.append(_intersect_axis(prev, cur, axis, level))
            if cur_in:
                out.append(cur)
        pts = out
    if len(pts) < 3:
        return None
    arr = np.array(pts, dtype=np.float64)
    if abs(_signed_area(arr)) == 0.0:
        return None
    return Polygon(arr)


def _intersect_axis(
    p: tuple[float, float], q: tuple[float, float], axis: str, level: float
) -> tuple[float, float]:
    if axis == "x":
        t = (level - p[0]) / (q[0] - p[0])
        return (level, p[1] + t * (q[1] - p[1]))
    t = (level - p[1]) / (q[1] - p[1])
    return (p[0] + t * (q[0] - p[0]), level)


def simplify_polygon(polygon: Polygon, tolerance: float = 1.0) -> Polygon:
    """Douglas-Peucker vertex decimation with a max-deviation bound."""
    pts = polygon.vertices
    n = len(pts)
    if n <= 4:
        return polygon
    keep = np.zeros(n, dtype=bool)
    keep[0] = True
    # split at the vertex farthest from the first point to make an open chain
    far = int(np.argmax(np.hypot(*(pts - pts[0]).T)))
    keep[far] = True
    stack = [(0, far), (far, n - 1)]
    keep[n - 1] = True
    while stack:
        a, b = stack.pop()
        if b - a < 2:
            continue
        seg = pts[b] - pts[a]
        norm = np.hypot(*seg)
        rel = pts[a + 1 : b] - pts[a]
        if norm == 0:
            d = np.hypot(*rel.T)
        else:
            d = np.abs(seg[0] * rel[:, 1] - seg[1] * rel[:, 0]) / norm
        k = int(np.argmax(d))
        if d[k] > tolerance:
            keep[a + 1 + k] = True
            stack.extend(((a, a + 1 + k), (a + 1 + k, b)))
    kept = pts[keep]
    if len(kept) < 3 or abs(_signed_area(kept)) == 0.0:
        return polygon
    return Polygon(kept)
