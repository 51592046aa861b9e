"""Skeleton-based length, width and area measurement of segmented objects.

Length comes from the longest simple path through a one-pixel-wide skeleton
(pixel count by default, Euclidean step weighting optional), width is twice
the maximum of the exact Euclidean distance transform, and area is the
shoelace area of the object contour.  Pixel values convert to micrometers
through the calibration factor (default 0.65 um/px).
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import CalibrationConfig, MorphometryConfig
from .geometry import BinaryMask, EmptyGeometryError, largest_component, polygon_area
from .inference import Detection

_NEIGHBORS = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]


class DegenerateMaskError(ValueError):
    """Mask too small or malformed to measure."""


@dataclass(frozen=True, eq=False)
class Skeleton:
    """One-pixel-wide medial representation of a mask.

    pixels: boolean raster, same frame as the source mask window.
    """

    pixels: np.ndarray

    @property
    def count(self) -> int:
        return int(self.pixels.sum())

    def coordinates(self) -> np.ndarray:
        """Foreground pixels as (x, y) rows in deterministic row-major order."""
        ys, xs = np.nonzero(self.pixels)
        return np.column_stack([xs, ys])

    def endpoints(self) -> list[tuple[int, int]]:
        """Pixels with exactly one 8-connected skeleton neighbor."""
        return [p for p, deg in self.degrees().items() if deg == 1]

    def degrees(self) -> dict[tuple[int, int], int]:
        padded = np.pad(self.pixels, 1)
        neigh = sum(
            padded[1 + dy : padded.shape[0] - 1 + dy, 1 + dx : padded.shape[1] - 1 + dx].astype(int)
            for dx, dy in _NEIGHBORS
        )
        ys, xs = np.nonzero(self.pixels)
        return {(int(x), int(y)): int(neigh[y, x]) for x, y in zip(xs, ys)}


@dataclass(frozen=True)
class MorphometryRecord:
    """Length, width and area of one object, in pixels and micrometers."""

    object_id: int | None
    class_name: str
    length_px: float
    width_px: float
    area_px2: float
    length_um: float
    width_um: float
    area_um2: float
    confidence: float


def _zhang_suen_pass(img: np.ndarray, second: bool) -> np.ndarray:
    p = np.pad(img, 1)
    P2 = p[:-2, 1:-1]
    P3 = p[:-2, 2:]
    P4 = p[1:-1, 2:]
    P5 = p[2:, 2:]
    P6 = p[2:, 1:-1]
    P7 = p[2:, :-2]
    P8 = p[1:-1, :-2]
    P9 = p[:-2, :-2]
    seq = [P2, P3, P4, P5, P6, P7, P8, P9]
    B = np.zeros(img.shape, dtype=np.int8)
    for s in seq:
        B += s
    A = np.zeros(img.shape, dtype=np.int8)
    for a, b in zip(seq, seq[1:] + seq[:1]):
        A += (~a & b).astype(np.int8)
    if not second:
        c = ~(P2 & P4 & P6)
        d = ~(P4 & P6 & P8)
    else:
        c = ~(P2 & P4 & P8)
        d = ~(P2 & P6 & P8)
    kill = img & (B >= 2) & (B <= 6) & (A == 1) & c & d
    return img & ~kill


def _remove_square_blocks(img: np.ndarray) -> np.ndarray:
    """Delete simple pixels until no 2x2 block is fully foreground.

    Zhang-Suen occasionally leaves staircase squares; removing an 8-simple
    corner pixel of each block preserves connectivity.
    """
    img = img.copy()
    while True:
        blocks = img[:-1, :-1] & img[1:, :-1] & img[:-1, 1:] & img[1:, 1:]
        ys, xs = np.nonzero(blocks)
        if len(ys) == 0:
            return img
        changed = False
        for y, x in zip(ys, xs):
            for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
                py, px = y + dy, x + dx
                if _is_simple(img, px, py):
                    img[py, px] = False
                    changed = True
                    break
            if changed:
                break
        if not changed:
            return img


def _is_simple(img: np.ndarray, x: int, y: int) -> bool:
    """True when deleting (x, y) keeps local connectivity (A(p) == 1)."""
    h, w = img.shape
    ring = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)]
    vals = []
    for dx, dy in ring:
        nx, ny = x + dx, y + dy
        vals.append(bool(img[ny, nx]) if 0 <= nx < w and 0 <= ny < h else False)
    transitions = sum(
        (not vals[k]) and vals[(k + 1) % 8] for k in range(8)
    )
    return transitions == 1 and sum(vals) >= 2


def thin(mask: BinaryMask) -> Skeleton:
    """Iterative boundary peeling to a single-pixel-wide skeleton.

    Works on the largest 8-connected component.  When peeling annihilates
    the object entirely (tiny blobs), the innermost pixel is kept so the
    skeleton is never empty.
    """
    if mask.count == 0:
        raise EmptyGeometryError("cannot thin empty mask")
    img = largest_component(mask.bits)
    while True:
        after = _zhang_suen_pass(img, second=False)
        after = _zhang_suen_pass(after, second=True)
        if np.array_equal(after, img):
            break
        img = after
    if not img.any():
        edt = ndimage.distance_transform_edt(np.pad(largest_component(mask.bits), 1))[1:-1, 1:-1]
        flat = int(edt.argmax())
        img = np.zeros_like(mask.bits)
        img[np.unravel_index(flat, img.shape)] = True
    img = _remove_square_blocks(img)
    return Skeleton(pixels=img)


def prune_spurs(skeleton: Skeleton, min_length: int) -> Skeleton:
    """Remove side branches shorter than min_length pixels.

    A branch is walked from an endpoint to the nearest junction; branches
    that constitute the entire skeleton are kept.
    """
    if min_length <= 0:
        return skeleton
    img = skeleton.pixels.copy()
    while True:
        skel = Skeleton(img)
        degrees = skel.degrees()
        removed_any = False
        for ep in sorted(skel.endpoints(), key=lambda p: (p[1], p[0])):
            if degrees.get(ep, 0) != 1:
                continue
            branch = [ep]
            prev = None
            cur = ep
            while True:
                neighbors = [
                    (cur[0] + dx, cur[1] + dy)
                    for dx, dy in _NEIGHBORS
                    if (cur[0] + dx, cur[1] + dy) in degrees
                    and (cur[0] + dx, cur[1] + dy) != prev
                ]
                if len(neighbors) != 1 or degrees[cur] > 2:
                    break
                prev, cur = cur, neighbors[0]
                if degrees[cur] > 2:
                    break
                branch.append(cur)
                if len(branch) >= min_length:
                    break
            at_junction = degrees.get(cur, 0) > 2
            if at_junction and len(branch) < min_length:
                for x, y in branch:
                    img[y, x] = False
                removed_any = True
                break  # degrees are stale now; rescan from scratch
        if not removed_any:
            return Skeleton(img)


def _adjacency(skeleton: Skeleton) -> dict[tuple[int, int], list[tuple[int, int]]]:
    pixels = {(int(x), int(y)) for x, y in skeleton.coordinates()}
    return {
        p: [
            (p[0] + dx, p[1] + dy)
            for dx, dy in _NEIGHBORS
            if (p[0] + dx, p[1] + dy) in pixels
        ]
        for p in sorted(pixels, key=lambda q: (q[1], q[0]))
    }


def _farthest(adj, start, euclidean: bool):
    """Single-source sweep; returns (node, distance) of the farthest pixel.

    Distance is edge count (BFS) or accumulated step length (Dijkstra).
    """
    if euclidean:
        dist = {start: 0.0}
        heap = [(0.0, start)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for v in adj[u]:
                step = 1.0 if (u[0] == v[0] or u[1] == v[1]) else np.sqrt(2.0)
                nd = d + step
                if nd < dist.get(v, np.inf):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
    else:
        dist = {start: 0}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
    best = max(dist.items(), key=lambda kv: (kv[1], -kv[0][1], -kv[0][0]))
    return best


def _double_sweep(adj, euclidean: bool) -> tuple[float, tuple, tuple]:
    endpoints = sorted(
        (p for p, nbrs in adj.items() if len(nbrs) == 1), key=lambda p: (p[1], p[0])
    )
    start = endpoints[0] if endpoints else next(iter(adj))
    u, _ = _farthest(adj, start, euclidean)
    v, dist = _farthest(adj, u, euclidean)
    return float(dist) + 1.0, u, v


def _exhaustive_longest(adj, euclidean: bool, budget: int):
    """Depth-first longest simple path; None when the budget runs out.

    Diagonal corner pixels create tiny cycles where shortest-path sweeps cut
    corners, so cyclic skeletons need a true longest-path search.
    """
    step = {}
    for u, nbrs in adj.items():
        for v in nbrs:
            step[(u, v)] = (
                1.0 if (u[0] == v[0] or u[1] == v[1]) else float(np.sqrt(2.0))
            ) if euclidean else 1.0
    endpoints = [p for p, nbrs in adj.items() if len(nbrs) == 1]
    starts = endpoints if endpoints and len(adj) > 80 else list(adj)
    best = 0.0
    best_ends = (starts[0], starts[0])
    ops = 0
    for s in starts:
        visited = {s}
        stack = [(s, iter(adj[s]), 0.0)]
        while stack:
            ops += 1
            if ops > budget:
                return None
            u, it, acc = stack[-1]
            if acc > best:
                best = acc
                best_ends = (s, u)
            advanced = False
            for v in it:
                if v not in visited:
                    visited.add(v)
                    stack.append((v, iter(adj[v]), acc + step[(u, v)]))
                    advanced = True
                    break
            if not advanced:
                visited.discard(u)
                stack.pop()
    return best + 1.0, best_ends[0], best_ends[1]


def _longest_path(skeleton: Skeleton, euclidean: bool) -> tuple[float, tuple, tuple]:
    """(length, end_a, end_b) of the longest simple path."""
    if skeleton.count == 0:
        raise EmptyGeometryError("empty skeleton")
    ys, xs = np.nonzero(skeleton.pixels)
    if skeleton.count == 1:
        p = (int(xs[0]), int(ys[0]))
        return 1.0, p, p
    adj = _adjacency(skeleton)
    n_edges = sum(len(v) for v in adj.values()) // 2
    if n_edges == len(adj) - 1:
        return _double_sweep(adj, euclidean)
    exact = _exhaustive_longest(adj, euclidean, budget=300_000)
    if exact is not None:
        return exact
    return _double_sweep(adj, euclidean)


def skeleton_length(skeleton: Skeleton, euclidean: bool = False) -> float:
    """Length of the longest simple path through the skeleton graph.

    Trees (the usual case after spur pruning) are solved exactly by a
    double-sweep search from an extremal endpoint.  Cyclic skeletons get an
    exhaustive search with an operation budget; when that is exhausted the
    double-sweep bound is returned.  Pixel-count mode reports the number of
    path pixels; the Euclidean mode weights diagonal steps by sqrt(2).
    """
    return _longest_path(skeleton, euclidean)[0]


def width_from_distance_transform(mask: BinaryMask) -> float:
    """Twice the max exact Euclidean distance from foreground to background.

    The raster border counts as background, so a mask window cropped tight
    to the object still measures correctly.
    """
    if mask.count == 0:
        raise EmptyGeometryError("cannot measure empty mask")
    padded = np.pad(mask.bits, 1)
    edt = ndimage.distance_transform_edt(padded)
    return 2.0 * float(edt.max())


def measure(
    detection: Detection,
    calibration: CalibrationConfig | None = None,
    config: MorphometryConfig | None = None,
) -> MorphometryRecord:
    """Full morphometric record for one detection.

    Reported length is the longest skeleton path plus the tip compensation:
    thinning stops half an object-width short of each rounded end, so each
    path end is extended by its local inscribed radius minus one pixel.
    Thin (1 px) paths get zero compensation and measure exactly.
    """
    calibration = calibration or CalibrationConfig()
    config = config or MorphometryConfig()
    if detection.mask.count < 3:
        raise DegenerateMaskError(
            f"mask has {detection.mask.count} foreground pixels (< 3)"
        )
    skeleton = prune_spurs(thin(detection.mask), config.spur_min_px)
    path_len, end_a, end_b = _longest_path(skeleton, config.euclidean_length)
    edt = ndimage.distance_transform_edt(np.pad(detection.mask.bits, 1))[1:-1, 1:-1]
    if config.tip_compensation:
        tips = sum(max(float(edt[y, x]) - 1.0, 0.0) for x, y in (end_a, end_b))
    else:
        tips = 0.0
    length_px = path_len + tips
    width_px = 2.0 * float(edt.max())
    area_px2 = polygon_area(detection.contour)
    um = calibration.microns_per_pixel
    return MorphometryRecord(
        object_id=detection.object_id,
        class_name=detection.class_name,
        length_px=length_px,
        width_px=width_px,
        area_px2=area_px2,
        length_um=length_px * um,
        width_um=width_px * um,
        area_um2=area_px2 * um * um,
        confidence=detection.confidence,
    )


def measure_detections(
    detections: list[Detection],
    calibration: CalibrationConfig | None = None,
    config: MorphometryConfig | None = None,
) -> tuple[list[MorphometryRecord], list[tuple[int | None, str]]]:
    """Measure a batch; degenerate masks are collected, not fatal."""
    records: list[MorphometryRecord] = []
    rejected: list[tuple[int | None, str]] = []
    for det in detections:
        try:
            records.append(measure(det, calibration, config))
        except DegenerateMaskError as exc:
            rejected.append((det.object_id, str(exc)))
    return records, rejected
