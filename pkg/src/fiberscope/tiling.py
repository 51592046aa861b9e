"""Tiled analysis of large stitched images.

Plans an overlapping tile grid, runs per-tile inference in a worker pool,
translates detections to global coordinates, merges duplicates from the
overlap strips (preferring detections not cut by a tile edge) and finally
drops objects touching the global image border.  The merge is a
deterministic reduction independent of tile completion order.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import InferenceParams, TilingParams
from .inference import Detection, detection_mask_iou

Image.MAX_IMAGE_PIXELS = None  # stitched microscopy mosaics exceed the default


@dataclass(frozen=True)
class TileGrid:
    image_size: tuple[int, int]  # (W, H)
    tile_size: int
    overlap: int
    origins: tuple[tuple[int, int], ...]

    @property
    def tile_count(self) -> int:
        return len(self.origins)


@dataclass
class MergedDetectionSet:
    detections: list[Detection]
    provenance: dict[int, tuple[int, ...]]  # object_id -> source tile ids
    duplicates_removed: int
    border_excluded: int

    def class_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for det in self.detections:
            counts[det.class_name] = counts.get(det.class_name, 0) + 1
        return counts


def axis_origins(dim: int, tile: int, overlap: int) -> list[int]:
    """Origins stepping tile-overlap, final origin clamped to the edge."""
    if dim <= tile:
        return [0]
    step = tile - overlap
    origins = []
    pos = 0
    while pos + tile <= dim:
        origins.append(pos)
        pos += step
    if origins[-1] + tile < dim:
        origins.append(dim - tile)
    return origins


def plan_tiles(image_size: tuple[int, int], tile_size: int, overlap: int) -> TileGrid:
    """Deterministic overlapping grid covering every pixel."""
    if overlap >= tile_size:
        raise ValueError(
            f"overlap ({overlap}) must be smaller than tile size ({tile_size})"
        )
    if overlap < 0:
        raise ValueError(f"overlap must be >= 0, got {overlap}")
    w, h = image_size
    if w < 1 or h < 1:
        raise ValueError(f"image size must be positive, got {image_size}")
    xs = axis_origins(w, tile_size, overlap)
    ys = axis_origins(h, tile_size, overlap)
    origins = tuple((x, y) for y in ys for x in xs)
    return TileGrid(
        image_size=(w, h), tile_size=tile_size, overlap=overlap, origins=origins
    )


class WindowedReader:
    """Read rectangular windows from an image without holding it all.

    PIL decodes lazily for tiled formats (notably TIFF); arrays are served
    by slicing.  File-backed reads share one decoder, so they serialize on
    a lock (the numpy work downstream still parallelizes).
    """

    def __init__(self, source: str | Path | np.ndarray):
        if isinstance(source, np.ndarray):
            self._array: np.ndarray | None = source
            self._image = None
            h, w = source.shape[:2]
        else:
            self._array = None
            self._image = Image.open(source)
            w, h = self._image.size
        self._io_lock = threading.Lock()
        self.width = w
        self.height = h

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def read_window(self, x: int, y: int, w: int, h: int) -> np.ndarray:
        x1 = min(x + w, self.width)
        y1 = min(y + h, self.height)
        if self._array is not None:
            return self._array[y:y1, x:x1]
        with self._io_lock:
            crop = self._image.crop((x, y, x1, y1))
            if crop.mode not in ("RGB", "L"):
                crop = crop.convert("RGB")
            return np.asarray(crop)


def dedup(detections: list[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy same-class suppression on mask IoU.

    Order: confidence desc, mask area desc, box x0 asc.  A detection is
    dropped when its mask IoU with any kept same-class detection exceeds
    the threshold.
    """
    order = sorted(
        detections, key=lambda d: (-d.confidence, -d.mask.count, d.box.x0)
    )
    kept: list[Detection] = []
    for det in order:
        if not any(
            k.class_name == det.class_name
            and detection_mask_iou(k, det) > iou_threshold
            for k in kept
        ):
            kept.append(det)
    return kept


def _containment(inner: Detection, outer: Detection) -> float:
    """Fraction of inner's foreground covered by outer."""
    iou = detection_mask_iou(inner, outer)
    if iou == 0.0:
        return 0.0
    union = inner.mask.count + outer.mask.count
    inter = iou * union / (1.0 + iou)
    return inter / inner.mask.count


def _merge_with_cut_preference(
    detections: list[Detection], iou_threshold: float
) -> tuple[list[Detection], int]:
    """Dedup preferring detections not cut by a tile edge.

    Uncut detections suppress each other on same-class mask IoU.  A tile-cut
    detection is a partial view: it is suppressed when a kept detection
    covers most of its foreground (containment), regardless of class, since
    a fragment's class label is unreliable.
    """
    order = sorted(
        detections,
        key=lambda d: (d.tile_cut, -d.confidence, -d.mask.count, d.box.x0),
    )
    kept: list[Detection] = []
    removed = 0
    for det in order:
        twin = None
        for k in kept:
            if k.class_name == det.class_name and detection_mask_iou(k, det) > iou_threshold:
                twin = k
                break
            if det.tile_cut and _containment(det, k) > iou_threshold:
                twin = k
                break
        if twin is None:
            kept.append(det)
        else:
            removed += 1
            twin.source_tiles = tuple(
                sorted(set(twin.source_tiles) | set(det.source_tiles))
            )
    kept.sort(key=lambda d: (-d.confidence, d.box.x0, d.box.y0))
    return kept, removed


def exclude_border(
    detections: list[Detection],
    image_size: tuple[int, int],
    margin: int = 0,
) -> tuple[list[Detection], int]:
    """Drop detections whose mask reaches within margin of an image edge."""
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    w, h = image_size
    kept: list[Detection] = []
    excluded = 0
    for det in detections:
        x0, y0, x1, y1 = det.mask_extent()
        touches = (
            x0 <= margin
            or y0 <= margin
            or x1 >= w - 1 - margin
            or y1 >= h - 1 - margin
        )
        if touches:
            excluded += 1
        else:
            kept.append(det)
    return kept, excluded


def _mask_touches_tile_edge(
    det: Detection,
    tile_origin: tuple[int, int],
    tile_w: int,
    tile_h: int,
    image_size: tuple[int, int],
) -> bool:
    """True when the mask hits a tile edge that is interior to the image."""
    ox, oy = tile_origin
    w, h = image_size
    x0, y0, x1, y1 = det.mask_extent()  # global coords (already translated)
    if x0 <= ox and ox > 0:
        return True
    if y0 <= oy and oy > 0:
        return True
    if x1 >= ox + tile_w - 1 and ox + tile_w < w:
        return True
    if y1 >= oy + tile_h - 1 and oy + tile_h < h:
        return True
    return False


def run_tiled(
    session,
    image: np.ndarray | str | Path | WindowedReader,
    grid: TileGrid | None = None,
    inference: InferenceParams | None = None,
    tiling: TilingParams | None = None,
) -> MergedDetectionSet:
    """Per-tile inference merged into a deterministic global detection set."""
    inference = inference or InferenceParams()
    tiling = tiling or TilingParams()
    reader = image if isinstance(image, WindowedReader) else WindowedReader(image)
    if grid is None:
        grid = plan_tiles(reader.size, tiling.tile_size, tiling.overlap)
    w, h = grid.image_size

    def process(tile_idx: int) -> list[Detection]:
        ox, oy = grid.origins[tile_idx]
        tile_w = min(grid.tile_size, w - ox)
        tile_h = min(grid.tile_size, h - oy)
        window = reader.read_window(ox, oy, tile_w, tile_h)
        try:
            found = session.detect(window, inference)
        except Exception as exc:
            raise RuntimeError(
                f"inference failed on tile {tile_idx} at ({ox}, {oy}): {exc}"
            ) from exc
        out = []
        for det in found:
            moved = det.translated(ox, oy)
            moved.tile_cut = _mask_touches_tile_edge(
                moved, (ox, oy), tile_w, tile_h, (w, h)
            )
            moved.source_tiles = (tile_idx,)
            out.append(moved)
        return out

    workers = max(1, tiling.workers)
    if workers == 1 or grid.tile_count == 1:
        per_tile = [process(k) for k in range(grid.tile_count)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_tile = list(pool.map(process, range(grid.tile_count)))

    # deterministic reduction: tile order, then in-tile order
    everything = [det for tile in per_tile for det in tile]
    merged, duplicates = _merge_with_cut_preference(everything, tiling.dedup_iou)
    kept, border_excluded = exclude_border(merged, (w, h), tiling.border_margin)
    provenance: dict[int, tuple[int, ...]] = {}
    for k, det in enumerate(kept):
        det.object_id = k
        provenance[k] = det.source_tiles
    return MergedDetectionSet(
        detections=kept,
        provenance=provenance,
        duplicates_removed=duplicates,
        border_excluded=border_excluded,
    )


def longest_extent(detections: list[Detection]) -> float:
    """Largest bounding-box side among detections; guides overlap choice."""
    best = 0.0
    for det in detections:
        x0, y0, x1, y1 = det.mask_extent()
        best = max(best, float(x1 - x0 + 1), float(y1 - y0 + 1))
    return best
