"""Deterministic job exports: measurement CSV, per-object masks, overlays."""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np
from PIL import Image
from scipy import ndimage

from ..inference import Detection
from ..morphometry import MorphometryRecord

CSV_HEADER = (
    "object_id,class,length_um,width_um,area_um2,"
    "length_px,width_px,area_px2,confidence,x0,y0,x1,y1"
)

CLASS_COLORS = {
    "fiber": (220, 60, 60),
    "vessel": (60, 90, 220),
}
FALLBACK_COLOR = (120, 200, 90)
FILL_ALPHA = 0.35


def export_csv(
    detections: list[Detection], records: list[MorphometryRecord]
) -> str:
    """One row per detection, ordered by confidence desc then object id.

    Micrometer fields use 3 decimals; re-exports are byte-identical.
    """
    by_id = {r.object_id: r for r in records}
    rows = sorted(detections, key=lambda d: (-d.confidence, d.object_id))
    lines = [CSV_HEADER]
    for det in rows:
        rec = by_id.get(det.object_id)
        if rec is None:
            continue
        lines.append(
            ",".join(
                [
                    str(det.object_id),
                    det.class_name,
                    f"{rec.length_um:.3f}",
                    f"{rec.width_um:.3f}",
                    f"{rec.area_um2:.3f}",
                    f"{rec.length_px:g}",
                    f"{rec.width_px:g}",
                    f"{rec.area_px2:g}",
                    f"{det.confidence:.4f}",
                    f"{det.box.x0:.1f}",
                    f"{det.box.y0:.1f}",
                    f"{det.box.x1:.1f}",
                    f"{det.box.y1:.1f}",
                ]
            )
        )
    return "\n".join(lines) + "\n"


def export_masks_zip(
    detections: list[Detection], image_size: tuple[int, int], job_id: str
) -> bytes:
    """Archive of one full-frame single-channel PNG per detection.

    Foreground is 255 on 0; overlapping objects overlap across files.  The
    archive always carries a manifest, even with zero detections.
    """
    w, h = image_size
    buffer = io.BytesIO()
    manifest = {"job": job_id, "count": len(detections), "files": []}
    with zipfile.ZipFile(buffer, "w", zipfile.ZIP_DEFLATED) as zf:
        for det in detections:
            name = f"{det.object_id}_{det.class_name}.png"
            full = det.full_mask(w, h)
            png = io.BytesIO()
            Image.fromarray(full.bits.astype(np.uint8) * 255, mode="L").save(
                png, format="PNG"
            )
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, png.getvalue())
            manifest["files"].append(name)
        info = zipfile.ZipInfo("manifest.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(manifest, indent=1))
    return buffer.getvalue()


def render_overlay(
    image: np.ndarray,
    detections: list[Detection],
    conf_cutoff: float = 0.0,
    max_px: int | None = None,
) -> np.ndarray:
    """Translucent class-colored masks plus opaque outlines over the input.

    The cutoff filters what is drawn; detections themselves are untouched.
    A cutoff of 1.0 returns the unmodified input.
    """
    out = image.astype(np.float32).copy()
    if out.ndim == 2:
        out = np.repeat(out[:, :, None], 3, axis=2)
    h, w = out.shape[:2]
    for det in detections:
        if det.confidence < conf_cutoff:
            continue
        color = np.array(
            CLASS_COLORS.get(det.class_name, FALLBACK_COLOR), dtype=np.float32
        )
        ox, oy = det.mask_origin
        mh, mw = det.mask.bits.shape
        x0, y0 = max(ox, 0), max(oy, 0)
        x1, y1 = min(ox + mw, w), min(oy + mh, h)
        if x1 <= x0 or y1 <= y0:
            continue
        local = det.mask.bits[y0 - oy : y1 - oy, x0 - ox : x1 - ox]
        region = out[y0:y1, x0:x1]
        region[local] = (1 - FILL_ALPHA) * region[local] + FILL_ALPHA * color
        outline = local & ~ndimage.binary_erosion(local)
        region[outline] = color
    result = np.clip(out, 0, 255).astype(np.uint8)
    if max_px and max(result.shape[:2]) > max_px:
        scale = max_px / max(result.shape[:2])
        new_size = (
            max(int(result.shape[1] * scale), 1),
            max(int(result.shape[0] * scale), 1),
        )
        result = np.asarray(Image.fromarray(result).resize(new_size, Image.BILINEAR))
    return result


def overlay_png_bytes(
    image: np.ndarray,
    detections: list[Detection],
    conf_cutoff: float = 0.0,
    max_px: int | None = None,
) -> bytes:
    arr = render_overlay(image, detections, conf_cutoff, max_px)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()
