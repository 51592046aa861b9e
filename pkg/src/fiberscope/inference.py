"""Turn exported-model outputs into per-instance detections with full masks.

Masks of different instances may overlap: translucent objects are fully
visible in brightfield images, so one pixel can belong to several objects.
Each detection therefore carries its own independent raster, stored as a
window (local mask + origin) to keep gigapixel scenes tractable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .config import InferenceParams
from .geometry import BinaryMask, BoundingBox, Polygon, extract_contour

CLASS_NAMES = ("fiber", "vessel")
STRIDES = (8, 16, 32)
PROTO_DOWNSAMPLE = 4


class SessionError(RuntimeError):
    """Model file unreadable or runtime unavailable."""


class ModelContractError(SessionError):
    """Model outputs do not match the expected shapes."""


def expected_anchor_count(input_size: int) -> int:
    return sum((input_size // s) ** 2 for s in STRIDES)


def expected_proto_side(input_size: int) -> int:
    return input_size // PROTO_DOWNSAMPLE


@dataclass(frozen=True)
class LetterboxTransform:
    """Affine map between original image coordinates and padded model input."""

    scale: float
    pad_x: float
    pad_y: float
    original_width: int
    original_height: int

    def forward_point(self, x: float, y: float) -> tuple[float, float]:
        return x * self.scale + self.pad_x, y * self.scale + self.pad_y

    def inverse_point(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.pad_x) / self.scale, (y - self.pad_y) / self.scale

    def forward_box(self, box: BoundingBox) -> BoundingBox:
        x0, y0 = self.forward_point(box.x0, box.y0)
        x1, y1 = self.forward_point(box.x1, box.y1)
        return BoundingBox(x0, y0, x1, y1)

    def inverse_box(self, box: BoundingBox) -> BoundingBox:
        x0, y0 = self.inverse_point(box.x0, box.y0)
        x1, y1 = self.inverse_point(box.x1, box.y1)
        return BoundingBox(x0, y0, x1, y1)


@dataclass(frozen=True, eq=False)
class RawPrediction:
    """Raw head outputs: candidate rows and shared mask prototypes.

    candidates: [anchor_count, 4 + num_classes + prototype_count], boxes in
    center form (cx, cy, w, h) in padded-input pixels, class scores in [0,1].
    prototypes: [prototype_count, proto_h, proto_w].
    """

    candidates: np.ndarray
    prototypes: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.candidates, dtype=np.float32)
        p = np.asarray(self.prototypes, dtype=np.float32)
        if c.ndim != 2:
            raise ModelContractError(f"candidates must be 2D, got shape {c.shape}")
        if p.ndim != 3:
            raise ModelContractError(f"prototypes must be 3D, got shape {p.shape}")
        object.__setattr__(self, "candidates", c)
        object.__setattr__(self, "prototypes", p)

    @property
    def prototype_count(self) -> int:
        return self.prototypes.shape[0]

    @property
    def num_classes(self) -> int:
        return self.candidates.shape[1] - 4 - self.prototype_count


def validate_raw(raw: RawPrediction, input_size: int, num_classes: int) -> None:
    anchors = expected_anchor_count(input_size)
    side = expected_proto_side(input_size)
    if raw.candidates.shape[0] != anchors:
        raise ModelContractError(
            f"expected {anchors} anchors for input {input_size}, "
            f"got {raw.candidates.shape[0]}"
        )
    if raw.prototypes.shape[1:] != (side, side):
        raise ModelContractError(
            f"expected {side}x{side} prototypes for input {input_size}, "
            f"got {raw.prototypes.shape[1:]}"
        )
    expected_cols = 4 + num_classes + raw.prototype_count
    if raw.candidates.shape[1] != expected_cols:
        raise ModelContractError(
            f"expected {expected_cols} candidate columns "
            f"(4 box + {num_classes} classes + {raw.prototype_count} coeffs), "
            f"got {raw.candidates.shape[1]}"
        )


@dataclass(frozen=True, eq=False)
class Candidate:
    """One decoded head row prior to mask composition."""

    box: BoundingBox  # corner form, padded-input pixels
    class_index: int
    confidence: float
    coefficients: np.ndarray


@dataclass(eq=False)
class Detection:
    """One segmented instance in image coordinates.

    The raster is stored as a window: ``mask.bits[j, i]`` refers to image
    pixel (mask_origin[0] + i, mask_origin[1] + j).  Windows of different
    detections may overlap and share image pixels.
    """

    class_name: str
    confidence: float
    box: BoundingBox
    mask: BinaryMask
    mask_origin: tuple[int, int]
    contour: Polygon
    tile_cut: bool = False
    object_id: int | None = None
    source_tiles: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.mask.count == 0:
            raise ValueError("detection mask must have foreground")

    @property
    def area_px(self) -> int:
        return self.mask.count

    def mask_extent(self) -> tuple[int, int, int, int]:
        """Foreground bounds (min_x, min_y, max_x, max_y), inclusive."""
        rows = np.flatnonzero(self.mask.bits.any(axis=1))
        cols = np.flatnonzero(self.mask.bits.any(axis=0))
        ox, oy = self.mask_origin
        return (
            ox + int(cols[0]),
            oy + int(rows[0]),
            ox + int(cols[-1]),
            oy + int(rows[-1]),
        )

    def full_mask(self, width: int, height: int) -> BinaryMask:
        bits = np.zeros((height, width), dtype=bool)
        ox, oy = self.mask_origin
        h, w = self.mask.bits.shape
        x0, y0 = max(ox, 0), max(oy, 0)
        x1, y1 = min(ox + w, width), min(oy + h, height)
        if x1 > x0 and y1 > y0:
            bits[y0:y1, x0:x1] = self.mask.bits[y0 - oy : y1 - oy, x0 - ox : x1 - ox]
        return BinaryMask(bits)

    def translated(self, dx: int, dy: int) -> "Detection":
        return Detection(
            class_name=self.class_name,
            confidence=self.confidence,
            box=self.box.translated(dx, dy),
            mask=self.mask,
            mask_origin=(self.mask_origin[0] + dx, self.mask_origin[1] + dy),
            contour=self.contour.translated(dx, dy),
            tile_cut=self.tile_cut,
            object_id=self.object_id,
            source_tiles=self.source_tiles,
        )


def detection_mask_iou(a: Detection, b: Detection) -> float:
    """Mask IoU of two detections sharing an image frame (window-aware)."""
    ax, ay = a.mask_origin
    bx, by = b.mask_origin
    ah, aw = a.mask.bits.shape
    bh, bw = b.mask.bits.shape
    ix0, iy0 = max(ax, bx), max(ay, by)
    ix1, iy1 = min(ax + aw, bx + bw), min(ay + ah, by + bh)
    if ix0 >= ix1 or iy0 >= iy1:
        inter = 0
    else:
        inter = int(
            np.count_nonzero(
                a.mask.bits[iy0 - ay : iy1 - ay, ix0 - ax : ix1 - ax]
                & b.mask.bits[iy0 - by : iy1 - by, ix0 - bx : ix1 - bx]
            )
        )
    union = a.mask.count + b.mask.count - inter
    return inter / union if union else 0.0


def ensure_rgb(image: np.ndarray) -> np.ndarray:
    """Accept HxW or HxWx{1,3,4} uint8 input; expand grayscale to 3 channels."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif arr.ndim == 3 and arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    elif arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    elif arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"unsupported image shape {arr.shape}")
    return arr


def preprocess(
    image: np.ndarray, input_size: int, fill: int = 114
) -> tuple[np.ndarray, LetterboxTransform]:
    """Aspect-preserving resize to input_size with symmetric constant padding.

    Returns a float32 tensor [1, 3, S, S] in [0, 1] plus the transform that
    maps original coordinates into the padded square.
    """
    arr = ensure_rgb(image)
    h, w = arr.shape[:2]
    scale = input_size / max(w, h)
    new_w = max(int(round(w * scale)), 1)
    new_h = max(int(round(h * scale)), 1)
    if (new_w, new_h) != (w, h):
        arr = np.asarray(
            Image.fromarray(arr).resize((new_w, new_h), Image.BILINEAR)
        )
    pad_x = (input_size - new_w) / 2
    pad_y = (input_size - new_h) / 2
    canvas = np.full((input_size, input_size, 3), fill, dtype=np.uint8)
    x0, y0 = int(round(pad_x)), int(round(pad_y))
    canvas[y0 : y0 + new_h, x0 : x0 + new_w] = arr
    tensor = canvas.astype(np.float32).transpose(2, 0, 1)[None] / 255.0
    transform = LetterboxTransform(
        scale=scale,
        pad_x=float(x0),
        pad_y=float(y0),
        original_width=w,
        original_height=h,
    )
    return tensor, transform


def decode(raw: RawPrediction, conf_threshold: float) -> list[Candidate]:
    """Filter head rows by best class score and convert boxes to corner form."""
    nc = raw.num_classes
    if nc < 1:
        raise ModelContractError(
            f"candidate rows too narrow: {raw.candidates.shape[1]} columns "
            f"for {raw.prototype_count} prototypes"
        )
    scores = raw.candidates[:, 4 : 4 + nc]
    conf = scores.max(axis=1)
    keep = np.flatnonzero(conf >= conf_threshold)
    out: list[Candidate] = []
    for idx in keep:
        cx, cy, w, h = raw.candidates[idx, :4]
        if w <= 0 or h <= 0:
            continue
        out.append(
            Candidate(
                box=BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
                class_index=int(scores[idx].argmax()),
                confidence=float(conf[idx]),
                coefficients=raw.candidates[idx, 4 + nc :].copy(),
            )
        )
    return out


def nms(candidates: list[Candidate], iou_threshold: float) -> list[Candidate]:
    """Greedy class-wise suppression on box IoU.

    Deterministic order: confidence desc, then box x0 asc, then y0 asc.
    """
    from .geometry import box_iou

    ordered = sorted(
        candidates, key=lambda c: (-c.confidence, c.box.x0, c.box.y0)
    )
    kept: list[Candidate] = []
    for cand in ordered:
        suppressed = any(
            k.class_index == cand.class_index
            and box_iou(k.box, cand.box) > iou_threshold
            for k in kept
        )
        if not suppressed:
            kept.append(cand)
    return kept


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _compose_window(
    coefficients: np.ndarray,
    prototypes: np.ndarray,
    box: BoundingBox,
    transform: LetterboxTransform,
    original_size: tuple[int, int],
    mask_threshold: float = 0.5,
    box_dilation: float = 2.0,
) -> tuple[np.ndarray, tuple[int, int]] | None:
    """Window-level mask composition; None when the mask comes out empty."""
    if coefficients.shape[0] != prototypes.shape[0]:
        raise ModelContractError(
            f"{coefficients.shape[0]} coefficients vs "
            f"{prototypes.shape[0]} prototypes"
        )
    orig_w, orig_h = original_size
    input_size = prototypes.shape[1] * PROTO_DOWNSAMPLE

    logits = np.tensordot(coefficients, prototypes, axes=1)
    probs = _sigmoid(logits)
    upsampled = np.asarray(
        Image.fromarray(probs.astype(np.float32), mode="F").resize(
            (input_size, input_size), Image.BILINEAR
        )
    )

    padded_box = box.dilated(box_dilation).clipped(input_size, input_size)
    binary = upsampled > mask_threshold
    crop = np.zeros_like(binary)
    px0, py0, px1, py1 = padded_box.pixel_window(input_size, input_size)
    crop[py0:py1, px0:px1] = binary[py0:py1, px0:px1]
    if not crop.any():
        return None

    # map back to original coordinates over the inverse-mapped box window only
    ox0, oy0 = transform.inverse_point(px0, py0)
    ox1, oy1 = transform.inverse_point(px1, py1)
    wx0 = max(int(np.floor(ox0)), 0)
    wy0 = max(int(np.floor(oy0)), 0)
    wx1 = min(int(np.ceil(ox1)), orig_w)
    wy1 = min(int(np.ceil(oy1)), orig_h)
    if wx1 <= wx0 or wy1 <= wy0:
        return None
    xs = np.arange(wx0, wx1) + 0.5
    ys = np.arange(wy0, wy1) + 0.5
    src_x = np.clip((xs * transform.scale + transform.pad_x).astype(int), 0, input_size - 1)
    src_y = np.clip((ys * transform.scale + transform.pad_y).astype(int), 0, input_size - 1)
    window = crop[np.ix_(src_y, src_x)]
    if not window.any():
        return None
    return window, (wx0, wy0)


def compose_mask(
    coefficients: np.ndarray,
    prototypes: np.ndarray,
    box: BoundingBox,
    transform: LetterboxTransform,
    original_size: tuple[int, int],
    mask_threshold: float = 0.5,
    box_dilation: float = 2.0,
) -> BinaryMask | None:
    """Full-frame instance mask from prototype coefficients.

    Returns None when the thresholded mask is empty (candidate discarded).
    Pixel sharing between instances is permitted and preserved.
    """
    result = _compose_window(
        coefficients, prototypes, box, transform, original_size,
        mask_threshold, box_dilation,
    )
    if result is None:
        return None
    window, (wx0, wy0) = result
    orig_w, orig_h = original_size
    bits = np.zeros((orig_h, orig_w), dtype=bool)
    bits[wy0 : wy0 + window.shape[0], wx0 : wx0 + window.shape[1]] = window
    return BinaryMask(bits)


class ModelSession:
    """Immutable wrapper around an exported ONNX segmentation network.

    The graph must expose two outputs: a candidate matrix
    [1, 4 + num_classes + prototype_count, anchor_count] (or already
    transposed) and a prototype tensor [1, prototype_count, S/4, S/4].
    """

    def __init__(
        self,
        model_path: str | Path,
        input_size: int = 1024,
        class_names: tuple[str, ...] = CLASS_NAMES,
        device: str = "cpu",
    ):
        if input_size % 32 != 0:
            raise SessionError(f"input_size must be divisible by 32, got {input_size}")
        path = Path(model_path)
        if not path.is_file():
            raise SessionError(f"model file not found: {path}")
        try:
            import onnxruntime as ort
        except ImportError as exc:
            raise SessionError(
                "onnxruntime is required to load ONNX models; install the "
                "'onnx' extra (pip install fiberscope[onnx])"
            ) from exc
        providers = (
            ["CPUExecutionProvider"]
            if device == "cpu"
            else ["CUDAExecutionProvider", "CPUExecutionProvider"]
        )
        try:
            self._session = ort.InferenceSession(str(path), providers=providers)
        except Exception as exc:
            raise SessionError(f"failed to load model {path}: {exc}") from exc
        self.model_path = path
        self.input_size = input_size
        self.class_names = tuple(class_names)
        self.device = device
        self._input_name = self._session.get_inputs()[0].name
        self.mask_prototype_count: int | None = None  # known after first run

    def run(self, tensor: np.ndarray) -> RawPrediction:
        outputs = self._session.run(None, {self._input_name: tensor})
        if len(outputs) < 2:
            raise ModelContractError(
                f"model must produce 2 outputs (candidates, prototypes), "
                f"got {len(outputs)}"
            )
        cand, proto = outputs[0], outputs[1]
        cand = np.squeeze(np.asarray(cand), axis=0)
        proto = np.squeeze(np.asarray(proto), axis=0)
        if cand.ndim != 2:
            raise ModelContractError(f"candidate output has shape {cand.shape}")
        if cand.shape[0] < cand.shape[1]:
            cand = cand.T  # exported layout is [channels, anchors]
        raw = RawPrediction(candidates=cand, prototypes=proto)
        validate_raw(raw, self.input_size, len(self.class_names))
        self.mask_prototype_count = raw.prototype_count
        return raw

    def detect(self, image: np.ndarray, params: InferenceParams) -> list[Detection]:
        arr = ensure_rgb(image)
        h, w = arr.shape[:2]
        tensor, transform = preprocess(arr, self.input_size)
        raw = self.run(tensor)
        candidates = decode(raw, params.conf_threshold)
        kept = nms(candidates, params.nms_iou)
        detections: list[Detection] = []
        for cand in kept:
            result = _compose_window(
                cand.coefficients,
                raw.prototypes,
                cand.box,
                transform,
                (w, h),
                params.mask_threshold,
                params.box_dilation_px,
            )
            if result is None:
                continue
            window, origin = result
            box = transform.inverse_box(cand.box).clipped(w, h)
            mask = BinaryMask(window)
            contour = extract_contour(mask).translated(*origin)
            detections.append(
                Detection(
                    class_name=self.class_names[cand.class_index],
                    confidence=cand.confidence,
                    box=box,
                    mask=mask,
                    mask_origin=origin,
                    contour=contour,
                )
            )
        detections.sort(key=lambda d: (-d.confidence, d.box.x0, d.box.y0))
        return detections


class ThresholdSession:
    """Classical intensity-threshold detector.

    Stands in for the neural model wherever a deterministic, dependency-free
    backend is needed: service tests, synthetic benchmarks and demos.  Finds
    dark 8-connected components on a bright background and classifies them
    by elongation.
    """

    def __init__(
        self,
        threshold: int = 200,
        min_area: int = 40,
        elongation_cutoff: float = 3.0,
        class_names: tuple[str, ...] = CLASS_NAMES,
    ):
        self.threshold = threshold
        self.min_area = min_area
        self.elongation_cutoff = elongation_cutoff
        self.class_names = tuple(class_names)
        self.input_size = 1024
        self.model_path = "stub"
        self.device = "cpu"

    def detect(self, image: np.ndarray, params: InferenceParams) -> list[Detection]:
        arr = ensure_rgb(image)
        h, w = arr.shape[:2]
        fg = arr.mean(axis=2) < self.threshold
        labels, n = ndimage.label(fg, structure=np.ones((3, 3), dtype=bool))
        detections: list[Detection] = []
        for slc_idx, slc in enumerate(ndimage.find_objects(labels)):
            if slc is None:
                continue
            window = labels[slc] == (slc_idx + 1)
            area = int(window.sum())
            if area < self.min_area:
                continue
            confidence = min(0.99, 0.30 + 0.70 * area / (area + 500.0))
            if confidence < params.conf_threshold:
                continue
            oy, ox = slc[0].start, slc[1].start
            mask = BinaryMask(window)
            thickness = 2.0 * float(
                ndimage.distance_transform_edt(np.pad(window, 1)).max()
            )
            # long thin objects are fibers, squat wide ones vessels
            major = max(window.shape)
            class_name = (
                self.class_names[0]
                if major >= self.elongation_cutoff * max(thickness, 1.0)
                else self.class_names[1]
            )
            box = BoundingBox(ox, oy, ox + window.shape[1], oy + window.shape[0])
            contour = extract_contour(mask).translated(ox, oy)
            detections.append(
                Detection(
                    class_name=class_name,
                    confidence=confidence,
                    box=box,
                    mask=mask,
                    mask_origin=(ox, oy),
                    contour=contour,
                )
            )
        detections.sort(key=lambda d: (-d.confidence, d.box.x0, d.box.y0))
        return detections


def load_session(model_path: str | Path, input_size: int = 1024, device: str = "cpu"):
    """Factory for sessions: 'stub' selects the threshold detector."""
    ref = str(model_path)
    if ref == "stub" or ref.startswith("stub:"):
        return ThresholdSession()
    return ModelSession(model_path, input_size=input_size, device=device)


def infer(
    session,
    image: np.ndarray,
    conf_threshold: float = 0.25,
    iou_threshold: float = 0.7,
) -> list[Detection]:
    """Run one image through a session with explicit thresholds."""
    params = InferenceParams(conf_threshold=conf_threshold, nms_iou=iou_threshold)
    return session.detect(image, params)


def save_detections(detections: list[Detection], json_path: Path, npz_path: Path) -> None:
    """Persist detections as JSON metadata plus an NPZ of mask windows."""
    records = []
    arrays: dict[str, np.ndarray] = {}
    for k, det in enumerate(detections):
        records.append(
            {
                "index": k,
                "object_id": det.object_id,
                "class": det.class_name,
                "confidence": det.confidence,
                "box": [det.box.x0, det.box.y0, det.box.x1, det.box.y1],
                "mask_origin": list(det.mask_origin),
                "contour": det.contour.vertices.tolist(),
                "tile_cut": det.tile_cut,
                "source_tiles": list(det.source_tiles),
            }
        )
        arrays[f"mask_{k}"] = np.packbits(det.mask.bits, axis=None)
        arrays[f"shape_{k}"] = np.array(det.mask.bits.shape)
    json_path.write_text(json.dumps(records, indent=1))
    np.savez_compressed(npz_path, **arrays)


def load_detections(json_path: Path, npz_path: Path) -> list[Detection]:
    records = json.loads(json_path.read_text())
    arch = np.load(npz_path)
    out: list[Detection] = []
    for rec in records:
        k = rec["index"]
        shape = tuple(arch[f"shape_{k}"])
        bits = np.unpackbits(arch[f"mask_{k}"], count=shape[0] * shape[1]).reshape(shape).astype(bool)
        out.append(
            Detection(
                class_name=rec["class"],
                confidence=rec["confidence"],
                box=BoundingBox(*rec["box"]),
                mask=BinaryMask(bits),
                mask_origin=tuple(rec["mask_origin"]),
                contour=Polygon(np.array(rec["contour"])),
                tile_cut=rec["tile_cut"],
                object_id=rec["object_id"],
                source_tiles=tuple(rec["source_tiles"]),
            )
        )
    return out
