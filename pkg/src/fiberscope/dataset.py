"""Annotation parsing, tiling, augmentation and export for training data.

Input is the VIA polygon export (JSON with per-file regions carrying paired
x/y vertex arrays and a class attribute).  Output is the plain-text polygon
segmentation label format: one line per object, class index followed by
normalized vertex pairs, plus a YAML manifest naming classes and split
directories.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .geometry import GeometryError, Polygon, clip_polygon_to_rect, polygon_area

CLASS_INDEX = {"fiber": 0, "vessel": 1}
CLASS_NAMES = ("fiber", "vessel")
CLIP_RETENTION = 0.10  # objects keeping less area than this fraction are dropped

ROTATION_TOKENS = {90: "rot90", 180: "rot180", 270: "rot270"}


class AnnotationParseError(ValueError):
    """Malformed annotation document; message carries file/record locus."""


@dataclass(frozen=True)
class AnnotatedObject:
    class_name: str
    polygon: Polygon


@dataclass(frozen=True, eq=False)
class AnnotatedImage:
    """One source image with its outlined objects."""

    sample_id: str
    image_path: Path | None
    width: int
    height: int
    objects: tuple[AnnotatedObject, ...]

    def class_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for obj in self.objects:
            counts[obj.class_name] = counts.get(obj.class_name, 0) + 1
        return counts


@dataclass(frozen=True)
class AugmentationSpec:
    """Which single-transform variants to generate per image."""

    horizontal_flip: bool = False
    vertical_flip: bool = False
    rotations: tuple[int, ...] = ()
    scale_factors: tuple[float, ...] = ()
    arbitrary_rotations: tuple[float, ...] = ()  # degrees; clipped at edges
    seed: int = 0

    def __post_init__(self) -> None:
        for r in self.rotations:
            if r not in (90, 180, 270):
                raise ValueError(f"rotations must be multiples of 90 in (90,180,270), got {r}")
        for s in self.scale_factors:
            if not 0.25 < s < 4.0:
                raise ValueError(f"scale factor {s} outside (0.25, 4.0)")


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    train_fraction: float
    seed: int


@dataclass(frozen=True)
class ParseResult:
    images: tuple[AnnotatedImage, ...]
    dropped_regions: int

    def total_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for img in self.images:
            for cls, n in img.class_counts().items():
                counts[cls] = counts.get(cls, 0) + n
        return counts


def _region_class(attrs: dict, filename: str, index: int) -> str:
    for value in attrs.values():
        if isinstance(value, str) and value.strip().lower() in CLASS_INDEX:
            return value.strip().lower()
        if isinstance(value, dict):  # VIA checkbox attribute
            for key, flag in value.items():
                if flag and key.strip().lower() in CLASS_INDEX:
                    return key.strip().lower()
    raise AnnotationParseError(
        f"{filename} region {index}: no attribute matches a known class "
        f"{sorted(CLASS_INDEX)}; attributes were {attrs!r}"
    )


def parse_via_annotations(
    document: str | dict,
    image_sizes: dict[str, tuple[int, int]] | None = None,
) -> ParseResult:
    """Parse a VIA polygon-region export into annotated images.

    image_sizes maps filename to (width, height); when absent, dimensions
    default to the tight bound of the polygon vertices.  Regions with fewer
    than three vertices are dropped and counted.
    """
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise AnnotationParseError(f"invalid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise AnnotationParseError(f"expected a JSON object, got {type(doc).__name__}")
    if "_via_img_metadata" in doc:
        doc = doc["_via_img_metadata"]

    images: list[AnnotatedImage] = []
    dropped = 0
    for key in sorted(doc):
        entry = doc[key]
        if not isinstance(entry, dict) or "filename" not in entry:
            raise AnnotationParseError(f"entry {key!r}: missing filename")
        filename = entry["filename"]
        regions = entry.get("regions", [])
        if isinstance(regions, dict):  # VIA 1.x indexes regions by number
            regions = [regions[k] for k in sorted(regions)]
        objects: list[AnnotatedObject] = []
        max_x = max_y = 0.0
        for idx, region in enumerate(regions):
            shape = region.get("shape_attributes", {})
            name = shape.get("name")
            if name == "rect":
                x, y = shape.get("x", 0), shape.get("y", 0)
                w, h = shape.get("width", 0), shape.get("height", 0)
                xs = [x, x + w, x + w, x]
                ys = [y, y, y + h, y + h]
            elif name in ("polygon", "polyline"):
                xs = shape.get("all_points_x")
                ys = shape.get("all_points_y")
                if xs is None or ys is None:
                    raise AnnotationParseError(
                        f"{filename} region {idx}: missing vertex arrays"
                    )
                if len(xs) != len(ys):
                    raise AnnotationParseError(
                        f"{filename} region {idx}: {len(xs)} x-coords vs "
                        f"{len(ys)} y-coords"
                    )
            else:
                raise AnnotationParseError(
                    f"{filename} region {idx}: unsupported shape {name!r}"
                )
            if len(xs) < 3:
                dropped += 1
                continue
            cls = _region_class(region.get("region_attributes", {}), filename, idx)
            try:
                poly = Polygon(np.column_stack([xs, ys]).astype(float))
            except GeometryError:
                dropped += 1
                continue
            objects.append(AnnotatedObject(class_name=cls, polygon=poly))
            max_x = max(max_x, float(max(xs)))
            max_y = max(max_y, float(max(ys)))

        if image_sizes and filename in image_sizes:
            width, height = image_sizes[filename]
        else:
            width = int(math.ceil(max_x)) or 1
            height = int(math.ceil(max_y)) or 1
        # clamp vertices into the canvas
        clamped = []
        for obj in objects:
            v = obj.polygon.vertices.copy()
            v[:, 0] = np.clip(v[:, 0], 0, width)
            v[:, 1] = np.clip(v[:, 1], 0, height)
            try:
                clamped.append(AnnotatedObject(obj.class_name, Polygon(v)))
            except GeometryError:
                dropped += 1
        images.append(
            AnnotatedImage(
                sample_id=Path(filename).stem,
                image_path=Path(filename),
                width=width,
                height=height,
                objects=tuple(clamped),
            )
        )
    return ParseResult(images=tuple(images), dropped_regions=dropped)


def tile_origins(dim: int, tile: int) -> list[int]:
    """Non-overlapping grid origins with the last clamped to the edge."""
    if dim <= tile:
        return [0]
    origins = list(range(0, dim - tile + 1, tile))
    if origins[-1] + tile < dim:
        origins.append(dim - tile)
    return origins


def crop_to_training_tiles(image: AnnotatedImage, tile: int) -> list[AnnotatedImage]:
    """Split into tile x tile crops; polygons clipped, slivers dropped.

    An object lands in a tile only when the clipped area keeps at least 10%
    of the original.
    """
    tiles: list[AnnotatedImage] = []
    for oy in tile_origins(image.height, tile):
        for ox in tile_origins(image.width, tile):
            objects: list[AnnotatedObject] = []
            for obj in image.objects:
                clipped = clip_polygon_to_rect(
                    obj.polygon, ox, oy, ox + tile, oy + tile
                )
                if clipped is None:
                    continue
                if polygon_area(clipped) < CLIP_RETENTION * polygon_area(obj.polygon):
                    continue
                objects.append(
                    AnnotatedObject(obj.class_name, clipped.translated(-ox, -oy))
                )
            tiles.append(
                AnnotatedImage(
                    sample_id=f"{image.sample_id}__t{ox}_{oy}",
                    image_path=image.image_path,
                    width=tile,
                    height=tile,
                    objects=tuple(objects),
                )
            )
    return tiles


def _transform_vertices(v: np.ndarray, token: str, w: int, h: int) -> tuple[np.ndarray, int, int]:
    """Continuous vertex maps consistent with the raster transforms."""
    x, y = v[:, 0], v[:, 1]
    if token == "hflip":
        return np.column_stack([w - x, y]), w, h
    if token == "vflip":
        return np.column_stack([x, h - y]), w, h
    if token == "rot90":
        return np.column_stack([h - y, x]), h, w
    if token == "rot180":
        return np.column_stack([w - x, h - y]), w, h
    if token == "rot270":
        return np.column_stack([y, w - x]), h, w
    if token.startswith("s"):
        s = float(token[1:])
        return np.column_stack([x * s, y * s]), int(round(w * s)), int(round(h * s))
    if token.startswith("r"):
        angle = math.radians(float(token[1:]))
        cx, cy = w / 2.0, h / 2.0
        ca, sa = math.cos(angle), math.sin(angle)
        xr = cx + (x - cx) * ca - (y - cy) * sa
        yr = cy + (x - cx) * sa + (y - cy) * ca
        return np.column_stack([xr, yr]), w, h
    raise ValueError(f"unknown transform token {token!r}")


def transform_raster(arr: np.ndarray, token: str) -> np.ndarray:
    """Raster counterpart of _transform_vertices (same conventions)."""
    from PIL import Image

    if token == "hflip":
        return arr[:, ::-1].copy()
    if token == "vflip":
        return arr[::-1, :].copy()
    if token == "rot90":
        return np.rot90(arr, k=3).copy()
    if token == "rot180":
        return np.rot90(arr, k=2).copy()
    if token == "rot270":
        return np.rot90(arr, k=1).copy()
    if token.startswith("s"):
        s = float(token[1:])
        h, w = arr.shape[:2]
        img = Image.fromarray(arr)
        return np.asarray(
            img.resize((int(round(w * s)), int(round(h * s))), Image.BILINEAR)
        )
    if token.startswith("r"):
        angle = float(token[1:])
        img = Image.fromarray(arr)
        return np.asarray(
            img.rotate(-angle, resample=Image.BILINEAR, fillcolor=(255, 255, 255))
        )
    raise ValueError(f"unknown transform token {token!r}")


def enabled_tokens(spec: AugmentationSpec) -> list[str]:
    tokens: list[str] = []
    if spec.horizontal_flip:
        tokens.append("hflip")
    if spec.vertical_flip:
        tokens.append("vflip")
    tokens += [ROTATION_TOKENS[r] for r in sorted(spec.rotations)]
    tokens += [f"s{s:g}" for s in spec.scale_factors]
    tokens += [f"r{a:g}" for a in spec.arbitrary_rotations]
    return tokens


def _transformed_dims(token: str, w: int, h: int) -> tuple[int, int]:
    if token in ("rot90", "rot270"):
        return h, w
    if token.startswith("s"):
        s = float(token[1:])
        return int(round(w * s)), int(round(h * s))
    return w, h


def augment(image: AnnotatedImage, spec: AugmentationSpec) -> list[AnnotatedImage]:
    """One output image per enabled transform; polygons follow pixels.

    Arbitrary-angle rotations clip polygons to the canvas afterwards.
    Deterministic: the output order and content depend only on the inputs.
    """
    out: list[AnnotatedImage] = []
    for token in enabled_tokens(spec):
        new_w, new_h = _transformed_dims(token, image.width, image.height)
        objects: list[AnnotatedObject] = []
        for obj in image.objects:
            v, _, _ = _transform_vertices(
                obj.polygon.vertices, token, image.width, image.height
            )
            try:
                poly = Polygon(v)
            except GeometryError:
                continue
            if token.startswith("r") and not token.startswith("rot"):
                clipped = clip_polygon_to_rect(poly, 0, 0, new_w, new_h)
                if clipped is None:
                    continue
                poly = clipped
            objects.append(AnnotatedObject(obj.class_name, poly))
        out.append(
            AnnotatedImage(
                sample_id=f"{image.sample_id}__{token}",
                image_path=image.image_path,
                width=new_w,
                height=new_h,
                objects=tuple(objects),
            )
        )
    return out


def source_of(sample_id: str) -> str:
    """Source image id: everything before the first augmentation/tile suffix."""
    return sample_id.split("__", 1)[0]


def split_dataset(
    samples: list[str],
    train_fraction: float,
    seed: int,
    group_key=source_of,
) -> DatasetSplit:
    """Deterministic shuffled partition keeping derived samples together.

    |train| equals round(fraction * total) exactly when every group is a
    singleton; grouped samples land on one side wholesale, so the split is
    then the closest achievable without breaking a group.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if len(samples) < 2:
        raise ValueError(f"need >= 2 samples to split, got {len(samples)}")
    if len(set(samples)) != len(samples):
        raise ValueError("sample ids must be unique")
    groups: dict[str, list[str]] = {}
    for s in samples:
        groups.setdefault(group_key(s), []).append(s)
    keys = sorted(groups)
    rng = random.Random(seed)
    rng.shuffle(keys)
    target = round(train_fraction * len(samples))
    train: list[str] = []
    val: list[str] = []
    for key in keys:
        bucket = train if len(train) + len(groups[key]) <= target else val
        bucket.extend(groups[key])
    if not val and train:
        moved = groups[keys[-1]]
        val.extend(moved)
        train = [s for s in train if s not in set(moved)]
    return DatasetSplit(
        train=tuple(train), val=tuple(val),
        train_fraction=train_fraction, seed=seed,
    )


@dataclass(frozen=True)
class ExportSummary:
    train_images: int
    val_images: int
    objects_per_class: dict[str, int]
    manifest_path: Path


def format_label_line(class_name: str, polygon: Polygon, width: int, height: int) -> str:
    idx = CLASS_INDEX[class_name]
    coords = []
    for x, y in polygon.vertices:
        coords.append(f"{x / width:.6g}")
        coords.append(f"{y / height:.6g}")
    return " ".join([str(idx)] + coords)


def parse_label_line(line: str) -> tuple[int, np.ndarray]:
    parts = line.split()
    idx = int(parts[0])
    vals = np.array([float(p) for p in parts[1:]], dtype=float)
    return idx, vals.reshape(-1, 2)


def export_training_labels(
    dataset: list[AnnotatedImage],
    split: DatasetSplit,
    out_dir: str | Path,
) -> ExportSummary:
    """Write one label file per image plus the dataset manifest.

    Layout: labels/{train,val}/<sample>.txt and a manifest data.yaml naming
    classes and the images/{train,val} directories.
    """
    out = Path(out_dir)
    by_id = {img.sample_id: img for img in dataset}
    missing = [s for s in (*split.train, *split.val) if s not in by_id]
    if missing:
        raise ValueError(f"split references unknown samples: {missing[:5]}")
    counts: dict[str, int] = {}
    n_written = {"train": 0, "val": 0}
    for side, ids in (("train", split.train), ("val", split.val)):
        label_dir = out / "labels" / side
        label_dir.mkdir(parents=True, exist_ok=True)
        (out / "images" / side).mkdir(parents=True, exist_ok=True)
        for sample_id in ids:
            img = by_id[sample_id]
            lines = [
                format_label_line(o.class_name, o.polygon, img.width, img.height)
                for o in img.objects
            ]
            try:
                (label_dir / f"{sample_id}.txt").write_text(
                    "\n".join(lines) + ("\n" if lines else "")
                )
            except OSError as exc:
                raise OSError(
                    f"failed writing label file {label_dir / sample_id}: {exc}"
                ) from exc
            n_written[side] += 1
            for o in img.objects:
                counts[o.class_name] = counts.get(o.class_name, 0) + 1
    manifest = {
        "path": str(out.resolve()),
        "train": "images/train",
        "val": "images/val",
        "names": {v: k for k, v in CLASS_INDEX.items()},
    }
    manifest_path = out / "data.yaml"
    manifest_path.write_text(yaml.safe_dump(manifest, sort_keys=False))
    return ExportSummary(
        train_images=n_written["train"],
        val_images=n_written["val"],
        objects_per_class=counts,
        manifest_path=manifest_path,
    )
