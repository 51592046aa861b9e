"""Command line interface: analyze, eval, compare, dataset prepare, serve."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .config import (
    CONFIDENCE_PRESETS,
    MorphometryConfig,
    load_service_config,
    resolve_model_path,
)
from .dataset import (
    AugmentationSpec,
    AnnotatedImage,
    augment,
    crop_to_training_tiles,
    export_training_labels,
    parse_via_annotations,
    split_dataset,
    transform_raster,
)
from .evaluation import GroundTruth, evaluate, export_curves
from .geometry import rasterize
from .inference import load_detections, load_session, save_detections
from .service.exports import export_csv, export_masks_zip, overlay_png_bytes
from .service.jobs import JobParams, analyze_image
from .stats import SampleGroup, group_report
from .tiling import WindowedReader, longest_extent

Image.MAX_IMAGE_PIXELS = None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fiberscope",
        description="Detection, segmentation and morphometry of wood fibers "
        "and vessels in brightfield microscopy images.",
    )
    parser.add_argument("--config", help="YAML config file", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="run tiled analysis on one image")
    p.add_argument("--image", required=True)
    p.add_argument("--model", default=None, help="model path, 'stub', or $FIBERSCOPE_MODEL")
    p.add_argument("--out", default=None, help="output directory (default: <image>_analysis)")
    p.add_argument("--tile", type=int, default=1024)
    p.add_argument("--overlap", type=int, default=256)
    p.add_argument("--conf", type=float, default=None,
                   help="confidence threshold or preset name "
                        f"{sorted(CONFIDENCE_PRESETS)}")
    p.add_argument("--preset", choices=sorted(CONFIDENCE_PRESETS), default=None)
    p.add_argument("--nms", type=float, default=0.7)
    p.add_argument("--dedup", type=float, default=0.5)
    p.add_argument("--border-margin", type=int, default=0)
    p.add_argument("--px-um", type=float, default=0.65)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--euclidean-length", action="store_true",
                   help="weight diagonal skeleton steps by sqrt(2)")

    p = sub.add_parser("eval", help="score stored predictions against annotations")
    p.add_argument("--pred", required=True, help="directory with <stem>.detections.json")
    p.add_argument("--truth", required=True, help="VIA polygon annotation JSON")
    p.add_argument("--images", default=None, help="image directory (for sizes)")
    p.add_argument("--mode", choices=("mask", "box"), default="mask")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", default=None, help="write report JSON and curve TSVs here")

    p = sub.add_parser("compare", help="two-sample comparison of measurement CSVs")
    p.add_argument(
        "--group", action="append", required=True,
        help="LABEL=path/to/results.csv (repeat for each group)",
    )
    p.add_argument(
        "--metric", default="length_um",
        choices=("length_um", "width_um", "area_um2", "length_px", "width_px", "area_px2"),
    )
    p.add_argument("--variant", choices=("pooled", "welch"), default="pooled")
    p.add_argument("--class", dest="class_name", default=None,
                   help="restrict to one class (fiber or vessel)")

    p = sub.add_parser("dataset", help="dataset tooling")
    dsub = p.add_subparsers(dest="dataset_command", required=True)
    dp = dsub.add_parser("prepare", help="tiles, augmentation, split and labels")
    dp.add_argument("--annotations", required=True)
    dp.add_argument("--images", required=True)
    dp.add_argument("--out", required=True)
    dp.add_argument("--tile", type=int, default=1024)
    dp.add_argument("--train-frac", type=float, default=0.85)
    dp.add_argument("--seed", type=int, default=0)
    dp.add_argument("--flip-h", action="store_true")
    dp.add_argument("--flip-v", action="store_true")
    dp.add_argument("--rot90", action="store_true")
    dp.add_argument("--scale", type=float, action="append", default=None)

    p = sub.add_parser("serve", help="run the HTTP analysis service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-root", default="fiberscope-data")
    p.add_argument("--model", default=None)
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--frontend", default=None, help="directory of built web UI")

    return parser


def cmd_analyze(args) -> int:
    conf = args.conf
    if args.preset:
        conf = CONFIDENCE_PRESETS[args.preset]
    if conf is None:
        conf = CONFIDENCE_PRESETS["default"]
    params = JobParams(
        conf_threshold=conf,
        nms_iou=args.nms,
        tile_size=args.tile,
        overlap=args.overlap,
        dedup_iou=args.dedup,
        border_margin=args.border_margin,
        microns_per_pixel=args.px_um,
    )
    session = load_session(resolve_model_path(args.model))
    reader = WindowedReader(args.image)
    merged, records, rejected = analyze_image(
        session, reader, params, workers=args.workers,
        morphometry=MorphometryConfig(euclidean_length=args.euclidean_length),
    )
    kept_ids = {r.object_id for r in records}
    merged.detections = [d for d in merged.detections if d.object_id in kept_ids]

    out_dir = Path(args.out) if args.out else Path(str(args.image) + "_analysis")
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    (out_dir / f"{stem}.results.csv").write_text(export_csv(merged.detections, records))
    save_detections(
        merged.detections,
        out_dir / f"{stem}.detections.json",
        out_dir / f"{stem}.masks.npz",
    )
    (out_dir / f"{stem}.masks.zip").write_bytes(
        export_masks_zip(merged.detections, reader.size, stem)
    )
    image = reader.read_window(0, 0, reader.width, reader.height)
    (out_dir / f"{stem}.overlay.png").write_bytes(
        overlay_png_bytes(image, merged.detections)
    )

    counts = merged.class_counts()
    print(f"image: {args.image} ({reader.width}x{reader.height})")
    print(
        f"detections: {sum(counts.values())} "
        f"({', '.join(f'{v} {k}' for k, v in sorted(counts.items())) or 'none'})"
    )
    print(
        f"duplicates removed: {merged.duplicates_removed}, "
        f"border excluded: {merged.border_excluded}, "
        f"rejected measurements: {len(rejected)}"
    )
    extent = longest_extent(merged.detections) if merged.detections else 0.0
    if extent > 0.8 * args.overlap:
        print(
            f"warning: longest object extent {extent:.0f}px approaches the "
            f"tile overlap ({args.overlap}px); objects spanning seams may be "
            f"cut — consider a larger --overlap",
            file=sys.stderr,
        )
    for cls in sorted(counts):
        vals = [r.length_um for r in records if r.class_name == cls]
        if vals:
            print(
                f"{cls}: mean length {np.mean(vals):.1f} um, "
                f"mean width {np.mean([r.width_um for r in records if r.class_name == cls]):.1f} um, "
                f"mean area {np.mean([r.area_um2 for r in records if r.class_name == cls]):.0f} um^2"
            )
    print(f"outputs in {out_dir}")
    return 0


def _truth_masks(annotated: AnnotatedImage) -> list[GroundTruth]:
    out = []
    for obj in annotated.objects:
        mask = rasterize(obj.polygon, annotated.width, annotated.height)
        if mask.count:
            out.append(GroundTruth(class_name=obj.class_name, mask=mask))
    return out


def cmd_eval(args) -> int:
    sizes = {}
    if args.images:
        for path in Path(args.images).iterdir():
            if path.suffix.lower() in (".png", ".jpg", ".jpeg", ".tif", ".tiff"):
                with Image.open(path) as im:
                    sizes[path.name] = im.size
    result = parse_via_annotations(Path(args.truth).read_text(), sizes or None)
    pred_dir = Path(args.pred)
    scenes = []
    missing = []
    for annotated in result.images:
        stem = annotated.sample_id
        dj = pred_dir / f"{stem}.detections.json"
        dn = pred_dir / f"{stem}.masks.npz"
        if not dj.is_file():
            missing.append(stem)
            continue
        preds = load_detections(dj, dn)
        scenes.append((preds, _truth_masks(annotated)))
    if missing:
        print(f"warning: no predictions for {len(missing)} image(s): "
              f"{', '.join(missing[:5])}", file=sys.stderr)
    if not scenes:
        print("error: nothing to evaluate", file=sys.stderr)
        return 2
    report = evaluate(scenes, mode=args.mode, iou_threshold=args.iou)
    print(report.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
        for name, content in export_curves(report).items():
            (out / name).write_text(content)
        print(f"report and curves written to {out}")
    return 0


def _load_metric(path: str, metric: str, class_name: str | None) -> list[float]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise SystemExit(f"{path}: empty CSV")
    if metric not in rows[0]:
        raise SystemExit(f"{path}: no column {metric!r}")
    vals = [
        float(r[metric])
        for r in rows
        if class_name is None or r.get("class") == class_name
    ]
    if len(vals) < 2:
        raise SystemExit(f"{path}: fewer than 2 values for metric {metric!r}")
    return vals


def cmd_compare(args) -> int:
    groups = []
    for spec in args.group:
        if "=" not in spec:
            raise SystemExit(f"--group expects LABEL=path, got {spec!r}")
        label, path = spec.split("=", 1)
        groups.append(
            SampleGroup(label, tuple(_load_metric(path, args.metric, args.class_name)))
        )
    report = group_report(groups, args.metric, args.variant)
    print(report.to_text())
    return 0


def cmd_dataset_prepare(args) -> int:
    images_dir = Path(args.images)
    sizes = {}
    rasters = {}
    for path in sorted(images_dir.iterdir()):
        if path.suffix.lower() in (".png", ".jpg", ".jpeg", ".tif", ".tiff"):
            with Image.open(path) as im:
                sizes[path.name] = im.size
            rasters[path.stem] = path
    result = parse_via_annotations(Path(args.annotations).read_text(), sizes or None)
    if result.dropped_regions:
        print(f"warning: dropped {result.dropped_regions} region(s) with <3 vertices",
              file=sys.stderr)

    spec = AugmentationSpec(
        horizontal_flip=args.flip_h,
        vertical_flip=args.flip_v,
        rotations=(90,) if args.rot90 else (),
        scale_factors=tuple(args.scale or ()),
        seed=args.seed,
    )

    out = Path(args.out)
    all_tiles: list[AnnotatedImage] = []
    tile_rasters: dict[str, np.ndarray] = {}
    for annotated in result.images:
        src = rasters.get(annotated.sample_id)
        raster = np.asarray(Image.open(src).convert("RGB")) if src else None
        tiles = crop_to_training_tiles(annotated, args.tile)
        for tile in tiles:
            ox, oy = map(int, tile.sample_id.rsplit("__t", 1)[1].split("_"))
            if raster is not None:
                window = raster[oy : oy + args.tile, ox : ox + args.tile]
                if window.shape[:2] != (args.tile, args.tile):
                    padded = np.full((args.tile, args.tile, 3), 255, dtype=np.uint8)
                    padded[: window.shape[0], : window.shape[1]] = window
                    window = padded
                tile_rasters[tile.sample_id] = window
            all_tiles.append(tile)
            for aug in augment(tile, spec):
                all_tiles.append(aug)
                if tile.sample_id in tile_rasters:
                    token = aug.sample_id.rsplit("__", 1)[1]
                    tile_rasters[aug.sample_id] = transform_raster(
                        tile_rasters[tile.sample_id], token
                    )

    split = split_dataset(
        [t.sample_id for t in all_tiles], args.train_frac, args.seed
    )
    summary = export_training_labels(all_tiles, split, out)
    for side, ids in (("train", split.train), ("val", split.val)):
        img_dir = out / "images" / side
        for sample_id in ids:
            arr = tile_rasters.get(sample_id)
            if arr is not None:
                Image.fromarray(arr).save(img_dir / f"{sample_id}.png")
    print(
        f"tiles: {len(all_tiles)} ({summary.train_images} train / "
        f"{summary.val_images} val), objects: {summary.objects_per_class}"
    )
    print(f"manifest: {summary.manifest_path}")
    return 0


def cmd_serve(args, config_path) -> int:
    import uvicorn

    from .service import create_app

    config = load_service_config(
        config_path,
        data_root=args.data_root,
        model_path=resolve_model_path(args.model),
        workers=args.workers,
    )
    frontend = args.frontend
    if frontend is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        frontend = bundled if bundled.is_dir() else None
    app = create_app(config, frontend_dir=frontend)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "analyze":
        return cmd_analyze(args)
    if args.command == "eval":
        return cmd_eval(args)
    if args.command == "compare":
        return cmd_compare(args)
    if args.command == "dataset":
        return cmd_dataset_prepare(args)
    if args.command == "serve":
        return cmd_serve(args, args.config)
    raise SystemExit(2)


if __name__ == "__main__":
    raise SystemExit(main())
