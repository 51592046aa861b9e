#!/usr/bin/env python3
"""Scale-invariance experiment on a synthetic slide.

Plants N known objects on a large canvas, analyzes it tiled and whole,
and compares the per-metric distributions with two-sample t-tests.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fiberscope.config import InferenceParams, TilingParams
from fiberscope.inference import ThresholdSession
from fiberscope.morphometry import measure_detections
from fiberscope.stats import SampleGroup, group_report
from fiberscope.synthetic import generate_scene
from fiberscope.tiling import exclude_border, run_tiled


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=8192)
    parser.add_argument("--objects", type=int, default=200)
    parser.add_argument("--border-objects", type=int, default=4)
    parser.add_argument("--tile", type=int, default=1024)
    parser.add_argument("--overlap", type=int, default=256)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--workers", type=int, default=4)
    args = parser.parse_args()

    print(f"planting {args.objects} objects on {args.size}x{args.size} ...")
    canvas, _ = generate_scene(
        args.size, args.size, args.objects, seed=args.seed,
        margin=24, max_extent=min(250, args.overlap),
        n_border_objects=args.border_objects,
    )
    session = ThresholdSession()

    t0 = time.perf_counter()
    merged = run_tiled(
        session, canvas,
        tiling=TilingParams(tile_size=args.tile, overlap=args.overlap,
                            workers=args.workers),
    )
    t_tiled = time.perf_counter() - t0
    print(
        f"tiled: {len(merged.detections)} objects "
        f"({merged.duplicates_removed} duplicates removed, "
        f"{merged.border_excluded} border-excluded) in {t_tiled:.1f}s"
    )

    t0 = time.perf_counter()
    whole = session.detect(canvas, InferenceParams())
    whole_kept, excluded = exclude_border(whole, (args.size, args.size), 0)
    t_whole = time.perf_counter() - t0
    print(f"whole-image: {len(whole_kept)} objects ({excluded} border-excluded) "
          f"in {t_whole:.1f}s")

    tiled_records, _ = measure_detections(merged.detections)
    whole_records, _ = measure_detections(whole_kept)

    for metric in ("length_um", "width_um", "area_um2"):
        tv = tuple(getattr(r, metric) for r in tiled_records)
        wv = tuple(getattr(r, metric) for r in whole_records)
        report = group_report(
            [SampleGroup("tiled", tv), SampleGroup("whole", wv)], metric
        )
        print()
        print(report.to_text())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
