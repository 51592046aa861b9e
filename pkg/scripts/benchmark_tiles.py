#!/usr/bin/env python3
"""Throughput benchmark: tiles/second for the non-inference pipeline."""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fiberscope.config import InferenceParams, TilingParams
from fiberscope.inference import ThresholdSession
from fiberscope.morphometry import measure_detections
from fiberscope.synthetic import generate_scene
from fiberscope.tiling import plan_tiles, run_tiled


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=4096)
    parser.add_argument("--objects-per-tile", type=int, default=20)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    grid = plan_tiles((args.size, args.size), 1024, 256)
    n_objects = args.objects_per_tile * grid.tile_count * 2 // 3
    canvas, _ = generate_scene(
        args.size, args.size, n_objects, seed=11, margin=16, max_extent=144
    )
    session = ThresholdSession()
    session.detect(canvas[:256, :256], InferenceParams())  # warm-up

    rates = []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        merged = run_tiled(
            session, canvas,
            tiling=TilingParams(tile_size=1024, overlap=256, workers=args.workers),
        )
        measure_detections(merged.detections)
        elapsed = time.perf_counter() - t0
        rates.append(grid.tile_count / elapsed)
    print(
        f"{grid.tile_count} tiles, {len(merged.detections)} objects, "
        f"workers={args.workers}: "
        f"best {max(rates):.1f} tiles/s, median {sorted(rates)[len(rates)//2]:.1f}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
