#!/usr/bin/env python3
"""Write a synthetic demo slide for trying the CLI and the web UI."""

import argparse
import sys
from pathlib import Path

from PIL import Image

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fiberscope.synthetic import generate_scene


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_slide.png")
    parser.add_argument("--size", type=int, default=2048)
    parser.add_argument("--objects", type=int, default=40)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    canvas, objects = generate_scene(
        args.size, args.size, args.objects, seed=args.seed,
        margin=24, max_extent=250, vessel_fraction=0.15,
    )
    Image.fromarray(canvas).save(args.out)
    fibers = sum(1 for o in objects if o.class_name == "fiber")
    vessels = sum(1 for o in objects if o.class_name == "vessel")
    print(f"wrote {args.out} ({args.size}x{args.size}, {fibers} fibers, {vessels} vessels)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
