#!/usr/bin/env python3
"""Render a synthetic street-scene case to disk and print the matching
`safedrive run` invocation.

Example:
    python scripts/make_demo_case.py demo_case --seed 17 --width 1280 --height 720
"""

import argparse
import json

from safedrive.scene_io import write_scene_case
from safedrive.synthetic import DegradationSpec, SceneSpec


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", help="directory to write the case into")
    parser.add_argument("--seed", type=int, default=17)
    parser.add_argument("--width", type=int, default=640)
    parser.add_argument("--height", type=int, default=360)
    parser.add_argument("--noise", type=float, default=0.0,
                        help="intensity noise sigma on the current frame "
                             "(0.08 is roughly 0.5 px of corner jitter)")
    parser.add_argument("--keep-paint", action="store_true",
                        help="do not erase lane paint from the current frame")
    args = parser.parse_args()

    spec = SceneSpec(
        seed=args.seed,
        image_size=(args.width, args.height),
        degradation=DegradationSpec(
            erase_paint=not args.keep_paint, noise_sigma=args.noise
        ),
    )
    case_dir, _ = write_scene_case(args.out_dir, spec)
    case = json.loads((case_dir / "case.json").read_text(encoding="utf-8"))
    print(f"wrote case to {case_dir}")
    print(
        "run it with:\n"
        f"  safedrive run --manifest {case_dir / 'manifest.txt'} "
        f"--image {case_dir / 'current.png'} "
        f"--lat {case['lat']:.9f} --lon {case['lon']:.9f} "
        f"--truth {case_dir / 'truth.txt'} "
        f"--config {case_dir / 'case.json'} --out {case_dir / 'out'}"
    )


if __name__ == "__main__":
    main()
