"""Command-line front end for batch feature extraction."""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractionJob, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="featext", description=__doc__)
    parser.add_argument("--images", required=True, help="directory of input images")
    parser.add_argument("--out", required=True, help="FEAT1 output path")
    parser.add_argument("--model", default="resnet50")
    parser.add_argument("--weights", default=None,
                        help="state-dict file; omitted = seeded random init")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExtractionJob(
        image_dir=args.images,
        output_path=args.out,
        model_name=args.model,
        weights_path=args.weights,
        batch_size=args.batch_size,
        device=args.device,
        seed=args.seed,
    )
    try:
        features = extract(job)
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    dim = len(next(iter(features.values())))
    print(f"wrote {len(features)} features (dim {dim}) to {args.out}"
          + (f"; skipped {len(job.skipped)}" if job.skipped else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
