"""Standalone command: export image embeddings into the EMB1 format."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .extract import ExtractionError, ExtractionJob, extract


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="embed-extract",
        description="Export Inception-V3 (midlevel) / VGG16 (highlevel) embeddings.",
    )
    parser.add_argument("--images", required=True, help="image directory")
    parser.add_argument("--labels", required=True, help="CSV with header image,class_id")
    parser.add_argument(
        "--extractor", choices=("midlevel", "highlevel", "both"), default="both"
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--tag", default="dataset")
    parser.add_argument("--domain", choices=("real", "synthetic"), default="real")
    parser.add_argument(
        "--weights",
        choices=("pretrained", "random"),
        default="pretrained",
        help="random skips the ImageNet weight download (offline runs)",
    )
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    job = ExtractionJob(
        images_dir=Path(args.images),
        labels_csv=Path(args.labels),
        out_dir=Path(args.out),
        extractor=args.extractor,
        dataset_tag=args.tag,
        domain=args.domain,
        weights=args.weights,
        batch_size=args.batch_size,
        device=args.device,
    )
    try:
        outputs = extract(job)
    except ExtractionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for extractor, path in outputs.items():
        print(f"{extractor}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
