"""CLI for the embedding exporter.

Exit codes: 0 success, 1 runtime/download failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Export vision-backbone embeddings as FSE1 files",
    )
    parser.add_argument("--dataset", required=True, choices=["cifar100", "fake"])
    parser.add_argument("--split", required=True, choices=["train", "test"])
    parser.add_argument("--backbone", default="resnet18")
    parser.add_argument(
        "--weights", default="pretrained",
        help="'pretrained', 'random', or a state-dict path",
    )
    parser.add_argument("--out", required=True)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--data-root", default="./data")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--fake-classes", type=int, default=100)
    parser.add_argument("--fake-per-class", type=int, default=100)
    args = parser.parse_args(argv)

    from .export import ExportJob, export

    job = ExportJob(
        dataset=args.dataset,
        split=args.split,
        backbone=args.backbone,
        weights=args.weights,
        output=args.out,
        batch_size=args.batch_size,
        data_root=args.data_root,
        seed=args.seed,
        fake_classes=args.fake_classes,
        fake_per_class=args.fake_per_class,
    )
    try:
        count = export(job)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {count} records to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
