"""Command-line driver: synth, train, run, report.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .data import TRAIN, load_embeddings, save_embeddings, synth_generate
from .errors import FscilError
from .runner import RunConfig, execute_run, report_from_run_dir
from .training import TrainConfig, export_features, train, write_train_log


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fscilkit",
        description="Feature-space toolkit for few-shot class-incremental learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic Gaussian-cluster dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--train-per-class", type=int, default=20)
    p.add_argument("--test-per-class", type=int, default=20)
    p.add_argument("--spread", type=float, default=0.1)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["binary", "csv"], default="binary")

    p = sub.add_parser("train", help="train the toy extractor and export features")
    p.add_argument("--data", required=True, help="raw input vectors (FSE1 file)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--base-classes", type=int, default=None,
                   help="leading class count used for training (default: all)")
    p.add_argument("--config", default=None, help="TrainConfig JSON file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--virtual-pool", type=int)
    p.add_argument("--no-intra", action="store_true")
    p.add_argument("--lambda-range", default=None, help="lo,hi")
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--feat-dim", type=int)
    p.add_argument("--sr-hidden", type=int)
    p.add_argument("--sr-dim", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("run", help="execute the incremental session protocol")
    p.add_argument("--config", required=True, help="RunConfig JSON file")
    p.add_argument("--output-dir")
    p.add_argument("--g-dataset")
    p.add_argument("--gt-dataset")
    p.add_argument("--classifier-kind", choices=["prototype", "bgmm"])
    p.add_argument("--dual", dest="dual", action="store_true", default=None)
    p.add_argument("--no-dual", dest="dual", action="store_false")
    p.add_argument("--resistance", dest="resistance", action="store_true", default=None)
    p.add_argument("--no-resistance", dest="resistance", action="store_false")
    p.add_argument("--calibration", dest="calibration", action="store_true", default=None)
    p.add_argument("--no-calibration", dest="calibration", action="store_false")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("report", help="re-render metrics from prediction dumps")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out-dir", default=None)
    return parser


def _cmd_synth(args) -> int:
    ds = synth_generate(
        classes=args.classes,
        dim=args.dim,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        spread=args.spread,
        separation=args.separation,
        seed=args.seed,
    )
    save_embeddings(ds, args.out, format=args.format)
    print(f"wrote {len(ds.records)} records ({args.classes} classes, dim {args.dim}) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    raw = load_embeddings(args.data)
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {}
    for name in ("epochs", "lr", "momentum", "batch_size", "delta", "virtual_pool",
                 "hidden_dim", "feat_dim", "sr_hidden", "sr_dim", "seed"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.no_intra:
        overrides["intra"] = False
    if args.lambda_range:
        lo, hi = (float(v) for v in args.lambda_range.split(","))
        overrides["lambda_range"] = (lo, hi)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)

    n_base = args.base_classes if args.base_classes is not None else raw.class_count
    idx = raw.indices(split=TRAIN, classes=range(n_base))
    if not idx:
        raise FscilError(f"no train-split records in the first {n_base} classes")
    X = np.stack([raw.records[i].feature for i in idx]).astype(np.float64)
    y = np.array([raw.records[i].class_id for i in idx])
    model, log = train(X, y, n_base, cfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save(out_dir / "model.bin")
    write_train_log(log, out_dir / "train_log.csv")
    ds_g, ds_gt = export_features(model, raw)
    save_embeddings(ds_g, out_dir / "g.fse")
    save_embeddings(ds_gt, out_dir / "gt.fse")
    final = log[-1]
    print(
        f"trained {cfg.epochs} epochs (loss {final.loss:.4f}, "
        f"train acc {final.train_acc:.3f}); features in {out_dir}"
    )
    return 0


def _cmd_run(args) -> int:
    cfg = RunConfig.from_json(args.config)
    changes = {}
    if args.output_dir:
        changes["output_dir"] = args.output_dir
    if args.g_dataset:
        changes["g_dataset"] = args.g_dataset
    if args.gt_dataset:
        changes["gt_dataset"] = args.gt_dataset
    if args.classifier_kind:
        changes["classifier_kind"] = args.classifier_kind
    if args.dual is not None:
        changes["dual_feature"] = args.dual
    if args.resistance is not None:
        changes["enable_resistance"] = args.resistance
    if args.calibration is not None:
        changes["enable_calibration"] = args.calibration
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    result = execute_run(cfg)
    report = result.report
    print(f"sessions: {len(report.per_session)}")
    print(f"overall acc avg: {report.overall_avg:.4f}")
    if report.base_inc is not None:
        print(f"base/inc: {report.base_inc:.4f}")
    if report.bicp is not None:
        print(f"bicp: {report.bicp:.4f}")
    print(f"performance drop: {report.pd:.4f}")
    print(f"outputs in {cfg.output_dir}")
    return 0


def _cmd_report(args) -> int:
    report = report_from_run_dir(args.run_dir, args.out_dir)
    print(f"overall acc avg: {report.overall_avg:.4f}")
    print(f"performance drop: {report.pd:.4f}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "run": _cmd_run,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FscilError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
