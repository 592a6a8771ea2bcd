"""The bundled synthetic benchmark: 60-dim raw clusters, 20 base classes,
4 incremental sessions of 5-way 5-shot, master seed 42.

Two training configurations (plain cross-entropy vs. intra-transform plus
inter-class fusion) and two run configurations (single-space NCM baseline vs.
the full dual-feature + resistance + calibration pipeline) give the
directional comparisons the acceptance suite checks.  Everything is
deterministic and finishes on one core in well under a minute.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import TRAIN, ProtocolConfig, save_embeddings, synth_generate
from .runner import RunConfig, execute_run
from .selfopt import CalibConfig, ResistConfig
from .training import TrainConfig, export_features, train

SEED = 42
BASE_CLASSES = 20
TOTAL_CLASSES = 40
INPUT_DIM = 60

RAW_SPEC = dict(
    classes=TOTAL_CLASSES,
    dim=INPUT_DIM,
    train_per_class=25,
    test_per_class=20,
    spread=0.2,
    separation=1.0,
    seed=SEED,
)

PROTOCOL = ProtocolConfig(
    base_class_count=BASE_CLASSES, sessions=4, ways=5, shots=5, seed=SEED
)

_COMMON_TRAIN = dict(
    epochs=40,
    lr=0.05,
    momentum=0.9,
    batch_size=50,
    delta=0.0,
    hidden_dim=64,
    feat_dim=32,
    sr_hidden=64,
    sr_dim=32,
    seed=SEED,
)


def plain_train_config() -> TrainConfig:
    """Plain cross-entropy: no transform channel, no fusion."""
    return TrainConfig(intra=False, virtual_pool=0, **_COMMON_TRAIN)


def stimulated_train_config() -> TrainConfig:
    """Intra transform plus inter-class fusion into 4x surplus virtual rows."""
    return TrainConfig(intra=True, virtual_pool=4 * BASE_CLASSES, **_COMMON_TRAIN)


def baseline_run_config(gt_path, out_dir) -> RunConfig:
    """Single-space NCM over discriminative features, all self-optimization off."""
    return RunConfig(
        protocol=PROTOCOL,
        gt_dataset=str(gt_path),
        dual_feature=False,
        enable_resistance=False,
        enable_calibration=False,
        output_dir=str(out_dir),
        seed=SEED,
    )


def full_run_config(g_path, gt_path, out_dir) -> RunConfig:
    """Dual-feature classification with resistance and calibration enabled."""
    return RunConfig(
        protocol=PROTOCOL,
        g_dataset=str(g_path),
        gt_dataset=str(gt_path),
        dual_feature=True,
        enable_resistance=True,
        enable_calibration=True,
        resistance=ResistConfig(gamma_max=0.3, gamma_prime_max=1.0, seed=SEED),
        calibration=CalibConfig(),
        output_dir=str(out_dir),
        seed=SEED,
    )


def prepare_features(workdir) -> dict:
    """Generate the raw clusters and export both feature spaces for both
    training configurations.  Returns the file paths plus in-memory datasets.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    raw = synth_generate(**RAW_SPEC)
    save_embeddings(raw, workdir / "raw.fse")

    base_train = raw.indices(split=TRAIN, classes=range(BASE_CLASSES))
    X = np.stack([raw.records[i].feature for i in base_train]).astype(np.float64)
    y = np.array([raw.records[i].class_id for i in base_train])

    out = {"raw": raw}
    for tag, cfg in (("plain", plain_train_config()), ("stim", stimulated_train_config())):
        model, log = train(X, y, BASE_CLASSES, cfg)
        ds_g, ds_gt = export_features(model, raw)
        g_path = workdir / f"{tag}_g.fse"
        gt_path = workdir / f"{tag}_gt.fse"
        save_embeddings(ds_g, g_path)
        save_embeddings(ds_gt, gt_path)
        out[tag] = {
            "model": model,
            "log": log,
            "g": ds_g,
            "gt": ds_gt,
            "g_path": g_path,
            "gt_path": gt_path,
        }
    return out


def run_benchmark(workdir) -> dict:
    """Full benchmark: feature preparation plus both run configurations over
    the stimulation-trained exports."""
    workdir = Path(workdir)
    artifacts = prepare_features(workdir)
    stim = artifacts["stim"]
    baseline = execute_run(
        baseline_run_config(stim["gt_path"], workdir / "baseline-run")
    )
    full = execute_run(
        full_run_config(stim["g_path"], stim["gt_path"], workdir / "full-run")
    )
    artifacts["baseline_report"] = baseline.report
    artifacts["full_report"] = full.report
    return artifacts
