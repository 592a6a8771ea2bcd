import json

import numpy as np
import pytest

from fscilkit.data import TRAIN, save_embeddings, synth_generate
from fscilkit.training import TrainConfig, export_features, train


@pytest.fixture(scope="session")
def tiny_pipeline(tmp_path_factory):
    """Raw clusters + trained exports for a 6-base / 3x2-way run, on disk."""
    root = tmp_path_factory.mktemp("tiny")
    raw = synth_generate(classes=12, dim=12, train_per_class=8, test_per_class=4,
                         spread=0.15, separation=1.0, seed=21)
    raw_path = root / "raw.fse"
    save_embeddings(raw, raw_path)

    base = 6
    idx = raw.indices(split=TRAIN, classes=range(base))
    X = np.stack([raw.records[i].feature for i in idx]).astype(np.float64)
    y = np.array([raw.records[i].class_id for i in idx])
    cfg = TrainConfig(epochs=10, lr=0.05, momentum=0.9, batch_size=24,
                      hidden_dim=16, feat_dim=10, sr_hidden=16, sr_dim=10,
                      intra=True, virtual_pool=12, seed=21)
    model, _ = train(X, y, base, cfg)
    ds_g, ds_gt = export_features(model, raw)
    g_path, gt_path = root / "g.fse", root / "gt.fse"
    save_embeddings(ds_g, g_path)
    save_embeddings(ds_gt, gt_path)

    protocol = {"base_class_count": base, "sessions": 3, "ways": 2, "shots": 2, "seed": 21}
    return {
        "root": root,
        "raw_path": raw_path,
        "g_path": g_path,
        "gt_path": gt_path,
        "protocol": protocol,
        "base": base,
    }


def write_run_config(path, pipeline, **overrides):
    cfg = {
        "protocol": pipeline["protocol"],
        "g_dataset": str(pipeline["g_path"]),
        "gt_dataset": str(pipeline["gt_path"]),
        "classifier_kind": "prototype",
        "dual_feature": True,
        "enable_resistance": True,
        "enable_calibration": True,
        "output_dir": str(path.parent / "out"),
        "seed": 21,
    }
    cfg.update(overrides)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(cfg, fh)
    return cfg
