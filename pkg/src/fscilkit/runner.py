"""Session-loop orchestration behind the ``run`` and ``report`` commands.

Per session the loop is fixed: extend banks from the session's train data,
fold novel directions into the resistance state, calibrate from the session's
unlabeled test pool, derive the transient resisted view, then evaluate.  All
randomness flows from the master seed through named sub-seeds, so two runs of
one config produce byte-identical outputs.
"""

from __future__ import annotations

import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import classify as _classify
from .classify import PredictionRow, dual_classify, evaluate_session, ncm_classify
from .data import (
    EmbeddingDataset,
    ProtocolConfig,
    SessionStream,
    build_protocol,
    load_embeddings,
    samples_by_class,
)
from .errors import BankMismatchError, ConfigError
from .figures import render_accuracy_figure
from .gmm import GmmBank, fit_gmm, gmm_classify, overall_mean
from .metrics import (
    MetricsReport,
    SessionResult,
    aggregate,
    write_report_csv,
    write_report_json,
)
from .prototypes import PrototypeBank, build_prototypes
from .selfopt import (
    BASE_GROUP,
    INC_GROUP,
    CalibConfig,
    ResistConfig,
    absorb_labeled,
    accumulate_resistance,
    calibrate_gmm,
    calibrate_prototypes,
    resist_for_inference,
    resist_gmm,
    select_pool,
)
from .snapshot import save_snapshot

PROTOTYPE = "prototype"
BGMM = "bgmm"

# sub-seed stream tags
_SEED_RESIST = 1
_SEED_GMM_FIT = 2


def _derive_seed(master: int, *tags: int) -> int:
    return int(np.random.SeedSequence([master, *tags]).generate_state(1, np.uint64)[0])


def _thread_count() -> int:
    raw = os.environ.get("FSCIL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"FSCIL_THREADS must be an integer, got {raw!r}") from None


def _map_ordered(fn, items):
    """Apply fn over items, optionally on the FSCIL_THREADS worker pool.

    Results come back in input order either way, so parallelism never
    changes outputs.
    """
    items = list(items)
    threads = _thread_count()
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class RunConfig:
    protocol: ProtocolConfig
    g_dataset: str | None = None
    gt_dataset: str | None = None
    classifier_kind: str = PROTOTYPE
    dual_feature: bool = True
    enable_resistance: bool = True
    enable_calibration: bool = True
    enable_absorb_labeled: bool = False
    selfopt_both_banks: bool = False
    resistance: ResistConfig = field(default_factory=ResistConfig)
    calibration: CalibConfig = field(default_factory=CalibConfig)
    gmm_components: dict = field(
        default_factory=lambda: {BASE_GROUP: 3, INC_GROUP: 1}
    )
    gmm_weighting: str = "pi"
    output_dir: str = "run-output"
    seed: int = 0

    def __post_init__(self):
        if self.classifier_kind not in (PROTOTYPE, BGMM):
            raise ConfigError(f"unknown classifier kind {self.classifier_kind!r}")
        if self.gmm_weighting not in ("pi", "sigma"):
            raise ConfigError(f"unknown mixture weighting {self.gmm_weighting!r}")
        if self.dual_feature and not (self.g_dataset and self.gt_dataset):
            raise ConfigError("dual-feature runs need both feature-space datasets")
        if not (self.g_dataset or self.gt_dataset):
            raise ConfigError("at least one dataset path is required")
        for group in (BASE_GROUP, INC_GROUP):
            if int(self.gmm_components.get(group, 0)) < 1:
                raise ConfigError(f"gmm_components[{group!r}] must be >= 1")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "RunConfig":
        if "protocol" not in d:
            raise ConfigError("run config is missing the 'protocol' section")

        def path_of(key):
            value = d.get(key)
            if value is None:
                return None
            p = Path(value)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            return str(p)

        resistance = ResistConfig(**d.get("resistance", {}))
        calib_raw = dict(d.get("calibration", {}))
        if "R" in calib_raw:  # config files use the short key
            calib_raw["max_pool"] = calib_raw.pop("R")
        calibration = CalibConfig(**calib_raw)
        gmm_raw = d.get("gmm", {})
        out_dir = d.get("output_dir", "run-output")
        if base_dir is not None and not Path(out_dir).is_absolute():
            out_dir = str(base_dir / out_dir)
        return cls(
            protocol=ProtocolConfig.from_dict(d["protocol"]),
            g_dataset=path_of("g_dataset"),
            gt_dataset=path_of("gt_dataset"),
            classifier_kind=d.get("classifier_kind", PROTOTYPE),
            dual_feature=bool(d.get("dual_feature", True)),
            enable_resistance=bool(d.get("enable_resistance", True)),
            enable_calibration=bool(d.get("enable_calibration", True)),
            enable_absorb_labeled=bool(d.get("enable_absorb_labeled", False)),
            selfopt_both_banks=bool(d.get("selfopt_both_banks", False)),
            resistance=resistance,
            calibration=calibration,
            gmm_components=dict(
                gmm_raw.get("components", {BASE_GROUP: 3, INC_GROUP: 1})
            ),
            gmm_weighting=gmm_raw.get("weighting", "pi"),
            output_dir=out_dir,
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        path = Path(path)
        with open(path) as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol.to_dict(),
            "g_dataset": self.g_dataset,
            "gt_dataset": self.gt_dataset,
            "classifier_kind": self.classifier_kind,
            "dual_feature": self.dual_feature,
            "enable_resistance": self.enable_resistance,
            "enable_calibration": self.enable_calibration,
            "enable_absorb_labeled": self.enable_absorb_labeled,
            "selfopt_both_banks": self.selfopt_both_banks,
            "resistance": {
                "gamma_max": self.resistance.gamma_max,
                "gamma_prime_max": self.resistance.gamma_prime_max,
                "seed": self.resistance.seed,
            },
            "calibration": {
                "r": self.calibration.r,
                "R": self.calibration.max_pool,
                "alpha": dict(self.calibration.alpha),
                "alpha_prime": dict(self.calibration.alpha_prime),
            },
            "gmm": {
                "components": dict(self.gmm_components),
                "weighting": self.gmm_weighting,
            },
            "output_dir": self.output_dir,
            "seed": self.seed,
        }


def _check_aligned(a: EmbeddingDataset, b: EmbeddingDataset):
    if len(a.records) != len(b.records):
        raise BankMismatchError("feature-space datasets differ in record count")
    for i, (ra, rb) in enumerate(zip(a.records, b.records)):
        if ra.class_id != rb.class_id or ra.split != rb.split:
            raise BankMismatchError(
                f"feature-space datasets disagree at record {i}"
            )


@dataclass
class RunResult:
    report: MetricsReport
    session_results: list[SessionResult]
    prediction_rows: list[list[PredictionRow]]


class _PrototypeSpace:
    """Prototype bank plus its feature stream for one space."""

    def __init__(self, stream: SessionStream):
        self.stream = stream
        self.bank = PrototypeBank(stream.dataset.dim)

    def extend_from_session(self, t: int, absorb: bool):
        by_class = samples_by_class(self.stream.dataset, self.stream.sessions[t].train_indices)
        novel = {c: s for c, s in by_class.items() if c not in self.bank}
        old = {c: s for c, s in by_class.items() if c in self.bank}
        protos = build_prototypes(novel) if novel else []
        self.bank.extend(protos, session=t)
        if absorb:
            for c in sorted(old):
                absorb_labeled(self.bank, c, old[c])
        return protos

    def test_pool(self, t: int):
        return [self.stream.dataset.records[i].dual() for i in self.stream.sessions[t].test_indices]


class _GmmSpace:
    """Mixture bank plus its feature stream for one space."""

    def __init__(self, stream: SessionStream, components: dict, weighting: str, master_seed: int, space_tag: int):
        self.stream = stream
        self.bank = GmmBank(stream.dataset.dim)
        self.components = components
        self.weighting = weighting
        self.master_seed = master_seed
        self.space_tag = space_tag

    def extend_from_session(self, t: int):
        by_class = samples_by_class(self.stream.dataset, self.stream.sessions[t].train_indices)
        group = BASE_GROUP if t == 0 else INC_GROUP
        m = int(self.components[group])

        def fit_one(item):
            c, duals = item
            x1 = np.stack([d.original for d in duals])
            x2 = np.stack([d.transformed for d in duals])
            p1 = fit_gmm(x1, m, _derive_seed(self.master_seed, _SEED_GMM_FIT, self.space_tag, c, 1))
            p2 = fit_gmm(x2, m, _derive_seed(self.master_seed, _SEED_GMM_FIT, self.space_tag, c, 2))
            return c, p1, p2

        fitted = _map_ordered(fit_one, sorted(by_class.items()))
        for c, p1, p2 in fitted:
            self.bank.add_class(c, p1, p2, session=t)
        return [c for c, _, _ in fitted]

    def calibrate(self, t: int, calib: CalibConfig):
        pool = [self.stream.dataset.records[i].dual() for i in self.stream.sessions[t].test_indices]
        if not pool:
            return
        channels = {
            1: np.stack([f.original for f in pool]),
            2: np.stack([f.transformed for f in pool]),
        }
        for c in self.bank.class_ids:
            group = BASE_GROUP if self.bank.session_of[c] == 0 else INC_GROUP
            a_prime = calib.alpha_prime[group]
            for j in (1, 2):
                entry = self.bank.get(c, j)
                rep = overall_mean(entry, self.weighting)
                if not rep.any():
                    continue
                chosen = select_pool(channels[j], rep, calib.r, calib.max_pool)
                if chosen.size == 0:
                    continue
                self.bank.entries[(c, j)] = calibrate_gmm(
                    entry, channels[j][chosen], a_prime
                )


def execute_run(cfg: RunConfig) -> RunResult:
    """Run the full session loop and write every artifact to the output dir."""
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    ds_g = load_embeddings(cfg.g_dataset) if cfg.g_dataset else None
    ds_gt = load_embeddings(cfg.gt_dataset) if cfg.gt_dataset else None
    if cfg.dual_feature:
        _check_aligned(ds_g, ds_gt)
        stream_g = build_protocol(ds_g, cfg.protocol)
        stream_gt = build_protocol(ds_gt, cfg.protocol)
    else:
        primary_ds = ds_gt if ds_gt is not None else ds_g
        stream_g = stream_gt = build_protocol(primary_ds, cfg.protocol)

    if cfg.classifier_kind == PROTOTYPE:
        result, proto_banks, gmm_banks = _run_prototype(cfg, stream_g, stream_gt)
    else:
        result, proto_banks, gmm_banks = _run_bgmm(cfg, stream_g, stream_gt)

    save_snapshot(
        out_dir / "banks.snap",
        next_session=cfg.protocol.sessions + 1,
        proto_banks=proto_banks,
        gmm_banks=gmm_banks,
    )
    for t, rows in enumerate(result.prediction_rows):
        _classify.write_predictions(out_dir / f"predictions_session_{t:02d}.csv", rows)
    write_report_json(result.report, out_dir / "metrics.json")
    write_report_csv(result.report, out_dir / "metrics.csv")
    render_accuracy_figure(result.report, out_dir / "accuracy.png")
    manifest = {
        "config": cfg.to_dict(),
        "class_to_session": {
            str(c): s for c, s in sorted(stream_g.class_to_session.items())
        },
        "sessions": [
            {"index": s.index, "classes": list(s.class_ids)} for s in stream_g.sessions
        ],
    }
    with open(out_dir / "sessions.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


def _collect(stream: SessionStream, rows_per_session: list[list[PredictionRow]]) -> RunResult:
    class_to_session = stream.class_to_session
    session_results = [
        SessionResult(
            session=t,
            pairs=tuple((r.true_label, r.final_label) for r in rows),
            class_to_session=class_to_session,
        )
        for t, rows in enumerate(rows_per_session)
    ]
    return RunResult(
        report=aggregate(session_results),
        session_results=session_results,
        prediction_rows=rows_per_session,
    )


def _run_prototype(cfg, stream_g, stream_gt):
    dual = cfg.dual_feature
    space_g = _PrototypeSpace(stream_g)
    space_gt = _PrototypeSpace(stream_gt) if dual else space_g
    base_classes = stream_g.base_classes
    rows_per_session: list[list[PredictionRow]] = []

    for t in range(cfg.protocol.sessions + 1):
        if dual:
            space_g.extend_from_session(t, cfg.enable_absorb_labeled)
        novel_gt = space_gt.extend_from_session(t, cfg.enable_absorb_labeled)

        if cfg.enable_resistance and t >= 1 and novel_gt:
            accumulate_resistance(space_gt.bank, novel_gt)
            if cfg.selfopt_both_banks and dual:
                novel_g = [space_g.bank.get(p.class_id) for p in novel_gt]
                accumulate_resistance(space_g.bank, novel_g)

        if cfg.enable_calibration:
            calibrate_prototypes(space_g.bank, space_g.test_pool(t), cfg.calibration)
            if cfg.selfopt_both_banks and dual:
                calibrate_prototypes(space_gt.bank, space_gt.test_pool(t), cfg.calibration)

        view_gt = space_gt.bank
        view_g = space_g.bank
        if cfg.enable_resistance:
            session_resist = replace(
                cfg.resistance, seed=_derive_seed(cfg.seed, _SEED_RESIST, t)
            )
            view_gt = resist_for_inference(space_gt.bank, session_resist)
            if cfg.selfopt_both_banks and dual:
                view_g = resist_for_inference(
                    space_g.bank,
                    replace(cfg.resistance, seed=_derive_seed(cfg.seed, _SEED_RESIST, t, 1)),
                )

        if dual:
            gt_queries = space_gt.test_pool(t)
            rows = evaluate_session(
                stream_g,
                t,
                lambda pos, q: dual_classify(
                    q, gt_queries[pos], view_g, view_gt, base_classes, query_index=pos
                ),
            )
        else:
            rows = evaluate_session(
                stream_g, t, lambda pos, q: ncm_classify(q, view_gt)
            )
        rows_per_session.append(rows)
    banks = {"transferable": space_g.bank} if dual else {}
    banks["discriminative"] = space_gt.bank
    return _collect(stream_g, rows_per_session), banks, {}


def _run_bgmm(cfg, stream_g, stream_gt):
    dual = cfg.dual_feature
    space_g = _GmmSpace(stream_g, cfg.gmm_components, cfg.gmm_weighting, cfg.seed, 0)
    space_gt = (
        _GmmSpace(stream_gt, cfg.gmm_components, cfg.gmm_weighting, cfg.seed, 1)
        if dual
        else space_g
    )
    base_classes = stream_g.base_classes
    weighting = cfg.gmm_weighting
    rows_per_session: list[list[PredictionRow]] = []

    for t in range(cfg.protocol.sessions + 1):
        if dual:
            space_g.extend_from_session(t)
        novel_ids = space_gt.extend_from_session(t)

        if cfg.enable_resistance and t >= 1 and novel_ids:
            session_resist = replace(
                cfg.resistance, seed=_derive_seed(cfg.seed, _SEED_RESIST, t)
            )
            resist_gmm(space_gt.bank, novel_ids, session_resist, weighting)
            if cfg.selfopt_both_banks and dual:
                resist_gmm(
                    space_g.bank,
                    novel_ids,
                    replace(cfg.resistance, seed=_derive_seed(cfg.seed, _SEED_RESIST, t, 1)),
                    weighting,
                )

        if cfg.enable_calibration:
            space_g.calibrate(t, cfg.calibration)
            if cfg.selfopt_both_banks and dual:
                space_gt.calibrate(t, cfg.calibration)

        if dual:
            gt_queries = [
                stream_gt.dataset.records[i].dual()
                for i in stream_gt.sessions[t].test_indices
            ]
            rows = evaluate_session(
                stream_g,
                t,
                lambda pos, q: dual_classify(
                    q,
                    gt_queries[pos],
                    space_g.bank,
                    space_gt.bank,
                    base_classes,
                    query_index=pos,
                    weighting=weighting,
                ),
            )
        else:
            rows = evaluate_session(
                stream_g, t, lambda pos, q: gmm_classify(q, space_gt.bank, weighting)
            )
        rows_per_session.append(rows)
    banks = {"transferable": space_g.bank} if dual else {}
    banks["discriminative"] = space_gt.bank
    return _collect(stream_g, rows_per_session), {}, banks


def report_from_run_dir(run_dir, out_dir=None) -> MetricsReport:
    """Recompute a metrics report from a run directory's prediction dumps."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir
    with open(run_dir / "sessions.json") as fh:
        manifest = json.load(fh)
    class_to_session = {int(c): s for c, s in manifest["class_to_session"].items()}
    files = sorted(run_dir.glob("predictions_session_*.csv"))
    if not files:
        raise ConfigError(f"no prediction dumps in {run_dir}")
    results = []
    for path in files:
        match = re.search(r"predictions_session_(\d+)\.csv$", path.name)
        if match is None:
            continue
        t = int(match.group(1))
        rows = _classify.read_predictions(path)
        results.append(
            SessionResult(
                session=t,
                pairs=tuple((r.true_label, r.final_label) for r in rows),
                class_to_session=class_to_session,
            )
        )
    report = aggregate(results)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out_dir / "metrics.json")
    write_report_csv(report, out_dir / "metrics.csv")
    render_accuracy_figure(report, out_dir / "accuracy.png")
    return report
