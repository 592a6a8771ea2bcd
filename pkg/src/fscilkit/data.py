"""Embedding datasets, file formats, the session protocol, and a synthetic
Gaussian-cluster generator.

Binary interchange format ("FSE1", little-endian):

    magic "FSE1" | u32 version=1 | u32 dim | u32 class_count
    | u64 record_count | u32 flags (bit0: has transformed channel)
    | record_count x [u32 class_id | u8 split (0=train, 1=test)
                      | dim x f32 feature | (if bit0) dim x f32 transformed]

CSV format: header ``class_id,split,f0..f{d-1}`` with an optional trailing
``t0..t{d-1}`` block when the transformed channel is present.  Values are
written with the shortest decimal representation that round-trips float32.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    FormatError,
    InfeasibleProtocolError,
    InsufficientShotsError,
    LabelGapError,
)
from .vectors import DualFeature, flip_vector

MAGIC = b"FSE1"
EMBED_VERSION = 1
_HEADER = struct.Struct("<4sIIIQI")

TRAIN = "train"
TEST = "test"
_SPLIT_CODE = {TRAIN: 0, TEST: 1}
_SPLIT_NAME = {0: TRAIN, 1: TEST}


@dataclass
class EmbeddingRecord:
    class_id: int
    split: str
    feature: np.ndarray
    transformed: np.ndarray | None = None

    def dual(self) -> DualFeature:
        if self.transformed is None:
            raise ConfigError("record has no transformed channel")
        return DualFeature(self.feature, self.transformed)


@dataclass
class EmbeddingDataset:
    """Labeled feature vectors with an optional original/transformed pairing.

    Invariants: every feature has length ``dim``; class ids form the
    contiguous range 0..C-1; the transformed channel is all-or-nothing.
    """

    dim: int
    records: list[EmbeddingRecord]

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.dim < 1:
            raise FormatError(f"dimension must be positive, got {self.dim}")
        seen = set()
        has_dual = None
        for i, rec in enumerate(self.records):
            if rec.split not in _SPLIT_CODE:
                raise FormatError(f"record {i}: unknown split {rec.split!r}")
            if rec.feature.shape != (self.dim,):
                raise FormatError(
                    f"record {i}: feature length {rec.feature.shape[0]} != dim {self.dim}"
                )
            if not np.all(np.isfinite(rec.feature)):
                raise FormatError(f"record {i}: non-finite feature entries")
            dual = rec.transformed is not None
            if dual:
                if rec.transformed.shape != (self.dim,):
                    raise FormatError(
                        f"record {i}: transformed length != dim {self.dim}"
                    )
                if not np.all(np.isfinite(rec.transformed)):
                    raise FormatError(f"record {i}: non-finite transformed entries")
            if has_dual is None:
                has_dual = dual
            elif has_dual != dual:
                raise FormatError(
                    "transformed channel must be present on all records or none"
                )
            if rec.class_id < 0:
                raise LabelGapError(f"record {i}: negative class id")
            seen.add(rec.class_id)
        if seen and sorted(seen) != list(range(max(seen) + 1)):
            missing = sorted(set(range(max(seen) + 1)) - seen)
            raise LabelGapError(f"class ids are not contiguous; missing {missing}")

    @property
    def class_count(self) -> int:
        return 1 + max((r.class_id for r in self.records), default=-1)

    @property
    def has_transformed(self) -> bool:
        return bool(self.records) and self.records[0].transformed is not None

    def indices(self, split: str | None = None, classes: Iterable[int] | None = None) -> list[int]:
        cls = None if classes is None else set(classes)
        out = []
        for i, rec in enumerate(self.records):
            if split is not None and rec.split != split:
                continue
            if cls is not None and rec.class_id not in cls:
                continue
            out.append(i)
        return out

    def dual(self, index: int) -> DualFeature:
        return self.records[index].dual()


def _record_dtype(dim: int, dual: bool) -> np.dtype:
    fields = [("class_id", "<u4"), ("split", "u1"), ("feature", "<f4", (dim,))]
    if dual:
        fields.append(("transformed", "<f4", (dim,)))
    return np.dtype(fields)


def save_embeddings(ds: EmbeddingDataset, path, format: str = "binary"):
    """Write a dataset to ``path`` in the declared format."""
    if format == "binary":
        _save_binary(ds, path)
    elif format == "csv":
        _save_csv(ds, path)
    else:
        raise ConfigError(f"unknown format {format!r}")


def load_embeddings(path, format: str = "binary") -> EmbeddingDataset:
    """Read a dataset written by :func:`save_embeddings`.

    Raises FormatError on malformed input and LabelGapError when class ids
    are not contiguous.
    """
    if format == "binary":
        return _load_binary(path)
    if format == "csv":
        return _load_csv(path)
    raise ConfigError(f"unknown format {format!r}")


def _save_binary(ds: EmbeddingDataset, path):
    dual = ds.has_transformed
    dtype = _record_dtype(ds.dim, dual)
    table = np.zeros(len(ds.records), dtype=dtype)
    for i, rec in enumerate(ds.records):
        table[i]["class_id"] = rec.class_id
        table[i]["split"] = _SPLIT_CODE[rec.split]
        table[i]["feature"] = rec.feature
        if dual:
            table[i]["transformed"] = rec.transformed
    header = _HEADER.pack(
        MAGIC, EMBED_VERSION, ds.dim, ds.class_count, len(ds.records), 1 if dual else 0
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(table.tobytes())


def _load_binary(path) -> EmbeddingDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("file too short for header")
    magic, version, dim, class_count, record_count, flags = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != EMBED_VERSION:
        raise FormatError(f"unsupported embedding file version {version}")
    if dim < 1:
        raise FormatError("header dim must be positive")
    dual = bool(flags & 1)
    dtype = _record_dtype(dim, dual)
    body = raw[_HEADER.size :]
    if len(body) != dtype.itemsize * record_count:
        raise FormatError(
            f"payload size {len(body)} does not match {record_count} records "
            f"of {dtype.itemsize} bytes"
        )
    table = np.frombuffer(body, dtype=dtype)
    records = []
    for row in table:
        split = int(row["split"])
        if split not in _SPLIT_NAME:
            raise FormatError(f"unknown split code {split}")
        records.append(
            EmbeddingRecord(
                class_id=int(row["class_id"]),
                split=_SPLIT_NAME[split],
                feature=np.array(row["feature"], dtype=np.float32),
                transformed=np.array(row["transformed"], dtype=np.float32)
                if dual
                else None,
            )
        )
    ds = EmbeddingDataset(dim=dim, records=records)
    if ds.class_count != class_count:
        raise LabelGapError(
            f"header declares {class_count} classes but records cover {ds.class_count}"
        )
    return ds


def _fmt_f32(x: np.float32) -> str:
    return np.format_float_positional(np.float32(x), unique=True, trim="0")


def _save_csv(ds: EmbeddingDataset, path):
    dual = ds.has_transformed
    header = ["class_id", "split"] + [f"f{i}" for i in range(ds.dim)]
    if dual:
        header += [f"t{i}" for i in range(ds.dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in ds.records:
            row = [rec.class_id, rec.split] + [_fmt_f32(v) for v in rec.feature]
            if dual:
                row += [_fmt_f32(v) for v in rec.transformed]
            writer.writerow(row)


def _load_csv(path) -> EmbeddingDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty CSV file") from None
        rows = list(reader)
    if len(header) < 3 or header[:2] != ["class_id", "split"]:
        raise FormatError("CSV header must start with class_id,split")
    feat_cols = [h for h in header[2:] if h.startswith("f")]
    trans_cols = [h for h in header[2:] if h.startswith("t")]
    dim = len(feat_cols)
    if feat_cols != [f"f{i}" for i in range(dim)]:
        raise FormatError("feature columns must be f0..f{d-1}")
    dual = bool(trans_cols)
    if dual and trans_cols != [f"t{i}" for i in range(dim)]:
        raise FormatError("transformed columns must be t0..t{d-1}")
    expected = 2 + dim * (2 if dual else 1)
    records = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != expected:
            raise FormatError(f"line {lineno}: expected {expected} fields, got {len(row)}")
        try:
            class_id = int(row[0])
            feat = np.array([np.float32(float(v)) for v in row[2 : 2 + dim]], dtype=np.float32)
            trans = (
                np.array([np.float32(float(v)) for v in row[2 + dim :]], dtype=np.float32)
                if dual
                else None
            )
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        if row[1] not in _SPLIT_CODE:
            raise FormatError(f"line {lineno}: unknown split {row[1]!r}")
        records.append(EmbeddingRecord(class_id, row[1], feat, trans))
    return EmbeddingDataset(dim=dim, records=records)


# ---------------------------------------------------------------------------
# Session protocol


@dataclass(frozen=True)
class ProtocolConfig:
    """N-way K-shot session protocol parameters."""

    base_class_count: int
    sessions: int
    ways: int
    shots: int
    seed: int

    def __post_init__(self):
        if self.base_class_count < 1:
            raise ConfigError("base_class_count must be >= 1")
        if self.sessions < 0:
            raise ConfigError("sessions must be >= 0")
        if self.ways < 1 or self.shots < 1:
            raise ConfigError("ways and shots must be >= 1")

    @classmethod
    def from_json(cls, path) -> "ProtocolConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        try:
            return cls(
                base_class_count=int(d["base_class_count"]),
                sessions=int(d["sessions"]),
                ways=int(d["ways"]),
                shots=int(d["shots"]),
                seed=int(d["seed"]),
            )
        except KeyError as exc:
            raise ConfigError(f"protocol config is missing key {exc}") from None

    def to_dict(self) -> dict:
        return {
            "base_class_count": self.base_class_count,
            "sessions": self.sessions,
            "ways": self.ways,
            "shots": self.shots,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Session:
    index: int
    class_ids: tuple[int, ...]
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]  # cumulative over all seen classes


@dataclass
class SessionStream:
    """Ordered base + incremental session splits over one dataset."""

    dataset: EmbeddingDataset
    config: ProtocolConfig
    sessions: list[Session]

    @property
    def base_classes(self) -> frozenset[int]:
        return frozenset(self.sessions[0].class_ids)

    @property
    def class_to_session(self) -> dict[int, int]:
        return {c: s.index for s in self.sessions for c in s.class_ids}

    def seen_classes(self, session: int) -> list[int]:
        out: list[int] = []
        for s in self.sessions[: session + 1]:
            out.extend(s.class_ids)
        return out


def build_protocol(ds: EmbeddingDataset, cfg: ProtocolConfig) -> SessionStream:
    """Split a dataset into base + incremental sessions.

    Classes are assigned in ascending id order: ids 0..B-1 are base, each
    following block of N ids forms one incremental session.  The seed only
    controls the K-shot subsampling, which is drawn per (session, class), so
    the class-to-session assignment never depends on record order.
    """
    total = cfg.base_class_count + cfg.sessions * cfg.ways
    if total > ds.class_count:
        raise InfeasibleProtocolError(
            f"protocol needs {total} classes, dataset has {ds.class_count}"
        )
    train_by_class: dict[int, list[int]] = {c: [] for c in range(total)}
    for i, rec in enumerate(ds.records):
        if rec.split == TRAIN and rec.class_id < total:
            train_by_class[rec.class_id].append(i)

    sessions = []
    seen: list[int] = []
    for t in range(cfg.sessions + 1):
        if t == 0:
            class_ids = tuple(range(cfg.base_class_count))
            train: list[int] = []
            for c in class_ids:
                train.extend(train_by_class[c])
        else:
            start = cfg.base_class_count + (t - 1) * cfg.ways
            class_ids = tuple(range(start, start + cfg.ways))
            train = []
            for c in class_ids:
                pool = train_by_class[c]
                if len(pool) < cfg.shots:
                    raise InsufficientShotsError(
                        f"class {c} has {len(pool)} train samples, needs {cfg.shots}"
                    )
                rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, t, c]))
                picked = rng.choice(len(pool), size=cfg.shots, replace=False)
                train.extend(pool[k] for k in sorted(picked))
        seen.extend(class_ids)
        seen_set = set(seen)
        test = [
            i
            for i, rec in enumerate(ds.records)
            if rec.split == TEST and rec.class_id in seen_set
        ]
        sessions.append(
            Session(
                index=t,
                class_ids=class_ids,
                train_indices=tuple(train),
                test_indices=tuple(test),
            )
        )
    return SessionStream(dataset=ds, config=cfg, sessions=sessions)


def synth_generate(
    classes: int,
    dim: int,
    train_per_class: int,
    test_per_class: int,
    spread: float,
    separation: float = 1.0,
    seed: int = 0,
) -> EmbeddingDataset:
    """Generate isotropic Gaussian clusters around distinct unit-sphere centers.

    Each class center is a random unit vector scaled by ``separation``;
    samples are center + spread * N(0, I).  The transformed channel holds the
    index-reversed feature, so dual-feature code paths work without any
    trained model.  Byte-identical output for identical arguments.
    """
    if classes < 1 or dim < 1 or train_per_class < 1 or test_per_class < 1:
        raise ConfigError("classes, dim, and per-class counts must be positive")
    if spread < 0:
        raise ConfigError("spread must be >= 0")
    if separation <= 0:
        raise ConfigError("separation must be > 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    centers = rng.normal(size=(classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= separation
    records = []
    for c in range(classes):
        for split, count in ((TRAIN, train_per_class), (TEST, test_per_class)):
            noise = rng.normal(size=(count, dim))
            samples = (centers[c] + spread * noise).astype(np.float32)
            for row in samples:
                records.append(
                    EmbeddingRecord(
                        class_id=c,
                        split=split,
                        feature=row,
                        transformed=flip_vector(row),
                    )
                )
    return EmbeddingDataset(dim=dim, records=records)


def samples_by_class(
    ds: EmbeddingDataset, indices: Sequence[int]
) -> dict[int, list[DualFeature]]:
    """Group the dual features of the given record indices by class id."""
    out: dict[int, list[DualFeature]] = {}
    for i in indices:
        rec = ds.records[i]
        out.setdefault(rec.class_id, []).append(rec.dual())
    return out
