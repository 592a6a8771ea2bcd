import struct

import numpy as np
import pytest

from fscilkit.data import (
    MAGIC,
    TEST,
    TRAIN,
    EmbeddingDataset,
    EmbeddingRecord,
    ProtocolConfig,
    build_protocol,
    load_embeddings,
    save_embeddings,
    synth_generate,
)
from fscilkit.errors import (
    ConfigError,
    FormatError,
    InfeasibleProtocolError,
    InsufficientShotsError,
    LabelGapError,
)


def make_dataset(classes=3, dim=4, per_class=2, dual=True, seed=0):
    rng = np.random.default_rng(seed)
    records = []
    for c in range(classes):
        for k in range(per_class):
            feat = rng.normal(size=dim).astype(np.float32)
            records.append(
                EmbeddingRecord(
                    class_id=c,
                    split=TRAIN if k % 2 == 0 else TEST,
                    feature=feat,
                    transformed=feat[::-1].copy() if dual else None,
                )
            )
    return EmbeddingDataset(dim=dim, records=records)


class TestBinaryFormat:
    @pytest.mark.parametrize("dual", [True, False])
    def test_round_trip_exact_bits(self, tmp_path, dual):
        ds = make_dataset(dual=dual)
        path = tmp_path / "ds.fse"
        save_embeddings(ds, path)
        loaded = load_embeddings(path)
        assert loaded.dim == ds.dim
        assert len(loaded.records) == len(ds.records)
        for a, b in zip(ds.records, loaded.records):
            assert a.class_id == b.class_id and a.split == b.split
            assert a.feature.tobytes() == b.feature.tobytes()
            if dual:
                assert a.transformed.tobytes() == b.transformed.tobytes()
            else:
                assert b.transformed is None

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fse"
        path.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_bad_version(self, tmp_path):
        ds = make_dataset()
        path = tmp_path / "ds.fse"
        save_embeddings(ds, path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_truncated_payload(self, tmp_path):
        ds = make_dataset()
        path = tmp_path / "ds.fse"
        save_embeddings(ds, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-3])
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_label_gap(self, tmp_path):
        ds = make_dataset(classes=3)
        # re-label class 1 records as class 2 to open a gap, bypass validation
        for rec in ds.records:
            if rec.class_id == 2:
                rec.class_id = 3
        path = tmp_path / "gap.fse"
        header = struct.pack("<4sIIIQI", MAGIC, 1, ds.dim, 4, len(ds.records), 1)
        body = b""
        for rec in ds.records:
            body += struct.pack("<IB", rec.class_id, 0 if rec.split == TRAIN else 1)
            body += rec.feature.tobytes() + rec.transformed.tobytes()
        path.write_bytes(header + body)
        with pytest.raises(LabelGapError):
            load_embeddings(path)


class TestCsvFormat:
    @pytest.mark.parametrize("dual", [True, False])
    def test_round_trip_exact(self, tmp_path, dual):
        ds = make_dataset(dual=dual)
        path = tmp_path / "ds.csv"
        save_embeddings(ds, path, format="csv")
        loaded = load_embeddings(path, format="csv")
        for a, b in zip(ds.records, loaded.records):
            # shortest-unique decimal reprs round-trip float32 exactly
            assert a.feature.tobytes() == b.feature.tobytes()
            if dual:
                assert a.transformed.tobytes() == b.transformed.tobytes()

    def test_short_row_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        header = "class_id,split," + ",".join(f"f{i}" for i in range(64))
        row = "0,train," + ",".join("0.5" for _ in range(63))
        path.write_text(header + "\n" + row + "\n")
        with pytest.raises(FormatError):
            load_embeddings(path, format="csv")

    def test_label_gap(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text("class_id,split,f0\n0,train,1.0\n2,train,2.0\n")
        with pytest.raises(LabelGapError):
            load_embeddings(path, format="csv")

    def test_unknown_split(self, tmp_path):
        path = tmp_path / "split.csv"
        path.write_text("class_id,split,f0\n0,validation,1.0\n")
        with pytest.raises(FormatError):
            load_embeddings(path, format="csv")


class TestDatasetInvariants:
    def test_mixed_dual_channel_rejected(self):
        recs = [
            EmbeddingRecord(0, TRAIN, np.ones(2, np.float32), np.ones(2, np.float32)),
            EmbeddingRecord(0, TRAIN, np.ones(2, np.float32), None),
        ]
        with pytest.raises(FormatError):
            EmbeddingDataset(dim=2, records=recs)

    def test_non_finite_rejected(self):
        recs = [EmbeddingRecord(0, TRAIN, np.array([np.nan, 1.0], np.float32))]
        with pytest.raises(FormatError):
            EmbeddingDataset(dim=2, records=recs)

    def test_wrong_length_rejected(self):
        recs = [EmbeddingRecord(0, TRAIN, np.ones(3, np.float32))]
        with pytest.raises(FormatError):
            EmbeddingDataset(dim=2, records=recs)


def balanced_dataset(classes, train_per_class, test_per_class, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    records = []
    for c in range(classes):
        for _ in range(train_per_class):
            f = rng.normal(size=dim).astype(np.float32)
            records.append(EmbeddingRecord(c, TRAIN, f, f[::-1].copy()))
        for _ in range(test_per_class):
            f = rng.normal(size=dim).astype(np.float32)
            records.append(EmbeddingRecord(c, TEST, f, f[::-1].copy()))
    return EmbeddingDataset(dim=dim, records=records)


class TestProtocol:
    def test_miniimagenet_shape(self):
        ds = balanced_dataset(100, 6, 1)
        cfg = ProtocolConfig(base_class_count=60, sessions=8, ways=5, shots=5, seed=1)
        stream = build_protocol(ds, cfg)
        assert len(stream.sessions) == 9
        covered = sorted(c for s in stream.sessions for c in s.class_ids)
        assert covered == list(range(100))
        for s in stream.sessions[1:]:
            assert len(s.class_ids) == 5
            assert len(s.train_indices) == 25  # 5 ways x 5 shots

    def test_cub_shape(self):
        ds = balanced_dataset(200, 5, 1)
        cfg = ProtocolConfig(base_class_count=100, sessions=10, ways=10, shots=5, seed=1)
        stream = build_protocol(ds, cfg)
        assert len(stream.sessions) == 11
        assert sorted(c for s in stream.sessions for c in s.class_ids) == list(range(200))

    def test_base_only(self):
        ds = balanced_dataset(2, 3, 1)
        cfg = ProtocolConfig(base_class_count=2, sessions=0, ways=1, shots=1, seed=0)
        stream = build_protocol(ds, cfg)
        assert len(stream.sessions) == 1
        assert stream.sessions[0].class_ids == (0, 1)
        # base session train set is the full base train split
        assert len(stream.sessions[0].train_indices) == 6

    def test_infeasible(self):
        ds = balanced_dataset(10, 3, 1)
        cfg = ProtocolConfig(base_class_count=8, sessions=2, ways=2, shots=1, seed=0)
        with pytest.raises(InfeasibleProtocolError):
            build_protocol(ds, cfg)

    def test_insufficient_shots(self):
        ds = balanced_dataset(4, 2, 1)
        cfg = ProtocolConfig(base_class_count=2, sessions=1, ways=2, shots=3, seed=0)
        with pytest.raises(InsufficientShotsError):
            build_protocol(ds, cfg)

    def test_cumulative_test_sets(self):
        ds = balanced_dataset(8, 4, 2)
        cfg = ProtocolConfig(base_class_count=4, sessions=2, ways=2, shots=2, seed=3)
        stream = build_protocol(ds, cfg)
        for t, s in enumerate(stream.sessions):
            seen = set(stream.seen_classes(t))
            labels = {ds.records[i].class_id for i in s.test_indices}
            assert labels == seen
            assert len(s.test_indices) == 2 * len(seen)

    def test_subsample_deterministic(self):
        ds = balanced_dataset(8, 6, 1)
        cfg = ProtocolConfig(base_class_count=4, sessions=2, ways=2, shots=3, seed=9)
        a = build_protocol(ds, cfg)
        b = build_protocol(ds, cfg)
        for sa, sb in zip(a.sessions, b.sessions):
            assert sa == sb

    def test_assignment_ignores_record_order(self):
        ds = balanced_dataset(8, 6, 1, seed=2)
        cfg = ProtocolConfig(base_class_count=4, sessions=2, ways=2, shots=3, seed=9)
        stream = build_protocol(ds, cfg)
        shuffled_records = list(ds.records)
        rng = np.random.default_rng(0)
        rng.shuffle(shuffled_records)
        shuffled = EmbeddingDataset(dim=ds.dim, records=shuffled_records)
        stream2 = build_protocol(shuffled, cfg)
        for sa, sb in zip(stream.sessions, stream2.sessions):
            assert sa.class_ids == sb.class_ids

    def test_kshot_multiset_size(self):
        ds = balanced_dataset(8, 7, 1)
        cfg = ProtocolConfig(base_class_count=2, sessions=3, ways=2, shots=4, seed=5)
        stream = build_protocol(ds, cfg)
        for s in stream.sessions[1:]:
            per_class = {}
            for i in s.train_indices:
                per_class.setdefault(ds.records[i].class_id, 0)
                per_class[ds.records[i].class_id] += 1
            assert all(v == 4 for v in per_class.values())


class TestSynth:
    def test_deterministic_bytes(self, tmp_path):
        kwargs = dict(classes=5, dim=8, train_per_class=3, test_per_class=2,
                      spread=0.1, separation=1.0, seed=11)
        a, b = synth_generate(**kwargs), synth_generate(**kwargs)
        pa, pb = tmp_path / "a.fse", tmp_path / "b.fse"
        save_embeddings(a, pa)
        save_embeddings(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_zero_spread_equals_centers(self):
        ds = synth_generate(classes=3, dim=6, train_per_class=2, test_per_class=2,
                            spread=0.0, separation=1.0, seed=4)
        by_class = {}
        for rec in ds.records:
            by_class.setdefault(rec.class_id, []).append(rec.feature)
        for feats in by_class.values():
            for f in feats[1:]:
                assert f.tobytes() == feats[0].tobytes()

    def test_transformed_is_reversal(self):
        ds = synth_generate(classes=2, dim=5, train_per_class=1, test_per_class=1,
                            spread=0.1, seed=0)
        for rec in ds.records:
            assert rec.transformed.tobytes() == rec.feature[::-1].copy().tobytes()

    def test_rejects_bad_params(self):
        with pytest.raises(ConfigError):
            synth_generate(classes=0, dim=4, train_per_class=1, test_per_class=1, spread=0.1)
        with pytest.raises(ConfigError):
            synth_generate(classes=2, dim=4, train_per_class=1, test_per_class=1,
                           spread=-0.1)
