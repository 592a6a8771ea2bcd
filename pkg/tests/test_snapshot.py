import numpy as np
import pytest

from fscilkit.errors import FormatError
from fscilkit.gmm import GmmBank, fit_gmm
from fscilkit.prototypes import DualPrototype, PrototypeBank
from fscilkit.selfopt import ResistConfig, accumulate_resistance
from fscilkit.snapshot import load_snapshot, save_snapshot


def build_proto_bank(dim=4, seed=0):
    rng = np.random.default_rng(seed)
    bank = PrototypeBank(dim)
    bank.extend(
        [DualPrototype(c, rng.normal(size=dim), rng.normal(size=dim), c + 1) for c in range(3)],
        session=0,
    )
    bank.extend(
        [DualPrototype(3, rng.normal(size=dim), rng.normal(size=dim), 5)], session=1
    )
    accumulate_resistance(bank, [bank.get(3)])
    return bank


def build_gmm_bank(dim=3, seed=1):
    rng = np.random.default_rng(seed)
    bank = GmmBank(dim)
    for c in range(2):
        samples = rng.normal(size=(12, dim))
        bank.add_class(c, fit_gmm(samples, 2, seed=c), fit_gmm(samples, 1, seed=c + 9), 0)
    return bank


class TestSnapshot:
    def test_round_trip_bitwise(self, tmp_path):
        protos = {"transferable": build_proto_bank(), "discriminative": build_proto_bank(seed=7)}
        gmms = {"discriminative": build_gmm_bank()}
        path = tmp_path / "banks.snap"
        save_snapshot(path, next_session=2, proto_banks=protos, gmm_banks=gmms)
        next_session, loaded_protos, loaded_gmms = load_snapshot(path)
        assert next_session == 2
        assert set(loaded_protos) == set(protos)
        for name, bank in protos.items():
            got = loaded_protos[name]
            assert got.class_ids == bank.class_ids
            assert got.session_of == bank.session_of
            for c in bank.class_ids:
                assert got.get(c).p1.tobytes() == bank.get(c).p1.tobytes()
                assert got.get(c).p2.tobytes() == bank.get(c).p2.tobytes()
                assert got.get(c).source_count == bank.get(c).source_count
            assert set(got.resistance) == set(bank.resistance)
            for key in bank.resistance:
                assert got.resistance[key].tobytes() == bank.resistance[key].tobytes()
        for name, bank in gmms.items():
            got = loaded_gmms[name]
            assert set(got.entries) == set(bank.entries)
            for key, params in bank.entries.items():
                for field in ("weights", "means", "variances", "mean_prior"):
                    assert (
                        getattr(got.entries[key], field).tobytes()
                        == getattr(params, field).tobytes()
                    )

    def test_different_dims_per_bank(self, tmp_path):
        protos = {"a": build_proto_bank(dim=4), "b": build_proto_bank(dim=9, seed=3)}
        path = tmp_path / "banks.snap"
        save_snapshot(path, next_session=1, proto_banks=protos)
        _, loaded, gmms = load_snapshot(path)
        assert loaded["a"].dim == 4
        assert loaded["b"].dim == 9
        assert gmms == {}

    def test_save_is_deterministic(self, tmp_path):
        protos = {"x": build_proto_bank()}
        p1, p2 = tmp_path / "a.snap", tmp_path / "b.snap"
        save_snapshot(p1, 1, protos)
        save_snapshot(p2, 1, protos)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_truncation_and_bad_magic(self, tmp_path):
        path = tmp_path / "banks.snap"
        save_snapshot(path, 1, {"x": build_proto_bank()})
        raw = path.read_bytes()
        bad = tmp_path / "bad.snap"
        bad.write_bytes(raw[:-4])
        with pytest.raises(FormatError):
            load_snapshot(bad)
        bad.write_bytes(b"ZZZZ" + raw[4:])
        with pytest.raises(FormatError):
            load_snapshot(bad)

    def test_rejects_embedding_file(self, tmp_path):
        from fscilkit.data import save_embeddings, synth_generate

        ds = synth_generate(classes=2, dim=3, train_per_class=1, test_per_class=1, spread=0.1)
        path = tmp_path / "emb.fse"
        save_embeddings(ds, path)
        with pytest.raises(FormatError):
            load_snapshot(path)
