"""Bank snapshots: pause/resume serialization for prototype and mixture banks.

Extends the embedding container ("FSE1") with a version-2 record layout:

    magic "FSE1" | u32 version=2 | u32 next_session
    | u8 n_prototype_banks | banks... | u8 n_mixture_banks | banks...

Prototype bank: u8 name_len | name | u32 dim | u32 n_classes, then per class
    u32 class_id | u32 session | u64 source_count | d x f64 p1 | d x f64 p2
    | u8 has_accumulators | (if set) d x f64 delta1 | d x f64 delta2.

Mixture bank: u8 name_len | name | u32 dim | u32 n_entries, then per entry
    u32 class_id | u8 component | u32 session | u32 M
    | M x f64 weights | M*d x f64 means | M*d x f64 variances | d x f64 prior.

All floats are little-endian f64, so round-trips preserve exact bit patterns.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data import MAGIC
from .errors import FormatError
from .gmm import GmmBank, GmmParams
from .prototypes import DualPrototype, PrototypeBank

SNAPSHOT_VERSION = 2


def _w_arr(out: list[bytes], arr: np.ndarray):
    out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_snapshot(
    path,
    next_session: int,
    proto_banks: dict[str, PrototypeBank],
    gmm_banks: dict[str, GmmBank] | None = None,
):
    gmm_banks = gmm_banks or {}
    out: list[bytes] = [
        MAGIC,
        struct.pack("<II", SNAPSHOT_VERSION, next_session),
        struct.pack("<B", len(proto_banks)),
    ]
    for name in sorted(proto_banks):
        bank = proto_banks[name]
        encoded = name.encode()
        out.append(struct.pack("<B", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<II", bank.dim, len(bank)))
        for c in bank.class_ids:
            proto = bank.get(c)
            out.append(struct.pack("<IIQ", c, bank.session_of[c], proto.source_count))
            _w_arr(out, proto.p1)
            _w_arr(out, proto.p2)
            has_acc = (c, 1) in bank.resistance
            out.append(struct.pack("<B", 1 if has_acc else 0))
            if has_acc:
                _w_arr(out, bank.resistance[(c, 1)])
                _w_arr(out, bank.resistance[(c, 2)])
    out.append(struct.pack("<B", len(gmm_banks)))
    for name in sorted(gmm_banks):
        bank = gmm_banks[name]
        encoded = name.encode()
        out.append(struct.pack("<B", len(encoded)))
        out.append(encoded)
        entries = sorted(bank.entries)
        out.append(struct.pack("<II", bank.dim, len(entries)))
        for (c, j) in entries:
            params = bank.entries[(c, j)]
            out.append(struct.pack("<IBII", c, j, bank.session_of[c], params.n_components))
            _w_arr(out, params.weights)
            _w_arr(out, params.means)
            _w_arr(out, params.variances)
            _w_arr(out, params.mean_prior)
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise FormatError("truncated snapshot")
        values = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return values

    def array(self, count: int) -> np.ndarray:
        size = count * 8
        if self.pos + size > len(self.raw):
            raise FormatError("truncated snapshot")
        arr = np.frombuffer(self.raw, dtype="<f8", count=count, offset=self.pos).copy()
        self.pos += size
        return arr

    def name(self) -> str:
        (n,) = self.unpack("<B")
        raw = self.raw[self.pos : self.pos + n]
        self.pos += n
        return raw.decode()


def load_snapshot(path):
    """Returns (next_session, proto_banks, gmm_banks)."""
    reader = _Reader(Path(path).read_bytes())
    if reader.raw[:4] != MAGIC:
        raise FormatError("bad magic in snapshot")
    reader.pos = 4
    version, next_session = reader.unpack("<II")
    if version != SNAPSHOT_VERSION:
        raise FormatError(f"unsupported snapshot version {version}")
    (n_proto,) = reader.unpack("<B")
    proto_banks: dict[str, PrototypeBank] = {}
    for _ in range(n_proto):
        name = reader.name()
        dim, n_classes = reader.unpack("<II")
        bank = PrototypeBank(dim)
        for _ in range(n_classes):
            c, session, source_count = reader.unpack("<IIQ")
            p1 = reader.array(dim)
            p2 = reader.array(dim)
            bank.prototypes[c] = DualPrototype(c, p1, p2, source_count)
            bank.session_of[c] = session
            (has_acc,) = reader.unpack("<B")
            if has_acc:
                bank.resistance[(c, 1)] = reader.array(dim)
                bank.resistance[(c, 2)] = reader.array(dim)
        proto_banks[name] = bank
    (n_gmm,) = reader.unpack("<B")
    gmm_banks: dict[str, GmmBank] = {}
    for _ in range(n_gmm):
        name = reader.name()
        dim, n_entries = reader.unpack("<II")
        bank = GmmBank(dim)
        for _ in range(n_entries):
            c, j, session, m = reader.unpack("<IBII")
            weights = reader.array(m)
            means = reader.array(m * dim).reshape(m, dim)
            variances = reader.array(m * dim).reshape(m, dim)
            prior = reader.array(dim)
            bank.entries[(c, j)] = GmmParams(weights, means, variances, prior)
            bank.session_of[c] = session
        gmm_banks[name] = bank
    if reader.pos != len(reader.raw):
        raise FormatError("trailing bytes in snapshot")
    return next_session, proto_banks, gmm_banks
