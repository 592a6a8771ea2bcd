"""Writer for the FSE1 embedding interchange format.

Layout (little-endian):

    magic "FSE1" | u32 version=1 | u32 dim | u32 class_count
    | u64 record_count | u32 flags (bit0: transformed channel present)
    | records of [u32 class_id | u8 split (0=train, 1=test)
                  | dim x f32 feature | dim x f32 transformed]

This module is an independent implementation of the contract; consumers
validate files by round-tripping them through the engine's loader.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FSE1"
VERSION = 1
SPLIT_CODE = {"train": 0, "test": 1}


class Fse1Writer:
    """Streams dual-channel embedding records to an FSE1 file."""

    def __init__(self, path, dim: int, split: str):
        if split not in SPLIT_CODE:
            raise ValueError(f"split must be train or test, got {split!r}")
        self.path = path
        self.dim = dim
        self.split_code = SPLIT_CODE[split]
        self.count = 0
        self.max_class = -1
        self.fh = open(path, "wb")
        self.fh.write(self._header(0, 0))  # placeholder, fixed on close

    def _header(self, class_count: int, record_count: int) -> bytes:
        return struct.pack(
            "<4sIIIQI", MAGIC, VERSION, self.dim, class_count, record_count, 1
        )

    def write_batch(self, labels, features, transformed):
        features = np.ascontiguousarray(features, dtype="<f4")
        transformed = np.ascontiguousarray(transformed, dtype="<f4")
        if features.shape != transformed.shape or features.shape[1] != self.dim:
            raise ValueError("feature batch shape mismatch")
        for label, feat, trans in zip(labels, features, transformed):
            self.fh.write(struct.pack("<IB", int(label), self.split_code))
            self.fh.write(feat.tobytes())
            self.fh.write(trans.tobytes())
            self.count += 1
            self.max_class = max(self.max_class, int(label))

    def close(self):
        self.fh.seek(0)
        self.fh.write(self._header(self.max_class + 1, self.count))
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
