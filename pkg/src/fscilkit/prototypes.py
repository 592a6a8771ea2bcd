"""Dual-component prototype classifier banks.

A bank stores, per class, the pair (p1, p2) of channel means plus, for base
classes only, a resistance accumulator per component.  Prototypes are kept
unnormalized; cosine scoring normalizes implicitly, and calibration averages
raw vectors, so raw storage avoids repeated renormalization drift.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    DuplicateClassError,
    EmptyClassError,
    UnknownClassError,
    ZeroVectorError,
)
from .vectors import DualFeature


@dataclass(frozen=True, eq=False)
class DualPrototype:
    class_id: int
    p1: np.ndarray  # mean of original-channel features
    p2: np.ndarray  # mean of transformed-channel features
    source_count: int

    def __post_init__(self):
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=np.float64))
        object.__setattr__(self, "p2", np.asarray(self.p2, dtype=np.float64))
        if self.p1.shape != self.p2.shape or self.p1.ndim != 1:
            raise DimensionMismatchError("prototype components must share one dimension")
        if self.source_count < 1:
            raise EmptyClassError(f"class {self.class_id}: source_count must be >= 1")

    def component(self, j: int) -> np.ndarray:
        if j not in (1, 2):
            raise ValueError("component index must be 1 or 2")
        return self.p1 if j == 1 else self.p2

    def as_dual(self) -> DualFeature:
        return DualFeature(self.p1, self.p2)


def build_prototypes(
    train: Mapping[int, Sequence[DualFeature]],
) -> list[DualPrototype]:
    """Mean-vector prototypes per class from dual train features.

    p1 averages the original channel, p2 the transformed channel, in the
    given sample order (fixed-order summation keeps results bit-stable).
    """
    protos = []
    for class_id in sorted(train):
        samples = train[class_id]
        if not samples:
            raise EmptyClassError(f"class {class_id} has no samples")
        dim = samples[0].dim
        p1 = np.zeros(dim, dtype=np.float64)
        p2 = np.zeros(dim, dtype=np.float64)
        for s in samples:
            if s.dim != dim:
                raise DimensionMismatchError(
                    f"class {class_id}: inconsistent sample dimensions"
                )
            p1 += s.original
            p2 += s.transformed
        n = len(samples)
        p1 /= n
        p2 /= n
        if not p1.any() or not p2.any():
            raise ZeroVectorError(f"class {class_id}: prototype mean collapsed to zero")
        protos.append(DualPrototype(class_id=class_id, p1=p1, p2=p2, source_count=n))
    return protos


class PrototypeBank:
    """Per-class dual prototypes with resistance accumulators for base classes.

    Mutating operations (extension, calibration, absorption, accumulation)
    update the bank in place; resistance views are produced as derived copies
    by the self-optimization module and never touch stored state.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.prototypes: dict[int, DualPrototype] = {}
        self.session_of: dict[int, int] = {}
        # (class_id, component j) -> accumulated novel-class direction
        self.resistance: dict[tuple[int, int], np.ndarray] = {}
        self._version = 0
        self._cache: tuple | None = None

    # -- structure ----------------------------------------------------------

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.prototypes)

    @property
    def base_classes(self) -> frozenset[int]:
        return frozenset(c for c, s in self.session_of.items() if s == 0)

    def __len__(self) -> int:
        return len(self.prototypes)

    def __contains__(self, class_id: int) -> bool:
        return class_id in self.prototypes

    def get(self, class_id: int) -> DualPrototype:
        try:
            return self.prototypes[class_id]
        except KeyError:
            raise UnknownClassError(f"class {class_id} not in bank") from None

    def _bump(self):
        self._version += 1
        self._cache = None

    # -- mutation -----------------------------------------------------------

    def extend(self, novel: Iterable[DualPrototype], session: int) -> "PrototypeBank":
        """Add the prototypes of one session; existing entries are untouched.

        Base-session classes (session 0) get zero resistance accumulators.
        Returns self for chaining.
        """
        novel = list(novel)
        for proto in novel:
            if proto.class_id in self.prototypes:
                raise DuplicateClassError(f"class {proto.class_id} already in bank")
            if proto.p1.shape[0] != self.dim:
                raise DimensionMismatchError(
                    f"prototype dim {proto.p1.shape[0]} != bank dim {self.dim}"
                )
        for proto in novel:
            self.prototypes[proto.class_id] = proto
            self.session_of[proto.class_id] = session
            if session == 0:
                for j in (1, 2):
                    self.resistance[(proto.class_id, j)] = np.zeros(
                        self.dim, dtype=np.float64
                    )
        self._bump()
        return self

    def replace_prototype(self, class_id: int, **changes) -> DualPrototype:
        proto = replace(self.get(class_id), **changes)
        self.prototypes[class_id] = proto
        self._bump()
        return proto

    def add_resistance(self, class_id: int, j: int, delta: np.ndarray):
        key = (class_id, j)
        if key not in self.resistance:
            raise UnknownClassError(f"no resistance accumulator for {key}")
        self.resistance[key] = self.resistance[key] + delta
        self._bump()

    # -- scoring ------------------------------------------------------------

    def _score_matrices(self):
        """Cached (class_ids, unit p1 rows, unit p2 rows) for fast scoring."""
        if self._cache is None:
            ids = self.class_ids
            p1 = np.stack([self.prototypes[c].p1 for c in ids])
            p2 = np.stack([self.prototypes[c].p2 for c in ids])
            n1 = np.linalg.norm(p1, axis=1)
            n2 = np.linalg.norm(p2, axis=1)
            if np.any(n1 == 0) or np.any(n2 == 0):
                raise ZeroVectorError("bank contains a zero prototype component")
            self._cache = (np.array(ids), p1 / n1[:, None], p2 / n2[:, None])
        return self._cache

    def copy(self) -> "PrototypeBank":
        out = PrototypeBank(self.dim)
        out.prototypes = dict(self.prototypes)
        out.session_of = dict(self.session_of)
        out.resistance = {k: v.copy() for k, v in self.resistance.items()}
        return out
