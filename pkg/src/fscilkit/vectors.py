"""Deterministic vector math shared by every other module.

All functions operate on 1-D float64 arrays.  Dot products and sums use
numpy's accumulation, which is fixed for a given build of numpy/BLAS; results
are bit-reproducible on one platform but not guaranteed identical across
platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ZeroVectorError


def as_vector(v) -> np.ndarray:
    """Coerce input to a 1-D float64 array (copying only if needed)."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-D vector, got shape {arr.shape}")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm, preserving direction.

    Raises ZeroVectorError when every entry is zero.
    """
    arr = as_vector(v)
    norm = float(np.sqrt(np.dot(arr, arr)))
    if norm == 0.0:
        raise ZeroVectorError("cannot normalize an all-zero vector")
    return arr / norm


def cosine(a, b) -> float:
    """Cosine similarity of two nonzero vectors of equal dimension.

    Symmetric, and clipped to [-1, 1] against float round-off.
    """
    va = as_vector(a)
    vb = as_vector(b)
    if va.shape[0] != vb.shape[0]:
        raise DimensionMismatchError(
            f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}"
        )
    na = float(np.sqrt(np.dot(va, va)))
    nb = float(np.sqrt(np.dot(vb, vb)))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class DualFeature:
    """A feature vector paired with the feature of its flipped counterpart.

    Both members must share one dimension; they are stored as float64.
    """

    original: np.ndarray
    transformed: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "original", as_vector(self.original))
        object.__setattr__(self, "transformed", as_vector(self.transformed))
        if self.original.shape[0] != self.transformed.shape[0]:
            raise DimensionMismatchError(
                "dual feature members differ in dimension: "
                f"{self.original.shape[0]} vs {self.transformed.shape[0]}"
            )

    @property
    def dim(self) -> int:
        return self.original.shape[0]


def cosine_set(a: DualFeature, b: DualFeature) -> float:
    """Similarity of two vector sets: mean of the memberwise cosines."""
    return 0.5 * (
        cosine(a.original, b.original) + cosine(a.transformed, b.transformed)
    )


def fmo(v) -> float:
    """Feature-mapping occupancy: the entry sum of the L2-normalized vector.

    Equals ||v||_1 / ||v||_2 for entrywise non-negative input, in which case
    the value lies in [1, sqrt(d)].  Higher means more of the feature
    dimensions take part in representing the sample.
    """
    return float(np.sum(l2_normalize(v)))


def flip_vector(v) -> np.ndarray:
    """Index-reversal involution used as the deterministic sample transform.

    flip_vector(flip_vector(x)) == x bitwise, and the Euclidean norm is
    preserved.
    """
    arr = np.asarray(v)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-D vector, got shape {arr.shape}")
    return arr[::-1].copy()
