"""Nearest-class-mean inference and the two-stage dual-feature strategy.

The two-stage strategy first classifies the transferable-space query against
bank ``h``; an incremental-class verdict is final, while a base-class verdict
is re-examined in the discriminative space against ``h_tilde`` over all seen
classes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import SessionStream
from .errors import BankMismatchError, EmptyBankError
from .gmm import GmmBank, gmm_classify
from .prototypes import PrototypeBank
from .vectors import DualFeature, l2_normalize

COARSE_ONLY = "coarse_only"
REFINED = "refined"


@dataclass(frozen=True)
class Prediction:
    query_index: int
    coarse_label: int
    final_label: int
    stage: str  # COARSE_ONLY or REFINED


def ncm_classify(x: DualFeature, bank: PrototypeBank) -> int:
    """Label of the prototype pair most cosine-similar to the query set.

    Ties break toward the lowest class id (np.argmax keeps the first
    maximum and the score rows are ordered by ascending id).
    """
    if len(bank) == 0:
        raise EmptyBankError("cannot classify against an empty bank")
    ids, p1, p2 = bank._score_matrices()
    q1 = l2_normalize(x.original)
    q2 = l2_normalize(x.transformed)
    scores = 0.5 * (p1 @ q1 + p2 @ q2)
    return int(ids[int(np.argmax(scores))])


def _classify_any(x: DualFeature, bank, weighting: str) -> int:
    if isinstance(bank, GmmBank):
        return gmm_classify(x, bank, weighting)
    return ncm_classify(x, bank)


def dual_classify(
    x_transferable: DualFeature,
    x_discriminative: DualFeature,
    h,
    h_tilde,
    base_classes: frozenset[int] | set[int],
    query_index: int = -1,
    weighting: str = "pi",
) -> Prediction:
    """Two-stage classification over a transferable and a discriminative bank.

    Stage 1 classifies ``x_transferable`` with ``h``; a non-base label is
    emitted as-is.  A base label triggers stage 2: ``x_discriminative``
    against the full ``h_tilde`` (all seen classes).  Banks may be prototype
    or mixture banks; ``weighting`` applies to the latter.
    """
    if set(getattr(h, "class_ids")) != set(getattr(h_tilde, "class_ids")):
        raise BankMismatchError("banks cover different class sets")
    coarse = _classify_any(x_transferable, h, weighting)
    if coarse not in base_classes:
        return Prediction(query_index, coarse, coarse, COARSE_ONLY)
    final = _classify_any(x_discriminative, h_tilde, weighting)
    return Prediction(query_index, coarse, final, REFINED)


@dataclass(frozen=True)
class PredictionRow:
    query_index: int
    true_label: int
    coarse_label: int
    final_label: int
    stage: str


def evaluate_session(
    stream: SessionStream,
    session: int,
    classify: Callable[[int, DualFeature], "int | Prediction"],
) -> list[PredictionRow]:
    """Classify every record of the cumulative test set at ``session``.

    ``classify`` receives the query's position within the test set and its
    dual feature; it may return a bare label or a full Prediction.
    """
    rows = []
    for pos, rec_idx in enumerate(stream.sessions[session].test_indices):
        rec = stream.dataset.records[rec_idx]
        result = classify(pos, rec.dual())
        if isinstance(result, Prediction):
            rows.append(
                PredictionRow(
                    query_index=pos,
                    true_label=rec.class_id,
                    coarse_label=result.coarse_label,
                    final_label=result.final_label,
                    stage=result.stage,
                )
            )
        else:
            label = int(result)
            rows.append(PredictionRow(pos, rec.class_id, label, label, COARSE_ONLY))
    return rows


def write_predictions(path, rows: Sequence[PredictionRow]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_index", "true", "coarse", "final", "stage"])
        for row in rows:
            writer.writerow(
                [row.query_index, row.true_label, row.coarse_label, row.final_label, row.stage]
            )


def read_predictions(path) -> list[PredictionRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            PredictionRow(
                query_index=int(r["query_index"]),
                true_label=int(r["true"]),
                coarse_label=int(r["coarse"]),
                final_label=int(r["final"]),
                stage=r["stage"],
            )
            for r in reader
        ]
