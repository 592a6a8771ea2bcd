"""Accuracy families, imbalance ratios, and occupancy diagnostics.

Per session t the families partition test samples by the session their true
class arrived in: base (session 0), incremental (any session >= 1), current
incremental (session t), past incremental (sessions 1..t-1).  Families whose
index range excludes the session (e.g. past-incremental at t=1) are reported
as absent, never as zero, and averages run over defined sessions only.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import EmbeddingDataset
from .errors import EmptyResultError, EmptySelectionError, MissingSessionError
from .vectors import fmo


@dataclass(frozen=True)
class SessionResult:
    """Labeled prediction pairs of one session's cumulative test set."""

    session: int
    pairs: tuple[tuple[int, int], ...]  # (true, predicted)
    class_to_session: Mapping[int, int]

    def __post_init__(self):
        if not self.pairs:
            raise EmptyResultError(f"session {self.session} has no predictions")
        for true, _ in self.pairs:
            if self.class_to_session[true] > self.session:
                raise EmptyResultError(
                    f"session {self.session} contains a label from a later session"
                )


@dataclass(frozen=True)
class SessionScores:
    session: int
    overall: float
    base: float | None
    inc: float | None
    cinc: float | None
    pinc: float | None


def _accuracy(pairs: Sequence[tuple[int, int]]) -> float | None:
    if not pairs:
        return None
    correct = sum(1 for true, pred in pairs if true == pred)
    return correct / len(pairs)


def session_metrics(res: SessionResult) -> SessionScores:
    """Accuracy of each class family at one session."""
    t = res.session
    arrival = res.class_to_session
    base = [p for p in res.pairs if arrival[p[0]] == 0]
    inc = [p for p in res.pairs if arrival[p[0]] >= 1]
    cinc = [p for p in res.pairs if arrival[p[0]] == t]
    pinc = [p for p in res.pairs if 1 <= arrival[p[0]] <= t - 1]
    return SessionScores(
        session=t,
        overall=_accuracy(res.pairs),
        base=_accuracy(base),
        inc=_accuracy(inc) if t >= 1 else None,
        cinc=_accuracy(cinc) if t >= 1 else None,
        pinc=_accuracy(pinc) if t >= 2 else None,
    )


@dataclass(frozen=True)
class MetricsReport:
    per_session: tuple[SessionScores, ...]
    overall_avg: float
    base_avg: float | None   # mean over sessions 1..T
    inc_avg: float | None    # mean over sessions 1..T
    cinc_avg: float | None   # mean over sessions 2..T
    pinc_avg: float | None   # mean over sessions 2..T
    base_inc: float | None
    cinc_pinc: float | None
    bicp: float | None
    pd: float

    def to_dict(self) -> dict:
        return {
            "per_session": [
                {
                    "session": s.session,
                    "overall": s.overall,
                    "base": s.base,
                    "inc": s.inc,
                    "cinc": s.cinc,
                    "pinc": s.pinc,
                }
                for s in self.per_session
            ],
            "overall_avg": self.overall_avg,
            "base_avg": self.base_avg,
            "inc_avg": self.inc_avg,
            "cinc_avg": self.cinc_avg,
            "pinc_avg": self.pinc_avg,
            "base_inc": self.base_inc,
            "cinc_pinc": self.cinc_pinc,
            "bicp": self.bicp,
            "pd": self.pd,
        }


def _mean_defined(values: Iterable[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    if not present:
        return None
    return float(np.mean(present))


def _ratio(num: float | None, den: float | None) -> float | None:
    if num is None or den is None or den == 0:
        return None
    return num / den


def aggregate(results: Sequence[SessionResult]) -> MetricsReport:
    """Combine per-session results into the full report.

    Sessions must cover 0..T contiguously.  The overall average runs over all
    sessions; base/incremental averages over 1..T; current/past incremental
    averages over 2..T.  BICP is the mean of the two accuracy ratios and the
    performance drop is overall accuracy at session 0 minus at session T.
    """
    ordered = sorted(results, key=lambda r: r.session)
    sessions = [r.session for r in ordered]
    if sessions != list(range(len(sessions))) or not sessions:
        raise MissingSessionError(f"expected sessions 0..T, got {sessions}")
    scores = tuple(session_metrics(r) for r in ordered)
    T = sessions[-1]
    base_avg = _mean_defined(s.base for s in scores[1:]) if T >= 1 else None
    inc_avg = _mean_defined(s.inc for s in scores[1:]) if T >= 1 else None
    cinc_avg = _mean_defined(s.cinc for s in scores[2:]) if T >= 2 else None
    pinc_avg = _mean_defined(s.pinc for s in scores[2:]) if T >= 2 else None
    base_inc = _ratio(base_avg, inc_avg)
    cinc_pinc = _ratio(cinc_avg, pinc_avg)
    bicp = None
    if base_inc is not None and cinc_pinc is not None:
        bicp = 0.5 * (base_inc + cinc_pinc)
    return MetricsReport(
        per_session=scores,
        overall_avg=float(np.mean([s.overall for s in scores])),
        base_avg=base_avg,
        inc_avg=inc_avg,
        cinc_avg=cinc_avg,
        pinc_avg=pinc_avg,
        base_inc=base_inc,
        cinc_pinc=cinc_pinc,
        bicp=bicp,
        pd=scores[0].overall - scores[-1].overall,
    )


def summarize_overall(per_session_overall: Sequence[float]) -> tuple[float, float]:
    """(mean, first-minus-last) of a per-session overall-accuracy row."""
    arr = [float(v) for v in per_session_overall]
    if not arr:
        raise EmptyResultError("no per-session accuracies given")
    return float(np.mean(arr)), arr[0] - arr[-1]


def fmo_report(
    ds: EmbeddingDataset, classes: Iterable[int] | None = None
) -> float:
    """Mean feature-mapping occupancy over the selected records' original
    channel."""
    wanted = None if classes is None else set(classes)
    values = [
        fmo(rec.feature)
        for rec in ds.records
        if wanted is None or rec.class_id in wanted
    ]
    if not values:
        raise EmptySelectionError("no records matched the class filter")
    return float(np.mean(values))


def write_report_json(report: MetricsReport, path):
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(report: MetricsReport, path):
    def fmt(v):
        return "" if v is None else repr(v)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session", "overall", "base", "inc", "cinc", "pinc"])
        for s in report.per_session:
            writer.writerow(
                [s.session, fmt(s.overall), fmt(s.base), fmt(s.inc), fmt(s.cinc), fmt(s.pinc)]
            )
        writer.writerow([])
        writer.writerow(["overall_avg", fmt(report.overall_avg)])
        writer.writerow(["base_avg", fmt(report.base_avg)])
        writer.writerow(["inc_avg", fmt(report.inc_avg)])
        writer.writerow(["cinc_avg", fmt(report.cinc_avg)])
        writer.writerow(["pinc_avg", fmt(report.pinc_avg)])
        writer.writerow(["base_inc", fmt(report.base_inc)])
        writer.writerow(["cinc_pinc", fmt(report.cinc_pinc)])
        writer.writerow(["bicp", fmt(report.bicp)])
        writer.writerow(["pd", fmt(report.pd)])
