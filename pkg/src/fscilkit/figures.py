"""Matplotlib rendering for run reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import MetricsReport

_FAMILIES = [
    ("overall", "Overall"),
    ("base", "Base"),
    ("inc", "Incremental"),
    ("cinc", "Current incremental"),
    ("pinc", "Past incremental"),
]


def render_accuracy_figure(report: MetricsReport, path):
    """Accuracy-vs-session curves for every defined family, saved as PNG."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for attr, label in _FAMILIES:
        points = [
            (s.session, getattr(s, attr))
            for s in report.per_session
            if getattr(s, attr) is not None
        ]
        if not points:
            continue
        xs, ys = zip(*points)
        ax.plot(xs, [100.0 * y for y in ys], marker="o", label=label)
    ax.set_xlabel("session")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 102)
    ax.set_xticks([s.session for s in report.per_session])
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "fscilkit"})
    plt.close(fig)
