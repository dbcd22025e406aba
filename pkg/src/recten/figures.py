"""Figure rendering for sweep reports.

Renders the per-value median metrics of a sweep as a single PNG with
two stacked panels: purity and Rand index on top (both live in [0, 1]),
tree edit distance below.  Uses the non-interactive matplotlib backend
so it works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from recten.sweep import SweepResult

__all__ = ["render_sweep_figure"]


def render_sweep_figure(result: SweepResult, path):
    """Plot median TP/RI and TED against the swept parameter."""
    values = list(result.values)
    tp = [result.medians[v]["tp"] for v in values]
    ri = [result.medians[v]["ri"] for v in values]
    ted = [result.medians[v]["ted"] for v in values]

    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 6.4))
    top.plot(values, tp, marker="o", label="total purity")
    top.plot(values, ri, marker="s", label="Rand index")
    top.set_ylabel("score")
    top.set_ylim(-0.02, 1.02)
    top.legend()
    top.grid(True, alpha=0.3)

    bottom.plot(values, ted, marker="d", color="tab:red", label="tree edit distance")
    bottom.set_xlabel(result.param)
    bottom.set_ylabel("edits")
    bottom.legend()
    bottom.grid(True, alpha=0.3)

    fig.suptitle(f"median metrics vs {result.param}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
