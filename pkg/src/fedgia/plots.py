"""Figure rendering for run reports: written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .core import RunTrace
from .harness import SummaryRow


def render_run_figure(trace: RunTrace, path: str, title: str = "") -> str:
    """Objective and squared-gradient error versus CR for a single run."""
    cr = [r.cr for r in trace.rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(cr, [r.objective for r in trace.rows], marker="o", ms=3)
    ax1.set_xlabel("communication rounds")
    ax1.set_ylabel("objective")
    ax2.semilogy(cr, [max(r.error, 1e-300) for r in trace.rows], marker="o", ms=3)
    ax2.set_xlabel("communication rounds")
    ax2.set_ylabel("squared gradient norm")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_compare_figure(traces: dict[str, RunTrace], path: str) -> str:
    """Objective versus CR for several algorithms on one instance."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label, trace in traces.items():
        ax.plot([r.cr for r in trace.rows], [r.objective for r in trace.rows],
                marker="o", ms=3, label=label)
    ax.set_xlabel("communication rounds")
    ax.set_ylabel("objective")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_sweep_figure(rows: list[SummaryRow], axis: str, path: str) -> str:
    """Mean CR versus the swept parameter (k0 or alpha), one line per algorithm."""
    attr = "k0" if axis == "k0" else "alpha"
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for algo in sorted({r.algorithm for r in rows}):
        pts = sorted(
            ((getattr(r, attr), r.cr_mean) for r in rows if r.algorithm == algo)
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=algo)
    ax.set_xlabel(attr)
    ax.set_ylabel("mean communication rounds")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
