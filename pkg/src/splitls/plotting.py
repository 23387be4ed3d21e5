"""PNG figures for benchmark reports (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import BASELINE, KexReport, TransferReport  # noqa: E402

STYLE = {
    "figure.figsize": (7.0, 3.6),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def plot_delta_kex(report: KexReport, path: str | Path) -> Path:
    """Grouped bars: Δ_KEX per configuration row, one bar per suite."""
    deltas = report.deltas()
    suites = list(dict.fromkeys(s for s, _ in deltas))
    configs = list(dict.fromkeys(c for _, c in deltas if c != BASELINE))
    width = 0.8 / max(len(suites), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, suite in enumerate(suites):
            xs = [j + (i - (len(suites) - 1) / 2) * width for j in range(len(configs))]
            ax.bar(xs, [deltas.get((suite, c), 0.0) for c in configs], width, label=suite)
        ax.set_xticks(range(len(configs)))
        ax.set_xticklabels(configs, rotation=30, ha="right")
        ax.set_ylabel("Δ KEX/s vs. baseline (%)")
        ax.legend(ncols=len(suites))
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, format="png")
        plt.close(fig)
    return path


def plot_transfer(report: TransferReport, path: str | Path) -> Path:
    """Δ in requests/s against download size."""
    labels = [_size_label(p.size) for p in report.points]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        ax.plot(range(len(labels)), [p.delta for p in report.points], marker="o")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels)
        ax.set_xlabel("download size")
        ax.set_ylabel("Δ requests/s (%)")
        ax.set_title(f"{report.config}, {report.suite}")
        ax.set_ylim(bottom=0)
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, format="png")
        plt.close(fig)
    return path


def _size_label(n: int) -> str:
    if n >= 1 << 20:
        return f"{n >> 20} MiB"
    if n >= 1 << 10:
        return f"{n >> 10} KiB"
    return f"{n} B"
