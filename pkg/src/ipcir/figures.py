"""Figure rendering for reports and sweeps.

Figures are written next to the delimited outputs they visualize. The CSV
remains the interchange format; every figure can be disabled from the CLI.
matplotlib is imported lazily so headless metric runs do not pay for it.
"""

from __future__ import annotations

from pathlib import Path

_COLORS = {"recall": "#1f77b4", "map": "#d62728", "subset_recall": "#2ca02c"}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_report(report, path: str | Path) -> Path:
    """Grouped bar chart of metric values by family and K."""
    plt = _pyplot()
    rows = report.rows()
    labels = [f"{family}@{k}" for family, k, _ in rows]
    values = [value for _, _, value in rows]
    colors = [_COLORS.get(family, "#7f7f7f") for family, _, _ in rows]

    fig, ax = plt.subplots(figsize=(max(6.0, 0.7 * len(rows)), 4.0))
    ax.bar(range(len(rows)), values, color=colors)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("metric value")
    ax.set_title(report.config.get("dataset", "evaluation"))
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_sweep(rows, x_name: str, path: str | Path) -> Path:
    """One line per (metric, K) series across the sweep axis."""
    plt = _pyplot()
    series: dict[tuple[str, int], list[tuple[float, float]]] = {}
    for x, family, k, value in rows:
        series.setdefault((family, k), []).append((x, value))

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for (family, k), points in sorted(series.items()):
        xs, ys = zip(*points)
        ax.plot(xs, ys, marker="o", markersize=3, linewidth=1.2, label=f"{family}@{k}")
    ax.set_xlabel(x_name)
    ax.set_ylabel("metric value")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
