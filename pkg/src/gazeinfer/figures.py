"""Figure rendering for the command-line reports.

Everything draws through the Agg backend straight to files; figures are
conveniences for humans, while the CSV/PGM outputs remain the canonical,
byte-stable artifacts.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_heatmap(map2d, path, title=None, metadata=None) -> None:
    """Render a 2-D map as a colormapped image with a value bar.

    ``metadata`` (str -> str) is stored in the PNG text chunks so even the
    convenience renderings carry their provenance.
    """
    m = np.asarray(map2d, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    im = ax.imshow(m, cmap="viridis", interpolation="nearest")
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=metadata)
    plt.close(fig)


def save_pr_curves(report, path, metadata=None) -> None:
    """P_r against the error-fixation count T, one line per model."""
    by_model = {}
    for row in report.rows:
        by_model.setdefault(row.model, []).append(row)
    fig, ax = plt.subplots(figsize=(5.6, 4.0))
    for model in sorted(by_model):
        rows = sorted(by_model[model], key=lambda r: r.t_fixations)
        ts = [r.t_fixations for r in rows]
        prs = [r.p_r for r in rows]
        errs = [r.stderr / r.a_c for r in rows]
        ax.errorbar(ts, prs, yerr=errs, marker="o", capsize=3, label=model)
    ax.axhline(0.0, color="gray", linewidth=0.8, linestyle="--")
    ax.set_xlabel("error fixations T")
    ax.set_ylabel("relative performance $P_r$")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=metadata)
    plt.close(fig)


def save_ablation_bars(rows, path, metadata=None) -> None:
    """One bar of P_r per ablation row, labeled by its configuration."""
    fig, ax = plt.subplots(figsize=(max(5.0, 0.5 * len(rows) + 2.0), 4.2))
    labels = [f"{r.model}\nT={r.t_fixations}" for r in rows]
    prs = [r.p_r for r in rows]
    errs = [r.stderr / r.a_c for r in rows]
    ax.bar(range(len(rows)), prs, yerr=errs, capsize=3, color="#4878a0")
    ax.axhline(0.0, color="gray", linewidth=0.8)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7, rotation=45, ha="right")
    ax.set_ylabel("relative performance $P_r$")
    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=metadata)
    plt.close(fig)
