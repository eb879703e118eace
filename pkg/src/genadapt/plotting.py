"""Critical-difference style rank diagrams."""
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.linewidth": 0.8,
    "svg.hashsalt": "genadapt",
    "svg.fonttype": "none",
}


def rank_diagram(names, mean_ranks, cd, path, title=None):
    """Strategies on a mean-rank axis (1 = best) with a critical-difference bar."""
    names = list(names)
    ranks = np.asarray(mean_ranks, dtype=float)
    k = len(names)
    order = np.argsort(ranks, kind="stable")
    left = order[: (k + 1) // 2]  # better half labelled on the left
    right = order[(k + 1) // 2:][::-1]
    rows = max(len(left), len(right))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7.0, 1.0 + 0.3 * rows))
        lo, hi = 1, max(k, 2)
        pad = 0.45 * (hi - lo) + 0.5
        ax.set_xlim(lo - pad, hi + pad)
        ax.set_ylim(-(rows + 0.8), 1.6)
        ax.hlines(0, lo, hi, color="k", lw=0.8)
        for r in range(lo, hi + 1):
            ax.vlines(r, 0, 0.15, color="k", lw=0.8)
            ax.text(r, 0.25, str(r), ha="center", va="bottom")
        for side, idx in ((-1, left), (1, right)):
            edge = lo - 0.1 if side < 0 else hi + 0.1
            for row, i in enumerate(idx, start=1):
                x = ranks[i]
                ax.plot([x, x, edge], [0, -row, -row], color="0.35", lw=0.7)
                ax.plot(x, 0, "o", color="k", ms=3)
                ax.text(edge + 0.05 * side, -row, f"{names[i]} ({x:.2f})", va="center",
                        ha="right" if side < 0 else "left")
        if np.isfinite(cd):
            ax.hlines(1.1, lo, lo + cd, color="tab:red", lw=2)
            ax.text(lo + cd / 2, 1.25, f"CD = {cd:.2f}", ha="center", va="bottom", color="tab:red")
        if title:
            ax.set_title(title, loc="left")
        ax.axis("off")
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
    return path
