"""Report figures (PNG via the Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_history(history, path, title="training loss") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(history.epoch, history.sampled_loss, lw=1, label="sampled")
        full = [(e, v) for e, v in zip(history.epoch, history.fullset_loss) if v is not None]
        if full:
            e, v = zip(*full)
            ax.semilogy(e, v, "o-", ms=3, lw=1, label="all vertices")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def plot_stage_timings(timings, path) -> Path:
    """Horizontal bars per stage, coloured by volume/surface group."""
    colors = {"vol": "#4c72b0", "surf": "#dd8452"}
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = [t["stage"] for t in timings][::-1]
        secs = [t["seconds"] for t in timings][::-1]
        ax.barh(names, secs, color=[colors[t["group"]] for t in timings][::-1])
        handles = [Patch(color=c, label=g) for g, c in colors.items()]
        ax.set_xlabel("seconds")
        ax.legend(handles=handles, loc="lower right")
        return _save(fig, path)


def plot_convergence(rows, path) -> Path:
    """Error against step size on log axes; ``rows`` are (method, h, error)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for method in dict.fromkeys(r[0] for r in rows):
            h = np.array([r[1] for r in rows if r[0] == method])
            err = np.array([r[2] for r in rows if r[0] == method])
            slope = np.polyfit(np.log(h), np.log(err), 1)[0]
            ax.loglog(h, err, "o-", ms=3, label=f"{method} (slope {slope:.2f})")
        ax.set_xlabel("step size h")
        ax.set_ylabel("|x(1) - e|")
        ax.legend()
        return _save(fig, path)
