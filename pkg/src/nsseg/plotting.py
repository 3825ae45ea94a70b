"""Matplotlib figures written next to the CSV/JSON reports."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRIC_LABELS = {
    "pixel_ap": "Pixel AP",
    "frame_ap": "Frame AP",
    "stack_ap": "Stack AP",
    "stack_roc_auc": "Stack ROC",
}
SPLITS = ("validation", "test")

# PNG metadata otherwise embeds the matplotlib version
_META = {"Software": None}


def _grouped_bars(ax, names, rows, title):
    keys = list(METRIC_LABELS)
    width = 0.8 / max(len(names), 1)
    x = np.arange(len(keys))
    for i, (name, vals) in enumerate(zip(names, rows)):
        ax.bar(x + (i - (len(names) - 1) / 2) * width, [vals[k] for k in keys], width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels([METRIC_LABELS[k] for k in keys])
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)


def plot_run_report(report, path):
    models = report["models"]
    names = [f"{m['role']} {m['iteration']}" for m in models]
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.8), sharey=True)
    for ax, split in zip(axes, SPLITS):
        _grouped_bars(ax, names, [m[split] for m in models], split)
    axes[0].set_ylabel("score")
    axes[-1].legend(loc="lower right", fontsize=8)
    fig.suptitle(f"mode: {report['mode']}")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_ablation(rows, axis, path):
    names = [r["name"] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.8), sharey=True)
    for ax, split in zip(axes, SPLITS):
        _grouped_bars(ax, names, [r[split] for r in rows], split)
    axes[0].set_ylabel("score")
    axes[-1].legend(loc="lower right", fontsize=8)
    fig.suptitle(f"ablation: {axis}")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_score_ranking(scores, n_positive, path, percentile_c=None):
    """Ranked frame scores with the ranker cutoff marked."""
    s = np.sort(np.asarray(scores, dtype=float))[::-1]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(1, s.size + 1), s, lw=1.2, color="k")
    if 0 < n_positive <= s.size:
        label = "cutoff" if percentile_c is None else f"cutoff C={percentile_c}"
        ax.axvline(n_positive + 0.5, color="tab:red", ls="--", label=label)
        ax.legend(fontsize=8)
    ax.set_xlabel("rank")
    ax.set_ylabel("frame score")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
