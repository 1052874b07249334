"""Report figures rendered straight to files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

CLASS_NAMES = ("Negative", "Neutral", "Positive")

STYLE = {
    "font.size": 11,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.8,
    "savefig.dpi": 120,
}

# fixed metadata keeps repeated renders byte-identical
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return str(path)


def training_curves(history, path):
    epochs = history.column("epoch")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(epochs, history.column("train_accuracy"), label="train")
        ax.plot(epochs, history.column("val_accuracy"), label="validation")
        ax.scatter([history.best_epoch], [history.best_val_accuracy], color="k", zorder=3,
                   label=f"best val {history.best_val_accuracy:.4f} @ {history.best_epoch}")
        ax.axvline(history.best_epoch, color="k", lw=0.8, ls=":")
        ax.set_xlabel("epoch")
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1.02)
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def confusion(cm, path, title=None):
    cm = np.asarray(cm)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.6, 4))
        im = ax.imshow(cm, cmap="Blues")
        fig.colorbar(im, ax=ax, fraction=0.046)
        ax.set_xticks(range(3), CLASS_NAMES)
        ax.set_yticks(range(3), CLASS_NAMES)
        ax.set_xlabel("Predicted label")
        ax.set_ylabel("True label")
        thresh = cm.max() / 2 if cm.max() else 0
        for i in range(3):
            for j in range(3):
                ax.text(j, i, int(cm[i, j]), ha="center", va="center",
                        color="white" if cm[i, j] > thresh else "black")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def label_distribution(counts, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        vals = [counts[n.lower()] for n in CLASS_NAMES]
        bars = ax.bar(CLASS_NAMES, vals, color=["#c44e52", "#8c8c8c", "#55a868"])
        ax.bar_label(bars)
        ax.set_ylabel("trials")
        return _save(fig, path)


def search_results(results, path):
    done = [r for r in results if r.val_accuracy is not None]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.scatter([r.sample_index for r in done], [r.val_accuracy for r in done], s=14)
        if done:
            best = min(done, key=lambda r: (-r.val_accuracy, r.sample_index))
            ax.scatter([best.sample_index], [best.val_accuracy], s=60, facecolor="none",
                       edgecolor="r", label=f"selected #{best.sample_index}")
            ax.legend(frameon=False)
        ax.set_xlabel("sample index")
        ax.set_ylabel("proxy validation accuracy")
        return _save(fig, path)
