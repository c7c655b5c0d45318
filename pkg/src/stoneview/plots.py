"""Static figure output: confusion-matrix heatmap and 3-D embedding scatter."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataset.constants import STONE_CLASSES  # noqa: E402

_PNG_META = {"Software": "stoneview"}


def confusion_heatmap(report, path):
    cm = np.asarray(report.confusion)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    im = ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(STONE_CLASSES)), STONE_CLASSES)
    ax.set_yticks(range(len(STONE_CLASSES)), STONE_CLASSES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    thresh = cm.max() / 2 if cm.max() else 0.5
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center",
                    color="white" if cm[i, j] > thresh else "black",
                    fontsize=8)
    fig.colorbar(im, fraction=0.046)
    ax.set_title(f"accuracy {report.accuracy:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def embedding_scatter(embeddings, path):
    if embeddings.coords3d is None:
        raise ValueError("project embeddings to 3-D before plotting")
    coords = embeddings.coords3d
    labels = np.asarray(embeddings.labels)
    fig = plt.figure(figsize=(6, 5.5))
    ax = fig.add_subplot(projection="3d")
    cmap = plt.get_cmap("tab10")
    for ci, cname in enumerate(STONE_CLASSES):
        sel = labels == ci
        if not sel.any():
            continue
        ax.scatter(coords[sel, 0], coords[sel, 1], coords[sel, 2],
                   s=6, color=cmap(ci), label=cname, depthshade=False)
    ax.legend(loc="upper right", fontsize=8)
    title = embeddings.source_model or "features"
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
