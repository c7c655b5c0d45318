"""Metrics, multi-run aggregation, feature embeddings, and cluster statistics.

Precision/recall/F1 are macro-averaged over the full six-class space; classes
absent from the reference labels contribute zero to the macro average and
trigger a warning. Aggregation over repeated runs reports mean and
population standard deviation, rendered in "m.mmm ± s.sss" form.
"""

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .backbone import SingleViewModel, forward_features
from .dataset.constants import NUM_CLASSES, STONE_CLASSES
from .dataset.tensorize import pairs_to_arrays, patches_to_arrays
from .fusion import MultiViewModel, ViewPair
from .umap3d import umap_project

METRIC_NAMES = ("accuracy", "macro_precision", "macro_recall", "macro_f1")


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict
    confusion: list
    total: int

    def as_dict(self):
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
            "confusion": self.confusion,
            "total": self.total,
        }

    @staticmethod
    def from_dict(obj):
        return MetricsReport(**obj)


def compute_metrics(predictions, labels):
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError(
            f"length mismatch: {predictions.shape} vs {labels.shape}"
        )
    if predictions.size == 0:
        raise ValueError("empty input")
    if predictions.min() < 0 or predictions.max() >= NUM_CLASSES:
        raise ValueError("prediction outside the 6-class space")
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    total = int(labels.size)
    accuracy = float(np.trace(confusion)) / total
    per_class = {}
    precisions, recalls, f1s = [], [], []
    absent = []
    for i, cname in enumerate(STONE_CLASSES):
        tp = float(confusion[i, i])
        fp = float(confusion[:, i].sum() - confusion[i, i])
        fn = float(confusion[i, :].sum() - confusion[i, i])
        support = int(confusion[i, :].sum())
        if support == 0:
            absent.append(cname)
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        per_class[cname] = {"precision": precision, "recall": recall,
                            "f1": f1, "support": support}
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
    if absent:
        warnings.warn(
            f"classes absent from labels contribute 0 to macro averages: {absent}",
            stacklevel=2,
        )
    return MetricsReport(
        accuracy=accuracy,
        macro_precision=float(np.mean(precisions)),
        macro_recall=float(np.mean(recalls)),
        macro_f1=float(np.mean(f1s)),
        per_class=per_class,
        confusion=confusion.tolist(),
        total=total,
    )


@dataclass
class AggregateReport:
    run_count: int
    stats: dict  # metric -> {"mean": float, "std": float}

    def format_metric(self, metric):
        s = self.stats[metric]
        return f"{s['mean']:.3f} ± {s['std']:.3f}"

    def as_dict(self):
        return {"run_count": self.run_count, "stats": self.stats}


def aggregate_runs(reports):
    """Mean and population standard deviation of each metric over runs."""
    if not reports:
        raise ValueError("no reports to aggregate")
    stats = {}
    for metric in METRIC_NAMES:
        values = np.array([getattr(r, metric) for r in reports], dtype=np.float64)
        stats[metric] = {"mean": float(values.mean()),
                         "std": float(values.std())}
    return AggregateReport(run_count=len(reports), stats=stats)


@dataclass
class EmbeddingSet:
    features: np.ndarray
    labels: np.ndarray
    coords3d: np.ndarray = None
    source_model: str = ""
    extra: dict = field(default_factory=dict)

    def save_csv(self, path):
        d = self.features.shape[1]
        header = [f"feature_{i}" for i in range(d)] + ["label", "x", "y", "z"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.features.shape[0]):
                xyz = (list(self.coords3d[i]) if self.coords3d is not None
                       else ["", "", ""])
                writer.writerow(
                    [repr(float(v)) for v in self.features[i]]
                    + [int(self.labels[i])] + xyz
                )


def extract_embeddings(model, samples, batch_size=256, tag=""):
    """Inference-mode feature rows, one per input sample.

    Single-view models take patch records (pre-head pooled features);
    multi-view models take view pairs (post-fusion vectors).
    """
    if isinstance(model, MultiViewModel):
        if not samples or not isinstance(samples[0], ViewPair):
            raise ValueError("multi-view models take view pairs")
        xs, xc, y = pairs_to_arrays(samples)
        was = model.training
        model.train(False)
        try:
            rows = [model.forward_fused(xs[s:s + batch_size], xc[s:s + batch_size])
                    for s in range(0, len(y), batch_size)]
        finally:
            model.train(was)
    elif isinstance(model, SingleViewModel):
        if samples and isinstance(samples[0], ViewPair):
            raise ValueError("single-view models take patch records, not pairs")
        x, y = patches_to_arrays(samples)
        rows = [forward_features(model, x[s:s + batch_size])
                for s in range(0, len(y), batch_size)]
    else:
        raise ValueError(f"unsupported model type {type(model).__name__}")
    return EmbeddingSet(features=np.concatenate(rows, axis=0), labels=y,
                        source_model=tag)


def project_3d(embeddings, seed, n_neighbors=15, n_epochs=200):
    """Nonlinear 3-D projection of the feature rows (UMAP method)."""
    coords = umap_project(embeddings.features, n_components=3,
                          n_neighbors=n_neighbors, n_epochs=n_epochs,
                          seed=seed)
    if not np.isfinite(coords).all():
        raise FloatingPointError("projection produced non-finite coordinates")
    return EmbeddingSet(features=embeddings.features, labels=embeddings.labels,
                        coords3d=coords, source_model=embeddings.source_model,
                        extra=dict(embeddings.extra))


def silhouette_score(points, labels):
    """Mean silhouette over all points, Euclidean metric."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("silhouette needs at least 2 classes")
    sq = (points * points).sum(axis=1)
    d = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * points @ points.T, 0.0))
    n = points.shape[0]
    sil = np.zeros(n)
    masks = {c: labels == c for c in classes}
    for i in range(n):
        own = masks[labels[i]].copy()
        own[i] = False
        if not own.any():
            sil[i] = 0.0
            continue
        a = d[i][own].mean()
        b = min(d[i][masks[c]].mean() for c in classes if c != labels[i])
        sil[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(sil.mean())


def cluster_stats(embeddings):
    """Compactness statistics in the raw feature space.

    mean_intra: average distance of points to their class centroid.
    mean_inter: average pairwise distance between class centroids.
    ratio: mean_inter / mean_intra (+inf sentinel for point-mass classes).
    """
    feats = np.asarray(embeddings.features, dtype=np.float64)
    labels = np.asarray(embeddings.labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("need at least 2 classes")
    centroids = []
    intra = []
    for c in classes:
        pts = feats[labels == c]
        if pts.shape[0] < 2:
            raise ValueError(f"class {c} has fewer than 2 points")
        centroid = pts.mean(axis=0)
        centroids.append(centroid)
        intra.extend(np.linalg.norm(pts - centroid, axis=1))
    centroids = np.stack(centroids)
    inter = [np.linalg.norm(centroids[i] - centroids[j])
             for i in range(len(classes)) for j in range(i + 1, len(classes))]
    mean_intra = float(np.mean(intra))
    mean_inter = float(np.mean(inter))
    ratio = mean_inter / mean_intra if mean_intra > 0 else float("inf")
    return {
        "mean_intra": mean_intra,
        "mean_inter": mean_inter,
        "ratio": ratio,
        "silhouette": silhouette_score(feats, labels),
    }


def save_metrics_json(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
