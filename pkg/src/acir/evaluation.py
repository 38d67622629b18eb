"""Retrieval metrics.

Relevance for average precision is label agreement with the query;
AP@K normalizes by the number of relevant items inside the top K, so a
query scores 1.0 exactly when every retrieved item is relevant. The
Hamming-ball membership rule ("everything inside the ball is a
prediction") lives in precision_recall_at_radius instead, keeping the two
true-positive readings separate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codes import hamming_distance
from .errors import EmptyClassError
from .index import GalleryIndex, GalleryRecord


def average_precision_at_k(ranked_labels, query_label, k: int) -> float:
    """Mean precision at the relevant positions of the top-k ranking.

    Returns 0.0 if nothing relevant appears in the top k.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    top = list(ranked_labels)[:k]
    hits = 0
    precision_sum = 0.0
    for position, label in enumerate(top, start=1):
        if label == query_label:
            hits += 1
            precision_sum += hits / position
    return precision_sum / hits if hits else 0.0


def _retrieve_labels(index: GalleryIndex, query: GalleryRecord, k: int, radius: int):
    result = index.ranked_retrieve(query.code, query.levels, k=k, radius=radius)
    return index.labels_for([row[0] for row in result.entries])


def map_maap(
    queries, index: GalleryIndex, k: int = 100, radius: int | None = None
) -> tuple[float, float, dict]:
    """(mAP, maAP, per-class AP means) over ranked retrievals.

    mAP averages over queries; maAP averages the per-class mean APs so
    minority classes count equally. The class set is the gallery's; a
    gallery class with no query raises EmptyClassError.
    """
    if not queries:
        raise EmptyClassError("no queries supplied")
    if radius is None:
        radius = index.nbits
    per_class: dict[int, list] = {}
    all_aps = []
    for query in queries:
        labels = _retrieve_labels(index, query, k, radius)
        ap = average_precision_at_k(labels, query.label, k)
        all_aps.append(ap)
        per_class.setdefault(query.label, []).append(ap)
    gallery_classes = {r.label for r in index.records}
    missing = gallery_classes - per_class.keys()
    if missing:
        raise EmptyClassError(f"no queries for classes {sorted(missing)}")
    class_means = {label: float(np.mean(aps)) for label, aps in sorted(per_class.items())}
    return (
        float(np.mean(all_aps)),
        float(np.mean(list(class_means.values()))),
        class_means,
    )


def precision_recall_at_radius(
    queries, index: GalleryIndex, radius: int
) -> tuple[float, float, float]:
    """(accuracy, macro precision, macro recall) using ball membership.

    Every gallery record within the radius of a query counts as one of its
    predictions. Accuracy asks whether the nearest hash centre (ties broken
    toward the smallest class id) lies within the radius and names the true
    class.
    """
    centres = index.hash_centres()
    centre_items = sorted(centres.items())
    gallery_labels = np.asarray([r.label for r in index.records])
    class_sizes = {
        label: int(np.sum(gallery_labels == label)) for label in set(gallery_labels.tolist())
    }

    stats: dict[int, dict] = {}
    correct = 0
    for query in queries:
        dists = index.distances(query.code)
        inside = dists <= radius
        tp = int(np.sum(inside & (gallery_labels == query.label)))
        fp = int(np.sum(inside)) - tp
        fn = class_sizes.get(query.label, 0) - tp
        bucket = stats.setdefault(query.label, {"tp": 0, "fp": 0, "fn": 0})
        bucket["tp"] += tp
        bucket["fp"] += fp
        bucket["fn"] += fn

        centre_dists = [
            (hamming_distance(query.code, code), label) for label, code in centre_items
        ]
        best_dist, best_label = min(centre_dists)
        if best_dist <= radius and best_label == query.label:
            correct += 1

    precisions = []
    recalls = []
    for bucket in stats.values():
        retrieved = bucket["tp"] + bucket["fp"]
        relevant = bucket["tp"] + bucket["fn"]
        precisions.append(bucket["tp"] / retrieved if retrieved else 0.0)
        recalls.append(bucket["tp"] / relevant if relevant else 0.0)
    accuracy = correct / len(queries) if queries else 0.0
    return accuracy, float(np.mean(precisions)), float(np.mean(recalls))


def ood_detection_rate(flags) -> float:
    """Fraction of true-OOD queries that were flagged."""
    flags = list(flags)
    if not flags:
        raise ValueError("need at least one flag")
    return sum(bool(f) for f in flags) / len(flags)


@dataclass
class EvalReport:
    """Retrieval quality summary; renders as a table or as key=value lines."""

    map: float
    maap: float
    per_class_ap: dict
    radius_table: list = field(default_factory=list)  # (radius, accuracy, precision, recall)
    ood_rate: float | None = None

    def render_keyvalues(self) -> str:
        lines = [f"map={self.map:.6f}", f"maap={self.maap:.6f}"]
        for label, ap in sorted(self.per_class_ap.items()):
            lines.append(f"ap.class_{label}={ap:.6f}")
        for radius, acc, prec, rec in self.radius_table:
            lines.append(f"radius.{radius}.accuracy={acc:.6f}")
            lines.append(f"radius.{radius}.precision={prec:.6f}")
            lines.append(f"radius.{radius}.recall={rec:.6f}")
        if self.ood_rate is not None:
            lines.append(f"ood_detection_rate={self.ood_rate:.6f}")
        return "\n".join(lines)

    def render_table(self) -> str:
        rows = [f"mAP  {self.map:8.4f}", f"maAP {self.maap:8.4f}", ""]
        rows.append("class      AP")
        for label, ap in sorted(self.per_class_ap.items()):
            rows.append(f"{label:>5}  {ap:8.4f}")
        if self.radius_table:
            rows.append("")
            rows.append("radius  accuracy  precision  recall")
            for radius, acc, prec, rec in self.radius_table:
                rows.append(f"{radius:>6}  {acc:8.4f}  {prec:9.4f}  {rec:6.4f}")
        if self.ood_rate is not None:
            rows.append("")
            rows.append(f"OOD detection rate {self.ood_rate:.4f}")
        return "\n".join(rows)
