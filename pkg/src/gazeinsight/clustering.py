"""K-means over raw gaze points, with clusters ranked by how much gaze they hold."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import TooFewSamples

DEFAULT_K = 4
MAX_ITER = 100


@dataclass
class ClusterModel:
    k: int
    centroids: list  # [(x, y), ...]
    assignments: np.ndarray
    counts: list
    rank_order: list
    inertia: float
    n_iter: int
    inertia_history: list = field(default_factory=list)


def _seed_centroids(points, k, rng):
    """k-means++ seeding: first centre uniform, the rest weighted by squared distance."""
    n = len(points)
    centres = np.empty((k, 2))
    centres[0] = points[rng.integers(n)]
    d2 = ((points - centres[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centres[c] = points[idx]
        d2 = np.minimum(d2, ((points - centres[c]) ** 2).sum(axis=1))
    return centres


def _assign(points, centres):
    d2 = ((points[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
    # argmin picks the lowest cluster index on ties
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(len(points)), labels]


def _inertia(points, centres, labels):
    return float(((points - centres[labels]) ** 2).sum())


def kmeans(points, k=DEFAULT_K, seed=0, max_iter=MAX_ITER):
    """Lloyd iteration from k-means++ seeds. Returns (centres, labels, inertia history)."""
    points = np.asarray(points, dtype=float)
    rng = np.random.default_rng(seed)
    centres = _seed_centroids(points, k, rng)
    labels, _ = _assign(points, centres)
    history = [_inertia(points, centres, labels)]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=k)
        sx = np.bincount(labels, weights=points[:, 0], minlength=k)
        sy = np.bincount(labels, weights=points[:, 1], minlength=k)
        nonempty = counts > 0
        centres[nonempty, 0] = sx[nonempty] / counts[nonempty]
        centres[nonempty, 1] = sy[nonempty] / counts[nonempty]
        if not nonempty.all():
            # move each empty cluster onto the point worst served by its centre
            d2 = ((points - centres[labels]) ** 2).sum(axis=1)
            taken = set()
            for c in np.flatnonzero(~nonempty):
                order = np.argsort(-d2, kind="stable")
                pick = next(int(i) for i in order if int(i) not in taken)
                taken.add(pick)
                centres[c] = points[pick]
        history.append(_inertia(points, centres, labels))
        new_labels, _ = _assign(points, centres)
        history.append(_inertia(points, centres, new_labels))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centres, labels, history, n_iter


def rank_clusters(model_or_counts) -> list:
    """Cluster indices by descending member count, ties to the lower index."""
    counts = getattr(model_or_counts, "counts", model_or_counts)
    return sorted(range(len(counts)), key=lambda c: (-counts[c], c))


def cluster_gaze(samples, k=DEFAULT_K, seed=0, max_iter=MAX_ITER) -> ClusterModel:
    """Cluster the valid gaze samples (or any objects with x/y).

    Coordinates are taken relative to the lower-left corner of the data so
    that a translated input follows exactly the same seed path.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = [(s.x, s.y) for s in samples if getattr(s, "valid", True)]
    if len(pts) < k:
        raise TooFewSamples(f"need at least {k} valid samples, got {len(pts)}")
    arr = np.asarray(pts, dtype=float)
    origin = arr.min(axis=0)
    centres, labels, history, n_iter = kmeans(arr - origin, k, seed, max_iter)
    centres = centres + origin
    counts = np.bincount(labels, minlength=k).tolist()
    return ClusterModel(
        k=k,
        centroids=[(float(cx), float(cy)) for cx, cy in centres],
        assignments=labels,
        counts=counts,
        rank_order=rank_clusters(counts),
        inertia=history[-1],
        n_iter=n_iter,
        inertia_history=history,
    )


def ranking_statement(rank_order) -> str:
    order = [str(c) for c in rank_order]
    if len(order) == 1:
        return f"looked most in cluster {order[0]}"
    if len(order) == 2:
        return f"looked most in cluster {order[0]}, then {order[1]}"
    middle = "".join(f", then {c}" for c in order[1:-1])
    return f"looked most in cluster {order[0]}{middle} and then {order[-1]}"


def cluster_csv(samples, model: ClusterModel) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["timestamp_ms", "x", "y", "cluster"])
    valid = [s for s in samples if getattr(s, "valid", True)]
    for s, c in zip(valid, model.assignments.tolist()):
        ts = getattr(s, "timestamp_ms", getattr(s, "start_ms", None))
        out.writerow([repr(ts), repr(s.x), repr(s.y), c])
    return buf.getvalue()


def cluster_summary(model: ClusterModel) -> dict:
    return {
        "k": model.k,
        "centroids": [list(c) for c in model.centroids],
        "counts": model.counts,
        "rank_order": model.rank_order,
        "ranking": ranking_statement(model.rank_order),
        "inertia": model.inertia,
        "iterations": model.n_iter,
    }
