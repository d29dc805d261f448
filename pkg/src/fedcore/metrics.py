"""Clustering quality, embedding quality, and data-consumption metrics.

Labels are taken as given: every distinct value, -1 included, is a cluster
for the internal metrics. ``clustering_f1`` treats -1 as unmatched noise.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from fedcore.errors import UndefinedMetricError, ValidationError


def _encode(labels):
    labels = np.asarray(labels)
    uniq, codes = np.unique(labels, return_inverse=True)
    return uniq, codes


def calinski_harabasz(points, labels) -> float:
    X = np.asarray(points, dtype=np.float64)
    uniq, codes = _encode(labels)
    n, k = X.shape[0], len(uniq)
    if k < 2:
        raise UndefinedMetricError("Calinski-Harabasz needs at least 2 clusters")
    if n <= k:
        raise UndefinedMetricError("Calinski-Harabasz needs more points than clusters")
    mean = X.mean(axis=0)
    between = within = 0.0
    for c in range(k):
        members = X[codes == c]
        center = members.mean(axis=0)
        between += members.shape[0] * np.sum((center - mean) ** 2)
        within += np.sum((members - center) ** 2)
    if within == 0.0:
        raise UndefinedMetricError("within-cluster dispersion is zero")
    return float(between * (n - k) / (within * (k - 1)))


def silhouette_samples(points, labels) -> np.ndarray:
    X = np.asarray(points, dtype=np.float64)
    uniq, codes = _encode(labels)
    if len(uniq) < 2:
        raise UndefinedMetricError("silhouette needs at least 2 clusters")
    dist = cdist(X, X)
    sizes = np.bincount(codes)
    # per point: summed distance to each cluster
    sums = np.zeros((X.shape[0], len(uniq)))
    for c in range(len(uniq)):
        sums[:, c] = dist[:, codes == c].sum(axis=1)
    own = sizes[codes]
    a = np.where(own > 1, sums[np.arange(len(codes)), codes] / np.maximum(own - 1, 1), 0.0)
    other = sums / sizes
    other[np.arange(len(codes)), codes] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return s


def silhouette(points, labels) -> float:
    return float(np.mean(silhouette_samples(points, labels)))


def clustering_f1(pred_labels, true_labels) -> float:
    """Macro F1 over true classes after a maximum-count one-to-one matching of
    predicted clusters to classes (Hungarian on the contingency table).

    Among matchings with the same count the one with the largest F1 sum wins,
    so the score does not depend on how clusters are numbered.
    """
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape:
        raise ValidationError("label arrays must have equal length")
    classes = np.unique(true)
    clusters = np.unique(pred[pred != -1])
    if classes.size == 0 or clusters.size == 0:
        return 0.0
    table = np.array([[np.sum((pred == k) & (true == c)) for k in clusters] for c in classes], dtype=float)
    # noise points still count toward their class, as misses
    class_sizes = np.array([np.sum(true == c) for c in classes], dtype=float)[:, None]
    cluster_sizes = np.array([np.sum(pred == k) for k in clusters], dtype=float)[None, :]
    # 2 tp / (|class| + |cluster|) is the harmonic mean of precision and recall
    f1 = 2.0 * table / (class_sizes + cluster_sizes)
    # counts differ by whole numbers; the F1 sum of any matching is below min(shape) + 1
    weight = table * (min(table.shape) + 1) + f1
    rows, cols = linear_sum_assignment(weight, maximize=True)
    scores = np.zeros(classes.size)
    scores[rows] = f1[rows, cols]
    return float(scores.mean())


def data_ratio(coreset_sizes, dataset_sizes) -> float:
    total = float(np.sum(dataset_sizes))
    if total <= 0 or np.any(np.asarray(dataset_sizes) <= 0):
        raise ValidationError("dataset sizes must be positive")
    return float(np.sum(coreset_sizes)) / total


def trustworthiness(high, low, n_neighbors: int = 5) -> float:
    """Penalize low-dimensional neighbors that were not neighbors in the input space."""
    X = np.asarray(high, dtype=np.float64)
    Y = np.asarray(low, dtype=np.float64)
    n = X.shape[0]
    k = n_neighbors
    if not 0 < k < n / 2:
        raise ValidationError("n_neighbors must satisfy 0 < k < n / 2")
    dx = cdist(X, X)
    dy = cdist(Y, Y)
    np.fill_diagonal(dx, np.inf)
    np.fill_diagonal(dy, np.inf)
    order_x = np.argsort(dx, axis=1, kind="stable")
    rank_x = np.empty_like(order_x)
    rows = np.arange(n)[:, None]
    rank_x[rows, order_x] = np.arange(1, n + 1)[None, :]
    nn_y = np.argsort(dy, axis=1, kind="stable")[:, :k]
    penalty = np.maximum(rank_x[rows, nn_y] - k, 0).sum()
    return float(1.0 - 2.0 / (n * k * (2 * n - 3 * k - 1)) * penalty)
