from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fedcore import rng as _rng
from fedcore.errors import ValidationError

MAX_ITER = 300


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia_history: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _sq_dists(points, centroids):
    return np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)


def kmeans_plus_plus(points: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[int(gen.integers(n))]]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every remaining point coincides with a center
            idx = int(gen.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), gen.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(points[idx])
        closest = np.minimum(closest, np.sum((points - points[idx]) ** 2, axis=1))
    return np.array(centers)


def kmeans(points, k: int, seed: int = 0) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds.

    Stops when assignments stop changing or after 300 iterations. Ties go to
    the lowest centroid index; an emptied cluster keeps its previous centroid.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if k < 1 or n < k:
        raise ValidationError(f"kmeans needs n >= k >= 1, got n={n}, k={k}")
    centroids = kmeans_plus_plus(pts, k, _rng.generator(seed))
    labels = np.argmin(_sq_dists(pts, centroids), axis=1)
    history = []
    n_iter = 0
    for n_iter in range(1, MAX_ITER + 1):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = pts[members].mean(axis=0)
        d2 = _sq_dists(pts, centroids)
        history.append(float(d2[np.arange(n), labels].sum()))
        new_labels = np.argmin(d2, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    d2 = _sq_dists(pts, centroids)
    history.append(float(d2[np.arange(n), labels].sum()))
    return KMeansResult(labels.astype(np.int64), centroids, history, n_iter)
