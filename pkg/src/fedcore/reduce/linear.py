"""PCA and RBF kernel PCA, the linear-algebra alternates to t-SNE fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist


@dataclass
class Projection:
    embedding: np.ndarray
    components: Optional[np.ndarray]
    explained_variance_ratio: np.ndarray
    mean: Optional[np.ndarray] = None


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _pad(mat: np.ndarray, k: int) -> np.ndarray:
    if mat.shape[1] >= k:
        return mat[:, :k]
    return np.hstack([mat, np.zeros((mat.shape[0], k - mat.shape[1]))])


def pca(features: np.ndarray, k: int) -> Projection:
    X = np.asarray(features, dtype=np.float64)
    mean = X.mean(axis=0)
    centered = X - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = _fix_signs(vt.T).T  # rows are principal directions
    var = s**2
    total = var.sum()
    ratio = var / total if total > 0 else np.zeros_like(var)
    embedding = _pad(centered @ comps.T, k)
    return Projection(embedding, _pad(comps.T, k).T, _pad(ratio[None, :], k)[0], mean)


def rbf_kernel(X: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(X, X, "sqeuclidean"))


def kernel_pca(features: np.ndarray, k: int, gamma: Optional[float] = None) -> Projection:
    X = np.asarray(features, dtype=np.float64)
    n, d = X.shape
    gamma = 1.0 / d if gamma is None else gamma
    K = rbf_kernel(X, gamma)
    one = np.full((n, n), 1.0 / n)
    Kc = K - one @ K - K @ one + one @ K @ one
    vals, vecs = np.linalg.eigh(Kc)
    order = np.argsort(vals, kind="stable")[::-1]
    vals = vals[order]
    vecs = _fix_signs(vecs[:, order])
    vals = np.where(vals > 0, vals, 0.0)
    total = vals.sum()
    ratio = vals / total if total > 0 else np.zeros_like(vals)
    embedding = vecs * np.sqrt(vals)
    return Projection(_pad(embedding, k), None, _pad(ratio[None, :], k)[0])
