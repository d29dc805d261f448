"""t-SNE with a Barnes-Hut repulsion estimate.

Affinities are computed on the ``floor(3 * perplexity) + 1`` nearest
neighbors of each point (all points when the client is small), the
embedding starts from a PCA projection scaled to a column-0 standard
deviation of 1e-4, and optimization follows the reference Barnes-Hut schedule: early
exaggeration with low momentum, then momentum 0.8, per-parameter gains,
and re-centering after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.spatial.distance import cdist

from fedcore.errors import DegenerateAffinityError, ValidationError
from fedcore.reduce import _kernels
from fedcore.reduce.linear import pca

EXACT_MAX_N = 64
PERPLEXITY_TOL = 1e-5
PERPLEXITY_MAX_ITER = 50


def effective_perplexity(n: int, perplexity: float) -> float:
    return float(max(1.0, min(float(perplexity), math.floor((n - 1) / 3))))


@njit(cache=True)
def _search_precisions(dist2, target_entropy, tol, max_iter):
    n, k = dist2.shape
    probs = np.zeros((n, k))
    betas = np.zeros(n)
    for i in range(n):
        d = dist2[i] - dist2[i].min()
        mean = d.mean()
        beta = 1.0 / mean if mean > 0.0 else 1.0
        lo = 0.0
        hi = np.inf
        p = np.empty(k)
        for _ in range(max_iter):
            total = 0.0
            weighted = 0.0
            for j in range(k):
                p[j] = math.exp(-d[j] * beta)
                total += p[j]
                weighted += d[j] * p[j]
            entropy = math.log(total) + beta * weighted / total
            diff = entropy - target_entropy
            if abs(diff) <= tol:
                break
            if diff > 0.0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        total = 0.0
        for j in range(k):
            p[j] = math.exp(-d[j] * beta)
            total += p[j]
        for j in range(k):
            probs[i, j] = p[j] / total
        betas[i] = beta
    return probs, betas


@dataclass
class ConditionalAffinities:
    neighbors: np.ndarray  # n x K neighbor indices
    probs: np.ndarray  # n x K conditional probabilities p_{j|i}
    betas: np.ndarray  # per-row precision 1 / (2 sigma_i^2)
    perplexity: float


def conditional_affinities(features: np.ndarray, perplexity: float) -> ConditionalAffinities:
    X = np.asarray(features, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ValidationError("affinities need at least 2 points")
    perp = effective_perplexity(n, perplexity)
    dist2 = cdist(X, X, "sqeuclidean")
    if not np.any(dist2 > 0):
        raise DegenerateAffinityError("all points are identical")
    n_neighbors = min(n - 1, int(math.floor(3 * perp)) + 1)
    np.fill_diagonal(dist2, np.inf)
    order = np.argsort(dist2, axis=1, kind="stable")[:, :n_neighbors]
    knn_d2 = np.take_along_axis(dist2, order, axis=1)
    probs, betas = _search_precisions(knn_d2, math.log(perp), PERPLEXITY_TOL, PERPLEXITY_MAX_ITER)
    return ConditionalAffinities(order, probs, betas, perp)


def tsne_affinities(features: np.ndarray, perplexity: float) -> sp.csr_matrix:
    """Symmetric joint probabilities ``(P_cond + P_cond^T) / 2n`` as CSR, summing to 1."""
    cond = conditional_affinities(features, perplexity)
    n, k = cond.neighbors.shape
    rows = np.repeat(np.arange(n), k)
    p_cond = sp.csr_matrix((cond.probs.ravel(), (rows, cond.neighbors.ravel())), shape=(n, n))
    joint = (p_cond + p_cond.T).tocsr()
    joint.sort_indices()
    joint.data /= joint.data.sum()
    return joint


def _as_csr(affinities) -> sp.csr_matrix:
    mat = affinities if sp.issparse(affinities) else sp.csr_matrix(np.asarray(affinities, dtype=np.float64))
    mat = mat.tocsr().astype(np.float64)
    mat.sort_indices()
    return mat


def exact_gradient(embedding: np.ndarray, affinities) -> np.ndarray:
    Y = np.ascontiguousarray(embedding, dtype=np.float64)
    P = _as_csr(affinities)
    attr = _kernels.attractive_forces(Y, P.indptr, P.indices, P.data)
    rep, z = _kernels.exact_repulsion(Y)
    return 4.0 * (attr - rep / z)


def repulsion(embedding: np.ndarray, theta: float) -> tuple[np.ndarray, float]:
    """Unnormalized repulsive forces and normalizer Z (Barnes-Hut for 2-D)."""
    Y = np.ascontiguousarray(embedding, dtype=np.float64)
    if Y.shape[1] == 2:
        return _kernels.bh_repulsion(Y, float(theta))
    return _kernels.exact_repulsion(Y)


def bh_gradient(embedding: np.ndarray, affinities, theta: float) -> np.ndarray:
    """KL gradient with Barnes-Hut repulsion; non-2-D embeddings use the exact sum."""
    if not 0.0 <= theta <= 1.0:
        raise ValidationError("theta must lie in [0, 1]")
    Y = np.ascontiguousarray(embedding, dtype=np.float64)
    P = _as_csr(affinities)
    attr = _kernels.attractive_forces(Y, P.indptr, P.indices, P.data)
    rep, z = repulsion(Y, theta)
    return 4.0 * (attr - rep / z)


def kl_divergence(embedding: np.ndarray, affinities) -> float:
    Y = np.ascontiguousarray(embedding, dtype=np.float64)
    P = _as_csr(affinities)
    return float(_kernels.kl_divergence(Y, P.indptr, P.indices, P.data))


def pca_init(features: np.ndarray, k: int) -> np.ndarray:
    proj = pca(features, k).embedding
    std = proj[:, 0].std()
    if std > 0:
        proj = proj / std * 1e-4
    return np.ascontiguousarray(proj)


@dataclass
class TsneResult:
    embedding: np.ndarray
    kl_after_exaggeration: Optional[float]
    kl_final: float
    perplexity: float
    used_barnes_hut: bool
    kl_trace: list = field(default_factory=list)


def tsne_embed(
    features: np.ndarray,
    k: int = 2,
    perplexity: float = 30.0,
    theta: float = 0.5,
    iterations: int = 1000,
    early_exaggeration: float = 12.0,
    exaggeration_iterations: int = 250,
    learning_rate: float = 200.0,
    momentum: float = 0.5,
    final_momentum: float = 0.8,
    momentum_switch: int = 250,
) -> TsneResult:
    X = np.asarray(features, dtype=np.float64)
    n = X.shape[0]
    P = tsne_affinities(X, perplexity)
    indptr, indices, data = P.indptr, P.indices, P.data
    use_bh = k == 2 and n > EXACT_MAX_N and theta > 0

    Y = pca_init(X, k)
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_after_exag = None
    trace = []
    for it in range(iterations):
        exag = early_exaggeration if it < exaggeration_iterations else 1.0
        mom = momentum if it < momentum_switch else final_momentum
        attr = _kernels.attractive_forces(Y, indptr, indices, data)
        if use_bh:
            rep, z = _kernels.bh_repulsion(Y, theta)
        else:
            rep, z = _kernels.exact_repulsion(Y)
        # step on gradient / 4: learning_rate follows the original Barnes-Hut code's scale
        grad = exag * attr - rep / z

        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = mom * update - learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)

        if it + 1 == exaggeration_iterations and iterations > exaggeration_iterations:
            kl_after_exag = float(_kernels.kl_divergence(Y, indptr, indices, data))
            trace.append((it + 1, kl_after_exag))
    kl_final = float(_kernels.kl_divergence(Y, indptr, indices, data))
    trace.append((iterations, kl_final))
    return TsneResult(Y, kl_after_exag, kl_final, effective_perplexity(n, perplexity), use_bh, trace)
