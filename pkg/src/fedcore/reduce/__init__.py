"""Layer fusion: map ``n x (l*v)`` raw features to ``n x k`` fused coordinates."""

from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from fedcore.errors import NonFiniteFeatureError, TooFewSamplesError, ValidationError


class TsneParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    perplexity: float = Field(30.0, ge=1.0)
    theta: float = Field(0.5, ge=0.0, le=1.0)
    iterations: int = Field(1000, ge=1)
    early_exaggeration: float = 12.0
    exaggeration_iterations: int = 250
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8


class KpcaParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kernel: Literal["rbf"] = "rbf"
    gamma: Optional[float] = None  # None -> 1 / input_dim


class ReducerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    method: Literal["tsne", "pca", "kpca"] = "tsne"
    output_dim: int = Field(2, ge=1)
    tsne: TsneParams = TsneParams()
    kpca: KpcaParams = KpcaParams()
    seed: int = 0


def reduce(features: np.ndarray, config: ReducerConfig = ReducerConfig()) -> np.ndarray:
    """Fuse raw features into ``config.output_dim`` coordinates.

    Every method is deterministic (t-SNE starts from a PCA projection), so
    ``config.seed`` does not change the result today. Input whose rows are all
    identical maps to the all-zero embedding.
    """
    from fedcore.reduce.linear import kernel_pca, pca
    from fedcore.reduce.tsne import tsne_embed

    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("features must be a 2-D matrix")
    if X.shape[0] < 2:
        raise TooFewSamplesError(f"need at least 2 samples, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeatureError("features contain non-finite entries")
    k = config.output_dim
    if np.all(X == X[0]):
        return np.zeros((X.shape[0], k))
    if config.method == "pca":
        return pca(X, k).embedding
    if config.method == "kpca":
        return kernel_pca(X, k, config.kpca.gamma).embedding
    t = config.tsne
    return tsne_embed(
        X,
        k=k,
        perplexity=t.perplexity,
        theta=t.theta,
        iterations=t.iterations,
        early_exaggeration=t.early_exaggeration,
        exaggeration_iterations=t.exaggeration_iterations,
        learning_rate=t.learning_rate,
        momentum=t.momentum,
        final_momentum=t.final_momentum,
    ).embedding


__all__ = ["KpcaParams", "ReducerConfig", "TsneParams", "reduce"]
