"""Centroid upload transform: per-dimension tanh, then Gaussian noise.

After tanh every coordinate lies in (-1, 1), so one record can move a
coordinate by at most 2; the Gaussian mechanism with that sensitivity gives
(epsilon, delta)-DP for ``sigma >= 2 * sqrt(2 ln(1.25 / delta)) / epsilon``.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from fedcore import rng as _rng
from fedcore.errors import NonFiniteFeatureError, ValidationError

SENSITIVITY = 2.0


def calibrate_sigma(epsilon: float, delta: float) -> float:
    if not (0.0 < epsilon < 1.0) or not (0.0 < delta < 1.0):
        raise ValidationError(f"epsilon and delta must lie in (0, 1), got {epsilon}, {delta}")
    return SENSITIVITY * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


class DPConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    enabled: bool = False
    epsilon: Optional[float] = Field(None, gt=0.0, lt=1.0)
    delta: Optional[float] = Field(None, gt=0.0, lt=1.0)
    sigma: Optional[float] = Field(None, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.enabled and self.sigma is None and (self.epsilon is None or self.delta is None):
            raise ValueError("enabled DP needs either sigma or both epsilon and delta")
        if self.sigma is not None and self.epsilon is not None and self.delta is not None:
            if self.sigma < calibrate_sigma(self.epsilon, self.delta):
                raise ValueError("sigma is below the calibrated bound for (epsilon, delta)")
        return self

    @property
    def noise_sigma(self) -> float:
        if not self.enabled:
            return 0.0
        if self.sigma is not None:
            return self.sigma
        return calibrate_sigma(self.epsilon, self.delta)


def transform_centroid(
    centroid, config: DPConfig, gen: Optional[np.random.Generator] = None
) -> np.ndarray:
    """tanh-scale, then add N(0, sigma^2) per dimension when DP is enabled.

    ``gen`` overrides the stream seeded from ``config.seed``.
    """
    c = np.asarray(centroid, dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise NonFiniteFeatureError("centroid contains non-finite entries")
    scaled = np.tanh(c)
    if not config.enabled or config.noise_sigma == 0.0:
        return scaled
    gen = gen if gen is not None else _rng.generator(config.seed)
    return scaled + gen.normal(0.0, config.noise_sigma, size=scaled.shape)
