"""Raw per-sample features and the on-disk feature archive.

A raw feature is the last-token hidden state of every transformer layer,
concatenated in layer order. Archives store a batch of them.

Archive layout (all numbers little-endian):

* line 1: UTF-8 JSON header, compact separators, keys in the order
  ``magic, n_samples, layer_count, layer_dim, has_labels, has_perplexity,
  source_tag``, terminated by ``\\n``
* ``n_samples`` records of ``layer_count * layer_dim`` float32
* if ``has_labels``: ``n_samples`` uint32
* if ``has_perplexity``: ``n_samples`` float32
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Optional, Sequence, Union

import numpy as np

from fedcore import rng as _rng
from fedcore.errors import (
    ArchiveHeaderError,
    ArchiveTruncatedError,
    DimensionMismatchError,
    NonFiniteFeatureError,
    ValidationError,
)

MAGIC = "FEDCORE1"
SOURCE_TAGS = ("full-model", "proxy", "synthetic")
_HEADER_KEYS = ("magic", "n_samples", "layer_count", "layer_dim", "has_labels", "has_perplexity", "source_tag")

PathOrFile = Union[str, os.PathLike, BinaryIO]


@dataclass(frozen=True)
class RawFeature:
    values: np.ndarray
    layer_count: int
    layer_dim: int

    def layer(self, i: int) -> np.ndarray:
        return self.values[i * self.layer_dim:(i + 1) * self.layer_dim]


def assemble_raw_feature(layers: Sequence[Sequence[float]]) -> RawFeature:
    """Concatenate per-layer last-token states (layer 1 first) into one vector."""
    if len(layers) == 0:
        raise ValidationError("at least one layer is required")
    rows = [np.asarray(layer, dtype=np.float64).ravel() for layer in layers]
    dim = rows[0].shape[0]
    if dim == 0:
        raise ValidationError("layer dimension must be >= 1")
    for i, row in enumerate(rows):
        if row.shape[0] != dim:
            raise DimensionMismatchError(f"layer {i} has dimension {row.shape[0]}, expected {dim}")
    values = np.concatenate(rows)
    if not np.all(np.isfinite(values)):
        raise NonFiniteFeatureError("layer states contain non-finite entries")
    return RawFeature(values=values, layer_count=len(rows), layer_dim=dim)


def last_layer(features: np.ndarray, layer_count: int, layer_dim: int) -> np.ndarray:
    """Slice the final layer's block out of an ``n x (l*v)`` raw feature matrix."""
    X = np.asarray(features)
    if X.ndim != 2 or X.shape[1] != layer_count * layer_dim:
        raise DimensionMismatchError(
            f"expected {layer_count}x{layer_dim}={layer_count * layer_dim} columns, got shape {X.shape}")
    start = (layer_count - 1) * layer_dim
    return X[:, start:start + layer_dim]


@dataclass
class FeatureArchive:
    features: np.ndarray
    layer_count: int
    layer_dim: int
    labels: Optional[np.ndarray] = None
    perplexity: Optional[np.ndarray] = None
    source_tag: str = "synthetic"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim == 1 and feats.size == 0:
            feats = feats.reshape(0, self.layer_count * self.layer_dim)
        self.features = feats
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint32)
        if self.perplexity is not None:
            self.perplexity = np.asarray(self.perplexity, dtype=np.float32)
        self.validate()

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    def validate(self) -> None:
        if self.layer_count < 1 or self.layer_dim < 1:
            raise ValidationError("layer_count and layer_dim must be >= 1")
        if self.features.ndim != 2 or self.features.shape[1] != self.layer_count * self.layer_dim:
            raise DimensionMismatchError(
                f"features must be n x {self.layer_count * self.layer_dim}, got {self.features.shape}"
            )
        if not np.all(np.isfinite(self.features)):
            raise NonFiniteFeatureError("archive features contain non-finite entries")
        if self.source_tag not in SOURCE_TAGS:
            raise ValidationError(f"unknown source_tag {self.source_tag!r}")
        if self.labels is not None and self.labels.shape != (self.n_samples,):
            raise DimensionMismatchError("labels length must equal n_samples")
        if self.perplexity is not None:
            if self.perplexity.shape != (self.n_samples,):
                raise DimensionMismatchError("perplexity length must equal n_samples")
            if not np.all(np.isfinite(self.perplexity)):
                raise NonFiniteFeatureError("perplexity contains non-finite entries")
            if np.any(self.perplexity <= 0):
                raise ValidationError("perplexity entries must be > 0")

    def header(self) -> dict:
        return {
            "magic": MAGIC,
            "n_samples": self.n_samples,
            "layer_count": self.layer_count,
            "layer_dim": self.layer_dim,
            "has_labels": self.labels is not None,
            "has_perplexity": self.perplexity is not None,
            "source_tag": self.source_tag,
        }

    def equals(self, other: "FeatureArchive") -> bool:
        """Bit-exact comparison of header and payload."""

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            self.header() == other.header()
            and same(self.features, other.features)
            and same(self.labels, other.labels)
            and same(self.perplexity, other.perplexity)
        )

    def subset(self, indices) -> "FeatureArchive":
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureArchive(
            features=self.features[idx],
            layer_count=self.layer_count,
            layer_dim=self.layer_dim,
            labels=None if self.labels is None else self.labels[idx],
            perplexity=None if self.perplexity is None else self.perplexity[idx],
            source_tag=self.source_tag,
        )


def to_bytes(archive: FeatureArchive) -> bytes:
    archive.validate()
    header = json.dumps(archive.header(), separators=(",", ":")).encode("utf-8") + b"\n"
    parts = [header, archive.features.astype("<f4", copy=False).tobytes()]
    if archive.labels is not None:
        parts.append(archive.labels.astype("<u4", copy=False).tobytes())
    if archive.perplexity is not None:
        parts.append(archive.perplexity.astype("<f4", copy=False).tobytes())
    return b"".join(parts)


def write_archive(archive: FeatureArchive, destination: PathOrFile) -> int:
    """Serialize ``archive``; returns the number of bytes written."""
    payload = to_bytes(archive)
    if hasattr(destination, "write"):
        destination.write(payload)
    else:
        Path(destination).write_bytes(payload)
    return len(payload)


def _parse_header(line: bytes) -> dict:
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveHeaderError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise ArchiveHeaderError("header must be a JSON object")
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise ArchiveHeaderError(f"header missing keys: {missing}")
    if header["magic"] != MAGIC:
        raise ArchiveHeaderError(f"bad magic {header['magic']!r}")
    for key in ("n_samples", "layer_count", "layer_dim"):
        if not isinstance(header[key], int) or isinstance(header[key], bool) or header[key] < 0:
            raise ArchiveHeaderError(f"{key} must be a non-negative integer")
    if header["layer_count"] < 1 or header["layer_dim"] < 1:
        raise ArchiveHeaderError("layer_count and layer_dim must be >= 1")
    for key in ("has_labels", "has_perplexity"):
        if not isinstance(header[key], bool):
            raise ArchiveHeaderError(f"{key} must be a boolean")
    if header["source_tag"] not in SOURCE_TAGS:
        raise ArchiveHeaderError(f"unknown source_tag {header['source_tag']!r}")
    return header


def from_bytes(data: bytes) -> FeatureArchive:
    newline = data.find(b"\n")
    if newline < 0:
        raise ArchiveHeaderError("header line is not terminated")
    header = _parse_header(data[:newline])
    n, l, v = header["n_samples"], header["layer_count"], header["layer_dim"]
    sizes = [n * l * v * 4]
    if header["has_labels"]:
        sizes.append(n * 4)
    if header["has_perplexity"]:
        sizes.append(n * 4)
    body = memoryview(data)[newline + 1:]
    if len(body) < sum(sizes):
        raise ArchiveTruncatedError(f"payload has {len(body)} bytes, expected {sum(sizes)}")
    if len(body) > sum(sizes):
        raise ArchiveHeaderError(f"payload has {len(body) - sum(sizes)} trailing bytes")

    offset = 0
    features = np.frombuffer(body, dtype="<f4", count=n * l * v, offset=offset).reshape(n, l * v)
    offset += sizes[0]
    labels = perplexity = None
    if header["has_labels"]:
        labels = np.frombuffer(body, dtype="<u4", count=n, offset=offset)
        offset += n * 4
    if header["has_perplexity"]:
        perplexity = np.frombuffer(body, dtype="<f4", count=n, offset=offset)
    if not np.all(np.isfinite(features)):
        raise NonFiniteFeatureError("archive features contain non-finite entries")
    if perplexity is not None and not np.all(np.isfinite(perplexity)):
        raise NonFiniteFeatureError("archive perplexity contains non-finite entries")
    return FeatureArchive(
        features=features.astype(np.float32),
        layer_count=l,
        layer_dim=v,
        labels=None if labels is None else labels.astype(np.uint32),
        perplexity=None if perplexity is None else perplexity.astype(np.float32),
        source_tag=header["source_tag"],
    )


def read_archive(source: PathOrFile) -> FeatureArchive:
    if hasattr(source, "read"):
        data = source.read()
    else:
        data = Path(source).read_bytes()
    return from_bytes(bytes(data))


@dataclass(frozen=True)
class SyntheticSpec:
    n_modes: int
    mode_separation: float
    mode_stddev: float
    layer_count: int
    layer_dim: int
    samples_per_mode: int

    def validate(self) -> None:
        if self.n_modes < 1:
            raise ValidationError("n_modes must be >= 1")
        if not self.mode_separation > 0:
            raise ValidationError("mode_separation must be > 0")
        if not self.mode_stddev > 0:
            raise ValidationError("mode_stddev must be > 0")
        if self.layer_count < 1 or self.layer_dim < 1:
            raise ValidationError("layer_count and layer_dim must be >= 1")
        if self.samples_per_mode < 0:
            raise ValidationError("samples_per_mode must be >= 0")


def mode_centers(n_modes: int, dim: int, separation: float, gen: np.random.Generator) -> np.ndarray:
    """Draw mode centers with pairwise distance >= ``separation``.

    Centers are isotropic Gaussian draws of scale ``separation / sqrt(dim)``
    (expected pairwise distance ``separation * sqrt(2)``); a draw closer than
    ``separation`` to an accepted center is redrawn, and the scale grows by 10%
    after every 100 consecutive rejections. Only elementwise arithmetic and
    numpy reductions are involved, so the result does not depend on BLAS.
    """
    scale = separation / np.sqrt(dim)
    centers = np.empty((n_modes, dim))
    rejected = 0
    m = 0
    while m < n_modes:
        cand = gen.standard_normal(dim) * scale
        if m > 0:
            gap = np.sqrt(np.sum((centers[:m] - cand) ** 2, axis=1)).min()
            if gap < separation:
                rejected += 1
                if rejected % 100 == 0:
                    scale *= 1.1
                continue
        centers[m] = cand
        m += 1
    return centers


def synth_archive(spec: SyntheticSpec, seed: int) -> FeatureArchive:
    """Gaussian task modes in raw feature space; labels are mode ids.

    Samples are mode-major. The perplexity column is ``1 + |x - center| / stddev``
    so that samples close to their mode read as "easy".
    """
    spec.validate()
    dim = spec.layer_count * spec.layer_dim
    centers = mode_centers(spec.n_modes, dim, spec.mode_separation, _rng.stream(seed, "synth.centers"))
    gen = _rng.stream(seed, "synth.samples")
    n = spec.n_modes * spec.samples_per_mode
    noise = gen.standard_normal((n, dim)) * spec.mode_stddev
    labels = np.repeat(np.arange(spec.n_modes), spec.samples_per_mode)
    feats = centers[labels] + noise
    perplexity = 1.0 + np.sqrt(np.sum(noise**2, axis=1)) / spec.mode_stddev
    return FeatureArchive(
        features=feats.astype(np.float32),
        layer_count=spec.layer_count,
        layer_dim=spec.layer_dim,
        labels=labels.astype(np.uint32),
        perplexity=perplexity.astype(np.float32),
        source_tag="synthetic",
    )
