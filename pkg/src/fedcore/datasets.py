"""Federated datasets: per-client shards plus a held-out evaluation set.

Two constructed benchmarks live here as well:

* ``mode_benchmark``: every client draws its samples from a few of many
  well-separated latent modes, so the number of groups a client should find
  is known in advance;
* ``duplicate_benchmark``: every client holds a handful of distinct samples,
  each replicated many times with tiny jitter, so almost all data is redundant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from fedcore import rng as _rng
from fedcore.errors import ConfigurationError, ValidationError
from fedcore.features import FeatureArchive, SyntheticSpec, mode_centers, synth_archive
from fedcore.partition import PartitionSpec, client_indices, partition


@dataclass
class ClientShard:
    client_id: int
    features: np.ndarray  # n x (l*v), float64
    labels: np.ndarray
    perplexity: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.features.shape[0])


@dataclass
class FederatedDataset:
    clients: list
    heldout_features: np.ndarray
    heldout_labels: np.ndarray
    layer_count: int
    layer_dim: int
    n_classes: int

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    def pooled(self):
        """Concatenated client features, labels and the owning client of each row."""
        feats = np.concatenate([c.features for c in self.clients])
        labels = np.concatenate([c.labels for c in self.clients])
        owner = np.concatenate([np.full(len(c), c.client_id, dtype=np.int64) for c in self.clients])
        return feats, labels, owner

    def validate(self) -> None:
        if not self.clients:
            raise ValidationError("dataset has no clients")
        dim = self.layer_count * self.layer_dim
        for c in self.clients:
            if len(c) == 0:
                raise ValidationError(f"client {c.client_id} is empty")
            if c.features.shape[1] != dim:
                raise ValidationError(f"client {c.client_id} features have width {c.features.shape[1]}, expected {dim}")
            if c.labels.shape[0] != len(c):
                raise ValidationError(f"client {c.client_id} labels do not match its samples")
        if self.heldout_features.shape[0] == 0:
            raise ValidationError("held-out set is empty")


def _n_classes(*label_sets) -> int:
    return int(max(int(np.max(l)) for l in label_sets if len(l)) + 1)


def from_shards(
    client_archives: Sequence[FeatureArchive], heldout: FeatureArchive
) -> FederatedDataset:
    if not client_archives:
        raise ConfigurationError("no client archives given")
    first = client_archives[0]
    shards = []
    for cid, a in enumerate(client_archives):
        if (a.layer_count, a.layer_dim) != (first.layer_count, first.layer_dim):
            raise ValidationError(f"client archive {cid} has a different layer layout")
        if a.labels is None:
            raise ConfigurationError(f"client archive {cid} has no labels")
        shards.append(ClientShard(cid, a.features.astype(np.float64), a.labels.astype(np.int64),
                                  None if a.perplexity is None else a.perplexity.astype(np.float64)))
    if heldout.labels is None:
        raise ConfigurationError("held-out archive has no labels")
    if (heldout.layer_count, heldout.layer_dim) != (first.layer_count, first.layer_dim):
        raise ValidationError("held-out archive has a different layer layout")
    hl = heldout.labels.astype(np.int64)
    ds = FederatedDataset(shards, heldout.features.astype(np.float64), hl, first.layer_count,
                          first.layer_dim, _n_classes(hl, *[s.labels for s in shards]))
    ds.validate()
    return ds


def split_heldout(
    archive: FeatureArchive,
    seed: int,
    holdout_fraction: float = 0.2,
    holdout_labels: Sequence[int] = (),
):
    """Split a labeled archive into (train, heldout) archives.

    ``holdout_labels`` moves whole categories out; otherwise a seeded
    ``holdout_fraction`` of samples is drawn.
    """
    if archive.labels is None:
        raise ConfigurationError("archive has no labels")
    n = archive.features.shape[0]
    if holdout_labels:
        mask = np.isin(archive.labels.astype(np.int64), np.asarray(list(holdout_labels)))
    else:
        k = int(round(holdout_fraction * n))
        if not 0 < k < n:
            raise ConfigurationError(f"holdout_fraction {holdout_fraction} leaves an empty side")
        mask = np.zeros(n, dtype=bool)
        mask[_rng.generator(seed).choice(n, size=k, replace=False)] = True
    if mask.all() or not mask.any():
        raise ConfigurationError("held-out split leaves an empty side")
    return archive.subset(np.flatnonzero(~mask)), archive.subset(np.flatnonzero(mask))


def partitioned(train: FeatureArchive, heldout: FeatureArchive, spec: PartitionSpec):
    """Partition a pooled archive; returns the dataset and the assignment vector."""
    key = train.meta.get("task_ids") if spec.scheme == "meta" else None
    labels = train.labels if key is None else key
    assignment = partition(np.asarray(labels, dtype=np.int64), spec)
    shards = [train.subset(idx) for idx in client_indices(assignment, spec.n_clients)]
    return from_shards(shards, heldout), assignment


def synthetic_dataset(
    spec: SyntheticSpec,
    part: PartitionSpec,
    seed: int,
    holdout_fraction: float = 0.2,
    holdout_labels: Sequence[int] = (),
):
    pooled = synth_archive(spec, seed)
    train, heldout = split_heldout(pooled, _rng.derive_seed(seed, "data.holdout"), holdout_fraction, holdout_labels)
    return partitioned(train, heldout, part)


def mode_benchmark(
    seed: int,
    n_clients: int = 200,
    samples_per_client: int = 500,
    n_modes: int = 50,
    modes_per_client: int = 5,
    mode_separation: float = 20.0,
    mode_stddev: float = 0.5,
    layer_count: int = 4,
    layer_dim: int = 8,
    heldout_per_mode: int = 20,
) -> FederatedDataset:
    """Each client draws ``samples_per_client`` samples evenly from
    ``modes_per_client`` distinct modes out of ``n_modes``; labels are mode ids."""
    if samples_per_client % modes_per_client:
        raise ConfigurationError("samples_per_client must be a multiple of modes_per_client")
    if modes_per_client > n_modes:
        raise ConfigurationError("modes_per_client exceeds n_modes")
    dim = layer_count * layer_dim
    centers = mode_centers(n_modes, dim, mode_separation, _rng.stream(seed, "bench.modes.centers"))
    per_mode = samples_per_client // modes_per_client
    shards = []
    for cid in range(n_clients):
        gen = _rng.stream(seed, "bench.modes.client", 0, cid)
        modes = np.sort(gen.choice(n_modes, size=modes_per_client, replace=False))
        labels = np.repeat(modes, per_mode)
        feats = centers[labels] + gen.standard_normal((labels.size, dim)) * mode_stddev
        shards.append(ClientShard(cid, feats, labels.astype(np.int64)))
    gen = _rng.stream(seed, "bench.modes.heldout")
    hl = np.repeat(np.arange(n_modes), heldout_per_mode)
    hf = centers[hl] + gen.standard_normal((hl.size, dim)) * mode_stddev
    ds = FederatedDataset(shards, hf, hl.astype(np.int64), layer_count, layer_dim, n_modes)
    ds.validate()
    return ds


def duplicate_benchmark(
    seed: int,
    n_clients: int = 10,
    distinct_per_client: int = 10,
    replicas: int = 50,
    jitter: float = 0.01,
    n_classes: int = 5,
    class_separation: float = 4.0,
    class_stddev: float = 1.0,
    layer_count: int = 4,
    layer_dim: int = 8,
    heldout_per_class: int = 200,
) -> FederatedDataset:
    """Clients hold ``distinct_per_client`` class-conditional Gaussian draws, each
    repeated ``replicas`` times with ``jitter`` noise. Held-out samples are
    fresh draws from the same class distributions."""
    dim = layer_count * layer_dim
    centers = mode_centers(n_classes, dim, class_separation, _rng.stream(seed, "bench.dup.centers"))
    shards = []
    for cid in range(n_clients):
        gen = _rng.stream(seed, "bench.dup.client", 0, cid)
        base_labels = gen.integers(0, n_classes, size=distinct_per_client)
        base = centers[base_labels] + gen.standard_normal((distinct_per_client, dim)) * class_stddev
        feats = np.repeat(base, replicas, axis=0) + gen.standard_normal((distinct_per_client * replicas, dim)) * jitter
        labels = np.repeat(base_labels, replicas)
        shards.append(ClientShard(cid, feats, labels.astype(np.int64)))
    gen = _rng.stream(seed, "bench.dup.heldout")
    hl = np.repeat(np.arange(n_classes), heldout_per_class)
    hf = centers[hl] + gen.standard_normal((hl.size, dim)) * class_stddev
    ds = FederatedDataset(shards, hf, hl.astype(np.int64), layer_count, layer_dim, n_classes)
    ds.validate()
    return ds
