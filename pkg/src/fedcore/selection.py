"""Hierarchical coreset selection and the baseline selectors.

Round protocol for the hierarchical selector:

1. each client clusters its fused features (HDBSCAN) and keeps the raw group
   centroids;
2. it uploads the transformed centroids (tanh, optional Gaussian noise);
3. the server clusters all uploads, elects in each second-level group the
   upload nearest that group's mean, and also elects every upload the
   second-level clustering marks as noise;
4. each client adds, for every elected group, the member nearest the raw
   centroid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from fedcore import rng as _rng
from fedcore.cluster import ClusteringResult, HdbscanConfig, hdbscan, kmeans, nearest_member
from fedcore.errors import ConfigurationError, ProtocolError, ValidationError
from fedcore.features import last_layer
from fedcore.privacy import DPConfig, transform_centroid
from fedcore.reduce import ReducerConfig, reduce

SELECTOR_KINDS = ("fedhds", "fedhds_intra", "feddb", "random", "perplexity", "coreset_cent")


class CentroidUpload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    round: int = 0
    client_id: int
    group_id: int
    values: list[float]


class SelectionNotice(BaseModel):
    model_config = ConfigDict(extra="forbid")

    round: int = 0
    client_id: int
    selected_group_ids: list[int] = Field(default_factory=list)


@dataclass
class Coreset:
    client_id: int
    sample_indices: np.ndarray

    def __len__(self) -> int:
        return int(self.sample_indices.size)


@dataclass
class IntraResult:
    clustering: ClusteringResult
    centroids: list


@dataclass
class InterSelection:
    notices: list
    clustering: ClusteringResult
    selected: list  # (client_id, group_id), ascending
    n_clusters: int
    n_noise: int


def quota(ratio: float, n: int) -> int:
    """``ceil(ratio * n)`` robust to float error (0.2 * 10 -> 2), at least 1 for n >= 1."""
    if not 0.0 < ratio <= 1.0:
        raise ValidationError(f"ratio must lie in (0, 1], got {ratio}")
    if n <= 0:
        return 0
    return min(n, max(1, math.ceil(round(ratio * n, 9))))


def fuse(features, reducer: ReducerConfig) -> np.ndarray:
    """``reduce`` that also accepts a single sample (mapped to the origin)."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 2 and X.shape[0] < 2:
        return np.zeros((X.shape[0], reducer.output_dim))
    return reduce(X, reducer)


def intra_select(fused, config: HdbscanConfig) -> IntraResult:
    clustering = hdbscan(fused, config)
    return IntraResult(clustering, [g.centroid for g in clustering.groups])


def make_uploads(
    client_id: int,
    centroids: Sequence[np.ndarray],
    dp: DPConfig,
    round_index: int = 0,
    gen: Optional[np.random.Generator] = None,
) -> list:
    out = []
    for gid, c in enumerate(centroids):
        values = transform_centroid(c, dp, gen=gen)
        out.append(CentroidUpload(round=round_index, client_id=client_id, group_id=gid, values=values.tolist()))
    return out


def server_select(
    uploads: Iterable[CentroidUpload],
    config: HdbscanConfig,
    clients: Optional[Iterable[int]] = None,
) -> InterSelection:
    ups = sorted(uploads, key=lambda u: (u.client_id, u.group_id))
    if not ups:
        raise ProtocolError("inter-client selection needs at least one upload")
    keys = [(u.client_id, u.group_id) for u in ups]
    if len(set(keys)) != len(keys):
        raise ProtocolError("duplicate (client_id, group_id) upload")
    dims = {len(u.values) for u in ups}
    if len(dims) != 1:
        raise ProtocolError("uploads have inconsistent dimensions")
    rounds = {u.round for u in ups}
    if len(rounds) != 1:
        raise ProtocolError("uploads span several rounds")
    round_index = rounds.pop()

    points = np.array([u.values for u in ups], dtype=np.float64)
    clustering = hdbscan(points, config)
    chosen = [nearest_member(points, g.member_indices, g.centroid) for g in clustering.groups]
    chosen += np.flatnonzero(clustering.labels == -1).tolist()
    selected = sorted(keys[i] for i in chosen)

    by_client: dict[int, list] = {}
    for cid, gid in selected:
        by_client.setdefault(cid, []).append(gid)
    everyone = sorted(set(k[0] for k in keys) | set(clients or ()))
    notices = [
        SelectionNotice(round=round_index, client_id=cid, selected_group_ids=sorted(by_client.get(cid, [])))
        for cid in everyone
    ]
    return InterSelection(notices, clustering, selected, len(clustering.groups), clustering.n_noise)


def inter_select(uploads: Iterable[CentroidUpload], config: HdbscanConfig) -> list:
    return server_select(uploads, config).notices


def build_coreset(fused, clustering: ClusteringResult, centroids, notice: SelectionNotice) -> Coreset:
    """One sample per selected group: the member nearest the raw (local) centroid."""
    picked = []
    for gid in notice.selected_group_ids:
        if not 0 <= gid < len(clustering.groups):
            raise ProtocolError(f"client {notice.client_id} has no group {gid}")
        members = clustering.groups[gid].member_indices
        picked.append(nearest_member(fused, members, centroids[gid]))
    return Coreset(notice.client_id, np.array(sorted(set(picked)), dtype=np.int64))


def all_groups_notice(client_id: int, intra: IntraResult, round_index: int = 0) -> SelectionNotice:
    return SelectionNotice(
        round=round_index, client_id=client_id, selected_group_ids=list(range(len(intra.clustering.groups)))
    )


def random_select(n: int, ratio: float, seed: int) -> np.ndarray:
    q = quota(ratio, n)
    picked = _rng.generator(seed).choice(n, size=q, replace=False)
    return np.sort(picked).astype(np.int64)


def perplexity_select(scores, ratio: float) -> np.ndarray:
    """The ``ceil(ratio * n)`` lowest-perplexity samples, ties by index."""
    if scores is None:
        raise ConfigurationError("perplexity selector needs per-sample perplexity scores")
    s = np.asarray(scores, dtype=np.float64)
    if s.size and (not np.all(np.isfinite(s)) or np.any(s <= 0)):
        raise ConfigurationError("perplexity scores must be finite and positive")
    q = quota(ratio, s.size)
    return np.sort(np.argsort(s, kind="stable")[:q]).astype(np.int64)


def coreset_cent(features, ratio: float, seed: int) -> np.ndarray:
    """Centralized reference: k-means with k = round(sqrt(n)), then the members
    nearest each centroid.

    Each non-empty cluster contributes ``max(1, ceil(ratio * size))`` of its most
    central members; the pooled pick is then trimmed (farthest first) or padded
    (nearest unpicked first) to ``ceil(ratio * n)``.
    """
    X = np.asarray(features, dtype=np.float64)
    n = X.shape[0]
    target = quota(ratio, n)
    if target >= n:
        return np.arange(n, dtype=np.int64)
    k = max(1, int(round(math.sqrt(n))))
    km = kmeans(X, k, seed)
    dist = np.sqrt(np.sum((X - km.centroids[km.labels]) ** 2, axis=1))
    picked = []
    for c in range(k):
        members = np.flatnonzero(km.labels == c)
        if members.size == 0:
            continue
        order = members[np.lexsort((members, dist[members]))]
        picked.extend(order[: quota(ratio, members.size)].tolist())
    picked = np.array(picked, dtype=np.int64)
    rank = np.lexsort((picked, dist[picked]))
    picked = picked[rank]
    if picked.size > target:
        picked = picked[:target]
    elif picked.size < target:
        rest = np.setdiff1d(np.arange(n), picked)
        rest = rest[np.lexsort((rest, dist[rest]))]
        picked = np.concatenate([picked, rest[: target - picked.size]])
    return np.sort(picked)


def feddb_select(
    raw_features: dict,
    layer_count: int,
    layer_dim: int,
    reducer: ReducerConfig,
    config: HdbscanConfig,
) -> dict:
    """Last-layer ablation: reduce each client's last-layer slice, cluster it and
    keep one sample per group. No server phase."""
    out = {}
    for cid in sorted(raw_features):
        fused = fuse(last_layer(raw_features[cid], layer_count, layer_dim), reducer)
        intra = intra_select(fused, config)
        out[cid] = build_coreset(fused, intra.clustering, intra.centroids, all_groups_notice(cid, intra))
    return out


@dataclass
class ClientData:
    client_id: int
    fused: np.ndarray


@dataclass
class ProtocolOutcome:
    coresets: dict  # client_id -> Coreset
    intra: dict  # client_id -> IntraResult
    uploads: list = field(default_factory=list)
    notices: list = field(default_factory=list)
    inter: Optional[InterSelection] = None


def run_protocol(
    clients: Sequence[ClientData],
    intra_config: HdbscanConfig,
    inter_config: Optional[HdbscanConfig],
    dp: DPConfig = DPConfig(),
    round_index: int = 0,
    noise_stream: Optional[Callable[[int], np.random.Generator]] = None,
) -> ProtocolOutcome:
    """One selection round over ``clients``; ``inter_config=None`` skips the server phase.

    ``noise_stream(client_id)`` supplies each client's DP noise generator.
    """
    intra = {}
    uploads = []
    for cd in sorted(clients, key=lambda c: c.client_id):
        res = intra_select(cd.fused, intra_config)
        intra[cd.client_id] = res
        if inter_config is not None:
            gen = noise_stream(cd.client_id) if noise_stream is not None else None
            uploads.extend(make_uploads(cd.client_id, res.centroids, dp, round_index, gen))

    fused = {cd.client_id: cd.fused for cd in clients}
    if inter_config is None:
        notices = [all_groups_notice(cid, intra[cid], round_index) for cid in sorted(intra)]
        inter = None
    else:
        inter = server_select(uploads, inter_config, clients=intra.keys())
        notices = inter.notices
    coresets = {
        n.client_id: build_coreset(fused[n.client_id], intra[n.client_id].clustering, intra[n.client_id].centroids, n)
        for n in notices
    }
    return ProtocolOutcome(coresets, intra, uploads, notices, inter)


SelectorName = Literal["fedhds", "fedhds_intra", "feddb", "random", "perplexity", "coreset_cent"]
