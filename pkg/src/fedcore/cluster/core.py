from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fedcore.errors import EmptyInputError


@dataclass
class ClusterGroup:
    member_indices: np.ndarray
    centroid: np.ndarray


@dataclass
class ClusteringResult:
    labels: np.ndarray
    groups: list = field(default_factory=list)
    fallback: bool = False

    @property
    def n_noise(self) -> int:
        return int(np.sum(self.labels == -1))

    def partition(self) -> set:
        return {frozenset(int(i) for i in g.member_indices) for g in self.groups}


def centroid_of(points) -> np.ndarray:
    """Arithmetic mean of the member points; need not be one of them."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[0] == 0:
        raise EmptyInputError("centroid of an empty group")
    return pts.mean(axis=0)


def nearest_member(points, candidate_indices: Sequence[int], target) -> int:
    """Candidate index closest to ``target`` (Euclidean); lowest index wins ties."""
    cands = np.asarray(sorted(int(i) for i in candidate_indices), dtype=np.int64)
    if cands.size == 0:
        raise EmptyInputError("no candidates")
    pts = np.asarray(points, dtype=np.float64)[cands]
    d2 = np.sum((pts - np.asarray(target, dtype=np.float64)) ** 2, axis=1)
    return int(cands[int(np.argmin(d2))])


def groups_from_labels(points: np.ndarray, labels: np.ndarray) -> list:
    groups = []
    for g in range(int(labels.max()) + 1 if labels.size else 0):
        members = np.flatnonzero(labels == g)
        groups.append(ClusterGroup(members, centroid_of(points[members])))
    return groups
