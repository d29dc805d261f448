"""Non-IID client partitions: Dirichlet label skew and one-task-per-client."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from fedcore import rng as _rng
from fedcore.errors import ValidationError


class PartitionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    scheme: Literal["dirichlet", "meta"] = "dirichlet"
    n_clients: int = Field(10, ge=1)
    alpha: Optional[float] = Field(0.5, gt=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _alpha_needed(self):
        if self.scheme == "dirichlet" and self.alpha is None:
            raise ValueError("dirichlet partitioning needs alpha")
        return self


def _rebalance(assignment: np.ndarray, n_clients: int) -> np.ndarray:
    """Give every empty client one sample taken from the currently largest client."""
    counts = np.bincount(assignment, minlength=n_clients)
    for client in range(n_clients):
        if counts[client] == 0:
            donor = int(np.argmax(counts))
            moved = int(np.flatnonzero(assignment == donor).max())
            assignment[moved] = client
            counts[donor] -= 1
            counts[client] += 1
    return assignment


def dirichlet_partition(labels, spec: PartitionSpec) -> np.ndarray:
    """Per category (ascending), draw client shares ~ Dirichlet(alpha) and split a
    shuffled copy of the category's samples by multinomial counts."""
    if spec.scheme != "dirichlet":
        raise ValidationError("spec.scheme must be 'dirichlet'")
    labels = np.asarray(labels)
    n = labels.shape[0]
    if spec.n_clients > n:
        raise ValidationError(f"{spec.n_clients} clients but only {n} samples")
    gen = _rng.stream(spec.seed, "partition.dirichlet")
    assignment = np.empty(n, dtype=np.int64)
    for category in np.unique(labels):
        members = np.flatnonzero(labels == category)
        members = members[gen.permutation(members.size)]
        shares = gen.dirichlet(np.full(spec.n_clients, spec.alpha))
        counts = gen.multinomial(members.size, shares)
        assignment[members] = np.repeat(np.arange(spec.n_clients), counts)
    return _rebalance(assignment, spec.n_clients)


def meta_partition(task_ids, spec: PartitionSpec) -> np.ndarray:
    """All samples of the t-th task (by first appearance) go to client t."""
    if spec.scheme != "meta":
        raise ValidationError("spec.scheme must be 'meta'")
    task_ids = np.asarray(task_ids)
    _, first = np.unique(task_ids, return_index=True)
    tasks = task_ids[np.sort(first)]
    if len(tasks) != spec.n_clients:
        raise ValidationError(f"{len(tasks)} tasks but n_clients={spec.n_clients}")
    index = {t: i for i, t in enumerate(tasks.tolist())}
    return np.array([index[t] for t in task_ids.tolist()], dtype=np.int64)


def partition(labels, spec: PartitionSpec) -> np.ndarray:
    if spec.scheme == "dirichlet":
        return dirichlet_partition(labels, spec)
    return meta_partition(labels, spec)


def client_indices(assignment: np.ndarray, n_clients: int) -> list:
    return [np.flatnonzero(assignment == c) for c in range(n_clients)]


def write_assignment_csv(assignment, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "client_id"])
        for i, c in enumerate(np.asarray(assignment).tolist()):
            writer.writerow([i, c])


def read_assignment_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = np.empty(len(rows), dtype=np.int64)
    for row in rows:
        out[int(row["sample_index"])] = int(row["client_id"])
    return out
