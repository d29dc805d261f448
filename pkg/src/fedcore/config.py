"""Run configuration document (JSON, ``schema_version`` 1) and dataset loading.

All randomness in a run derives from ``master_seed`` through
``fedcore.rng.derive_seed``; the ``seed`` fields of the component configs are
only used when those components are called on their own.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from fedcore import rng as _rng
from fedcore.cluster import HdbscanConfig
from fedcore.datasets import (
    FederatedDataset,
    duplicate_benchmark,
    from_shards,
    mode_benchmark,
    partitioned,
    split_heldout,
)
from fedcore.errors import ConfigurationError
from fedcore.features import SyntheticSpec, read_archive, synth_archive
from fedcore.fedsim import TrainConfig
from fedcore.partition import PartitionSpec
from fedcore.privacy import DPConfig
from fedcore.reduce import ReducerConfig

RATIO_SELECTORS = ("random", "perplexity", "coreset_cent")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SelectorConfig(_Strict):
    kind: Literal["fedhds", "fedhds_intra", "feddb", "random", "perplexity", "coreset_cent"] = "fedhds"
    ratio: Optional[float] = Field(None, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _ratio_present(self):
        if self.kind in RATIO_SELECTORS and self.ratio is None:
            raise ValueError(f"selector {self.kind} needs a ratio")
        return self


class ClusteringConfig(_Strict):
    intra: HdbscanConfig = HdbscanConfig(min_cluster_size=5)
    inter: HdbscanConfig = HdbscanConfig(min_cluster_size=2)


class PartitionConfig(_Strict):
    scheme: Literal["dirichlet", "meta"] = "dirichlet"
    n_clients: int = Field(10, ge=1)
    alpha: Optional[float] = Field(0.5, gt=0.0)


class SyntheticData(_Strict):
    n_modes: int = Field(10, ge=1)
    mode_separation: float = Field(10.0, gt=0.0)
    mode_stddev: float = Field(0.5, gt=0.0)
    layer_count: int = Field(4, ge=1)
    layer_dim: int = Field(8, ge=1)
    samples_per_mode: int = Field(100, ge=1)

    def spec(self) -> SyntheticSpec:
        return SyntheticSpec(**self.model_dump())


class ModeBenchmarkConfig(_Strict):
    n_clients: int = 200
    samples_per_client: int = 500
    n_modes: int = 50
    modes_per_client: int = 5
    mode_separation: float = 20.0
    mode_stddev: float = 0.5
    layer_count: int = 4
    layer_dim: int = 8
    heldout_per_mode: int = 20


class DuplicateBenchmarkConfig(_Strict):
    n_clients: int = 10
    distinct_per_client: int = 10
    replicas: int = 50
    jitter: float = 0.01
    n_classes: int = 5
    class_separation: float = 4.0
    class_stddev: float = 1.0
    layer_count: int = 4
    layer_dim: int = 8
    heldout_per_class: int = 200


class DataConfig(_Strict):
    source: Literal["synthetic", "pooled_archive", "archives", "mode_benchmark", "duplicate_benchmark"] = "synthetic"
    synthetic: SyntheticData = SyntheticData()
    partition: PartitionConfig = PartitionConfig()
    holdout_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    holdout_labels: list[int] = []
    pooled_archive: Optional[str] = None
    client_archives: list[str] = []
    heldout_archive: Optional[str] = None
    mode_benchmark: ModeBenchmarkConfig = ModeBenchmarkConfig()
    duplicate_benchmark: DuplicateBenchmarkConfig = DuplicateBenchmarkConfig()

    @model_validator(mode="after")
    def _paths_named(self):
        if self.source == "pooled_archive" and not self.pooled_archive:
            raise ValueError("source pooled_archive needs pooled_archive")
        if self.source == "archives" and (not self.client_archives or not self.heldout_archive):
            raise ValueError("source archives needs client_archives and heldout_archive")
        return self

    def paths(self) -> list:
        if self.source == "pooled_archive":
            return [self.pooled_archive]
        if self.source == "archives":
            return [*self.client_archives, self.heldout_archive]
        return []


class LoraNote(_Strict):
    """Adapter settings of the original fine-tuning setup; recorded, never used."""

    rank: int = 8
    alpha: int = 16
    dropout: float = 0.05


class ReportConfig(_Strict):
    max_clients: int = Field(4, ge=1)


class RunConfig(_Strict):
    schema_version: Literal[1] = 1
    master_seed: int = 0
    rounds: int = Field(40, ge=0)
    active_ratio: float = Field(0.05, gt=0.0, le=1.0)
    selector: SelectorConfig = SelectorConfig()
    selection_schedule: Literal["every_round", "once"] = "every_round"
    model_features: Literal["raw", "fused"] = "raw"
    reducer: ReducerConfig = ReducerConfig()
    clustering: ClusteringConfig = ClusteringConfig()
    dp: DPConfig = DPConfig()
    training: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()
    output_dir: Optional[str] = None
    report: ReportConfig = ReportConfig()
    lora: LoraNote = LoraNote()

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None) -> "RunConfig":
        update = {}
        if seed is not None:
            update["master_seed"] = seed
        if output_dir is not None:
            update["output_dir"] = output_dir
        return self.model_copy(update=update) if update else self

    def preflight(self) -> None:
        missing = [p for p in self.data.paths() if not Path(p).is_file()]
        if missing:
            raise ConfigurationError(f"referenced file(s) do not exist: {', '.join(missing)}")


def _resolve(path: Optional[str], base: Path) -> Optional[str]:
    if path is None:
        return None
    p = Path(path)
    return str(p if p.is_absolute() else (base / p).resolve())


def parse_config(doc: dict, base_dir: Optional[Path] = None) -> RunConfig:
    """Validate a config document; relative paths resolve against ``base_dir``."""
    cfg = RunConfig.model_validate(doc)
    if base_dir is None:
        return cfg
    data = cfg.data.model_copy(update={
        "pooled_archive": _resolve(cfg.data.pooled_archive, base_dir),
        "heldout_archive": _resolve(cfg.data.heldout_archive, base_dir),
        "client_archives": [_resolve(p, base_dir) for p in cfg.data.client_archives],
    })
    return cfg.model_copy(update={"data": data, "output_dir": _resolve(cfg.output_dir, base_dir)})


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(doc, path.parent)


def load_dataset(config: RunConfig):
    """Build the federated dataset; returns ``(dataset, assignment)``.

    ``assignment`` maps every training sample (clients concatenated in id
    order) to its client when the source was partitioned, else ``None``.
    """
    config.preflight()
    d = config.data
    seed = config.master_seed
    part = PartitionSpec(scheme=d.partition.scheme, n_clients=d.partition.n_clients,
                         alpha=d.partition.alpha, seed=_rng.derive_seed(seed, "partition"))
    holdout_seed = _rng.derive_seed(seed, "data.holdout")
    if d.source == "synthetic":
        pooled = synth_archive(d.synthetic.spec(), _rng.derive_seed(seed, "data.synthetic"))
        train, heldout = split_heldout(pooled, holdout_seed, d.holdout_fraction, d.holdout_labels)
        return partitioned(train, heldout, part)
    if d.source == "pooled_archive":
        train, heldout = split_heldout(read_archive(d.pooled_archive), holdout_seed, d.holdout_fraction,
                                       d.holdout_labels)
        return partitioned(train, heldout, part)
    if d.source == "archives":
        ds = from_shards([read_archive(p) for p in d.client_archives], read_archive(d.heldout_archive))
        return ds, None
    if d.source == "mode_benchmark":
        return mode_benchmark(_rng.derive_seed(seed, "data.benchmark"), **d.mode_benchmark.model_dump()), None
    return duplicate_benchmark(_rng.derive_seed(seed, "data.benchmark"), **d.duplicate_benchmark.model_dump()), None


def client_assignment(ds: FederatedDataset) -> np.ndarray:
    return ds.pooled()[2]
