"""Federated round loop around a multinomial logistic-regression toy model.

Parameters are one flat vector: the ``n_classes x n_features`` weight matrix
in row-major order followed by the ``n_classes`` biases. Local training is
batch-size-1 SGD or Adam over a client's coreset in index order; the server
averages client parameters weighted by coreset size.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from fedcore import rng as _rng
from fedcore import selection as sel
from fedcore.errors import ConfigurationError, ValidationError
from fedcore.features import last_layer
from fedcore.metrics import calinski_harabasz, silhouette

if TYPE_CHECKING:
    from fedcore.config import RunConfig
    from fedcore.datasets import FederatedDataset

log = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(0.05, ge=0.0)
    optimizer: Literal["sgd", "adam"] = "sgd"
    epochs_per_round: int = Field(1, ge=1)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ModelParams:
    values: np.ndarray
    n_features: int
    n_classes: int

    def __post_init__(self):
        expected = self.n_classes * self.n_features + self.n_classes
        if np.shape(self.values) != (expected,):
            raise ValidationError(f"expected {expected} parameters, got shape {np.shape(self.values)}")

    @classmethod
    def zeros(cls, n_features: int, n_classes: int) -> "ModelParams":
        return cls(np.zeros(n_classes * n_features + n_classes), n_features, n_classes)

    def weights(self) -> np.ndarray:
        return self.values[: self.n_classes * self.n_features].reshape(self.n_classes, self.n_features)

    def bias(self) -> np.ndarray:
        return self.values[self.n_classes * self.n_features:]

    def with_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(values, self.n_features, self.n_classes)


def logits(params: ModelParams, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return X @ params.weights().T + params.bias()


def sample_loss(params: ModelParams, x, y: int) -> float:
    z = logits(params, x)[0]
    zmax = z.max()
    return float(zmax + math.log(np.exp(z - zmax).sum()) - z[y])


def sample_gradient(params: ModelParams, x, y: int) -> np.ndarray:
    """Gradient of the cross-entropy of one sample w.r.t. the flat parameters."""
    x = np.asarray(x, dtype=np.float64)
    z = logits(params, x)[0]
    p = np.exp(z - z.max())
    p /= p.sum()
    p[y] -= 1.0
    return np.concatenate([np.outer(p, x).ravel(), p])


def local_train(params: ModelParams, features, labels, config: TrainConfig) -> Optional[ModelParams]:
    """Per-sample steps over the given rows in order; ``None`` when there are no rows."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.shape[0] == 0:
        return None
    if X.shape[0] != y.shape[0]:
        raise ValidationError("features and labels differ in length")
    w = params.values.copy()
    cur = params.with_values(w)
    lr = config.learning_rate
    if config.optimizer == "adam":
        m = np.zeros_like(w)
        v = np.zeros_like(w)
        t = 0
    for _ in range(config.epochs_per_round):
        for i in range(X.shape[0]):
            g = sample_gradient(cur, X[i], int(y[i]))
            if config.optimizer == "sgd":
                w -= lr * g
            else:
                t += 1
                m = config.beta1 * m + (1.0 - config.beta1) * g
                v = config.beta2 * v + (1.0 - config.beta2) * g * g
                mhat = m / (1.0 - config.beta1**t)
                vhat = v / (1.0 - config.beta2**t)
                w -= lr * mhat / (np.sqrt(vhat) + config.eps)
    return cur


def aggregate(updates: Sequence) -> Optional[np.ndarray]:
    """Size-weighted mean of ``(params, coreset_size)`` pairs, in the given order.

    Returns ``None`` when every size is zero (the round is skipped).
    """
    total = sum(int(s) for _, s in updates)
    if total == 0:
        return None
    out = None
    for p, s in updates:
        if s == 0:
            continue
        v = p.values if isinstance(p, ModelParams) else np.asarray(p, dtype=np.float64)
        term = (int(s) / total) * v
        out = term if out is None else out + term
    return out


@dataclass
class Evaluation:
    accuracy: float
    macro_f1: float


def evaluate(params: ModelParams, features, labels) -> Evaluation:
    y = np.asarray(labels, dtype=np.int64)
    if y.size == 0:
        raise ValidationError("held-out set is empty")
    pred = np.argmax(logits(params, features), axis=1)
    acc = float(np.mean(pred == y))
    f1s = []
    for c in np.union1d(y, pred):
        tp = np.sum((pred == c) & (y == c))
        fp = np.sum((pred == c) & (y != c))
        fn = np.sum((pred != c) & (y == c))
        f1s.append(0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn))
    return Evaluation(acc, float(np.mean(f1s)))


def sample_clients(n_clients: int, active_ratio: float, round_index: int, seed: int) -> list:
    if not 0.0 < active_ratio <= 1.0:
        raise ValidationError(f"active_ratio must lie in (0, 1], got {active_ratio}")
    m = max(1, int(math.floor(round(active_ratio * n_clients, 9) + 0.5)))
    m = min(m, n_clients)
    gen = _rng.stream(seed, "fedsim.clients", round_index)
    return sorted(int(c) for c in gen.choice(n_clients, size=m, replace=False))


@dataclass
class RoundSelection:
    coresets: dict  # client_id -> sorted index array
    stats: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)


@dataclass
class RunHistory:
    records: list
    summary: dict
    trace: list  # selection messages, one dict per line


def _mean(values):
    return None if not values else float(np.mean(values))


class Selector:
    """Per-run selection state; fused coordinates are cached per client since
    the reducers are deterministic given the features."""

    def __init__(self, config: "RunConfig", ds: "FederatedDataset"):
        self.config = config
        self.ds = ds
        self.kind = config.selector.kind
        self._fused: dict = {}
        self._global = None

    def fused(self, cid: int) -> np.ndarray:
        if cid not in self._fused:
            raw = self.ds.clients[cid].features
            if self.kind == "feddb":
                raw = last_layer(raw, self.ds.layer_count, self.ds.layer_dim)
            self._fused[cid] = sel.fuse(raw, self.config.reducer)
        return self._fused[cid]

    def select(self, clients: Sequence[int], round_index: int) -> RoundSelection:
        cfg = self.config
        seed = cfg.master_seed
        ratio = cfg.selector.ratio
        if self.kind == "random":
            return RoundSelection({
                cid: sel.random_select(len(self.ds.clients[cid]), ratio,
                                       _rng.derive_seed(seed, "select.random", round_index, cid))
                for cid in clients
            })
        if self.kind == "perplexity":
            out = {}
            for cid in clients:
                scores = self.ds.clients[cid].perplexity
                if scores is None:
                    raise ConfigurationError(f"client {cid} has no perplexity scores")
                out[cid] = sel.perplexity_select(scores, ratio)
            return RoundSelection(out)
        if self.kind == "coreset_cent":
            if self._global is None:
                feats, _, owner = self.ds.pooled()
                picked = sel.coreset_cent(last_layer(feats, self.ds.layer_count, self.ds.layer_dim), ratio,
                                          _rng.derive_seed(seed, "select.coreset_cent"))
                starts = np.cumsum([0] + [len(c) for c in self.ds.clients])
                self._global = {
                    c.client_id: picked[owner[picked] == c.client_id] - starts[c.client_id] for c in self.ds.clients
                }
            return RoundSelection({cid: self._global[cid] for cid in clients})

        inter = cfg.clustering.inter if self.kind == "fedhds" else None
        data = [sel.ClientData(cid, self.fused(cid)) for cid in clients]
        outcome = sel.run_protocol(
            data, cfg.clustering.intra, inter, cfg.dp, round_index,
            noise_stream=lambda cid: _rng.stream(seed, "privacy", round_index, cid),
        )
        stats = {
            "groups": {str(c): len(outcome.intra[c].clustering.groups) for c in clients},
            "intra_noise": {str(c): outcome.intra[c].clustering.n_noise for c in clients},
            "uploads": len(outcome.uploads),
            "second_level_clusters": None if outcome.inter is None else outcome.inter.n_clusters,
            "second_level_noise": None if outcome.inter is None else outcome.inter.n_noise,
            "selected": sum(len(n.selected_group_ids) for n in outcome.notices),
        }
        ch, sil = [], []
        for c in clients:
            labels = outcome.intra[c].clustering.labels
            keep = labels >= 0
            if len(np.unique(labels[keep])) >= 2:
                ch.append(calinski_harabasz(self.fused(c)[keep], labels[keep]))
                sil.append(silhouette(self.fused(c)[keep], labels[keep]))
        stats["calinski_harabasz"] = _mean(ch)
        stats["silhouette"] = _mean(sil)
        trace = [{"type": "upload", **u.model_dump()} for u in outcome.uploads]
        trace += [{"type": "notice", **n.model_dump()} for n in outcome.notices]
        return RoundSelection({c: outcome.coresets[c].sample_indices for c in clients}, stats, trace)


def _model_inputs(config: "RunConfig", ds: "FederatedDataset"):
    if config.model_features == "raw":
        return [c.features for c in ds.clients], ds.heldout_features
    feats = [sel.fuse(c.features, config.reducer) for c in ds.clients]
    return feats, sel.fuse(ds.heldout_features, config.reducer)


def run(config: "RunConfig", dataset: Optional["FederatedDataset"] = None) -> RunHistory:
    """Simulate ``config.rounds`` federated rounds; see ``RunHistory``."""
    from fedcore.config import load_dataset

    ds = dataset if dataset is not None else load_dataset(config)[0]
    ds.validate()
    seed = config.master_seed
    X, heldout = _model_inputs(config, ds)
    labels = [c.labels for c in ds.clients]
    params = ModelParams.zeros(X[0].shape[1], ds.n_classes)
    initial = evaluate(params, heldout, ds.heldout_labels)
    selector = Selector(config, ds)

    fixed: Optional[RoundSelection] = None
    if config.selection_schedule == "once" and config.rounds > 0:
        fixed = selector.select(list(range(ds.n_clients)), 1)

    records, trace = [], []
    used_total = avail_total = 0
    skipped = 0
    for r in range(1, config.rounds + 1):
        active = sample_clients(ds.n_clients, config.active_ratio, r, seed)
        if fixed is not None:
            chosen = RoundSelection({c: fixed.coresets[c] for c in active}, fixed.stats if r == 1 else {},
                                    fixed.trace if r == 1 else [])
        else:
            chosen = selector.select(active, r)
        trace.extend(chosen.trace)
        updates = []
        for cid in active:
            idx = np.asarray(chosen.coresets[cid], dtype=np.int64)
            trace.append({"type": "coreset", "round": r, "client_id": cid, "sample_indices": idx.tolist()})
            new = local_train(params, X[cid][idx], labels[cid][idx], config.training)
            if new is not None:
                updates.append((new, idx.size))
        merged = aggregate(updates)
        if merged is None:
            skipped += 1
            log.info("round %d: no client selected any sample; parameters carried over", r)
        else:
            params = params.with_values(merged)
        ev = evaluate(params, heldout, ds.heldout_labels)

        sizes = {str(c): int(len(chosen.coresets[c])) for c in active}
        avail = {str(c): len(ds.clients[c]) for c in active}
        used_total += sum(sizes.values())
        avail_total += sum(avail.values())
        stats = chosen.stats
        records.append({
            "round": r,
            "active_clients": active,
            "coreset_sizes": sizes,
            "dataset_sizes": avail,
            "data_ratio": sum(sizes.values()) / sum(avail.values()),
            "cumulative_data_ratio": used_total / avail_total,
            "heldout_accuracy": ev.accuracy,
            "macro_f1": ev.macro_f1,
            "noise_counts": {
                "intra": stats.get("intra_noise"),
                "inter": stats.get("second_level_noise"),
            },
            "selection_counts": {
                "groups": stats.get("groups"),
                "uploads": stats.get("uploads"),
                "second_level_clusters": stats.get("second_level_clusters"),
                "selected": stats.get("selected"),
            },
            "clustering": {
                "calinski_harabasz": stats.get("calinski_harabasz"),
                "silhouette": stats.get("silhouette"),
            },
            "skipped": merged is None,
        })
        log.debug("round %d: accuracy %.4f, ratio %.4f", r, ev.accuracy, records[-1]["data_ratio"])

    final = records[-1] if records else None
    summary = {
        "schema_version": 1,
        "selector": config.selector.kind,
        "master_seed": seed,
        "rounds": config.rounds,
        "n_clients": ds.n_clients,
        "initial_accuracy": initial.accuracy,
        "initial_macro_f1": initial.macro_f1,
        "final_accuracy": final["heldout_accuracy"] if final else initial.accuracy,
        "final_macro_f1": final["macro_f1"] if final else initial.macro_f1,
        "cumulative_data_ratio": used_total / avail_total if avail_total else None,
        "samples_used": used_total,
        "samples_available": avail_total,
        "skipped_rounds": skipped,
    }
    return RunHistory(records, summary, trace)
