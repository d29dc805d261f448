"""Batch jobs behind the service endpoints. Each writes into one output directory
and returns a JSON-ready result."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from fedcore.cluster import kmeans
from fedcore.config import RunConfig, load_dataset
from fedcore.errors import ConfigurationError
from fedcore.features import FeatureArchive, last_layer, write_archive
from fedcore.fedsim import Selector, run
from fedcore.metrics import calinski_harabasz, clustering_f1, silhouette
from fedcore.partition import write_assignment_csv
from fedcore.selection import fuse

log = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "round",
    "data_ratio",
    "cumulative_data_ratio",
    "heldout_accuracy",
    "macro_f1",
    "selected",
    "second_level_clusters",
    "inter_noise",
    "calinski_harabasz",
    "silhouette",
]


def _out_dir(config: RunConfig) -> Path:
    if not config.output_dir:
        raise ConfigurationError("no output directory: set output_dir or pass --out")
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_jsonl(path: Path, rows) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _cell(v):
    return "" if v is None else v


def cmd_synth(config: RunConfig) -> dict:
    """Materialize the configured dataset as per-client archives plus a held-out archive."""
    out = _out_dir(config)
    ds, _ = load_dataset(config)
    files = []
    for c in ds.clients:
        name = f"client_{c.client_id}.fca"
        write_archive(FeatureArchive(c.features.astype(np.float32), ds.layer_count, ds.layer_dim,
                                     c.labels.astype(np.uint32),
                                     None if c.perplexity is None else c.perplexity.astype(np.float32)),
                      out / name)
        files.append(name)
    write_archive(FeatureArchive(ds.heldout_features.astype(np.float32), ds.layer_count, ds.layer_dim,
                                 ds.heldout_labels.astype(np.uint32)), out / "heldout.fca")
    manifest = {"client_archives": files, "heldout_archive": "heldout.fca",
                "layer_count": ds.layer_count, "layer_dim": ds.layer_dim, "n_classes": ds.n_classes}
    _write_json(out / "manifest.json", manifest)
    return {"output_dir": str(out), "files": [*files, "heldout.fca", "manifest.json"], "summary": manifest}


def cmd_partition(config: RunConfig) -> dict:
    out = _out_dir(config)
    ds, assignment = load_dataset(config)
    if assignment is None:
        assignment = ds.pooled()[2]
    write_assignment_csv(assignment, out / "assignment.csv")
    sizes = np.bincount(assignment, minlength=ds.n_clients).tolist()
    return {"output_dir": str(out), "files": ["assignment.csv"],
            "summary": {"n_clients": ds.n_clients, "client_sizes": sizes}}


def cmd_select(config: RunConfig) -> dict:
    """One selection round over every client; writes coresets/client_{id}.csv and a trace."""
    out = _out_dir(config)
    ds, _ = load_dataset(config)
    chosen = Selector(config, ds).select(list(range(ds.n_clients)), 1)
    (out / "coresets").mkdir(exist_ok=True)
    files = []
    for cid in range(ds.n_clients):
        name = f"coresets/client_{cid}.csv"
        _write_csv(out / name, ["sample_index"], [[int(i)] for i in chosen.coresets[cid]])
        files.append(name)
    _write_jsonl(out / "selection_trace.jsonl", chosen.trace)
    used = sum(len(v) for v in chosen.coresets.values())
    total = sum(len(c) for c in ds.clients)
    summary = {"selector": config.selector.kind, "samples_used": used, "samples_available": total,
               "data_ratio": used / total, **{k: v for k, v in chosen.stats.items() if not isinstance(v, dict)}}
    _write_json(out / "selection_summary.json", summary)
    return {"output_dir": str(out), "files": [*files, "selection_trace.jsonl", "selection_summary.json"],
            "summary": summary}


def metric_rows(records) -> list:
    rows = []
    for r in records:
        sc, nc, cl = r["selection_counts"], r["noise_counts"], r["clustering"]
        rows.append([r["round"], r["data_ratio"], r["cumulative_data_ratio"], r["heldout_accuracy"],
                     r["macro_f1"], _cell(sc["selected"]), _cell(sc["second_level_clusters"]),
                     _cell(nc["inter"]), _cell(cl["calinski_harabasz"]), _cell(cl["silhouette"])])
    return rows


def cmd_run(config: RunConfig) -> dict:
    out = _out_dir(config)
    history = run(config)
    _write_jsonl(out / "run.jsonl", history.records)
    _write_json(out / "summary.json", history.summary)
    _write_csv(out / "metrics.csv", METRIC_COLUMNS, metric_rows(history.records))
    _write_jsonl(out / "selection.jsonl", history.trace)
    _write_json(out / "config.json", config.model_dump(mode="json"))
    files = ["run.jsonl", "summary.json", "metrics.csv", "selection.jsonl", "config.json"]
    return {"output_dir": str(out), "files": files, "summary": history.summary}


def _kmeans_scores(points, labels, seed: int):
    k = len(np.unique(labels))
    if k < 2 or points.shape[0] <= k:
        return k, None, None, None
    pred = kmeans(points, k, seed).labels
    if len(np.unique(pred)) < 2:
        return k, None, None, clustering_f1(pred, labels)
    return k, calinski_harabasz(points, pred), silhouette(points, pred), clustering_f1(pred, labels)


def cmd_report(config: RunConfig, history_dir: Optional[str] = None) -> dict:
    """Tables and scatter data from a finished run directory.

    Writes metrics.csv, embeddings_{client}.csv and embeddings_last_layer_{client}.csv
    (columns x, y, label, selected) for the clients trained in the last round, and
    layer_metrics.csv comparing k-means groupings of each layer, the concatenation
    and the fused coordinates against the true labels.
    """
    src = Path(history_dir or config.output_dir or "")
    run_file = src / "run.jsonl"
    if not run_file.is_file():
        raise ConfigurationError(f"no run history at {run_file}")
    records = [json.loads(line) for line in run_file.read_text(encoding="utf-8").splitlines() if line]
    out = _out_dir(config) if config.output_dir else src
    _write_csv(out / "metrics.csv", METRIC_COLUMNS, metric_rows(records))
    files = ["metrics.csv"]

    selected: dict = {}
    trace_file = src / "selection.jsonl"
    if trace_file.is_file():
        for line in trace_file.read_text(encoding="utf-8").splitlines():
            msg = json.loads(line)
            if msg.get("type") == "coreset":
                selected[msg["client_id"]] = set(msg["sample_indices"])
    last = records[-1]["active_clients"] if records else []
    clients = last[: config.report.max_clients]
    ds, _ = load_dataset(config)
    seed = config.master_seed
    layer_rows = []
    for cid in clients:
        shard = ds.clients[cid]
        picked = selected.get(cid, set())
        flags = [int(i in picked) for i in range(len(shard))]
        fused = fuse(shard.features, config.reducer)
        last_fused = fuse(last_layer(shard.features, ds.layer_count, ds.layer_dim), config.reducer)
        for name, emb in ((f"embeddings_{cid}.csv", fused), (f"embeddings_last_layer_{cid}.csv", last_fused)):
            _write_csv(out / name, ["x", "y", "label", "selected"],
                       [[float(e[0]), float(e[1]) if emb.shape[1] > 1 else 0.0, int(l), f]
                        for e, l, f in zip(emb, shard.labels, flags)])
            files.append(name)
        spaces = [(f"layer_{i}", shard.features[:, i * ds.layer_dim:(i + 1) * ds.layer_dim])
                  for i in range(ds.layer_count)]
        spaces += [("concatenated", shard.features), ("fused", fused), ("last_layer_fused", last_fused)]
        for space, pts in spaces:
            k, ch, sil, f1 = _kmeans_scores(pts, shard.labels, seed)
            layer_rows.append([cid, space, k, _cell(ch), _cell(sil), _cell(f1)])
    _write_csv(out / "layer_metrics.csv", ["client_id", "space", "k", "calinski_harabasz", "silhouette", "f1"],
               layer_rows)
    files.append("layer_metrics.csv")
    return {"output_dir": str(out), "files": files, "summary": {"rounds": len(records), "clients": clients}}
