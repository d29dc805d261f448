"""HDBSCAN* with excess-of-mass cluster extraction.

Pipeline: core distances -> mutual reachability -> Prim MST -> dendrogram of
MST edges grouped by weight level -> condensed tree -> excess of mass.

Edges of equal weight are merged as one level, so the hierarchy is the
component structure of the mutual-reachability graph at each distance and
does not depend on how ties are broken inside the MST.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist

from fedcore.cluster.core import ClusteringResult, groups_from_labels
from fedcore.errors import NonFiniteFeatureError, ValidationError


class HdbscanConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    min_cluster_size: int = Field(5, ge=2)
    min_samples: int | None = Field(None, ge=1)  # None -> min_cluster_size
    metric: str = "euclidean"

    @property
    def effective_min_samples(self) -> int:
        return self.min_samples if self.min_samples is not None else self.min_cluster_size


def core_distances(dist: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance to the ``min_samples``-th nearest point, the point itself counted first."""
    n = dist.shape[0]
    kth = min(min_samples, n) - 1
    return np.sort(dist, axis=1)[:, kth]


def mutual_reachability(points: np.ndarray, min_samples: int) -> np.ndarray:
    dist = cdist(points, points, "euclidean")
    core = core_distances(dist, min_samples)
    mr = np.maximum(dist, np.maximum.outer(core, core))
    np.fill_diagonal(mr, 0.0)
    return mr


def prim_mst(weights: np.ndarray) -> np.ndarray:
    """MST edges ``(u, v, w)`` of a dense graph, grown from vertex 0.

    The next vertex is the lowest-index one among the cheapest; a vertex's
    parent is only replaced by a strictly cheaper edge.
    """
    n = weights.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    edges = np.empty((max(n - 1, 0), 3))
    current = 0
    in_tree[0] = True
    for e in range(n - 1):
        row = weights[current]
        better = (~in_tree) & (row < best)
        best[better] = row[better]
        parent[better] = current
        masked = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(masked))
        u, v = sorted((int(parent[nxt]), nxt))
        edges[e] = (u, v, best[nxt])
        in_tree[nxt] = True
        current = nxt
    return edges


@dataclass
class _Node:
    weight: float
    children: list
    size: int


def _level_dendrogram(n: int, edges: np.ndarray):
    """Bottom-up merge tree; equal-weight MST edges merge in one step."""
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    comp_node = list(range(n))  # union-find root -> dendrogram node id
    nodes: dict[int, _Node] = {}
    sizes = [1] * n
    next_id = n
    order = np.lexsort((edges[:, 1], edges[:, 0], edges[:, 2])) if len(edges) else []
    i = 0
    while i < len(order):
        w = edges[order[i], 2]
        j = i
        while j < len(order) and edges[order[j], 2] == w:
            j += 1
        before = {}
        for e in order[i:j]:
            a, b = int(edges[e, 0]), int(edges[e, 1])
            for x in (a, b):
                r = find(x)
                before.setdefault(r, comp_node[r])
        for e in order[i:j]:
            ra, rb = find(int(edges[e, 0])), find(int(edges[e, 1]))
            if ra != rb:
                lo, hi = min(ra, rb), max(ra, rb)
                parent[hi] = lo
                sizes[lo] += sizes[hi]
        merged: dict[int, list] = {}
        for r_old, node in sorted(before.items()):
            merged.setdefault(find(r_old), []).append(node)
        for r_new, kids in sorted(merged.items()):
            kids = sorted(kids)
            nodes[next_id] = _Node(float(w), kids, sizes[r_new])
            comp_node[r_new] = next_id
            next_id += 1
        i = j
    root = comp_node[find(0)] if n else None
    return nodes, root


def _size(nodes, node_id):
    return nodes[node_id].size if node_id in nodes else 1


def _leaf_points(nodes, node_id):
    out, stack = [], [node_id]
    while stack:
        x = stack.pop()
        if x in nodes:
            stack.extend(nodes[x].children)
        else:
            out.append(x)
    return out


@dataclass
class CondensedTree:
    parent: list  # cluster -> parent cluster (-1 for root)
    birth: list  # lambda at which the cluster appears
    stability: list
    points: list  # cluster -> sorted array of all member points at birth
    point_cluster: np.ndarray  # innermost cluster each point belonged to
    point_lambda: np.ndarray  # lambda at which the point left that cluster


def condensed_tree(n: int, edges: np.ndarray, min_cluster_size: int) -> CondensedTree:
    nodes, root = _level_dendrogram(n, edges)
    parent, birth, stability, members = [-1], [0.0], [0.0], [np.arange(n)]
    point_cluster = np.zeros(n, dtype=np.int64)
    point_lambda = np.zeros(n)
    stack = [(0, root)]
    while stack:
        cid, node_id = stack.pop()
        while True:
            node = nodes[node_id]
            lam = 1.0 / node.weight if node.weight > 0 else np.inf
            gained = lam - birth[cid]
            big = [c for c in node.children if _size(nodes, c) >= min_cluster_size]
            for c in node.children:
                if _size(nodes, c) < min_cluster_size:
                    pts = _leaf_points(nodes, c)
                    point_cluster[pts] = cid
                    point_lambda[pts] = lam
                    stability[cid] += gained * len(pts)
            if len(big) >= 2:
                for c in big:
                    stability[cid] += gained * _size(nodes, c)
                    parent.append(cid)
                    birth.append(lam)
                    stability.append(0.0)
                    members.append(np.sort(np.asarray(_leaf_points(nodes, c), dtype=np.int64)))
                    stack.append((len(parent) - 1, c))
                break
            if len(big) == 1:
                node_id = big[0]
                continue
            break
    return CondensedTree(parent, birth, stability, members, point_cluster, point_lambda)


def excess_of_mass(tree: CondensedTree) -> list:
    """Selected clusters (root excluded); ties keep the parent."""
    k = len(tree.parent)
    children = [[] for _ in range(k)]
    for c in range(1, k):
        children[tree.parent[c]].append(c)
    subtree = [0.0] * k
    selected = [False] * k
    for c in range(k - 1, 0, -1):
        if not children[c]:
            subtree[c] = tree.stability[c]
            selected[c] = True
            continue
        child_sum = sum(subtree[ch] for ch in children[c])
        if child_sum > tree.stability[c]:
            subtree[c] = child_sum
        else:
            subtree[c] = tree.stability[c]
            selected[c] = True
            stack = list(children[c])
            while stack:
                d = stack.pop()
                selected[d] = False
                stack.extend(children[d])
    return [c for c in range(1, k) if selected[c]]


def hdbscan(points, config: HdbscanConfig = HdbscanConfig()) -> ClusteringResult:
    """Flat HDBSCAN clustering; label -1 marks noise.

    Groups are numbered by their lowest member index. When there are fewer
    points than ``min_cluster_size`` or no cluster survives extraction, every
    point goes into a single fallback group.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValidationError("points must be an n x k matrix")
    if not np.all(np.isfinite(pts)):
        raise NonFiniteFeatureError("points contain non-finite entries")
    n = pts.shape[0]
    if n == 0:
        return ClusteringResult(np.zeros(0, dtype=np.int64), [], fallback=True)
    mcs = config.min_cluster_size
    labels = np.full(n, -1, dtype=np.int64)
    chosen = []
    if n >= mcs:
        mr = mutual_reachability(pts, config.effective_min_samples)
        tree = condensed_tree(n, prim_mst(mr), mcs)
        chosen = excess_of_mass(tree)
    if not chosen:
        labels[:] = 0
        return ClusteringResult(labels, groups_from_labels(pts, labels), fallback=True)
    chosen.sort(key=lambda c: int(tree.points[c][0]))
    for label, c in enumerate(chosen):
        labels[tree.points[c]] = label
    return ClusteringResult(labels, groups_from_labels(pts, labels), fallback=False)
