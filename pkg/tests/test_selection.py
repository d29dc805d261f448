import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import blobs
from fedcore.cluster import ClusteringResult, ClusterGroup, HdbscanConfig, hdbscan
from fedcore.errors import ConfigurationError, DimensionMismatchError, ProtocolError, ValidationError
from fedcore.privacy import DPConfig
from fedcore.reduce import ReducerConfig
from fedcore.rng import stream
from fedcore.selection import (
    CentroidUpload,
    ClientData,
    SelectionNotice,
    build_coreset,
    coreset_cent,
    feddb_select,
    fuse,
    intra_select,
    inter_select,
    perplexity_select,
    quota,
    random_select,
    run_protocol,
    server_select,
)
from oracles import hdbscan_oracle

INTER = HdbscanConfig(min_cluster_size=2)
PCA = ReducerConfig(method="pca")


def grid_blobs(n_side=4, n_blobs=10, per_blob=100, spacing=10.0, stddev=0.5, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[spacing * (b % n_side), spacing * (b // n_side)] for b in range(n_blobs)])
    labels = np.repeat(np.arange(n_blobs), per_blob)
    return centers[labels] + rng.normal(scale=stddev, size=(labels.size, 2)), labels


def _uploads(points, clients=None):
    clients = clients or list(range(len(points)))
    return [CentroidUpload(client_id=c, group_id=0, values=list(p)) for c, p in zip(clients, points)]


def test_quota():
    assert quota(0.2, 10) == 2
    assert quota(1.0, 10) == 10
    assert quota(0.001, 10) == 1
    assert quota(0.5, 0) == 0
    with pytest.raises(ValidationError):
        quota(0.0, 10)


# ------------------------------------------------------------------ intra phase

def test_intra_recovers_ten_blobs():
    X, labels = grid_blobs()
    res = intra_select(X, HdbscanConfig(min_cluster_size=5))
    assert len(res.centroids) == 10
    assert res.clustering.partition() == {frozenset(np.flatnonzero(labels == b).tolist()) for b in range(10)}


def test_intra_single_point():
    res = intra_select(np.array([[1.5, -2.0]]), HdbscanConfig(min_cluster_size=5))
    assert len(res.centroids) == 1 and res.centroids[0].tolist() == [1.5, -2.0]


def test_intra_identical_points():
    res = intra_select(np.zeros((20, 2)), HdbscanConfig(min_cluster_size=5))
    assert len(res.centroids) == 1
    assert hdbscan_oracle(np.zeros((20, 2)).tolist(), 5) == ({frozenset(range(20))}, frozenset())


def test_fuse_single_sample_maps_to_origin():
    assert fuse(np.ones((1, 6)), PCA).tolist() == [[0.0, 0.0]]


# ------------------------------------------------------------------ inter phase

def test_trio_plus_outlier_follows_oracle():
    # with four uploads and min size 2 the only split sheds the outlier, so no
    # cluster below the root survives and the fallback keeps a single group
    pts = [[0, 0], [0.01, 0], [0, 0.01], [0.9, 0.9]]
    groups, noise = hdbscan_oracle(pts, 2)
    sel = server_select(_uploads(pts, [1, 2, 3, 4]), INTER)
    assert sel.clustering.partition() == groups and not noise
    assert len(sel.selected) == 1


def test_two_trios_plus_outlier():
    pts = [[0, 0], [0.01, 0], [0, 0.01], [5, 5], [5.01, 5], [5, 5.01], [2.5, 20]]
    groups, noise = hdbscan_oracle(pts, 2)
    assert noise == {6}
    sel = server_select(_uploads(pts), INTER)
    assert sel.clustering.partition() == groups
    assert sel.n_clusters == 2 and sel.n_noise == 1
    # nearest each trio mean: the corner point, plus the outlier itself
    assert sel.selected == [(0, 0), (3, 0), (6, 0)]
    notices = {n.client_id: n.selected_group_ids for n in sel.notices}
    assert notices == {0: [0], 1: [], 2: [], 3: [0], 4: [], 5: [], 6: [0]}


def test_single_upload_is_selected():
    notices = inter_select(_uploads([[0.3, 0.1]], [7]), INTER)
    assert [(n.client_id, n.selected_group_ids) for n in notices] == [(7, [0])]


def test_identical_uploads_pick_lowest_key():
    ups = [CentroidUpload(client_id=c, group_id=g, values=[0.2, 0.2]) for c in (3, 1, 2) for g in (1, 0)]
    sel = server_select(ups, INTER)
    assert sel.selected == [(1, 0)]


def test_inter_errors():
    with pytest.raises(ProtocolError):
        server_select([], INTER)
    with pytest.raises(ProtocolError):
        server_select(_uploads([[0, 0], [1, 1]], [1, 1]), INTER)
    with pytest.raises(ProtocolError):
        server_select([CentroidUpload(client_id=0, group_id=0, values=[0, 0]),
                       CentroidUpload(client_id=1, group_id=0, values=[0])], INTER)
    with pytest.raises(ProtocolError):
        server_select([CentroidUpload(round=1, client_id=0, group_id=0, values=[0]),
                       CentroidUpload(round=2, client_id=1, group_id=0, values=[0])], INTER)


# ------------------------------------------------------------------ coreset construction

def _one_group(points):
    pts = np.asarray(points, dtype=float)
    idx = np.arange(len(pts))
    return pts, ClusteringResult(np.zeros(len(pts), dtype=np.int64), [ClusterGroup(idx, pts.mean(0))])


def test_build_coreset_nearest_raw_centroid():
    pts, clustering = _one_group([[0, 0], [1, 0], [0.4, 0]])
    cs = build_coreset(pts, clustering, [np.array([1.4 / 3, 0])], SelectionNotice(client_id=0, selected_group_ids=[0]))
    assert cs.sample_indices.tolist() == [2]


def test_build_coreset_empty_notice_and_bad_group():
    pts, clustering = _one_group([[0, 0], [1, 0]])
    assert len(build_coreset(pts, clustering, [pts.mean(0)], SelectionNotice(client_id=0))) == 0
    with pytest.raises(ProtocolError):
        build_coreset(pts, clustering, [pts.mean(0)], SelectionNotice(client_id=0, selected_group_ids=[1]))


def test_build_coreset_one_per_blob():
    X, labels = grid_blobs()
    res = intra_select(X, HdbscanConfig(min_cluster_size=5))
    cs = build_coreset(X, res.clustering, res.centroids,
                       SelectionNotice(client_id=0, selected_group_ids=list(range(10))))
    assert len(cs) == 10 and sorted(labels[cs.sample_indices].tolist()) == list(range(10))


# ------------------------------------------------------------------ baselines

def test_random_select_examples():
    assert random_select(10, 1.0, 3).tolist() == list(range(10))
    a, b = random_select(10, 0.2, 5), random_select(10, 0.2, 5)
    assert a.tolist() == b.tolist() and len(set(a.tolist())) == 2


def test_random_select_is_uniform():
    n, seeds = 10_000, 200
    counts = np.zeros(n)
    for s in range(seeds):
        counts[random_select(n, 0.5, s)] += 1
    freq = counts / seeds
    assert abs(freq.mean() - 0.5) < 1e-12
    # blocks of 100 indices pool 20000 draws each
    assert np.all(np.abs(freq.reshape(100, 100).mean(1) - 0.5) <= 0.05)
    # per-index counts follow Binomial(200, 0.5)
    hist = np.bincount(counts.astype(int), minlength=seeds + 1)
    lo, hi = 80, 120
    observed = np.concatenate([[hist[:lo].sum()], hist[lo:hi + 1], [hist[hi + 1:].sum()]])
    p = stats.binom(seeds, 0.5)
    expected = n * np.concatenate([[p.cdf(lo - 1)], p.pmf(np.arange(lo, hi + 1)), [p.sf(hi)]])
    assert stats.chisquare(observed, expected).pvalue > 1e-3


def test_perplexity_select_examples():
    assert perplexity_select([0.5, 2.0, 1.0], 1 / 3).tolist() == [0]
    assert perplexity_select([1.0] * 4, 0.5).tolist() == [0, 1]
    assert perplexity_select([3.0, 1.0, 2.0], 1.0).tolist() == [0, 1, 2]
    with pytest.raises(ConfigurationError):
        perplexity_select(None, 0.5)
    with pytest.raises(ConfigurationError):
        perplexity_select([1.0, 0.0], 0.5)


def test_coreset_cent_examples():
    X, _ = blobs(2, 20, dim=2, separation=30, seed=1)
    assert coreset_cent(X, 1.0, 0).tolist() == list(range(40))
    assert np.array_equal(coreset_cent(X, 0.3, 4), coreset_cent(X, 0.3, 4))
    assert len(coreset_cent(X, 0.3, 4)) == 12


def test_coreset_cent_one_per_blob():
    # n = 6 gives k = round(sqrt(6)) = 2 clusters
    X = np.array([[0, 0], [1, 0], [0.3, 0.9], [50, 50], [51, 50], [50, 52]], dtype=float)
    picked = coreset_cent(X, 1 / 3, 0)
    expected = []
    for members in ([0, 1, 2], [3, 4, 5]):
        d = np.linalg.norm(X[members] - X[members].mean(0), axis=1)
        expected.append(members[int(np.argmin(d))])
    assert picked.tolist() == expected


# ------------------------------------------------------------------ ablations

def test_feddb_single_group_and_blobs():
    rng = np.random.default_rng(0)
    tight = {0: rng.normal(scale=0.01, size=(3, 4))}
    assert len(feddb_select(tight, 2, 2, PCA, HdbscanConfig(min_cluster_size=5))[0]) == 1
    X, labels = grid_blobs(per_blob=30)
    raw = np.hstack([rng.normal(size=(len(X), 2)), X])  # last layer carries the blobs
    cs = feddb_select({0: raw}, 2, 2, ReducerConfig(method="pca"), HdbscanConfig(min_cluster_size=5))[0]
    assert sorted(labels[cs.sample_indices].tolist()) == list(range(10))
    with pytest.raises(DimensionMismatchError):
        feddb_select({0: raw[:, 1:]}, 2, 2, PCA, HdbscanConfig(min_cluster_size=5))


def test_feddb_equals_intra_for_one_layer():
    X, _ = blobs(4, 25, dim=3, separation=15, seed=2)
    intra_cfg = HdbscanConfig(min_cluster_size=5)
    feddb = feddb_select({0: X}, 1, 3, PCA, intra_cfg)[0]
    intra_only = run_protocol([ClientData(0, fuse(X, PCA))], intra_cfg, None)
    assert feddb.sample_indices.tolist() == intra_only.coresets[0].sample_indices.tolist()


# ------------------------------------------------------------------ protocol properties

def random_clients(seed, n_clients):
    rng = np.random.default_rng(seed)
    shared = rng.uniform(-15, 15, size=(6, 2))
    out = []
    for cid in range(n_clients):
        n = int(rng.integers(1, 40))
        centers = shared[rng.choice(6, size=int(rng.integers(1, 4)))]
        pts = centers[rng.integers(0, len(centers), size=n)] + rng.normal(scale=rng.uniform(0.1, 2), size=(n, 2))
        out.append(ClientData(cid, pts))
    return out


def check_invariants(clients, intra_cfg, dp, seed):
    full = run_protocol(clients, intra_cfg, INTER, dp, 3, lambda c: stream(seed, "privacy", 3, c))
    intra_only = run_protocol(clients, intra_cfg, None)
    uploaded = {(u.client_id, u.group_id) for u in full.uploads}
    n = {c.client_id: len(c.fused) for c in clients}
    seen = []
    for notice in full.notices:
        for gid in notice.selected_group_ids:
            assert (notice.client_id, gid) in uploaded
            seen.append((notice.client_id, gid))
    assert sorted(seen) == full.inter.selected
    assert len(full.inter.selected) == full.inter.n_clusters + full.inter.n_noise
    for c in clients:
        cs = full.coresets[c.client_id].sample_indices
        assert np.all((cs >= 0) & (cs < n[c.client_id])) and len(set(cs.tolist())) == cs.size
        assert cs.size <= len(intra_only.coresets[c.client_id])
        assert set(cs.tolist()) <= set(intra_only.coresets[c.client_id].sample_indices.tolist())


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), n_clients=st.integers(1, 8), mcs=st.sampled_from([2, 3, 5]),
       noisy=st.booleans())
def test_protocol_invariants(seed, n_clients, mcs, noisy):
    dp = DPConfig(enabled=True, sigma=0.3) if noisy else DPConfig()
    check_invariants(random_clients(seed, n_clients), HdbscanConfig(min_cluster_size=mcs), dp, seed)


def test_every_client_gets_a_notice():
    clients = [ClientData(c, np.zeros((5, 2))) for c in range(4)]
    out = run_protocol(clients, HdbscanConfig(min_cluster_size=2), INTER)
    assert [n.client_id for n in out.notices] == [0, 1, 2, 3]
    assert sum(len(n.selected_group_ids) for n in out.notices) == 1


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), exponent=st.integers(-2, 2))
def test_intra_selection_invariant_under_scaling(seed, exponent):
    X = random_clients(seed, 1)[0].fused
    cfg = HdbscanConfig(min_cluster_size=3)
    a = run_protocol([ClientData(0, X)], cfg, None).coresets[0].sample_indices
    b = run_protocol([ClientData(0, X * 2.0**exponent)], cfg, None).coresets[0].sample_indices
    assert a.tolist() == b.tolist()
