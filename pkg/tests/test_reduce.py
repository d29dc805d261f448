import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import blobs
from fedcore.errors import DegenerateAffinityError, NonFiniteFeatureError, TooFewSamplesError, ValidationError
from fedcore.metrics import trustworthiness
from fedcore.reduce import KpcaParams, ReducerConfig, TsneParams, reduce
from fedcore.reduce.linear import kernel_pca, pca
from fedcore.reduce.tsne import (
    bh_gradient,
    conditional_affinities,
    effective_perplexity,
    exact_gradient,
    repulsion,
    tsne_affinities,
    tsne_embed,
)
from oracles import exact_tsne_gradient, row_perplexity


@pytest.mark.parametrize("method", ["tsne", "pca", "kpca"])
def test_reduce_shape_and_finite(method):
    X, _ = blobs(per_blob=10, dim=5)
    Y = reduce(X, ReducerConfig(method=method, output_dim=2, tsne=TsneParams(iterations=300)))
    assert Y.shape == (30, 2) and np.all(np.isfinite(Y))


def test_reduce_preconditions():
    with pytest.raises(TooFewSamplesError):
        reduce(np.zeros((1, 3)))
    with pytest.raises(NonFiniteFeatureError):
        reduce(np.array([[0.0, 1.0], [np.nan, 2.0]]))


def test_reduce_is_deterministic():
    X, _ = blobs(per_blob=30, dim=4, seed=5)
    cfg = ReducerConfig(seed=3)
    assert np.array_equal(reduce(X, cfg), reduce(X, cfg))


def test_identical_rows_map_to_origin():
    assert np.array_equal(reduce(np.ones((5, 3))), np.zeros((5, 2)))


def test_pca_rank_one_line():
    t = np.linspace(-2, 3, 20)
    X = np.outer(t, [1.0, 2.0, -0.5]) + [4.0, 1.0, 0.0]
    proj = pca(X, 1)
    assert proj.explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-9)
    recon = proj.embedding @ proj.components + X.mean(0)
    assert np.allclose(recon, X, atol=1e-9)


def test_pca_components_orthonormal_and_variance_not_increased():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 6)) @ rng.normal(size=(6, 6))
    proj = pca(X, 3)
    assert np.allclose(proj.components @ proj.components.T, np.eye(3), atol=1e-10)
    recon = proj.embedding @ proj.components
    Xc = X - X.mean(0)
    assert np.sum(recon**2) <= np.sum(Xc**2) + 1e-9


def test_kpca_default_gamma_and_centering():
    X, _ = blobs(per_blob=8, dim=4)
    a = kernel_pca(X, 2)
    b = kernel_pca(X, 2, gamma=1.0 / 4)
    assert np.array_equal(a.embedding, b.embedding)
    assert np.allclose(a.embedding.mean(0), 0.0, atol=1e-10)
    assert reduce(X, ReducerConfig(method="kpca", kpca=KpcaParams(gamma=0.25))).shape == (24, 2)


def test_effective_perplexity_small_n():
    assert effective_perplexity(10, 30) == 3
    assert effective_perplexity(3, 30) == 1
    assert effective_perplexity(1000, 30) == 30


def test_affinities_sum_to_one_and_symmetric():
    X = np.random.default_rng(0).normal(size=(40, 3))
    P = tsne_affinities(X, 10).toarray()
    assert np.all(P >= 0)
    assert P.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(P, P.T)


def test_equidistant_points_have_equal_conditionals():
    X = np.eye(3)  # every squared distance is exactly 2
    cond = conditional_affinities(X, 1.0)
    assert np.allclose(cond.probs, 0.5, atol=1e-12)


def test_row_perplexity_hits_target():
    X = np.random.default_rng(2).normal(size=(50, 5))
    cond = conditional_affinities(X, 10.0)
    for row in cond.probs:
        assert row_perplexity(row) == pytest.approx(10.0, abs=1e-3)


def test_duplicate_input_is_degenerate():
    with pytest.raises(DegenerateAffinityError):
        tsne_affinities(np.zeros((6, 2)), 2)


def test_theta_zero_matches_exact_gradient():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 4))
    P = tsne_affinities(X, 10)
    Y = rng.normal(size=(50, 2))
    assert np.max(np.abs(bh_gradient(Y, P, 0.0) - exact_gradient(Y, P))) <= 1e-10


def test_exact_gradient_matches_dense_formula():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(20, 3))
    P = tsne_affinities(X, 5)
    Y = rng.normal(size=(20, 2))
    assert np.allclose(exact_gradient(Y, P), exact_tsne_gradient(Y, P.toarray()), atol=1e-12)


def test_two_point_gradients_equal_and_opposite():
    P = np.array([[0.0, 0.5], [0.5, 0.0]])
    Y = np.array([[-1.0, 0.5], [1.0, -0.5]])
    g = bh_gradient(Y, P, 0.5)
    assert np.allclose(g[0], -g[1], atol=1e-15)


def test_bh_repulsion_error_within_five_percent():
    X, _ = blobs(per_blob=100, dim=2, separation=15)
    rep_bh, z_bh = repulsion(X, 0.5)
    rep_ex, z_ex = repulsion(X, 0.0)
    approx = rep_bh / z_bh
    exact = rep_ex / z_ex
    assert np.linalg.norm(approx - exact) / np.linalg.norm(exact) <= 0.05


def test_theta_out_of_range():
    with pytest.raises(ValidationError):
        bh_gradient(np.zeros((3, 2)), np.eye(3), 1.5)


def test_three_blob_trustworthiness(three_blobs):
    X, _ = three_blobs
    res = tsne_embed(X)
    assert trustworthiness(X, res.embedding, 5) >= 0.95
    assert res.kl_final <= res.kl_after_exaggeration


def test_barnes_hut_path_runs_for_larger_n():
    X, _ = blobs(per_blob=40, dim=3)
    res = tsne_embed(X, iterations=300)
    assert res.used_barnes_hut
    assert res.kl_final <= res.kl_after_exaggeration


@settings(max_examples=5, deadline=None)
@given(shift=st.integers(-8, 8))
def test_translation_invariance(shift):
    # dyadic grid values and an integer shift keep every pairwise difference exact
    rng = np.random.default_rng(7)
    X = rng.integers(-64, 64, size=(64, 3)) / 8.0
    a = reduce(X, ReducerConfig(tsne=TsneParams(iterations=300)))
    b = reduce(X + shift, ReducerConfig(tsne=TsneParams(iterations=300)))
    assert np.array_equal(a, b)
