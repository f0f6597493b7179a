import numpy as np
import pytest
from scipy.spatial.distance import pdist

from scal.embedding import (EmbeddingConfig, EmbeddingError, embed_2d, find_ab_params, fuzzy_graph,
                            knn, smooth_knn_dist)
from scal.treeshap import ShapMatrix


def test_pca_exact_on_rank_two(rng):
    basis = np.linalg.qr(rng.normal(size=(10, 2)))[0].T
    X = rng.normal(size=(50, 2)) @ basis + 3.0
    emb = embed_2d(X, EmbeddingConfig(method="pca"))
    np.testing.assert_allclose(pdist(emb.points), pdist(X), atol=1e-6)


def test_umap_separates_blobs(rng):
    # unit spread per axis gives intra-blob scale ~sqrt(10); offset by ten times that
    a = rng.normal(0, 1, size=(60, 10))
    offset = np.zeros(10)
    offset[0] = 10 * np.sqrt(10)
    b = rng.normal(0, 1, size=(60, 10)) + offset
    emb = embed_2d(np.vstack([a, b]), EmbeddingConfig(seed=4)).points
    ca, cb = emb[:60].mean(0), emb[60:].mean(0)
    intra = max(pdist(emb[:60]).max(), pdist(emb[60:]).max())
    assert np.linalg.norm(ca - cb) > intra


@pytest.mark.parametrize("method", ["umap", "pca"])
def test_shape_finite_and_deterministic(rng, method):
    X = rng.normal(size=(40, 5))
    shap = ShapMatrix(X, 0.0, [f"f{i}" for i in range(5)])
    cfg = EmbeddingConfig(method=method, seed=2, n_epochs=50)
    e1, e2 = embed_2d(shap, cfg), embed_2d(shap, cfg)
    assert e1.points.shape == (40, 2) and np.all(np.isfinite(e1.points))
    np.testing.assert_array_equal(e1.points, e2.points)


def test_duplicates_are_finite(rng):
    X = np.repeat(rng.normal(size=(5, 3)), 8, axis=0)
    assert np.all(np.isfinite(embed_2d(X, EmbeddingConfig(n_epochs=30)).points))


def test_errors(rng):
    with pytest.raises(EmbeddingError):
        embed_2d(rng.normal(size=(5, 3)))
    with pytest.raises(EmbeddingError):
        embed_2d(np.ones((20, 3)), EmbeddingConfig(method="pca"))
    with pytest.raises(EmbeddingError):
        embed_2d(rng.normal(size=(20, 3)), EmbeddingConfig(method="tsne"))


def test_knn_excludes_self(rng):
    X = rng.normal(size=(30, 2))
    idx, dist = knn(X, 4)
    assert not np.any(idx == np.arange(30)[:, None])
    brute = np.sort(np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1)), axis=1)[:, 1:5]
    np.testing.assert_allclose(dist, brute)


def test_smooth_knn_dist_hits_target(rng):
    _, dist = knn(rng.normal(size=(50, 3)), 10)
    sigma, rho = smooth_knn_dist(dist, 10.0)
    psum = np.where(dist - rho[:, None] > 0, np.exp(-(dist - rho[:, None]) / sigma[:, None]), 1.0)
    np.testing.assert_allclose(psum.sum(1), np.log2(10), atol=1e-4)


def test_fuzzy_graph_symmetric(rng):
    G = fuzzy_graph(rng.normal(size=(40, 3)), 5).toarray()
    np.testing.assert_allclose(G, G.T)
    assert G.max() <= 1.0 + 1e-12 and G.min() >= 0


def test_ab_params_reference_values():
    a, b = find_ab_params(1.0, 0.1)
    assert a == pytest.approx(1.577, abs=0.01)
    assert b == pytest.approx(0.895, abs=0.01)
