"""Two-dimensional embeddings of attribution vectors.

``umap`` builds an exact k-nearest-neighbour graph, turns it into a
symmetric fuzzy graph and lays it out with negative-sampling SGD.
``pca`` projects onto the two leading principal axes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numba
import numpy as np
import scipy.sparse
from scipy.optimize import curve_fit
from scipy.spatial import cKDTree

UMAP = "umap"
PCA = "pca"

SMOOTH_K_TOLERANCE = 1e-5
MIN_K_DIST_SCALE = 1e-3


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingConfig:
    method: str = UMAP
    n_neighbors: int = 15
    min_dist: float = 0.1
    spread: float = 1.0
    n_epochs: int = 200
    negative_sample_rate: int = 5
    learning_rate: float = 1.0
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class Embedding2D:
    points: np.ndarray
    method: str
    config: dict
    seed: int

    def __len__(self):
        return len(self.points)


def knn(X, k):
    """Exact k nearest neighbours of every row, excluding the row itself."""
    n = len(X)
    dist, idx = cKDTree(X).query(X, k=k + 1)
    out_i = np.empty((n, k), dtype=np.int64)
    out_d = np.empty((n, k))
    for i in range(n):
        keep = idx[i] != i
        if keep.all():
            keep[-1] = False
        out_i[i] = idx[i][keep]
        out_d[i] = dist[i][keep]
    return out_i, out_d


@numba.njit(cache=True)
def smooth_knn_dist(distances, k, n_iter=64):
    """Per-point bandwidth so that sum_j exp(-(d_j - rho)/sigma) = log2(k).

    ``rho`` is the distance to the nearest neighbour at non-zero distance.
    """
    n = distances.shape[0]
    target = np.log2(k)
    rho = np.zeros(n)
    sigma = np.zeros(n)
    mean_all = np.mean(distances)
    for i in range(n):
        row = distances[i]
        for j in range(row.shape[0]):
            if row[j] > 0.0:
                rho[i] = row[j]
                break
        lo = 0.0
        hi = np.inf
        mid = 1.0
        for _ in range(n_iter):
            psum = 0.0
            for j in range(row.shape[0]):
                d = row[j] - rho[i]
                if d > 0:
                    psum += np.exp(-(d / mid))
                else:
                    psum += 1.0
            if np.fabs(psum - target) < SMOOTH_K_TOLERANCE:
                break
            if psum > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                if hi == np.inf:
                    mid *= 2.0
                else:
                    mid = (lo + hi) / 2.0
        sigma[i] = mid
        floor = MIN_K_DIST_SCALE * (np.mean(row) if rho[i] > 0.0 else mean_all)
        if sigma[i] < floor:
            sigma[i] = floor
    return sigma, rho


def fuzzy_graph(X, n_neighbors):
    """Symmetric membership graph: W + W^T - W * W^T."""
    n = len(X)
    idx, dist = knn(X, n_neighbors)
    sigma, rho = smooth_knn_dist(dist, float(n_neighbors))
    gap = dist - rho[:, None]
    vals = np.where(gap <= 0, 1.0, np.exp(-np.maximum(gap, 0) / sigma[:, None]))
    rows = np.repeat(np.arange(n), n_neighbors)
    W = scipy.sparse.csr_matrix((vals.ravel(), (rows, idx.ravel())), shape=(n, n))
    Wt = W.transpose().tocsr()
    G = (W + Wt - W.multiply(Wt)).tocoo()
    G.sum_duplicates()
    return G


def find_ab_params(spread, min_dist):
    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    params, _ = curve_fit(curve, xv, yv)
    return float(params[0]), float(params[1])


@numba.njit(cache=True)
def _next_rand(state):
    # xorshift64*
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return (x * np.uint64(2685821657736338717)) >> np.uint64(33)


@numba.njit(cache=True)
def _clip(v):
    if v > 4.0:
        return 4.0
    if v < -4.0:
        return -4.0
    return v


@numba.njit(cache=True)
def _optimize_layout(Y, head, tail, epochs_per_sample, n_epochs, a, b, lr0, neg_rate, seed):
    n = Y.shape[0]
    dim = Y.shape[1]
    n_edges = head.shape[0]
    state = np.zeros(1, dtype=np.uint64)
    state[0] = np.uint64(seed) * np.uint64(6364136223846793005) + np.uint64(1442695040888963407)
    if state[0] == 0:
        state[0] = np.uint64(88172645463325252)
    epoch_of_next = epochs_per_sample.copy()
    epochs_per_neg = epochs_per_sample / neg_rate
    epoch_of_next_neg = epochs_per_neg.copy()
    for epoch in range(n_epochs):
        alpha = lr0 * (1.0 - epoch / n_epochs)
        for e in range(n_edges):
            if epoch_of_next[e] > epoch:
                continue
            j = head[e]
            k = tail[e]
            d2 = 0.0
            for c in range(dim):
                diff = Y[j, c] - Y[k, c]
                d2 += diff * diff
            if d2 > 0.0:
                coeff = -2.0 * a * b * d2 ** (b - 1.0) / (a * d2 ** b + 1.0)
            else:
                coeff = 0.0
            for c in range(dim):
                g = _clip(coeff * (Y[j, c] - Y[k, c]))
                Y[j, c] += g * alpha
                Y[k, c] -= g * alpha
            epoch_of_next[e] += epochs_per_sample[e]
            n_neg = int((epoch - epoch_of_next_neg[e]) / epochs_per_neg[e])
            for _ in range(n_neg):
                m = int(_next_rand(state) % np.uint64(n))
                if m == j:
                    continue
                d2 = 0.0
                for c in range(dim):
                    diff = Y[j, c] - Y[m, c]
                    d2 += diff * diff
                if d2 > 0.0:
                    coeff = 2.0 * b / ((0.001 + d2) * (a * d2 ** b + 1.0))
                    for c in range(dim):
                        g = _clip(coeff * (Y[j, c] - Y[m, c]))
                        Y[j, c] += g * alpha
                else:
                    for c in range(dim):
                        Y[j, c] += 4.0 * alpha
            epoch_of_next_neg[e] += n_neg * epochs_per_neg[e]
    return Y


def pca_project(X):
    """Scores on the two leading principal axes of the centred rows."""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    if not np.any(Xc):
        raise EmbeddingError("zero-variance input, no principal axes")
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:2]
    # fix each axis sign so the largest-magnitude loading is positive
    for r in range(comps.shape[0]):
        if comps[r, np.argmax(np.abs(comps[r]))] < 0:
            comps[r] = -comps[r]
    out = Xc @ comps.T
    if out.shape[1] < 2:
        out = np.hstack([out, np.zeros((len(out), 2 - out.shape[1]))])
    return out


def _initial_layout(X, rng):
    try:
        init = pca_project(X)
    except EmbeddingError:
        init = np.zeros((len(X), 2))
    scale = np.abs(init).max()
    if scale > 0:
        init = init * (10.0 / scale)
    return init + rng.normal(scale=1e-4, size=init.shape)


def umap_layout(X, config: EmbeddingConfig):
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    G = fuzzy_graph(X, config.n_neighbors)
    w = G.data
    keep = w >= w.max() / config.n_epochs
    head = G.row[keep].astype(np.int64)
    tail = G.col[keep].astype(np.int64)
    w = w[keep]
    epochs_per_sample = config.n_epochs / (config.n_epochs * (w / w.max()))
    a, b = find_ab_params(config.spread, config.min_dist)
    rng = np.random.default_rng(config.seed)
    Y = np.ascontiguousarray(_initial_layout(X, rng))
    if n == 0:
        return Y
    return _optimize_layout(Y, head, tail, epochs_per_sample, int(config.n_epochs), a, b,
                            float(config.learning_rate), float(config.negative_sample_rate),
                            int(config.seed) & 0xFFFFFFFF)


def embed_2d(shap, config: EmbeddingConfig | None = None) -> Embedding2D:
    """Embed SHAP rows (a ShapMatrix or an ``n x d`` array) into the plane."""
    config = config or EmbeddingConfig()
    X = np.asarray(getattr(shap, "values", shap), dtype=np.float64)
    if X.ndim != 2:
        raise EmbeddingError("expected an n x d matrix")
    n = len(X)
    if config.method == PCA:
        if n < 1:
            raise EmbeddingError("no rows to embed")
        pts = pca_project(X)
    elif config.method == UMAP:
        need = max(config.n_neighbors + 1, 10)
        if n < need:
            raise EmbeddingError(f"umap embedding needs at least {need} rows, got {n}")
        pts = umap_layout(X, config)
    else:
        raise EmbeddingError(f"unknown embedding method {config.method!r}")
    if not np.all(np.isfinite(pts)):
        raise EmbeddingError("embedding produced non-finite coordinates")
    return Embedding2D(np.ascontiguousarray(pts), config.method, config.to_dict(), config.seed)
