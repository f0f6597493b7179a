"""Clustering of the 2D explanation space and its quality metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.spatial import cKDTree

NOISE = -1

DBSCAN = "dbscan"
KMEANS = "kmeans"
AGGLOMERATIVE = "agglomerative"


class ClusteringError(ValueError):
    pass


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    algorithm: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def n_clusters(self):
        return int(len(np.unique(self.labels[self.labels != NOISE])))


@dataclass(frozen=True)
class ClusterQuality:
    num_clusters: int
    silhouette: float | None
    noise_present: bool

    def to_dict(self):
        return {"M": self.num_clusters, "silhouette": self.silhouette,
                "noise_present": self.noise_present}


def _points(points):
    pts = getattr(points, "points", points)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    return pts


def _canonical(labels):
    """Renumber non-noise labels 0..K-1 in order of first appearance."""
    out = np.full(len(labels), NOISE, dtype=np.int64)
    mapping = {}
    for i, lab in enumerate(labels):
        if lab == NOISE:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def region_query(pts, eps):
    """Indices of all points within ``eps`` (inclusive, self included), per point."""
    tree = cKDTree(pts)
    # widen the tree query slightly, then filter with the exact metric
    cand = tree.query_ball_point(pts, r=eps * (1 + 1e-9) + 1e-300)
    out = []
    for i, idx in enumerate(cand):
        idx = np.sort(np.asarray(idx, dtype=np.int64))
        diff = pts[idx] - pts[i]
        dist = np.sqrt(np.sum(diff * diff, axis=1))
        out.append(idx[dist <= eps])
    return out


def dbscan(points, eps, min_pts=5) -> ClusterAssignment:
    """Density clustering with a deterministic index-order scan.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Clusters grow from the lowest-index unassigned core
    point; a border point joins the first cluster that reaches it. Points
    reached by no cluster are labelled -1.
    """
    if not eps > 0:
        raise ClusteringError("eps must be positive")
    if min_pts < 1:
        raise ClusteringError("min_pts must be >= 1")
    pts = _points(points)
    n = len(pts)
    if n < 1:
        raise ClusteringError("no points")
    neighbours = region_query(pts, eps)
    core = np.array([len(nb) >= min_pts for nb in neighbours], dtype=bool)
    labels = np.full(n, NOISE, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = cluster
        queue = [i]
        head = 0
        while head < len(queue):
            p = queue[head]
            head += 1
            for q in neighbours[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return ClusterAssignment(labels, DBSCAN, {"eps": float(eps), "min_pts": int(min_pts)})


def _kmeans_pp(pts, k, rng):
    n = len(pts)
    centers = np.empty((k, pts.shape[1]))
    first = rng.integers(n)
    centers[0] = pts[first]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers[c] = pts[idx]
        d2 = np.minimum(d2, np.sum((pts - centers[c]) ** 2, axis=1))
    return centers


def _sq_dists(pts, centers):
    diff = pts[:, None, :] - centers[None, :, :]
    return np.sum(diff * diff, axis=2)


def kmeans(points, k, seed=0, max_iter=300, tol=1e-8, return_history=False):
    """Lloyd's algorithm from k-means++ seeds.

    Stops when no centroid moves more than ``tol`` or after ``max_iter``
    iterations. An emptied cluster keeps its previous centroid.
    With ``return_history`` the within-cluster sum of squares after every
    assignment step is returned alongside the assignment.
    """
    pts = _points(points)
    n = len(pts)
    if not 1 <= k <= n:
        raise ClusteringError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(pts, k, rng)
    history = []
    labels = None
    for _ in range(max_iter):
        d2 = _sq_dists(pts, centers)
        labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(n), labels].sum()))
        new = centers.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = pts[members].mean(axis=0)
        shift = np.sqrt(np.max(np.sum((new - centers) ** 2, axis=1)))
        centers = new
        if shift <= tol:
            break
    d2 = _sq_dists(pts, centers)
    labels = np.argmin(d2, axis=1)
    history.append(float(d2[np.arange(n), labels].sum()))
    result = ClusterAssignment(_canonical(labels), KMEANS, {"k": int(k), "seed": int(seed)})
    if return_history:
        return result, history
    return result


def agglomerative(points, k, linkage_method="average") -> ClusterAssignment:
    """Bottom-up merging on Euclidean distances, cut at exactly ``k`` clusters."""
    pts = _points(points)
    n = len(pts)
    if not 1 <= k <= n:
        raise ClusteringError(f"k must lie in [1, {n}], got {k}")
    parent = np.arange(2 * n - 1)
    if n > 1:
        Z = linkage(pts, method=linkage_method, metric="euclidean")
        for step in range(n - k):
            a, b = int(Z[step, 0]), int(Z[step, 1])
            parent[a] = n + step
            parent[b] = n + step

    def root(i):
        while parent[i] != i:
            i = parent[i]
        return i

    labels = np.array([root(i) for i in range(n)])
    return ClusterAssignment(_canonical(labels), AGGLOMERATIVE,
                             {"k": int(k), "linkage": linkage_method})


@numba.njit(cache=True)
def _silhouette_samples(pts, labels, n_clusters):
    n = pts.shape[0]
    dim = pts.shape[1]
    sizes = np.zeros(n_clusters)
    for i in range(n):
        sizes[labels[i]] += 1
    s = np.zeros(n)
    sums = np.zeros(n_clusters)
    for i in range(n):
        sums[:] = 0.0
        for j in range(n):
            acc = 0.0
            for c in range(dim):
                diff = pts[i, c] - pts[j, c]
                acc += diff * diff
            sums[labels[j]] += np.sqrt(acc)
        own = labels[i]
        if sizes[own] <= 1:
            s[i] = 0.0
            continue
        a = sums[own] / (sizes[own] - 1)
        b = np.inf
        for c in range(n_clusters):
            if c != own:
                m = sums[c] / sizes[c]
                if m < b:
                    b = m
        denom = max(a, b)
        s[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return s


def silhouette(points, labels) -> float:
    """Mean silhouette over non-noise points; noise (-1) is ignored entirely.

    A point alone in its cluster scores 0.
    """
    pts = _points(points)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != len(pts):
        raise ClusteringError("labels length does not match points")
    keep = labels != NOISE
    lab = _canonical(labels[keep])
    k = len(np.unique(lab))
    if k < 2 or keep.sum() < 2:
        raise ClusteringError("silhouette undefined for fewer than 2 clusters")
    return float(np.mean(_silhouette_samples(pts[keep], lab, k)))


def select_k(points, k_range, method=KMEANS, seed=0) -> int:
    """Number of clusters with the best silhouette; ties go to the smaller k."""
    pts = _points(points)
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ClusteringError("empty k range")
    best_k, best_s = None, -np.inf
    for k in ks:
        if not 2 <= k <= len(pts) - 1:
            raise ClusteringError(f"k={k} outside [2, n-1]")
        assignment = cluster_k(pts, k, method, seed)
        try:
            s = silhouette(pts, assignment.labels)
        except ClusteringError:
            s = -np.inf
        if best_k is None or s > best_s:
            best_k, best_s = k, s
    return best_k


def cluster_k(points, k, method=KMEANS, seed=0) -> ClusterAssignment:
    if method == KMEANS:
        return kmeans(points, k, seed=seed)
    if method == AGGLOMERATIVE:
        return agglomerative(points, k)
    raise ClusteringError(f"unknown partitioning method {method!r}")


def quality(assignment: ClusterAssignment, points) -> ClusterQuality:
    pts = _points(points)
    labels = assignment.labels
    if len(labels) != len(pts):
        raise ClusteringError("labels length does not match points")
    m = assignment.n_clusters
    s = silhouette(pts, labels) if m >= 2 else None
    return ClusterQuality(m, s, bool(np.any(labels == NOISE)))


def k_distances(points, min_pts):
    """Distance from each point to its ``min_pts``-th nearest point, counting itself."""
    pts = _points(points)
    dist, _ = cKDTree(pts).query(pts, k=min_pts)
    dist = np.asarray(dist).reshape(len(pts), -1)
    return dist[:, min_pts - 1]


def auto_eps(points, min_pts=5, flat_tol=1e-12, fallback_percentile=90.0) -> float:
    """Pick ``eps`` at the knee of the sorted k-distance curve.

    The knee is the point of largest second difference. When the curve is
    flat (largest second difference below ``flat_tol``) the
    ``fallback_percentile`` of the k-distances is used instead.
    """
    pts = _points(points)
    n = len(pts)
    if n <= min_pts:
        raise ClusteringError(f"auto_eps needs more than min_pts={min_pts} points, got {n}")
    kd = np.sort(k_distances(pts, min_pts))
    eps = None
    if n >= 3:
        second = kd[2:] - 2.0 * kd[1:-1] + kd[:-2]
        i = int(np.argmax(second))
        if second[i] >= flat_tol:
            eps = float(kd[i + 1])
    if eps is None:
        eps = float(np.percentile(kd, fallback_percentile))
    if eps <= 0:
        # all k-distances zero: stacked duplicates; any positive radius joins them
        positive = kd[kd > 0]
        eps = float(positive.min()) if positive.size else 1e-12
    return eps
