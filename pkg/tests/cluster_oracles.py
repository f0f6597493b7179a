"""Naive O(n^2) references for density clustering and silhouette."""

import numpy as np


def naive_dbscan(pts, eps, min_pts):
    pts = np.asarray(pts, dtype=float)
    n = len(pts)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    adj = d <= eps
    core = adj.sum(1) >= min_pts
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if core[i] and core[j] and adj[i, j]:
                parent[find(i)] = find(j)
    # components ordered by their smallest core index
    order = {}
    for i in range(n):
        if core[i] and find(i) not in order:
            order[find(i)] = len(order)
    labels = np.full(n, -1)
    for i in range(n):
        if core[i]:
            labels[i] = order[find(i)]
        else:
            owners = [order[find(j)] for j in range(n) if core[j] and adj[i, j]]
            if owners:
                labels[i] = min(owners)
    return labels


def naive_silhouette(pts, labels):
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    keep = labels != -1
    pts, labels = pts[keep], labels[keep]
    scores = []
    for i in range(len(pts)):
        own = labels == labels[i]
        if own.sum() == 1:
            scores.append(0.0)
            continue
        dist = np.sqrt(((pts - pts[i]) ** 2).sum(1))
        a = dist[own].sum() / (own.sum() - 1)
        b = min(dist[labels == c].mean() for c in set(labels.tolist()) if c != labels[i])
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))
