"""Ward agglomeration, DBSCAN and barycenters for methods without native centers."""
from __future__ import annotations

from collections import deque

import numpy as np
from scipy.cluster.hierarchy import linkage

from ..errors import ConfigError, DomainError
from ..metrics import DistanceKind, _dtw_path, pairwise
from .kcenter import Clustering, clustering_inertia


def ward_merge_cost(a, b) -> float:
    """Increase of within-cluster sum of squares when clusters ``a`` and ``b`` merge."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    na, nb = len(a), len(b)
    diff = a.mean(axis=0) - b.mean(axis=0)
    return na * nb / (na + nb) * float(diff @ diff)


def _relabel_by_first_occurrence(labels):
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[np.unique(labels)[order]] = np.arange(len(order))
    return remap[labels]


def ward_fit(points, k: int) -> Clustering:
    """Agglomerative clustering with Ward's criterion, cut at ``k`` clusters.

    Cluster ids follow the first point of each cluster; centers are cluster means.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if k < 1 or k > n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    parent = np.arange(2 * n - 1)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if n > 1 and k < n:
        Z = linkage(X, method="ward")
        for step in range(n - k):
            a, b = int(Z[step, 0]), int(Z[step, 1])
            parent[find(a)] = n + step
            parent[find(b)] = n + step
    labels = _relabel_by_first_occurrence(np.array([find(i) for i in range(n)]))
    centers = np.array([X[labels == j].mean(axis=0) for j in range(k)])
    return Clustering(centers=centers, labels=labels,
                      inertia=clustering_inertia(X, centers, labels, "euclidean"))


def dbscan_fit(points, eps: float, n_min: int, metric="euclidean") -> Clustering:
    """Density clustering: core points have at least ``n_min`` neighbors within ``eps``
    (the point itself included). Noise is labelled -1; centers are barycenters."""
    if eps <= 0:
        raise ConfigError("eps must be > 0")
    if n_min < 1:
        raise ConfigError("n_min must be >= 1")
    metric = DistanceKind.parse(metric)
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    D = pairwise(X, X, metric)
    neighbors = [np.nonzero(D[i] <= eps)[0] for i in range(n)]
    core = np.array([len(nb) >= n_min for nb in neighbors])
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in neighbors[p]:
                if labels[q] == -1:
                    labels[q] = cluster
                    queue.append(q)
        cluster += 1
    centers = np.array([barycenter(X[labels == j], metric) for j in range(cluster)]).reshape(cluster, X.shape[1])
    inertia = clustering_inertia(X, centers, labels, metric) if cluster else 0.0
    return Clustering(centers=centers, labels=labels, inertia=inertia, metric=metric)


def barycenter(points, metric="euclidean", max_iter: int = 30) -> np.ndarray:
    """Representative center of a group of equal-length sequences.

    For the dtw and hybrid metrics this is DTW barycenter averaging: start from the
    element-wise mean, align every sequence to the current average and replace each
    position by the mean of the values aligned to it, until the alignments stop
    changing (at most ``max_iter`` rounds). Other metrics use the element-wise mean.
    """
    X = np.asarray(points, dtype=float)
    if X.size == 0:
        raise DomainError("barycenter of an empty set")
    if X.ndim == 1:
        X = X[None, :]
    metric = DistanceKind.parse(metric)
    avg = X.mean(axis=0)
    if metric.kind not in ("dtw", "hybrid") or len(X) == 1:
        return X[0].copy() if len(X) == 1 else avg
    m = X.shape[1]
    prev_paths = None
    for _ in range(max_iter):
        paths = [_dtw_path(np.ascontiguousarray(avg), np.ascontiguousarray(x)) for x in X]
        sums = np.zeros(m)
        counts = np.zeros(m)
        for x, path in zip(X, paths):
            for i, j in path:
                sums[i] += x[j]
                counts[i] += 1
        avg = sums / counts
        if paths == prev_paths:
            break
        prev_paths = paths
    return avg
