"""Calinski-Harabasz and Davies-Bouldin indices (euclidean geometry)."""
from __future__ import annotations

import numpy as np

from ..errors import DomainError


def _prepare(points, labels):
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels)
    if len(labels) != len(X):
        raise DomainError("points and labels differ in length")
    keep = labels >= 0  # DBSCAN noise is ignored
    X, labels = X[keep], labels[keep]
    ids, labels = np.unique(labels, return_inverse=True)
    k, n = len(ids), len(X)
    if k < 2:
        raise DomainError("validity indices need at least two clusters")
    if n <= k:
        raise DomainError("validity indices need more points than clusters")
    centroids = np.array([X[labels == j].mean(axis=0) for j in range(k)])
    return X, labels, centroids


def chi_score(points, labels) -> float:
    """Calinski-Harabasz index: [B/(k-1)] / [W/(n-k)]. Returns +inf when W = 0."""
    X, labels, centroids = _prepare(points, labels)
    n, k = len(X), len(centroids)
    sizes = np.bincount(labels, minlength=k)
    overall = X.mean(axis=0)
    between = float((sizes * ((centroids - overall) ** 2).sum(axis=1)).sum())
    within = float(((X - centroids[labels]) ** 2).sum())
    if within == 0:
        return float("inf")
    return (between / (k - 1)) / (within / (n - k))


def dbi_score(points, labels) -> float:
    """Davies-Bouldin index. Returns +inf when two centroids coincide."""
    X, labels, centroids = _prepare(points, labels)
    k = len(centroids)
    scatter = np.array([
        np.sqrt(((X[labels == j] - centroids[j]) ** 2).sum(axis=1)).mean() for j in range(k)
    ])
    sep = np.sqrt(((centroids[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2))
    worst = np.zeros(k)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            if sep[i, j] == 0:
                return float("inf")
            worst[i] = max(worst[i], (scatter[i] + scatter[j]) / sep[i, j])
    return float(worst.mean())
