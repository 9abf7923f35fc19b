"""Center-based clustering (k-means / k-medians) under any supported distance."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DimensionError
from ..metrics import DistanceKind, nearest_center, update_nearest


@dataclass
class Clustering:
    """Result of a clustering run.

    ``labels[i]`` indexes ``centers`` (``-1`` marks DBSCAN noise). ``inertia`` is the
    summed assignment cost: squared distance for the euclidean metric, the distance
    itself for every other metric.
    """

    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    metric: DistanceKind = field(default_factory=lambda: DistanceKind("euclidean"))
    history: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def k(self) -> int:
        return len(self.centers)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels[self.labels >= 0], minlength=self.k)


def assignment_cost(dists: np.ndarray, metric) -> np.ndarray:
    metric = DistanceKind.parse(metric)
    return dists * dists if metric.kind == "euclidean" else dists


def clustering_inertia(points, centers, labels, metric="euclidean") -> float:
    """Recompute the inertia of a labelling from scratch (noise points excluded)."""
    from ..metrics import pairwise

    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    centers = np.asarray(centers, dtype=float).reshape(len(centers), points.shape[1])
    total = 0.0
    for j in range(len(centers)):
        members = points[labels == j]
        if len(members):
            d = pairwise(members, centers[j:j + 1], metric)[:, 0]
            total += float(assignment_cost(d, metric).sum())
    return total


def _update_centers(X, labels, k, rule, old):
    centers = old.copy()
    if rule == "mean":
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros((k, X.shape[1]))
        np.add.at(sums, labels, X)
        nz = counts > 0
        centers[nz] = sums[nz] / counts[nz, None]
        return centers
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(k + 1))
    for j in range(k):
        if bounds[j + 1] > bounds[j]:
            centers[j] = np.median(X[order[bounds[j]:bounds[j + 1]]], axis=0)
    return centers


def _seed_centers(X, k, metric, rng):
    """Distance-weighted (k-means++ style) seeding; probability proportional to D^2."""
    n = X.shape[0]
    first = int(rng.integers(n))
    centers = [X[first]]
    labels = np.zeros(n, dtype=np.int64)
    dists = np.full(n, np.inf)
    update_nearest(X, X[first], 0, labels, dists, metric)
    for j in range(1, k):
        w = dists * dists
        total = w.sum()
        if total <= 0:
            raise ConfigError(f"cannot seed {k} distinct centers")
        cum = np.cumsum(w)
        pick = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        pick = min(pick, n - 1)
        while w[pick] == 0:  # guard against landing on a zero-weight point at the edge
            pick -= 1
        centers.append(X[pick])
        update_nearest(X, X[pick], j, labels, dists, metric)
    return np.array(centers)


def _assign_with_repair(X, centers, metric):
    """Nearest-center assignment; empty clusters are re-seeded from the costliest point."""
    k = len(centers)
    labels, dists = nearest_center(X, centers, metric)
    for _ in range(k + 1):
        counts = np.bincount(labels, minlength=k)
        empty = np.nonzero(counts == 0)[0]
        if not empty.size:
            break
        cost = assignment_cost(dists, metric).copy()
        for j in empty:
            cost[counts[labels] <= 1] = -np.inf  # never strip a singleton cluster
            p = int(np.argmax(cost))
            counts[labels[p]] -= 1
            counts[j] += 1
            centers[j] = X[p]
            labels[p] = j
            cost[p] = -np.inf
        labels, dists = nearest_center(X, centers, metric)
    return labels, dists


def kcenter_fit(points, k: int, metric="euclidean", center_rule: str = "mean", seed: int = 0,
                max_iter: int = 100, tol: float = 1e-6, n_init: int = 1, init=None) -> Clustering:
    """Lloyd-style k-means (``center_rule="mean"``) or k-medians (``"median"``).

    Alternates nearest-center assignment under ``metric`` with element-wise mean or
    median updates until the largest center shift is below ``tol`` or ``max_iter``
    updates have run. Seeding is distance-weighted and fully determined by ``seed``;
    ``init`` supplies starting centers instead. With ``n_init > 1`` the run with the
    lowest inertia wins (earliest on ties).
    """
    metric = DistanceKind.parse(metric)
    X = np.ascontiguousarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if center_rule not in ("mean", "median"):
        raise ConfigError(f"center_rule must be 'mean' or 'median', got {center_rule!r}")
    if k < 1:
        raise ConfigError("k must be >= 1")
    if max_iter < 1:
        raise ConfigError("max_iter must be >= 1")
    n_distinct = len(np.unique(X, axis=0))
    if k > n_distinct:
        raise ConfigError(f"k={k} exceeds the {n_distinct} distinct points")

    if init is not None:
        starts = [np.array(init, dtype=float).reshape(k, X.shape[1])]
    else:
        seqs = np.random.SeedSequence(seed).spawn(n_init)
        starts = [None] * n_init
    best = None
    for r, start in enumerate(starts):
        if start is None:
            start = _seed_centers(X, k, metric, np.random.default_rng(seqs[r]))
        result = _lloyd(X, start.copy(), metric, center_rule, max_iter, tol)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def _lloyd(X, centers, metric, rule, max_iter, tol):
    k = len(centers)
    history = []
    labels, dists = _assign_with_repair(X, centers, metric)
    history.append(float(assignment_cost(dists, metric).sum()))
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = _update_centers(X, labels, k, rule, centers)
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        previous = labels
        labels, dists = _assign_with_repair(X, centers, metric)
        history.append(float(assignment_cost(dists, metric).sum()))
        if shift < tol or np.array_equal(labels, previous):
            # unchanged labels would reproduce the same centers
            break
    return Clustering(centers=centers, labels=labels, inertia=history[-1], metric=metric,
                      history=history, n_iter=n_iter)


def assign_points(points, centers, metric="euclidean"):
    centers = np.asarray(centers, dtype=float)
    points = np.asarray(points, dtype=float)
    if points.shape[-1] != centers.shape[-1]:
        raise DimensionError("points and centers differ in dimension")
    return nearest_center(points, centers, metric)
