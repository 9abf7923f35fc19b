"""Distances between daily profiles.

The DTW recurrence uses the squared difference as the local cost and returns the
cumulative cost of the best monotone alignment (no square root, no window). The hybrid
distance is ``gamma * euclidean + (1 - gamma) * dtw`` with no rescaling.

Scalar functions and the batch kernels share the same compiled code, so a distance
computed through :func:`nearest_center` is bit-identical to the scalar call.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConfigError, DimensionError, DomainError

KINDS = ("euclidean", "manhattan", "cosine", "dtw", "hybrid", "correlation")


@dataclass(frozen=True)
class DistanceKind:
    kind: str
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown distance {self.kind!r}; expected one of {KINDS}")
        if self.kind == "hybrid":
            if self.gamma is None or not 0.0 <= float(self.gamma) <= 1.0:
                raise ConfigError("hybrid distance needs 0 <= gamma <= 1")
            object.__setattr__(self, "gamma", float(self.gamma))
        elif self.gamma is not None:
            raise ConfigError(f"gamma only applies to the hybrid distance, not {self.kind}")

    @classmethod
    def parse(cls, value) -> "DistanceKind":
        """Accept a DistanceKind, ``"euclidean"``, ``"hybrid:0.5"`` or a mapping."""
        if isinstance(value, DistanceKind):
            return value
        if isinstance(value, dict):
            return cls(value["kind"], value.get("gamma"))
        name, _, gamma = str(value).partition(":")
        return cls(name, float(gamma) if gamma else None)

    def __str__(self):
        return f"hybrid:{self.gamma!r}" if self.kind == "hybrid" else self.kind

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma}

    @property
    def mix(self) -> float | None:
        """Weight of the euclidean term for the euclidean/dtw/hybrid family, else None."""
        return {"euclidean": 1.0, "dtw": 0.0, "hybrid": self.gamma}.get(self.kind)


# --- compiled kernels --------------------------------------------------------


@numba.njit(cache=True)
def _euclid(a, b):
    s = 0.0
    for k in range(a.shape[0]):
        d = a[k] - b[k]
        s += d * d
    return np.sqrt(s)


@numba.njit(cache=True)
def _dtw_bounded(a, b, cutoff):
    """Cumulative DTW cost, or +inf as soon as a whole row exceeds ``cutoff``."""
    n = a.shape[0]
    prev = np.empty(n)
    cur = np.empty(n)
    for i in range(n):
        row_min = np.inf
        for j in range(n):
            d = a[i] - b[j]
            c = d * d
            if i == 0:
                best = 0.0 if j == 0 else cur[j - 1]
            elif j == 0:
                best = prev[0]
            else:
                best = prev[j - 1]
                if prev[j] < best:
                    best = prev[j]
                if cur[j - 1] < best:
                    best = cur[j - 1]
            cur[j] = best + c
            if cur[j] < row_min:
                row_min = cur[j]
        if row_min > cutoff:
            return np.inf
        prev, cur = cur, prev
    return prev[n - 1]


@numba.njit(cache=True)
def _dtw(a, b):
    return _dtw_bounded(a, b, np.inf)


@numba.njit(cache=True)
def _mixed(a, b, gamma):
    # gamma = 1 -> euclidean, gamma = 0 -> dtw, otherwise hybrid
    if gamma == 1.0:
        return _euclid(a, b)
    if gamma == 0.0:
        return _dtw(a, b)
    return gamma * _euclid(a, b) + (1.0 - gamma) * _dtw(a, b)


@numba.njit(cache=True)
def _dtw_cost_matrix(a, b):
    n, m = a.shape[0], b.shape[0]
    D = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            d = a[i] - b[j]
            c = d * d
            if i == 0 and j == 0:
                best = 0.0
            elif i == 0:
                best = D[0, j - 1]
            elif j == 0:
                best = D[i - 1, 0]
            else:
                best = D[i - 1, j - 1]
                if D[i - 1, j] < best:
                    best = D[i - 1, j]
                if D[i, j - 1] < best:
                    best = D[i, j - 1]
            D[i, j] = best + c
    return D


@numba.njit(cache=True)
def _dtw_path(a, b):
    D = _dtw_cost_matrix(a, b)
    i, j = a.shape[0] - 1, b.shape[0] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = D[i - 1, j - 1], D[i - 1, j], D[i, j - 1]
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    return path[::-1]


@numba.njit(cache=True)
def _assign_mixed(X, C, gamma, sq_approx, labels, dists):
    """Exact nearest center under the euclidean/dtw/hybrid family with pruning.

    ``sq_approx[i, c]`` approximates the squared euclidean distance (e.g. from a
    matrix product). Since 0 <= dtw <= squared euclidean, and dtw also covers the two
    corner cells, every center gets a cheap interval; only centers whose lower bound
    reaches the best upper bound are evaluated exactly. Ties go to the lowest index.
    """
    n, k = sq_approx.shape
    m = X.shape[1]
    lower = np.empty(k)
    order = np.empty(k, dtype=np.int64)
    for i in range(n):
        x = X[i]
        xx = 0.0
        for t in range(m):
            xx += x[t] * x[t]
        upper_best = np.inf
        for c in range(k):
            slack = 1e-9 * (xx + sq_approx[i, c]) + 1e-300
            s_lo = sq_approx[i, c] - slack
            if s_lo < 0.0:
                s_lo = 0.0
            s_hi = sq_approx[i, c] + slack
            if gamma == 1.0:
                lo = np.sqrt(s_lo)
                hi = np.sqrt(s_hi)
            else:
                d0 = x[0] - C[c, 0]
                kim = d0 * d0
                if m > 1:
                    d1 = x[m - 1] - C[c, m - 1]
                    kim += d1 * d1
                lo = gamma * np.sqrt(s_lo) + (1.0 - gamma) * kim * (1.0 - 1e-12)
                hi = gamma * np.sqrt(s_hi) + (1.0 - gamma) * s_hi
            lower[c] = lo
            if hi < upper_best:
                upper_best = hi
        # visit plausible centers, cheapest lower bound first
        cnt = 0
        for c in range(k):
            if lower[c] <= upper_best:
                order[cnt] = c
                cnt += 1
        cand = order[:cnt]
        cand = cand[np.argsort(lower[cand], kind="mergesort")]
        best = np.inf
        best_c = -1
        for c in cand:
            if lower[c] > best:
                break
            if gamma == 1.0:
                d = _euclid(x, C[c])
            else:
                e = _euclid(x, C[c]) if gamma > 0.0 else 0.0
                cutoff = (best - gamma * e) / (1.0 - gamma)
                w = _dtw_bounded(x, C[c], cutoff * (1.0 + 1e-12) + 1e-300)
                if w == np.inf:
                    continue
                d = w if gamma == 0.0 else gamma * e + (1.0 - gamma) * w
            if d < best or (d == best and c < best_c):
                best = d
                best_c = c
        labels[i] = best_c
        dists[i] = best


@numba.njit(cache=True)
def _pairwise_generic(X, Y, code):
    out = np.empty((X.shape[0], Y.shape[0]))
    for i in range(X.shape[0]):
        for j in range(Y.shape[0]):
            a, b = X[i], Y[j]
            if code == 0:  # manhattan
                s = 0.0
                for t in range(a.shape[0]):
                    s += abs(a[t] - b[t])
                out[i, j] = s
            else:
                if code == 2:  # correlation: center first
                    a = a - a.mean()
                    b = b - b.mean()
                ab = 0.0
                aa = 0.0
                bb = 0.0
                for t in range(a.shape[0]):
                    ab += a[t] * b[t]
                    aa += a[t] * a[t]
                    bb += b[t] * b[t]
                out[i, j] = 1.0 - ab / (np.sqrt(aa) * np.sqrt(bb))
    return out


@numba.njit(cache=True)
def _pairwise_mixed(X, Y, gamma):
    out = np.empty((X.shape[0], Y.shape[0]))
    for i in range(X.shape[0]):
        for j in range(Y.shape[0]):
            out[i, j] = _mixed(X[i], Y[j], gamma)
    return out


# --- scalar API --------------------------------------------------------------


def _pair(a, b, allow_empty=False):
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"vectors must be 1-D of equal length, got {a.shape} and {b.shape}")
    if a.size == 0 and not allow_empty:
        raise DimensionError("vectors must be non-empty")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise DomainError("vectors must be finite")
    return a, b


def euclidean(a, b) -> float:
    a, b = _pair(a, b, allow_empty=True)
    return float(_euclid(a, b))


def manhattan(a, b) -> float:
    a, b = _pair(a, b, allow_empty=True)
    return float(_pairwise_generic(a[None], b[None], 0)[0, 0])


def cosine_distance(a, b) -> float:
    a, b = _pair(a, b)
    if not a.any() or not b.any():
        raise DomainError("cosine distance is undefined for a zero vector")
    return float(_pairwise_generic(a[None], b[None], 1)[0, 0])


def correlation_distance(a, b) -> float:
    """One minus the Pearson correlation of ``a`` and ``b``."""
    a, b = _pair(a, b)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DomainError("correlation distance is undefined for a constant vector")
    return float(_pairwise_generic(a[None], b[None], 2)[0, 0])


def dtw_distance(a, b) -> float:
    """Cumulative squared-difference cost of the optimal monotone alignment."""
    a, b = _pair(a, b)
    return float(_dtw(a, b))


def dtw_path(a, b) -> list[tuple[int, int]]:
    """Optimal alignment path from (0, 0) to (m-1, m-1); ties prefer the diagonal step."""
    a, b = _pair(a, b)
    return [(int(i), int(j)) for i, j in _dtw_path(a, b)]


def hybrid_distance(a, b, gamma: float) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError("gamma must lie in [0, 1]")
    a, b = _pair(a, b)
    return float(_mixed(a, b, float(gamma)))


def distance(a, b, metric) -> float:
    metric = DistanceKind.parse(metric)
    fn = {
        "euclidean": euclidean,
        "manhattan": manhattan,
        "cosine": cosine_distance,
        "dtw": dtw_distance,
        "correlation": correlation_distance,
    }.get(metric.kind)
    if fn is None:
        return hybrid_distance(a, b, metric.gamma)
    return fn(a, b)


# --- batch API ---------------------------------------------------------------


def _as_matrix(X):
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _check_domain(X, metric):
    if metric.kind == "cosine" and (np.abs(X).sum(axis=1) == 0).any():
        raise DomainError("cosine distance is undefined for a zero vector")
    if metric.kind == "correlation" and (np.ptp(X, axis=1) == 0).any():
        raise DomainError("correlation distance is undefined for a constant vector")


def pairwise(X, Y=None, metric="euclidean") -> np.ndarray:
    """Full distance matrix between the rows of ``X`` and ``Y``."""
    metric = DistanceKind.parse(metric)
    X = _as_matrix(X)
    Y = X if Y is None else _as_matrix(Y)
    if X.shape[1] != Y.shape[1]:
        raise DimensionError("X and Y must have the same number of columns")
    _check_domain(X, metric)
    _check_domain(Y, metric)
    if metric.mix is not None:
        return _pairwise_mixed(X, Y, metric.mix)
    return _pairwise_generic(X, Y, {"manhattan": 0, "cosine": 1, "correlation": 2}[metric.kind])


def nearest_center(X, C, metric="euclidean", chunk: int = 16384):
    """Index of (and distance to) the nearest row of ``C`` for every row of ``X``.

    Exact under the chosen metric; ties are broken by the lowest center index.
    """
    metric = DistanceKind.parse(metric)
    X = _as_matrix(X)
    C = _as_matrix(C)
    if X.shape[1] != C.shape[1]:
        raise DimensionError("points and centers must have the same dimension")
    n = X.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n)
    if metric.mix is None:
        for s in range(0, n, chunk):
            D = pairwise(X[s:s + chunk], C, metric)
            labels[s:s + chunk] = np.argmin(D, axis=1)
            dists[s:s + chunk] = D[np.arange(D.shape[0]), labels[s:s + chunk]]
        return labels, dists
    cc = np.einsum("ij,ij->i", C, C)
    for s in range(0, n, chunk):
        Xs = X[s:s + chunk]
        sq = np.einsum("ij,ij->i", Xs, Xs)[:, None] + cc[None, :] - 2.0 * (Xs @ C.T)
        np.maximum(sq, 0.0, out=sq)
        _assign_mixed(Xs, C, metric.mix, sq, labels[s:s + chunk], dists[s:s + chunk])
    return labels, dists


def distances_to(X, c, metric="euclidean") -> np.ndarray:
    """Distance from every row of ``X`` to the single vector ``c``."""
    c = np.ascontiguousarray(c, dtype=float)
    return pairwise(X, c[None, :], metric)[:, 0]


@numba.njit(cache=True)
def _update_mixed(X, c, gamma, index, labels, dists):
    for i in range(X.shape[0]):
        x = X[i]
        e = _euclid(x, c)
        if gamma == 1.0:
            d = e
        else:
            m = x.shape[0]
            d0 = x[0] - c[0]
            kim = d0 * d0
            if m > 1:
                d1 = x[m - 1] - c[m - 1]
                kim += d1 * d1
            if gamma * e + (1.0 - gamma) * kim * (1.0 - 1e-12) > dists[i]:
                continue
            cutoff = (dists[i] - gamma * e) / (1.0 - gamma)
            w = _dtw_bounded(x, c, cutoff * (1.0 + 1e-12) + 1e-300)
            if w == np.inf:
                continue
            d = w if gamma == 0.0 else gamma * e + (1.0 - gamma) * w
        if d < dists[i]:
            dists[i] = d
            labels[i] = index


def update_nearest(X, c, index: int, labels, dists, metric="euclidean") -> None:
    """Fold a new center ``c`` (with label ``index``) into running nearest-center arrays.

    A point moves to the new center only when strictly closer, so ties keep the
    earlier (lower-index) center.
    """
    metric = DistanceKind.parse(metric)
    X = _as_matrix(X)
    c = np.ascontiguousarray(c, dtype=float)
    if metric.mix is not None:
        _update_mixed(X, c, metric.mix, index, labels, dists)
        return
    d = distances_to(X, c, metric)
    closer = d < dists
    dists[closer] = d[closer]
    labels[closer] = index
