"""Lifestyles: clusters of households in attribute-mixture space, plus seasonal dynamics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .attributes import AttributeModel, lda_transform
from .clustering.dictionary import ShapeDictionary, encode_counts
from .clustering.kcenter import kcenter_fit
from .data import SEASON_NAMES, Dataset, partition_seasons
from .errors import ConfigError, DimensionError, DomainError
from .metrics import nearest_center

log = logging.getLogger(__name__)


@dataclass
class LifestyleModel:
    centers: np.ndarray           # (K_L, K) points in attribute space
    inertia: float                # summed squared distance to the assigned centers
    names: list | None = None
    sizes: np.ndarray | None = None

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if (self.centers < 0).any():
            raise DomainError("lifestyle centers must be non-negative")
        if self.names is not None and len(self.names) != self.k:
            raise ConfigError("one name per lifestyle expected")

    @property
    def k(self) -> int:
        return len(self.centers)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def label(self, i: int) -> str:
        return self.names[i] if self.names else f"L{i}"


def _check_theta(theta):
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if (theta < -1e-12).any() or not np.allclose(theta.sum(axis=1), 1.0, atol=1e-6):
        raise DomainError("theta rows must lie on the probability simplex")
    return theta


def fit_lifestyles(theta, k: int, seed: int = 0, n_init: int = 10, names=None) -> LifestyleModel:
    """k-means of household mixtures; lifestyle 0 is the most populous.

    Cluster sizes break ties by the order the clustering produced them.
    """
    theta = _check_theta(theta)
    if k > len(theta):
        raise ConfigError(f"k={k} exceeds the {len(theta)} households")
    fit = kcenter_fit(theta, k, "euclidean", "mean", seed=seed, n_init=n_init)
    sizes = fit.sizes()
    order = np.argsort(-sizes, kind="stable")
    return LifestyleModel(centers=np.clip(fit.centers[order], 0.0, None), inertia=fit.inertia,
                          names=list(names) if names is not None else None, sizes=sizes[order])


def _warm_start(theta, centers, k):
    """Previous centers plus the points farthest from them, one at a time."""
    centers = list(centers)
    _, d = nearest_center(theta, np.array(centers), "euclidean")
    while len(centers) < k:
        far = int(np.argmax(d))
        centers.append(theta[far].copy())
        d = np.minimum(d, np.sqrt(((theta - theta[far]) ** 2).sum(axis=1)))
    return np.array(centers)


def elbow_curve(theta, k_range, seed: int = 0, n_init: int = 10) -> list[tuple[int, float]]:
    """Inertia of the best k-means solution found for each k in ``k_range``.

    Every k is fitted from fresh seeds and also warm-started from the previous k's
    centers plus the farthest points; the better run is kept. The warm start can only
    lower the previous inertia, so the curve is non-increasing.
    """
    theta = _check_theta(theta)
    k_range = [int(k) for k in k_range]
    if k_range != sorted(k_range) or len(set(k_range)) != len(k_range):
        raise ConfigError("k_range must be strictly ascending")
    curve = []
    prev = None
    for k in k_range:
        fit = kcenter_fit(theta, k, "euclidean", "mean", seed=seed, n_init=n_init)
        if prev is not None:
            warm = kcenter_fit(theta, k, "euclidean", "mean", init=_warm_start(theta, prev.centers, k))
            if warm.inertia < fit.inertia:
                fit = warm
        curve.append((k, float(fit.inertia)))
        prev = fit
    return curve


def assign(theta_row, model: LifestyleModel) -> int:
    """Index of the nearest lifestyle center (lowest index on ties)."""
    row = np.asarray(theta_row, dtype=float).reshape(-1)
    if len(row) != model.dim:
        raise DimensionError(f"mixture has {len(row)} attributes, lifestyles expect {model.dim}")
    return int(assign_all(row[None, :], model)[0])


def assign_all(theta, model: LifestyleModel) -> np.ndarray:
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if theta.shape[1] != model.dim:
        raise DimensionError(f"mixtures have {theta.shape[1]} attributes, lifestyles expect {model.dim}")
    labels, _ = nearest_center(theta, model.centers, "euclidean")
    return labels


@dataclass
class TransitionTable:
    seasons: tuple
    counts: np.ndarray  # (n_seasons - 1, K_L, K_L)

    @property
    def pairs(self) -> list[str]:
        return [f"{a}->{b}" for a, b in zip(self.seasons[:-1], self.seasons[1:])]

    def population(self) -> np.ndarray:
        """Households per lifestyle in each season, reconciled from the pair tables."""
        rows = [c.sum(axis=1) for c in self.counts]
        return np.array(rows + [self.counts[-1].sum(axis=0)])

    def flows(self) -> pd.DataFrame:
        records = []
        for p, pair in enumerate(self.pairs):
            for a, b in zip(*np.nonzero(self.counts[p])):
                records.append((int(a), int(b), pair, int(self.counts[p, a, b])))
        return pd.DataFrame(records, columns=["source", "target", "season_pair", "count"])

    def save_flows(self, path) -> None:
        self.flows().to_csv(path, index=False, lineterminator="\n")


def _check_labels(seasonal_labels, household_ids=None):
    labels = np.asarray(seasonal_labels)
    if labels.ndim != 2 or labels.shape[1] != len(SEASON_NAMES):
        raise DimensionError("seasonal labels need one column per season")
    bad = np.nonzero((labels < 0).any(axis=1))[0]
    if len(bad):
        j = int(bad[0])
        who = household_ids[j] if household_ids is not None else f"row {j}"
        missing = [SEASON_NAMES[s] for s in np.nonzero(labels[j] < 0)[0]]
        raise DomainError(f"household {who} has no lifestyle for {', '.join(missing)}")
    return labels.astype(np.int64)


def transitions(seasonal_labels, k: int | None = None, household_ids=None) -> TransitionTable:
    """Tabulate lifestyle moves between consecutive seasons (-1 marks a missing season)."""
    labels = _check_labels(seasonal_labels, household_ids)
    k = int(labels.max()) + 1 if k is None else k
    if len(labels) and labels.max() >= k:
        raise DomainError(f"label {labels.max()} out of range for {k} lifestyles")
    counts = np.zeros((labels.shape[1] - 1, k, k), dtype=np.int64)
    for p in range(labels.shape[1] - 1):
        np.add.at(counts[p], (labels[:, p], labels[:, p + 1]), 1)
    return TransitionTable(tuple(SEASON_NAMES), counts)


@dataclass
class ChangerLabels:
    changer: np.ndarray                      # (M,) True = Changer
    per_lifestyle: dict = field(default_factory=dict)  # L -> (household indices, 0/1 labels)

    @property
    def fraction(self) -> float:
        return float(self.changer.mean()) if len(self.changer) else 0.0


def changer_split(seasonal_labels, household_ids=None) -> ChangerLabels:
    """Changer = seasonal lifestyles not all equal.

    For each lifestyle L, every household that held L in some season is labelled 1 if
    it also held another lifestyle and 0 if it held L in all four seasons.
    """
    labels = _check_labels(seasonal_labels, household_ids)
    changer = (labels != labels[:, :1]).any(axis=1)
    per = {}
    for L in np.unique(labels):
        held = np.nonzero((labels == L).any(axis=1))[0]
        per[int(L)] = (held, changer[held].astype(np.int64))
    return ChangerLabels(changer, per)


def seasonal_thetas(data: Dataset, dictionary: ShapeDictionary, model: AttributeModel) -> dict:
    """Per-season attribute mixtures with the annual attributes frozen.

    Returns ``season -> (counts, theta)``; seasons without days are left out.
    """
    if model.dictionary_fingerprint and model.dictionary_fingerprint != dictionary.fingerprint():
        raise ConfigError("attribute model was fitted on a different dictionary")
    out = {}
    for season, part in partition_seasons(data).items():
        if part.n_days == 0:
            log.warning("season %s has no days; skipped", season)
            continue
        counts = encode_counts(part, dictionary)
        counts.period = season
        out[season] = (counts, lda_transform(counts, model))
    return out


def seasonal_labels(thetas: dict, model: LifestyleModel, n_households: int) -> np.ndarray:
    """(M, 4) lifestyle labels; -1 where a season is missing."""
    labels = np.full((n_households, len(SEASON_NAMES)), -1, dtype=np.int64)
    for s, season in enumerate(SEASON_NAMES):
        if season in thetas:
            labels[:, s] = assign_all(thetas[season][1], model)
    return labels


def save_seasonal_labels(path, household_ids, labels, changer: ChangerLabels | None = None) -> None:
    frame = pd.DataFrame(np.asarray(labels), columns=list(SEASON_NAMES))
    frame.insert(0, "household_id", list(household_ids))
    flags = changer.changer if changer is not None else (labels != labels[:, :1]).any(axis=1)
    frame["changer_flag"] = np.asarray(flags, dtype=np.int64)
    frame.to_csv(path, index=False, lineterminator="\n")
