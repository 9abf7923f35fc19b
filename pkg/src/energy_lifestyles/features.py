"""Load features computed from raw hourly kWh readings."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import HOURS, Dataset, ReadingDay, partition_seasons
from .errors import ConfigError, DimensionError, DomainError

log = logging.getLogger(__name__)

MORNING = np.arange(6, 10)
NOON = np.arange(10, 14)
EVENING = np.arange(18, 22)
NIGHT = np.array([22, 23, 0, 1])  # same calendar day
N_BASE_HOURS = 3

ENERGY_NAMES = ["e_day", "e_hour", "e_peak", "e_base", "e_min",
                "e_morning", "e_noon", "e_evening", "e_night", "e_wholeday"]
RATIO_NAMES = ["r_base", "r_min2max", "r_m2w", "r_n2w", "r_e2w", "r_ni2w"]
PEAK_NAMES = [f"pi_{h:02d}" for h in range(HOURS)]
FEATURE_NAMES = ENERGY_NAMES + RATIO_NAMES + PEAK_NAMES


@dataclass(frozen=True)
class FeatureVector:
    e_day: float
    e_hour: float
    e_peak: float
    e_base: float
    e_min: float
    e_morning: float
    e_noon: float
    e_evening: float
    e_night: float
    e_wholeday: float
    r_base: float
    r_min2max: float
    r_m2w: float
    r_n2w: float
    r_e2w: float
    r_ni2w: float
    pi: tuple
    skipped_days: int = 0

    def as_array(self) -> np.ndarray:
        head = [getattr(self, n) for n in ENERGY_NAMES + RATIO_NAMES]
        return np.array(head + list(self.pi), dtype=float)


def _mean(x, axis=-1):
    # shifted mean: exact for constant input and less prone to cancellation
    ref = np.take(x, [0], axis=axis)
    return np.squeeze(ref, axis=axis) + (x - ref).mean(axis=axis)


def _ratio_mean(num, den, valid):
    """Mean over valid days of num/den; 0 where a household has no valid day."""
    out = np.zeros(num.shape[0])
    for j in range(num.shape[0]):
        v = valid[j]
        if v.any():
            out[j] = _mean(num[j, v] / den[j, v])
    return out


def compute_features(kwh: np.ndarray):
    """Feature matrix ``(M, 40)`` and per-household skipped-day counts for ``(M, D, 24)`` kWh."""
    kwh = np.asarray(kwh, dtype=float)
    if kwh.ndim != 3 or kwh.shape[2] != HOURS:
        raise DimensionError("expected an (households, days, 24) array")
    if kwh.shape[1] == 0:
        raise DomainError("features need at least one day")
    if (kwh < 0).any() or not np.isfinite(kwh).all():
        raise DomainError("readings must be finite and non-negative")
    day = kwh.sum(axis=2)
    peak = kwh.max(axis=2)
    low = kwh.min(axis=2)
    base = np.sort(kwh, axis=2)[:, :, :N_BASE_HOURS].mean(axis=2)
    windows = [kwh[:, :, w].sum(axis=2) for w in (MORNING, NOON, EVENING, NIGHT)]

    energies = [day, day / HOURS, peak, base, low] + windows + [day]
    valid = day > 0
    skipped = (~valid).sum(axis=1)
    ratios = [_ratio_mean(base, day, valid), _ratio_mean(low, peak, valid)]
    ratios += [_ratio_mean(w, day, valid) for w in windows]

    M, D = day.shape
    first_peak = kwh.argmax(axis=2)  # earliest hour on ties
    pi = np.zeros((M, HOURS))
    np.add.at(pi, (np.repeat(np.arange(M), D), first_peak.ravel()), 1.0)
    pi /= D
    X = np.column_stack([_mean(e) for e in energies] + ratios + [pi])
    return X, skipped


def extract_features(days) -> FeatureVector:
    """Features of one household from its days (``ReadingDay`` list or ``(D, 24)`` array)."""
    if len(days) == 0:
        raise DomainError("features need at least one day")
    if isinstance(days[0], ReadingDay):
        kwh = np.array([d.kwh for d in days], dtype=float)
    else:
        kwh = np.asarray(days, dtype=float)
    X, skipped = compute_features(kwh[None])
    if skipped[0]:
        log.info("%d zero-usage days skipped in ratio features", int(skipped[0]))
    row = X[0]
    n = len(ENERGY_NAMES) + len(RATIO_NAMES)
    return FeatureVector(*[float(v) for v in row[:n]], pi=tuple(float(v) for v in row[n:]),
                         skipped_days=int(skipped[0]))


def minmax_scale(X: np.ndarray) -> np.ndarray:
    """Scale each column to [0, 1]; constant columns become 0."""
    X = np.asarray(X, dtype=float)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    out = np.zeros_like(X)
    np.divide(X - lo, span, out=out, where=span > 0)
    return np.clip(out, 0.0, 1.0)


def feature_matrix(data: Dataset, period=None, scale: bool = False, chunk: int = 1000):
    """One row of features per household, columns in ``FEATURE_NAMES`` order.

    ``period`` is ``None`` (all days), a season name or an inclusive ``(start, end)``
    date pair.
    """
    if period is not None:
        if isinstance(period, str):
            parts = partition_seasons(data)
            if period not in parts:
                raise ConfigError(f"unknown season {period!r}")
            data = parts[period]
        else:
            start, end = (np.datetime64(p, "D") for p in period)
            data = data.select_days((data.dates >= start) & (data.dates <= end))
    X = np.zeros((data.n_households, len(FEATURE_NAMES)))
    skipped = np.zeros(data.n_households, dtype=np.int64)
    for s in range(0, data.n_households, chunk):
        X[s:s + chunk], skipped[s:s + chunk] = compute_features(data.kwh[s:s + chunk])
    if skipped.any():
        log.info("%d zero-usage days skipped in ratio features", int(skipped.sum()))
    if scale:
        X = minmax_scale(X)
    return X, list(FEATURE_NAMES)


def save_features(path, household_ids, X) -> None:
    frame = pd.DataFrame(np.asarray(X), columns=FEATURE_NAMES)
    frame.insert(0, "household_id", list(household_ids))
    frame.to_csv(path, index=False, lineterminator="\n")


def load_features(path):
    frame = pd.read_csv(path, dtype={"household_id": str})
    if list(frame.columns[1:]) != FEATURE_NAMES:
        raise ConfigError(f"{path}: unexpected feature columns")
    return tuple(frame["household_id"]), frame[FEATURE_NAMES].to_numpy(dtype=float)
