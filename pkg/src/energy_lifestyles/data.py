"""Household hourly-load data: containers, CSV ingest, seasons and a synthetic generator.

A :class:`Dataset` stores every reading in one ``(households, days, 24)`` array so the
heavy stages can work on it without per-day Python objects. :class:`ReadingDay` is the
per-day view used by the scalar APIs.
"""
from __future__ import annotations

import datetime as _dt
import logging
import math
import re
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import CompletenessError, ConfigError, DimensionError, ParseError

log = logging.getLogger(__name__)

HOURS = 24
HOUR_COLUMNS = [f"h{h:02d}" for h in range(HOURS)]
CSV_HEADER = ["household_id", "date", *HOUR_COLUMNS]


@dataclass(frozen=True)
class ReadingDay:
    household_id: str
    date: _dt.date
    kwh: tuple

    def __post_init__(self):
        values = tuple(float(v) for v in self.kwh)
        if len(values) != HOURS:
            raise CompletenessError(
                f"{self.household_id} {self.date}: expected {HOURS} hourly values, got {len(values)}",
                self.household_id,
            )
        if not all(math.isfinite(v) and v >= 0 for v in values):
            raise ParseError(f"{self.household_id} {self.date}: readings must be finite and >= 0")
        object.__setattr__(self, "kwh", values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.kwh, dtype=float)


@dataclass(frozen=True)
class ShapeVector:
    values: np.ndarray
    zero_day: bool = False


class Dataset:
    """Hourly readings for a fixed set of households over a shared set of dates.

    ``kwh[i, d, h]`` is the energy (kWh) used by household ``household_ids[i]`` during
    hour ``h`` of ``dates[d]``. The arrays are made read-only on construction (the
    caller's array is not copied).
    """

    def __init__(self, household_ids: Sequence[str], dates, kwh: np.ndarray):
        ids = tuple(str(h) for h in household_ids)
        dates = np.asarray(dates, dtype="datetime64[D]")
        kwh = np.asarray(kwh, dtype=float)
        if kwh.ndim != 3 or kwh.shape[2] != HOURS:
            raise DimensionError(f"kwh must have shape (households, days, 24), got {kwh.shape}")
        if kwh.shape[0] != len(ids) or kwh.shape[1] != len(dates):
            raise DimensionError(
                f"kwh shape {kwh.shape} does not match {len(ids)} households x {len(dates)} dates"
            )
        if len(set(ids)) != len(ids):
            raise ParseError("household ids must be unique")
        if len(dates) > 1 and np.any(np.diff(dates).astype(int) <= 0):
            raise ParseError("dates must be strictly increasing")
        if kwh.size and not (np.isfinite(kwh).all() and (kwh >= 0).all()):
            raise ParseError("readings must be finite and >= 0")
        kwh.flags.writeable = False
        dates.flags.writeable = False
        self.household_ids = ids
        self.dates = dates
        self.kwh = kwh

    @property
    def n_households(self) -> int:
        return len(self.household_ids)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def coverage(self):
        if not self.n_days:
            return None
        return self.dates[0].astype(object), self.dates[-1].astype(object)

    @property
    def is_contiguous(self) -> bool:
        return self.n_days < 2 or bool(np.all(np.diff(self.dates).astype(int) == 1))

    def days(self, household_id: str) -> list[ReadingDay]:
        i = self.household_ids.index(household_id)
        return [
            ReadingDay(household_id, d.astype(object), tuple(row))
            for d, row in zip(self.dates, self.kwh[i])
        ]

    def select_days(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.household_ids, self.dates[mask], self.kwh[:, mask, :])

    def select_households(self, index) -> "Dataset":
        index = np.asarray(index, dtype=int)
        return Dataset([self.household_ids[i] for i in index], self.dates, self.kwh[index])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.household_ids == other.household_ids
            and np.array_equal(self.dates, other.dates)
            and np.array_equal(self.kwh, other.kwh)
        )

    def __repr__(self):
        cov = self.coverage
        span = f"{cov[0]}..{cov[1]}" if cov else "empty"
        return f"Dataset({self.n_households} households, {self.n_days} days, {span})"


# --- normalization -----------------------------------------------------------


def normalize_day(day: ReadingDay, mode: str = "sum") -> ShapeVector:
    """Turn one day's readings into a load shape.

    ``mode="sum"`` divides by the daily total; an all-zero day becomes the uniform
    shape with ``zero_day`` set. ``mode="none"`` returns a raw copy.
    """
    shapes, zero = normalize_days(day.as_array()[None, :], mode)
    return ShapeVector(shapes[0], bool(zero[0]))


def normalize_days(kwh: np.ndarray, mode: str = "sum"):
    """Vectorized :func:`normalize_day` over an array whose last axis is 24 hours.

    Returns ``(shapes, zero_flags)``.
    """
    kwh = np.asarray(kwh, dtype=float)
    if kwh.shape[-1] != HOURS:
        raise DimensionError(f"last axis must have {HOURS} hours, got {kwh.shape[-1]}")
    totals = kwh.sum(axis=-1)
    zero = totals <= 0
    if mode == "none":
        return kwh.copy(), zero
    if mode != "sum":
        raise ConfigError(f"unknown normalization mode {mode!r}")
    with np.errstate(invalid="ignore", divide="ignore"):
        shapes = kwh / totals[..., None]
    shapes[zero] = 1.0 / HOURS
    return shapes, zero


# --- seasons -----------------------------------------------------------------


@dataclass(frozen=True)
class SeasonWindow:
    season: str
    months: frozenset


SEASONS = (
    SeasonWindow("autumn", frozenset({9, 10, 11})),
    SeasonWindow("winter", frozenset({12, 1, 2})),
    SeasonWindow("spring", frozenset({3, 4, 5})),
    SeasonWindow("summer", frozenset({6, 7, 8})),
)
SEASON_NAMES = tuple(w.season for w in SEASONS)
_MONTH_TO_SEASON = np.array([-1] + [
    next(i for i, w in enumerate(SEASONS) if m in w.months) for m in range(1, 13)
])


def season_of(date) -> str:
    month = date.month if hasattr(date, "month") else _month(np.asarray([date]))[0]
    return SEASONS[_MONTH_TO_SEASON[month]].season


def _month(dates: np.ndarray) -> np.ndarray:
    d = np.asarray(dates, dtype="datetime64[D]")
    return (d.astype("datetime64[M]").astype(int) % 12) + 1


def season_index(dates) -> np.ndarray:
    """Index into :data:`SEASONS` for every date."""
    return _MONTH_TO_SEASON[_month(dates)]


def partition_seasons(data: Dataset) -> dict[str, Dataset]:
    """Split a dataset into the four meteorological seasons (keys in ``SEASON_NAMES`` order)."""
    idx = season_index(data.dates)
    parts = {}
    for i, name in enumerate(SEASON_NAMES):
        parts[name] = data.select_days(idx == i)
        if parts[name].n_days == 0:
            log.warning("season %s has no days", name)
    return parts


# --- CSV ---------------------------------------------------------------------


def write_readings(data: Dataset, path) -> None:
    """Write a dataset in the wide-daily CSV layout (``household_id,date,h00..h23``)."""
    m, d = data.n_households, data.n_days
    frame = pd.DataFrame(data.kwh.reshape(m * d, HOURS), columns=HOUR_COLUMNS)
    frame.insert(0, "date", np.tile(np.datetime_as_string(data.dates, unit="D"), m))
    frame.insert(0, "household_id", np.repeat(np.array(data.household_ids, dtype=object), d))
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n", float_format=lambda v: repr(float(v)))


def load_readings(path, format: str = "wide-daily-csv") -> Dataset:
    """Read a wide-daily CSV into a validated, gap-free :class:`Dataset`.

    Raises ParseError (with the file line number) for malformed rows and
    CompletenessError for missing hours or date gaps.
    """
    if format != "wide-daily-csv":
        raise ConfigError(f"unsupported format {format!r}")
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").split(",")
    if [h.strip() for h in header] != CSV_HEADER:
        raise ParseError("header must be household_id,date,h00,...,h23", line=1)

    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8"
        )
    except pd.errors.ParserError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(str(exc), line=int(m.group(1)) if m else None) from exc
    if frame.empty:
        raise ParseError("file contains no readings", line=2)
    lines = np.arange(len(frame)) + 2

    raw = frame[HOUR_COLUMNS].to_numpy()
    missing = raw == ""
    if missing.any():
        r = int(np.argmax(missing.any(axis=1)))
        raise CompletenessError(
            f"line {lines[r]}: household {frame['household_id'].iat[r]} "
            f"has {int((~missing[r]).sum())} of {HOURS} hours",
            frame["household_id"].iat[r],
        )
    values = np.empty(raw.shape)
    for c, col in enumerate(HOUR_COLUMNS):
        try:  # correctly rounded parse; the coercing parser only locates bad entries
            parsed = frame[col].to_numpy().astype(float)
        except ValueError:
            parsed = pd.to_numeric(frame[col], errors="coerce").to_numpy(dtype=float)
        bad = ~np.isfinite(parsed) | (parsed < 0)
        if bad.any():
            r = int(np.argmax(bad))
            raise ParseError(f"{col}={frame[col].iat[r]!r} is not a finite non-negative number", lines[r])
        values[:, c] = parsed

    ids = frame["household_id"].to_numpy()
    if np.any(ids == ""):
        raise ParseError("empty household_id", int(lines[np.argmax(ids == "")]))
    dates = pd.to_datetime(frame["date"], format="%Y-%m-%d", errors="coerce")
    if dates.isna().any():
        r = int(np.argmax(dates.isna().to_numpy()))
        raise ParseError(f"bad date {frame['date'].iat[r]!r}", lines[r])
    dates = dates.to_numpy().astype("datetime64[D]")

    order_ids, first = np.unique(ids, return_index=True)
    order_ids = order_ids[np.argsort(first)]
    code = pd.Categorical(ids, categories=order_ids).codes
    perm = np.lexsort((dates, code))
    code, dates_sorted, values, lines = code[perm], dates[perm], values[perm], lines[perm]

    counts = np.bincount(code, minlength=len(order_ids))
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    ref = dates_sorted[starts[0]: starts[0] + counts[0]]
    for h, (s, n) in enumerate(zip(starts, counts)):
        own = dates_sorted[s: s + n]
        dup = np.nonzero(np.diff(own).astype(int) == 0)[0]
        if dup.size:
            raise ParseError(f"duplicate date {own[dup[0]]} for household {order_ids[h]}", lines[s + dup[0] + 1])
        if n > 1 and np.any(np.diff(own).astype(int) != 1):
            gap = own[np.argmax(np.diff(own).astype(int) != 1)]
            raise CompletenessError(f"household {order_ids[h]} has a date gap after {gap}", order_ids[h])
        if n != len(ref) or not np.array_equal(own, ref):
            raise CompletenessError(
                f"household {order_ids[h]} covers {own[0]}..{own[-1]}, expected {ref[0]}..{ref[-1]}",
                order_ids[h],
            )
    kwh = values.reshape(len(order_ids), len(ref), HOURS)
    return Dataset(list(order_ids), ref, kwh)


def write_npz(path, arrays: dict, compress: bool = True) -> None:
    """``.npz`` archive with fixed zip timestamps, so equal arrays give equal bytes."""
    mode = zipfile.ZIP_DEFLATED if compress else zipfile.ZIP_STORED
    with zipfile.ZipFile(path, "w", compression=mode, allowZip64=True) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = mode
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asanyarray(arr), allow_pickle=False)


def save_dataset(data: Dataset, path, compress: bool = True) -> None:
    """Binary (``.npz``) or CSV persistence, chosen by the file suffix."""
    path = Path(path)
    if path.suffix == ".csv":
        write_readings(data, path)
        return
    write_npz(path, {"household_ids": np.array(data.household_ids), "dates": data.dates.astype("int64"),
                     "kwh": data.kwh}, compress)


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.suffix == ".csv":
        return load_readings(path)
    with np.load(path, allow_pickle=False) as z:
        return Dataset(list(z["household_ids"]), z["dates"].astype("datetime64[D]"), z["kwh"])


# --- synthetic data ----------------------------------------------------------

# (peak hour, width, height) bumps over a flat base for the built-in archetype library.
_ARCHETYPE_BUMPS = [
    [(19, 1.8, 2.5)],                 # evening
    [(7, 1.3, 2.5)],                  # morning
    [(23, 1.8, 2.5)],                 # late night
    [(15, 2.2, 2.0)],                 # afternoon
    [],                               # flat
    [(7, 1.2, 1.5), (19, 1.5, 1.5)],  # morning + evening
    [(2, 2.0, 2.0)],                  # small hours
    [(12, 1.5, 2.0)],                 # midday
]


def make_archetypes(n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Return ``n`` distinct unit-sum daily shapes.

    The first eight come from a fixed library; further ones are random bumps drawn
    from ``rng``.
    """
    hours = np.arange(HOURS)
    out = []
    for i in range(n):
        if i < len(_ARCHETYPE_BUMPS):
            bumps = _ARCHETYPE_BUMPS[i]
        else:
            rng = rng or np.random.default_rng(i)
            bumps = [(rng.uniform(0, 24), rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0))
                     for _ in range(rng.integers(1, 3))]
        shape = np.full(HOURS, 0.3)
        for peak, width, height in bumps:
            dist = np.abs(hours - peak)
            dist = np.minimum(dist, HOURS - dist)
            shape += height * np.exp(-0.5 * (dist / width) ** 2)
        out.append(shape / shape.sum())
    return np.array(out)


@dataclass
class SynthConfig:
    """Parameters of the synthetic generator.

    Households belong to one of ``n_lifestyles`` attribute mixtures; when
    ``n_lifestyles`` is 0 every household draws its own mixture from Dir(alpha).
    ``switch_fraction`` of the households take a different lifestyle in exactly one
    randomly chosen season.
    """

    n_households: int = 100
    n_days: int = 365
    start_date: str = "2010-09-01"
    n_archetypes: int = 8
    n_attributes: int = 4
    n_lifestyles: int = 4
    alpha: float = 1.0
    noise_sd: float = 0.005
    magnitude_range: tuple = (5.0, 40.0)
    psi: list | None = None
    lifestyle_mixtures: list | None = None
    household_concentration: float | None = None
    switch_fraction: float = 0.0
    archetypes: list | None = None

    def validate(self):
        if self.n_households < 1 or self.n_days < 1:
            raise ConfigError("n_households and n_days must be >= 1")
        if self.n_archetypes < 1:
            raise ConfigError("n_archetypes must be >= 1")
        if self.n_attributes < 1:
            raise ConfigError("n_attributes must be >= 1")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        lo, hi = self.magnitude_range
        if not 0 < lo <= hi:
            raise ConfigError("magnitude_range must satisfy 0 < low <= high")
        if not 0 <= self.switch_fraction <= 1:
            raise ConfigError("switch_fraction must be in [0, 1]")
        if self.switch_fraction > 0 and self.n_lifestyles < 2:
            raise ConfigError("seasonal switching needs at least two lifestyles")
        if self.psi is not None:
            _check_simplex(self.psi, (self.n_attributes, self.n_archetypes), "psi")
        if self.lifestyle_mixtures is not None:
            _check_simplex(self.lifestyle_mixtures, (self.n_lifestyles, self.n_attributes), "lifestyle_mixtures")
        if self.archetypes is not None:
            a = np.asarray(self.archetypes, dtype=float)
            if a.shape != (self.n_archetypes, HOURS) or (a < 0).any():
                raise ConfigError("archetypes must be a non-negative (n_archetypes, 24) array")


def _check_simplex(rows, shape, name):
    a = np.asarray(rows, dtype=float)
    if a.shape != shape:
        raise ConfigError(f"{name} must have shape {shape}, got {a.shape}")
    if (a < 0).any() or not np.allclose(a.sum(axis=1), 1.0, atol=1e-9):
        raise ConfigError(f"{name} rows must lie on the probability simplex")


@dataclass
class GroundTruth:
    archetypes: np.ndarray         # (n_archetypes, 24), unit-sum
    true_psi: np.ndarray           # (n_attributes, n_archetypes)
    true_theta: np.ndarray         # (households, n_attributes), day-weighted annual mixture
    seasonal_theta: np.ndarray     # (households, 4, n_attributes)
    true_lifestyle: np.ndarray     # (households, 4) per-season planted label, -1 without lifestyles
    annual_lifestyle: np.ndarray   # (households,)
    switchers: np.ndarray          # (households,) bool
    lifestyle_mixtures: np.ndarray | None = None
    day_attribute: np.ndarray = field(default=None, repr=False)  # (households, days)
    day_shape: np.ndarray = field(default=None, repr=False)      # (households, days)


def _default_psi(n_attributes, n_archetypes):
    # archetype a belongs to attribute a % K; uniform inside each block
    psi = np.zeros((n_attributes, n_archetypes))
    for a in range(n_archetypes):
        psi[a % n_attributes, a] = 1.0
    empty = psi.sum(axis=1) == 0
    psi[empty] = 1.0
    return psi / psi.sum(axis=1, keepdims=True)


def _sample_rows(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw: ``cum[..., k]`` cumulative probabilities, ``u`` uniforms."""
    idx = (u[..., None] >= cum).sum(axis=-1)
    return np.minimum(idx, cum.shape[-1] - 1)


def generate_synthetic(config: SynthConfig, seed: int, chunk: int = 500):
    """Sample a dataset from the attribute/shape generative process.

    Every day: draw an attribute from the household's (seasonal) mixture, draw an
    archetype from that attribute's shape distribution, add Gaussian noise truncated
    at zero, renormalize and scale by a log-uniform daily magnitude (kWh/day).
    Identical ``(config, seed)`` gives bit-identical output.
    """
    config.validate()
    root = np.random.SeedSequence(seed)
    param_seq, day_seq = root.spawn(2)
    rng = np.random.default_rng(param_seq)
    M, K, A = config.n_households, config.n_attributes, config.n_archetypes

    archetypes = (np.asarray(config.archetypes, dtype=float) if config.archetypes is not None
                  else make_archetypes(A, np.random.default_rng(param_seq.spawn(1)[0])))
    archetypes = archetypes / archetypes.sum(axis=1, keepdims=True)
    psi = np.asarray(config.psi, dtype=float) if config.psi is not None else _default_psi(K, A)

    n_seasons = len(SEASONS)
    mixtures = None
    if config.n_lifestyles > 0:
        L = config.n_lifestyles
        if config.lifestyle_mixtures is not None:
            mixtures = np.asarray(config.lifestyle_mixtures, dtype=float)
        else:
            mixtures = rng.dirichlet(np.full(K, config.alpha), size=L)
        base = rng.integers(0, L, size=M)
        labels = np.repeat(base[:, None], n_seasons, axis=1)
        switchers = np.zeros(M, dtype=bool)
        n_switch = int(round(config.switch_fraction * M))
        if n_switch:
            who = rng.permutation(M)[:n_switch]
            seasons = rng.integers(0, n_seasons, size=n_switch)
            other = (base[who] + rng.integers(1, L, size=n_switch)) % L
            labels[who, seasons] = other
            switchers[who] = True
        if config.household_concentration:
            seasonal = np.empty((M, n_seasons, K))
            for s in range(n_seasons):
                conc = np.maximum(config.household_concentration * mixtures[labels[:, s]], 1e-3)
                seasonal[:, s] = _dirichlet_rows(rng, conc)
        else:
            seasonal = mixtures[labels]
        annual_label = base
    else:
        theta = rng.dirichlet(np.full(K, config.alpha), size=M)
        seasonal = np.repeat(theta[:, None, :], n_seasons, axis=1)
        labels = np.full((M, n_seasons), -1)
        annual_label = np.full(M, -1)
        switchers = np.zeros(M, dtype=bool)

    dates = np.datetime64(config.start_date, "D") + np.arange(config.n_days)
    sidx = season_index(dates)
    day_counts = np.bincount(sidx, minlength=n_seasons)
    true_theta = np.einsum("s,msk->mk", day_counts / day_counts.sum(), seasonal)
    true_theta /= true_theta.sum(axis=1, keepdims=True)

    cum_theta = np.cumsum(seasonal, axis=2)
    cum_psi = np.cumsum(psi, axis=1)
    log_lo, log_hi = np.log(config.magnitude_range[0]), np.log(config.magnitude_range[1])

    kwh = np.empty((M, config.n_days, HOURS))
    day_attr = np.empty((M, config.n_days), dtype=np.int64)
    day_shape = np.empty((M, config.n_days), dtype=np.int64)
    chunk_seqs = day_seq.spawn((M + chunk - 1) // chunk)
    for c, start in enumerate(range(0, M, chunk)):
        stop = min(start + chunk, M)
        crng = np.random.default_rng(chunk_seqs[c])
        n = stop - start
        z = _sample_rows(cum_theta[start:stop][:, sidx, :], crng.random((n, config.n_days)))
        a = _sample_rows(cum_psi[z], crng.random((n, config.n_days)))
        days = archetypes[a]
        if config.noise_sd > 0:
            days = np.maximum(days + crng.normal(0.0, config.noise_sd, days.shape), 0.0)
            totals = days.sum(axis=2, keepdims=True)
            days = np.divide(days, totals, out=np.zeros_like(days), where=totals > 0)
        mag = np.exp(crng.uniform(log_lo, log_hi, (n, config.n_days)))
        kwh[start:stop] = days * mag[..., None]
        day_attr[start:stop] = z
        day_shape[start:stop] = a

    ids = [f"H{i:05d}" for i in range(M)]
    truth = GroundTruth(
        archetypes=archetypes, true_psi=psi, true_theta=true_theta, seasonal_theta=seasonal,
        true_lifestyle=labels, annual_lifestyle=annual_label, switchers=switchers,
        lifestyle_mixtures=mixtures, day_attribute=day_attr, day_shape=day_shape,
    )
    return Dataset(ids, dates, kwh), truth


def _dirichlet_rows(rng, conc):
    g = rng.standard_gamma(conc)
    return g / g.sum(axis=1, keepdims=True)
