"""Two-stage load-shape dictionary and the per-household shape-count encoder."""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ..data import SEASON_NAMES, Dataset, normalize_days, partition_seasons
from ..errors import ConfigError, DimensionError, ParseError
from ..metrics import DistanceKind, nearest_center
from .kcenter import kcenter_fit

log = logging.getLogger(__name__)

DICT_FORMAT = "energy-lifestyles/shape-dictionary"
DICT_VERSION = 1


@dataclass
class DictConfig:
    bin_size: int = 100
    stage1_centers: int = 100
    stage2_centers: int = 200
    metric: DistanceKind = field(default_factory=lambda: DistanceKind("hybrid", 0.5))
    center_rule: str = "median"
    seed: int = 0
    max_iter: int = 30
    tol: float = 1e-6
    normalize: str = "sum"
    n_jobs: int = 1

    def __post_init__(self):
        self.metric = DistanceKind.parse(self.metric)
        for name in ("bin_size", "stage1_centers", "stage2_centers", "max_iter", "n_jobs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.center_rule not in ("mean", "median"):
            raise ConfigError("center_rule must be 'mean' or 'median'")
        if self.normalize not in ("sum", "none"):
            raise ConfigError("normalize must be 'sum' or 'none'")

    def n_bins(self, n_households: int) -> int:
        return -(-n_households // self.bin_size)

    def validate_for(self, n_households: int):
        if self.stage2_centers > self.n_bins(n_households) * self.stage1_centers:
            raise ConfigError(
                f"stage2_centers={self.stage2_centers} exceeds {self.n_bins(n_households)} bins "
                f"x {self.stage1_centers} stage-1 centers"
            )

    def to_dict(self):
        d = asdict(self)
        d["metric"] = self.metric.to_dict()
        d.pop("n_jobs")
        return d


@dataclass
class ShapeDictionary:
    shapes: np.ndarray
    metric: DistanceKind
    config: DictConfig | None = None
    stage_inertia: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.shapes)

    def fingerprint(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.shapes, dtype="<f8").tobytes())
        h.update(str(self.metric).encode())
        return h.hexdigest()

    def save(self, path) -> None:
        doc = {
            "format": DICT_FORMAT,
            "version": DICT_VERSION,
            "metric": self.metric.to_dict(),
            "config": self.config.to_dict() if self.config else None,
            "stage_inertia": self.stage_inertia,
            "fingerprint": self.fingerprint(),
            "columns": [f"h{h:02d}" for h in range(self.shapes.shape[1])],
            "shapes": self.shapes.tolist(),
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ShapeDictionary":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != DICT_FORMAT:
            raise ParseError(f"{path} is not a shape dictionary")
        if doc.get("version") != DICT_VERSION:
            raise ParseError(f"unsupported dictionary version {doc.get('version')}")
        cfg = doc.get("config")
        out = cls(
            shapes=np.array(doc["shapes"], dtype=float),
            metric=DistanceKind.parse(doc["metric"]),
            config=DictConfig(**cfg) if cfg else None,
            stage_inertia=doc.get("stage_inertia", {}),
        )
        if out.fingerprint() != doc["fingerprint"]:
            raise ParseError(f"{path}: fingerprint mismatch")
        return out


def _fit_reduced(points, k, config, seed, label):
    n_distinct = len(np.unique(points, axis=0))
    if n_distinct < k:
        log.warning("%s: only %d distinct days, reducing %d centers to %d", label, n_distinct, k, n_distinct)
        k = n_distinct
    return kcenter_fit(points, k, config.metric, config.center_rule, seed=seed,
                       max_iter=config.max_iter, tol=config.tol)


def _stage1(args):
    kwh, config, seed, label = args
    shapes, _ = normalize_days(kwh.reshape(-1, kwh.shape[-1]), config.normalize)
    fit = _fit_reduced(shapes, config.stage1_centers, config, seed, label)
    return fit.centers, fit.inertia


def bin_partition(n_households: int, config: DictConfig) -> list[np.ndarray]:
    """Seeded shuffle of households cut into bins of ``bin_size`` (last bin may be short)."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    perm = rng.permutation(n_households)
    return [np.sort(perm[s:s + config.bin_size]) for s in range(0, n_households, config.bin_size)]


def build_dictionary(data: Dataset, config: DictConfig | None = None) -> ShapeDictionary:
    """Cluster normalized household-days into a dictionary of representative shapes.

    Stage 1 clusters each bin of households' days into ``stage1_centers`` centers;
    stage 2 clusters the pooled stage-1 centers into ``stage2_centers`` shapes. Both
    stages use ``config.metric`` and ``config.center_rule``. Output depends only on
    the data and ``config.seed`` (also when bins run in parallel).
    """
    config = config or DictConfig()
    if data.n_households == 0 or data.n_days == 0:
        raise ConfigError("cannot build a dictionary from an empty dataset")
    config.validate_for(data.n_households)
    bins = bin_partition(data.n_households, config)
    seeds = np.random.SeedSequence([config.seed, 1]).generate_state(len(bins) + 1)
    jobs = [(data.kwh[b], config, int(seeds[i]), f"bin {i}") for i, b in enumerate(bins)]
    if config.n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(_stage1, jobs))
    else:
        results = [_stage1(job) for job in jobs]
    pooled = np.concatenate([centers for centers, _ in results])
    final = _fit_reduced(pooled, config.stage2_centers, config, int(seeds[-1]), "stage 2")
    shapes = final.centers
    if config.normalize == "sum":
        # element-wise medians of unit-sum shapes need not sum to one
        totals = shapes.sum(axis=1, keepdims=True)
        shapes = np.divide(shapes, totals, out=np.full_like(shapes, 1.0 / shapes.shape[1]), where=totals > 0)
    _, first = np.unique(shapes, axis=0, return_index=True)
    if len(first) < len(shapes):
        log.warning("dropping %d duplicate dictionary shapes", len(shapes) - len(first))
    shapes = shapes[np.sort(first)]
    return ShapeDictionary(
        shapes=shapes, metric=config.metric, config=config,
        stage_inertia={"stage1": [float(i) for _, i in results], "stage2": float(final.inertia)},
    )


@dataclass
class CountMatrix:
    """Per-household shape frequencies; ``counts[j, i]`` = days of household j matching shape i."""

    household_ids: tuple
    counts: np.ndarray
    period: str = ""

    @property
    def n_shapes(self) -> int:
        return self.counts.shape[1]

    def save(self, path) -> None:
        frame = pd.DataFrame(self.counts, columns=[f"s{i:03d}" for i in range(self.n_shapes)])
        frame.insert(0, "household_id", list(self.household_ids))
        frame.to_csv(path, index=False, lineterminator="\n")

    @classmethod
    def load(cls, path, period: str = "") -> "CountMatrix":
        frame = pd.read_csv(path, dtype={"household_id": str})
        return cls(tuple(frame["household_id"]), frame.drop(columns="household_id").to_numpy(dtype=np.int64), period)


def encode_days(kwh: np.ndarray, dictionary: ShapeDictionary, normalize: str | None = None) -> np.ndarray:
    """Nearest dictionary shape for every day of a ``(..., 24)`` array."""
    if normalize is None:
        normalize = dictionary.config.normalize if dictionary.config else "sum"
    if kwh.shape[-1] != dictionary.shapes.shape[1]:
        raise DimensionError("days and dictionary shapes differ in length")
    flat = kwh.reshape(-1, kwh.shape[-1])
    shapes, _ = normalize_days(flat, normalize)
    labels, _ = nearest_center(shapes, dictionary.shapes, dictionary.metric)
    return labels.reshape(kwh.shape[:-1])


def encode_counts(data: Dataset, dictionary: ShapeDictionary, period=None, chunk: int = 500) -> CountMatrix:
    """Count how often each household's days map to each dictionary shape.

    ``period`` is ``None`` (all days), a season name, or a ``(start, end)`` date pair
    (inclusive). Ties between shapes go to the lowest shape index.
    """
    if len(dictionary) == 0:
        raise ConfigError("dictionary is empty")
    data, label = _restrict(data, period)
    S = len(dictionary)
    counts = np.zeros((data.n_households, S), dtype=np.int64)
    for s in range(0, data.n_households, chunk):
        labels = encode_days(data.kwh[s:s + chunk], dictionary)
        rows = np.repeat(np.arange(labels.shape[0]), labels.shape[1])
        np.add.at(counts[s:s + chunk], (rows, labels.ravel()), 1)
    return CountMatrix(data.household_ids, counts, label)


def _restrict(data: Dataset, period):
    if period is None:
        cov = data.coverage
        return data, f"{cov[0]}..{cov[1]}" if cov else "empty"
    if isinstance(period, str):
        if period not in SEASON_NAMES:
            raise ConfigError(f"unknown season {period!r}")
        return partition_seasons(data)[period], period
    start, end = (np.datetime64(p, "D") for p in period)
    mask = (data.dates >= start) & (data.dates <= end)
    return data.select_days(mask), f"{start}..{end}"
