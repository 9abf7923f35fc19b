"""Pipeline configuration, stage runners and artifact bookkeeping."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.metrics import adjusted_rand_score

from .attributes import AttributeModel, attribute_shape, lda_fit, lda_transform, merge_attributes
from .classify import (chi2_scores, chi2_select, evaluate, format_report, metrics_frame,
                       permutation_importance, rf_fit, rf_predict, save_roc, split_data)
from .clustering.dictionary import CountMatrix, DictConfig, ShapeDictionary, build_dictionary, encode_days
from .data import (SEASON_NAMES, Dataset, SynthConfig, generate_synthetic, load_dataset, save_dataset,
                   season_index, write_npz)
from .errors import ConfigError, LifestyleError, StageError
from .features import FEATURE_NAMES, feature_matrix, load_features, minmax_scale, save_features
from .lifestyles import (LifestyleModel, assign_all, changer_split, elbow_curve, fit_lifestyles,
                         save_seasonal_labels, transitions)

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

OUTPUT_ENV = "ENERGY_LIFESTYLES_OUT"
STAGES = ("synth", "dict", "encode", "lda", "merge", "lifestyles", "seasons", "features", "classify", "report")
# files whose content may differ between identical runs (wall-clock timings)
TIMING_ARTIFACTS = ("report.txt", "timings.csv", "manifest.csv")


# --- configuration -----------------------------------------------------------


@dataclass
class LdaConfig:
    k_initial: int = 10
    merge_threshold: float = 0.1
    alpha: float | None = None
    beta: float | None = None
    max_iter: int = 200
    tol: float = 1e-4

    def validate(self):
        if self.k_initial < 1:
            raise ConfigError("lda.k_initial must be >= 1")
        if not 0 < self.merge_threshold < 2:
            raise ConfigError("lda.merge_threshold must lie in (0, 2)")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigError(f"lda.{name} must be > 0")


@dataclass
class LifestyleConfig:
    k: int = 6
    k_range: list = field(default_factory=lambda: list(range(2, 11)))
    names: list | None = None
    n_init: int = 10

    def validate(self):
        if self.k < 1:
            raise ConfigError("lifestyles.k must be >= 1")
        if list(self.k_range) != sorted(set(self.k_range)) or (self.k_range and self.k_range[0] < 1):
            raise ConfigError("lifestyles.k_range must be strictly ascending positive integers")
        if self.names is not None and len(self.names) != self.k:
            raise ConfigError("lifestyles.names needs one name per lifestyle")


@dataclass
class ClassifyConfig:
    n_estimators: int = 25
    split: tuple = (0.7, 0.1, 0.2)
    top_k: int = 15
    n_repeats: int = 5

    def validate(self):
        if self.n_estimators < 1 or self.top_k < 1 or self.n_repeats < 1:
            raise ConfigError("classify.n_estimators, top_k and n_repeats must be >= 1")
        s = np.asarray(self.split, dtype=float)
        if len(s) != 3 or (s < 0).any() or abs(s.sum() - 1) > 1e-9:
            raise ConfigError("classify.split must be three fractions summing to 1")


@dataclass
class PipelineConfig:
    """Everything a run needs. Exactly one of ``input`` and ``synthetic`` is set.

    All randomness derives from ``seed``: stage ``s`` uses ``stage_seed(seed, s)``.
    """

    seed: int = 0
    output_dir: str = "lifestyles-out"
    input: str | None = None
    synthetic: SynthConfig | None = None
    dictionary: DictConfig = field(default_factory=DictConfig)
    lda: LdaConfig = field(default_factory=LdaConfig)
    lifestyles: LifestyleConfig = field(default_factory=LifestyleConfig)
    seasons: bool = True
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)

    _SECTIONS = {"synthetic": SynthConfig, "dictionary": DictConfig, "lda": LdaConfig,
                 "lifestyles": LifestyleConfig, "classify": ClassifyConfig}

    def validate(self) -> "PipelineConfig":
        if (self.input is None) == (self.synthetic is None):
            raise ConfigError("set exactly one of 'input' and a [synthetic] section")
        if self.synthetic is not None:
            self.synthetic.validate()
            self.dictionary.validate_for(self.synthetic.n_households)
        self.lda.validate()
        self.lifestyles.validate()
        self.classify.validate()
        return self

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        kwargs = {}
        for key in ("seed", "output_dir", "input", "seasons"):
            if key in doc:
                kwargs[key] = doc.pop(key)
        for key, klass in cls._SECTIONS.items():
            if key in doc:
                section = doc.pop(key)
                if not isinstance(section, dict):
                    raise ConfigError(f"[{key}] must be a table")
                names = {f.name for f in dataclasses.fields(klass)}
                unknown = set(section) - names
                if unknown:
                    raise ConfigError(f"unknown keys in [{key}]: {', '.join(sorted(unknown))}")
                section = dict(section)
                if key == "synthetic" and "magnitude_range" in section:
                    section["magnitude_range"] = tuple(section["magnitude_range"])
                if key == "classify" and "split" in section:
                    section["split"] = tuple(section["split"])
                kwargs[key] = klass(**section)
        if doc:
            raise ConfigError(f"unknown configuration keys: {', '.join(sorted(doc))}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "output_dir": self.output_dir, "seasons": self.seasons}
        if self.input is not None:
            out["input"] = self.input
        if self.synthetic is not None:
            out["synthetic"] = dataclasses.asdict(self.synthetic)
        out["dictionary"] = self.dictionary.to_dict()
        for key in ("lda", "lifestyles", "classify"):
            out[key] = dataclasses.asdict(getattr(self, key))
        return out


def stage_seed(seed: int, stage: str) -> int:
    """Seed of one stage: hash of the top-level seed and the stage name."""
    return int(np.random.SeedSequence([seed, zlib.crc32(stage.encode())]).generate_state(1)[0])


# --- artifact workspace ------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 22), b""):
            h.update(block)
    return h.hexdigest()


class Workspace:
    """Output directory with per-artifact fingerprints of the inputs they came from."""

    def __init__(self, root, force: bool = False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.force = force
        self._records_path = self.root / "fingerprints.json"
        self.records = json.loads(self._records_path.read_text()) if self._records_path.exists() else {}
        self._hashes = {}
        self.cache = {}
        self.stage_of = {}

    def path(self, name: str) -> Path:
        return self.root / name

    def digest(self, name: str) -> str:
        p = self.path(name)
        st = p.stat()
        key = (name, st.st_mtime_ns, st.st_size)
        if key not in self._hashes:
            self._hashes[key] = _sha256(p)
        return self._hashes[key]

    def require(self, name: str) -> Path:
        """Path of an upstream artifact, refusing it when its own inputs have changed."""
        p = self.path(name)
        if not p.exists():
            raise ConfigError(f"missing artifact {name}; run the stage that produces it first")
        for dep, digest in self.records.get(name, {}).get("inputs", {}).items():
            current = self.digest(dep) if self.path(dep).exists() else None
            if current != digest:
                msg = f"{name} is stale: {dep} changed since it was produced"
                if not self.force:
                    raise ConfigError(msg + " (use --force to override)")
                log.warning(msg)
        return p

    def record(self, name: str, stage: str, inputs=()):
        self.records[name] = {"stage": stage, "sha256": self.digest(name),
                              "inputs": {dep: self.digest(dep) for dep in inputs}}
        self._records_path.write_text(json.dumps(self.records, indent=1, sort_keys=True) + "\n")

    def artifacts(self):
        return [(rec["stage"], name) for name, rec in self.records.items() if self.path(name).exists()]


# --- stage helpers -----------------------------------------------------------


def _save_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _readings(ws: Workspace) -> Dataset:
    if "readings" not in ws.cache:
        ws.cache["readings"] = load_dataset(ws.require("readings.npz"))
    return ws.cache["readings"]


def _dictionary(ws: Workspace) -> ShapeDictionary:
    if "dictionary" not in ws.cache:
        ws.cache["dictionary"] = ShapeDictionary.load(ws.require("dictionary.json"))
    return ws.cache["dictionary"]


def _lifestyle_model(ws: Workspace) -> LifestyleModel:
    doc = json.loads(ws.require("lifestyles.json").read_text())
    return LifestyleModel(np.array(doc["centers"]), doc["inertia"], doc["names"], np.array(doc["sizes"]))


def _household_table(ws: Workspace, name: str) -> pd.DataFrame:
    return pd.read_csv(ws.require(name), dtype={"household_id": str})


def seasonal_counts_from_labels(day_labels: np.ndarray, dates: np.ndarray, n_shapes: int) -> dict:
    """Per-season shape counts from precomputed per-day dictionary labels."""
    sidx = season_index(dates)
    out = {}
    M = day_labels.shape[0]
    for s, season in enumerate(SEASON_NAMES):
        cols = np.nonzero(sidx == s)[0]
        if not len(cols):
            log.warning("season %s has no days; skipped", season)
            continue
        labels = day_labels[:, cols]
        counts = np.zeros((M, n_shapes), dtype=np.int64)
        np.add.at(counts, (np.repeat(np.arange(M), len(cols)), labels.ravel()), 1)
        out[season] = counts
    return out


# --- stages ------------------------------------------------------------------


def stage_synth(cfg: PipelineConfig, ws: Workspace):
    if cfg.synthetic is not None:
        data, truth = generate_synthetic(cfg.synthetic, stage_seed(cfg.seed, "synth"))
        write_npz(ws.path("truth.npz"), {
            "annual_lifestyle": truth.annual_lifestyle, "seasonal_lifestyle": truth.true_lifestyle,
            "switchers": truth.switchers, "true_theta": truth.true_theta, "true_psi": truth.true_psi,
            "archetypes": truth.archetypes,
        })
        ws.record("truth.npz", "synth")
    else:
        data = load_dataset(cfg.input)
    save_dataset(data, ws.path("readings.npz"), compress=False)
    ws.record("readings.npz", "synth")
    ws.cache["readings"] = data


def stage_dict(cfg: PipelineConfig, ws: Workspace):
    data = _readings(ws)
    dcfg = dataclasses.replace(cfg.dictionary, seed=stage_seed(cfg.seed, "dict"))
    dictionary = build_dictionary(data, dcfg)
    dictionary.save(ws.path("dictionary.json"))
    ws.record("dictionary.json", "dict", ["readings.npz"])
    ws.cache["dictionary"] = dictionary


def stage_encode(cfg: PipelineConfig, ws: Workspace):
    data = _readings(ws)
    dictionary = _dictionary(ws)
    labels = np.empty((data.n_households, data.n_days), dtype=np.int32)
    for s in range(0, data.n_households, 500):
        labels[s:s + 500] = encode_days(data.kwh[s:s + 500], dictionary)
    write_npz(ws.path("day_labels.npz"), {"labels": labels, "dates": data.dates.astype("int64")})
    counts = np.zeros((data.n_households, len(dictionary)), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(data.n_households), data.n_days), labels.ravel()), 1)
    cov = data.coverage
    CountMatrix(data.household_ids, counts, f"{cov[0]}..{cov[1]}").save(ws.path("counts.csv"))
    for name in ("day_labels.npz", "counts.csv"):
        ws.record(name, "encode", ["readings.npz", "dictionary.json"])


def stage_lda(cfg: PipelineConfig, ws: Workspace):
    dictionary = _dictionary(ws)
    counts = CountMatrix.load(ws.require("counts.csv"))
    model = lda_fit(counts, cfg.lda.k_initial, alpha=cfg.lda.alpha, beta=cfg.lda.beta,
                    max_iter=cfg.lda.max_iter, tol=cfg.lda.tol, seed=stage_seed(cfg.seed, "lda"),
                    dictionary_fingerprint=dictionary.fingerprint())
    model.save(ws.path("attributes_initial.json"))
    ws.record("attributes_initial.json", "lda", ["counts.csv", "dictionary.json"])


def stage_merge(cfg: PipelineConfig, ws: Workspace):
    dictionary = _dictionary(ws)
    model = AttributeModel.load(ws.require("attributes_initial.json"))
    merged = merge_attributes(model, dictionary, cfg.lda.merge_threshold)
    merged.save(ws.path("attributes.json"))
    shapes = attribute_shape(merged, dictionary)
    frame = pd.DataFrame(shapes, columns=[f"h{h:02d}" for h in range(shapes.shape[1])])
    frame.insert(0, "attribute", np.arange(merged.K))
    frame.to_csv(ws.path("attribute_shapes.csv"), index=False, lineterminator="\n")
    theta = pd.DataFrame(merged.theta, columns=[f"a{k}" for k in range(merged.K)])
    theta.insert(0, "household_id", list(merged.household_ids))
    theta.to_csv(ws.path("theta.csv"), index=False, lineterminator="\n")
    for name in ("attributes.json", "attribute_shapes.csv", "theta.csv"):
        ws.record(name, "merge", ["attributes_initial.json", "dictionary.json"])


def stage_lifestyles(cfg: PipelineConfig, ws: Workspace):
    model = AttributeModel.load(ws.require("attributes.json"))
    seed = stage_seed(cfg.seed, "lifestyles")
    k = min(cfg.lifestyles.k, len(model.theta))
    styles = fit_lifestyles(model.theta, k, seed=seed, n_init=cfg.lifestyles.n_init, names=cfg.lifestyles.names)
    n_distinct = len(np.unique(model.theta, axis=0))
    k_range = [kk for kk in cfg.lifestyles.k_range if kk <= n_distinct]
    curve = elbow_curve(model.theta, k_range, seed=seed, n_init=cfg.lifestyles.n_init) if k_range else []
    _save_json(ws.path("lifestyles.json"), {
        "centers": styles.centers.tolist(), "sizes": styles.sizes.tolist(), "inertia": styles.inertia,
        "names": styles.names, "elbow": curve,
    })
    pd.DataFrame(curve, columns=["k", "inertia"]).to_csv(ws.path("elbow.csv"), index=False, lineterminator="\n")
    labels = assign_all(model.theta, styles)
    pd.DataFrame({"household_id": list(model.household_ids), "lifestyle": labels}).to_csv(
        ws.path("annual_lifestyles.csv"), index=False, lineterminator="\n")
    for name in ("lifestyles.json", "elbow.csv", "annual_lifestyles.csv"):
        ws.record(name, "lifestyles", ["attributes.json"])


def stage_seasons(cfg: PipelineConfig, ws: Workspace):
    model = AttributeModel.load(ws.require("attributes.json"))
    styles = _lifestyle_model(ws)
    with np.load(ws.require("day_labels.npz")) as z:
        day_labels, dates = z["labels"], z["dates"].astype("datetime64[D]")
    per_season = seasonal_counts_from_labels(day_labels, dates, model.n_shapes)
    labels = np.full((len(model.theta), len(SEASON_NAMES)), -1, dtype=np.int64)
    thetas = {}
    for s, season in enumerate(SEASON_NAMES):
        if season in per_season:
            thetas[season] = lda_transform(per_season[season], model)
            labels[:, s] = assign_all(thetas[season], styles)
    write_npz(ws.path("seasonal_theta.npz"), thetas)
    ids = list(model.household_ids)
    outputs = ["seasonal_theta.npz", "seasonal_labels.csv", "population.csv"]
    population = pd.DataFrame(
        [[season] + np.bincount(labels[:, s][labels[:, s] >= 0], minlength=styles.k).tolist()
         for s, season in enumerate(SEASON_NAMES)],
        columns=["season"] + [styles.label(i) for i in range(styles.k)])
    population.to_csv(ws.path("population.csv"), index=False, lineterminator="\n")
    if (labels >= 0).all():
        changers = changer_split(labels, ids)
        save_seasonal_labels(ws.path("seasonal_labels.csv"), ids, labels, changers)
        transitions(labels, styles.k, ids).save_flows(ws.path("flows.csv"))
        outputs.append("flows.csv")
    else:
        log.warning("not every season has data; transitions and Changer labels skipped")
        frame = pd.DataFrame(labels, columns=list(SEASON_NAMES))
        frame.insert(0, "household_id", ids)
        frame.to_csv(ws.path("seasonal_labels.csv"), index=False, lineterminator="\n")
    for name in outputs:
        ws.record(name, "seasons", ["attributes.json", "lifestyles.json", "day_labels.npz"])


def stage_features(cfg: PipelineConfig, ws: Workspace):
    data = _readings(ws)
    X, _ = feature_matrix(data)
    save_features(ws.path("features.csv"), data.household_ids, X)
    ws.record("features.csv", "features", ["readings.npz"])


def _classify_task(X, y, names, ccfg: ClassifyConfig, seed: int, labels=None, binary=False):
    """Split, χ² screen on the training part, fit, evaluate on the test part."""
    split = split_data(X, y, ccfg.split, seed)
    chosen = chi2_select(X[split.train], y[split.train], ccfg.top_k)
    model = rf_fit(X[split.train][:, chosen], y[split.train], ccfg.n_estimators, seed,
                   feature_names=[names[i] for i in chosen])
    pred, votes = rf_predict(model, X[split.test][:, chosen])
    scores = votes[:, -1] if binary else None
    metrics = evaluate(y[split.test], pred, scores, labels=labels)
    val_pred, _ = rf_predict(model, X[split.validation][:, chosen])
    val_acc = float((val_pred == y[split.validation]).mean()) if len(split.validation) else float("nan")
    imp, imp_sd = permutation_importance(model, X[split.test][:, chosen], y[split.test], ccfg.n_repeats, seed)
    importance = pd.DataFrame({"feature": model.feature_names, "importance": imp, "std": imp_sd,
                               "chi2": chi2_scores(X[split.train], y[split.train])[chosen]})
    return metrics, val_acc, importance.sort_values("importance", ascending=False, kind="stable")


def stage_classify(cfg: PipelineConfig, ws: Workspace):
    ids, F = load_features(ws.require("features.csv"))
    X = minmax_scale(F)
    annual = _household_table(ws, "annual_lifestyles.csv")
    if tuple(annual["household_id"]) != ids:
        raise ConfigError("features and lifestyle labels cover different households")
    seed = stage_seed(cfg.seed, "classify")
    y = annual["lifestyle"].to_numpy()
    inputs = ["features.csv", "annual_lifestyles.csv"]
    outputs = []
    lines = []
    if len(np.unique(y)) >= 2:
        metrics, val_acc, importance = _classify_task(X, y, FEATURE_NAMES, cfg.classify, seed,
                                                      labels=sorted(np.unique(y).tolist()))
        metrics_frame(metrics).to_csv(ws.path("lifestyle_metrics.csv"), index=False, lineterminator="\n")
        importance.to_csv(ws.path("lifestyle_importance.csv"), index=False, lineterminator="\n")
        outputs += ["lifestyle_metrics.csv", "lifestyle_importance.csv"]
        lines += [format_report(metrics, "lifestyle classification (test split)"),
                  f"validation accuracy {val_acc:.3f}", ""]
    else:
        lines.append("lifestyle classification skipped: a single lifestyle")

    seasonal_path = ws.path("seasonal_labels.csv")
    if cfg.seasons and seasonal_path.exists():
        inputs.append("seasonal_labels.csv")
        seasonal = _household_table(ws, "seasonal_labels.csv")
        if "changer_flag" in seasonal:
            changers = changer_split(seasonal[list(SEASON_NAMES)].to_numpy(), ids)
            rows = []
            for L, (idx, lab) in sorted(changers.per_lifestyle.items()):
                if len(idx) < 10 or np.bincount(lab, minlength=2).min() < 3:
                    lines.append(f"changer classification for lifestyle {L} skipped: too few samples per class")
                    continue
                metrics, val_acc, importance = _classify_task(X[idx], lab, FEATURE_NAMES, cfg.classify,
                                                              seed + L + 1, labels=[0, 1], binary=True)
                lines += [format_report(metrics, f"changer vs no-changer, lifestyle {L} (test split)"), ""]
                if metrics.roc is not None:
                    save_roc(ws.path(f"roc_lifestyle{L}.csv"), metrics.roc)
                    outputs.append(f"roc_lifestyle{L}.csv")
                importance.to_csv(ws.path(f"changer_importance_lifestyle{L}.csv"), index=False, lineterminator="\n")
                outputs.append(f"changer_importance_lifestyle{L}.csv")
                rows.append({"lifestyle": L, "n": len(idx), "changers": int(lab.sum()), "accuracy": metrics.accuracy,
                             "auc": metrics.auc, "validation_accuracy": val_acc})
            pd.DataFrame(rows, columns=["lifestyle", "n", "changers", "accuracy", "auc", "validation_accuracy"]).to_csv(
                ws.path("changer_metrics.csv"), index=False, lineterminator="\n")
            outputs.append("changer_metrics.csv")
    ws.path("classification.txt").write_text("\n".join(lines) + "\n")
    outputs.append("classification.txt")
    for name in outputs:
        ws.record(name, "classify", inputs)


def recovery_scores(ws: Workspace) -> dict | None:
    """Agreement with planted labels when the data are synthetic."""
    if not ws.path("truth.npz").exists():
        return None
    with np.load(ws.path("truth.npz")) as z:
        truth = {k: z[k] for k in z.files}
    if (truth["annual_lifestyle"] < 0).any() or not ws.path("annual_lifestyles.csv").exists():
        return None
    out = {}
    annual = _household_table(ws, "annual_lifestyles.csv")
    out["annual_ari"] = float(adjusted_rand_score(truth["annual_lifestyle"], annual["lifestyle"]))
    if ws.path("seasonal_labels.csv").exists():
        seasonal = _household_table(ws, "seasonal_labels.csv")
        if "changer_flag" in seasonal:
            flags = seasonal["changer_flag"].to_numpy().astype(bool)
            out["changer_accuracy"] = float((flags == truth["switchers"]).mean())
            rec = seasonal[list(SEASON_NAMES)].to_numpy().ravel()
            out["seasonal_ari"] = float(adjusted_rand_score(truth["seasonal_lifestyle"].ravel(), rec))
    return out


def _timings(ws: Workspace) -> dict:
    p = ws.path("timings.csv")
    if not p.exists():
        return {}
    frame = pd.read_csv(p)
    return dict(zip(frame["stage"], frame["seconds"]))


def _save_timing(ws: Workspace, stage: str, seconds: float):
    t = _timings(ws)
    t[stage] = seconds
    ordered = [(s, t[s]) for s in STAGES if s in t]
    pd.DataFrame(ordered, columns=["stage", "seconds"]).to_csv(ws.path("timings.csv"), index=False, lineterminator="\n")


def write_manifest(ws: Workspace):
    entries = [("config", "config.json")] + sorted(ws.artifacts(), key=lambda r: (STAGES.index(r[0]), r[1]))
    entries += [("report", n) for n in ("timings.csv", "report.txt")]
    rows = []
    for stage, name in entries:
        if not ws.path(name).exists():
            continue
        p = ws.path(name)
        rows.append({"stage": stage, "artifact": name, "path": str(p), "bytes": p.stat().st_size,
                     "sha256": ws.digest(name)})
    pd.DataFrame(rows, columns=["stage", "artifact", "path", "bytes", "sha256"]).to_csv(
        ws.path("manifest.csv"), index=False, lineterminator="\n")


def stage_report(cfg: PipelineConfig, ws: Workspace):
    lines = ["energy lifestyles report", "=" * 24, ""]
    data_path = ws.path("readings.npz")
    if data_path.exists():
        with np.load(data_path) as z:
            m, d = z["kwh"].shape[:2]
        lines.append(f"households {m}, days {d}")
    if ws.path("dictionary.json").exists():
        lines.append(f"dictionary shapes {len(_dictionary(ws))}")
    if ws.path("attributes.json").exists():
        merged = json.loads(ws.path("attributes.json").read_text())
        lines.append(f"attributes {cfg.lda.k_initial} fitted, {merged['K']} after merging "
                     f"at threshold {cfg.lda.merge_threshold}")
        lines.append("  groups: " + "; ".join(",".join(map(str, g)) for g in merged["merged_from"]))
    if ws.path("lifestyles.json").exists():
        doc = json.loads(ws.path("lifestyles.json").read_text())
        total = sum(doc["sizes"])
        lines += ["", "lifestyles (annual)"]
        for i, size in enumerate(doc["sizes"]):
            name = doc["names"][i] if doc["names"] else f"L{i}"
            lines.append(f"  {name:<12}{size:>8}{100 * size / total:>8.1f}%")
        if doc["elbow"]:
            lines.append("  elbow: " + ", ".join(f"k={k}: {v:.4g}" for k, v in doc["elbow"]))
    if ws.path("population.csv").exists():
        pop = pd.read_csv(ws.path("population.csv"))
        lines += ["", "population splits per season (households)", pop.to_string(index=False)]
    if ws.path("seasonal_labels.csv").exists():
        seasonal = _household_table(ws, "seasonal_labels.csv")
        if "changer_flag" in seasonal:
            frac = seasonal["changer_flag"].mean()
            lines += ["", f"changer {100 * frac:.1f}% of households, no-changer {100 * (1 - frac):.1f}%"]
    if ws.path("classification.txt").exists():
        lines += ["", ws.path("classification.txt").read_text().rstrip()]
    rec = recovery_scores(ws)
    if rec:
        lines += ["", "agreement with planted structure"]
        lines += [f"  {k} {v:.4f}" for k, v in rec.items()]
    timings = _timings(ws)
    if timings:
        lines += ["", "timings (s)"] + [f"  {s:<12}{v:>10.2f}" for s, v in timings.items()]
    ws.path("report.txt").write_text("\n".join(lines) + "\n")


RUNNERS = {
    "synth": stage_synth, "dict": stage_dict, "encode": stage_encode, "lda": stage_lda, "merge": stage_merge,
    "lifestyles": stage_lifestyles, "seasons": stage_seasons, "features": stage_features,
    "classify": stage_classify, "report": stage_report,
}


def resolve_output_dir(cfg: PipelineConfig, override: str | None = None) -> Path:
    return Path(override or os.environ.get(OUTPUT_ENV) or cfg.output_dir)


@dataclass
class Report:
    output_dir: Path
    timings: dict
    manifest: pd.DataFrame
    recovery: dict | None


def run_stage(cfg: PipelineConfig, stage: str, ws: Workspace) -> float:
    if stage not in RUNNERS:
        raise ConfigError(f"unknown stage {stage!r}")
    start = time.perf_counter()
    try:
        RUNNERS[stage](cfg, ws)
    except LifestyleError as exc:
        raise StageError(stage, str(exc)) from exc
    except (ValueError, KeyError, OSError, np.linalg.LinAlgError) as exc:
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
    elapsed = time.perf_counter() - start
    if stage != "report":
        _save_timing(ws, stage, elapsed)
    return elapsed


def run_pipeline(cfg: PipelineConfig, output_dir=None, force: bool = False, stages=STAGES) -> Report:
    """Run ``stages`` in order; on failure a partial manifest is written before re-raising."""
    cfg.validate()
    ws = Workspace(resolve_output_dir(cfg, output_dir), force=force)
    doc = cfg.to_dict()
    doc.pop("output_dir")  # a location, not a parameter; keeps reruns elsewhere identical
    _save_json(ws.path("config.json"), doc)
    try:
        for stage in stages:
            if stage == "seasons" and not cfg.seasons:
                continue
            log.info("stage %s", stage)
            run_stage(cfg, stage, ws)
    finally:
        write_manifest(ws)
    return Report(ws.root, _timings(ws), pd.read_csv(ws.path("manifest.csv")), recovery_scores(ws))
