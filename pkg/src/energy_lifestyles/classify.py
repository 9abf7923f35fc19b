"""Random-forest lifestyle and Changer classification, χ² screening and evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.tree import DecisionTreeClassifier

from .errors import ConfigError, DimensionError, DomainError

log = logging.getLogger(__name__)


# --- splitting ---------------------------------------------------------------


@dataclass
class Split:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def _split_sizes(n, fractions):
    """Split sizes with test and validation rounded and train taking the rest."""
    val = int(round(n * fractions[1]))
    test = int(round(n * fractions[2]))
    return np.array([n - val - test, val, test])


def _apportion(class_sizes, fractions, totals):
    """Per-class split counts, each within one sample of its proportional share.

    Floors of the proportional shares are topped up by largest remainder, at most one
    extra sample per (class, split) cell, so that split totals hit ``totals`` whenever
    the greedy pass can.
    """
    quota = np.outer(class_sizes, fractions)
    alloc = np.floor(quota).astype(np.int64)
    row_left = class_sizes - alloc.sum(axis=1)
    col_left = totals - alloc.sum(axis=0)
    bumped = np.zeros_like(alloc, dtype=bool)
    rem = quota - alloc
    for flat in np.lexsort((np.arange(rem.size), -rem.ravel())):
        c, s = divmod(int(flat), len(fractions))
        if row_left[c] > 0 and col_left[s] > 0:
            alloc[c, s] += 1
            bumped[c, s] = True
            row_left[c] -= 1
            col_left[s] -= 1
    for c in np.nonzero(row_left > 0)[0]:
        for s in range(len(fractions)):  # totals cannot all be met; train absorbs first
            if row_left[c] and not bumped[c, s]:
                alloc[c, s] += 1
                bumped[c, s] = True
                row_left[c] -= 1
    return alloc


def split_data(X, y, fractions=(0.7, 0.1, 0.2), seed: int = 0) -> Split:
    """Stratified, seeded train/validation/test index split.

    Classes with fewer than 3 samples cannot be stratified; they are pooled and split
    together with a warning.
    """
    y = np.asarray(y)
    n = len(y)
    if X is not None and len(X) != n:
        raise DimensionError("X and y differ in length")
    fractions = np.asarray(fractions, dtype=float)
    if len(fractions) != 3 or (fractions < 0).any() or abs(fractions.sum() - 1) > 1e-9:
        raise ConfigError("fractions must be three non-negative numbers summing to 1")
    classes, inverse, sizes = np.unique(y, return_inverse=True, return_counts=True)
    rare = sizes < 3
    if rare.any():
        log.warning("classes %s have < 3 samples; split without stratification", list(classes[rare]))
    groups = [np.nonzero(inverse == c)[0] for c in np.nonzero(~rare)[0]]
    if rare.any():
        groups.append(np.nonzero(rare[inverse])[0])
    rng = np.random.default_rng(seed)
    alloc = _apportion(np.array([len(g) for g in groups]), fractions, _split_sizes(n, fractions))
    parts = [[], [], []]
    for g, counts in zip(groups, alloc):
        g = rng.permutation(g)
        bounds = np.cumsum(counts)
        for s, chunk in enumerate(np.split(g, bounds[:-1])):
            parts[s].append(chunk)
    return Split(*(np.sort(np.concatenate(p)).astype(np.int64) if p else np.zeros(0, np.int64) for p in parts))


# --- forest ------------------------------------------------------------------


@dataclass
class ForestModel:
    trees: list
    classes: np.ndarray
    feature_names: list
    n_features: int

    @property
    def n_estimators(self) -> int:
        return len(self.trees)


def rf_fit(X, y, n_estimators: int = 25, seed: int = 0, feature_names=None) -> ForestModel:
    """Bagged Gini trees, ``floor(sqrt(p))`` candidate features per split, grown to purity."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise DimensionError("X must be (n, p) with one label per row")
    if not np.isfinite(X).all():
        raise DomainError("features contain missing or infinite values")
    if n_estimators < 1:
        raise ConfigError("n_estimators must be >= 1")
    classes, codes = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise DomainError("need at least two classes")
    n = len(y)
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_estimators):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, n, n)
        tree = DecisionTreeClassifier(criterion="gini", max_features="sqrt", min_samples_split=2,
                                      random_state=int(rng.integers(2**31 - 1)))
        tree.fit(X[boot], codes[boot])
        trees.append(tree)
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(X.shape[1])]
    return ForestModel(trees, classes, names, X.shape[1])


def rf_predict(model: ForestModel, X):
    """Plurality vote of the trees; returns labels and per-class vote fractions.

    Ties go to the lowest class index.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DimensionError(f"expected {model.n_features} features")
    votes = np.zeros((len(X), len(model.classes)))
    rows = np.arange(len(X))
    for tree in model.trees:
        pred = tree.predict(X).astype(np.int64)  # trees are fitted on class codes
        votes[rows, pred] += 1
    fractions = votes / model.n_estimators
    return model.classes[np.argmax(votes, axis=1)], fractions


# --- evaluation --------------------------------------------------------------


@dataclass
class EvalMetrics:
    classes: list
    confusion: np.ndarray            # rows: true class, columns: predicted class
    per_class: dict                  # class -> {precision, recall, f1, support}
    accuracy: float
    notes: list = field(default_factory=list)
    roc: np.ndarray | None = None    # (points, 2) FPR, TPR
    auc: float | None = None


def evaluate(y_true, y_pred, scores=None, labels=None) -> EvalMetrics:
    """Confusion matrix, per-class precision/recall/F1 and accuracy.

    ``labels`` fixes the class order; a listed class absent from both vectors is
    omitted with a note. For binary problems ``scores`` (probability of the larger
    label) adds the ROC curve and AUC.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) != len(y_pred):
        raise DimensionError("y_true and y_pred differ in length")
    present = set(np.unique(y_true).tolist()) | set(np.unique(y_pred).tolist())
    notes = []
    if labels is None:
        classes = sorted(present)
    else:
        classes = [c for c in labels if c in present]
        for c in labels:
            if c not in present:
                notes.append(f"class {c} absent from truth and predictions; omitted")
    index = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true.tolist(), y_pred.tolist()):
        confusion[index[t], index[p]] += 1
    per_class = {}
    for c, i in index.items():
        tp = confusion[i, i]
        predicted = confusion[:, i].sum()
        actual = confusion[i].sum()
        precision = tp / predicted if predicted else 0.0
        recall = tp / actual if actual else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        if not predicted:
            notes.append(f"class {c} never predicted; precision set to 0")
        per_class[c] = {"precision": float(precision), "recall": float(recall), "f1": float(f1), "support": int(actual)}
    accuracy = float(np.trace(confusion) / len(y_true)) if len(y_true) else 0.0
    out = EvalMetrics(classes, confusion, per_class, accuracy, notes)
    if scores is not None and len(classes) == 2:
        positive = (y_true == classes[1]).astype(np.int64)
        if 0 < positive.sum() < len(positive):
            out.roc, out.auc = roc_auc(scores, positive)
        else:
            out.notes.append("ROC undefined: evaluation set holds a single class")
    return out


def roc_curve(scores, y) -> np.ndarray:
    """ROC points from (0, 0) to (1, 1), one step per distinct score (descending)."""
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y).astype(np.int64)
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]  # end of each tie group
    tp = np.cumsum(t)[last]
    fp = (last + 1) - tp
    P, N = t.sum(), len(t) - t.sum()
    return np.column_stack([np.r_[0.0, fp / N], np.r_[0.0, tp / P]])


def trapezoid_auc(roc: np.ndarray) -> float:
    x, y = roc[:, 0], roc[:, 1]
    return float(((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2).sum())


def roc_auc(scores, y):
    """ROC points and AUC; the AUC is the chance a random positive outscores a random
    negative, with ties counting one half."""
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y)
    if len(scores) != len(y):
        raise DimensionError("scores and labels differ in length")
    if not np.isin(y, [0, 1]).all():
        raise DomainError("labels must be binary 0/1")
    P = int((y == 1).sum())
    N = len(y) - P
    if P == 0 or N == 0:
        raise DomainError("ROC needs both classes")
    ranks = rankdata(scores)  # average ranks give ties one half
    auc = (ranks[y == 1].sum() - P * (P + 1) / 2) / (P * N)
    return roc_curve(scores, y), float(auc)


# --- feature screening and importance ----------------------------------------


def chi2_scores(X, y) -> np.ndarray:
    """χ² statistic of observed against expected class-conditional feature mass."""
    X = np.asarray(X, dtype=float)
    if (X < 0).any():
        raise DomainError("χ² screening needs non-negative features")
    classes, codes = np.unique(np.asarray(y), return_inverse=True)
    onehot = np.zeros((len(codes), len(classes)))
    onehot[np.arange(len(codes)), codes] = 1.0
    observed = onehot.T @ X
    expected = np.outer(onehot.mean(axis=0), X.sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0)
    stats = terms.sum(axis=0)
    # a constant column is exactly proportional to class sizes; drop rounding residue
    stats[np.ptp(X, axis=0) == 0] = 0.0
    return stats


def chi2_select(X_scaled, y, top_k: int = 15) -> np.ndarray:
    """Indices of the ``top_k`` features by descending χ² (lower index on ties)."""
    stats = chi2_scores(X_scaled, y)
    if top_k < 1:
        raise ConfigError("top_k must be >= 1")
    order = np.lexsort((np.arange(len(stats)), -stats))
    return order[:min(top_k, len(stats))]


def permutation_importance(model: ForestModel, X, y, n_repeats: int = 5, seed: int = 0):
    """Mean and standard deviation of the accuracy drop when each column is shuffled."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    base = float((rf_predict(model, X)[0] == y).mean())
    p = X.shape[1]
    drops = np.zeros((p, n_repeats))
    children = np.random.SeedSequence(seed).spawn(p)
    for f in range(p):
        rng = np.random.default_rng(children[f])
        for r in range(n_repeats):
            Xp = X.copy()
            Xp[:, f] = rng.permutation(Xp[:, f])
            drops[f, r] = base - float((rf_predict(model, Xp)[0] == y).mean())
    return drops.mean(axis=1), drops.std(axis=1)


# --- reports -----------------------------------------------------------------


def metrics_frame(metrics: EvalMetrics, names=None) -> pd.DataFrame:
    rows = []
    for c, m in metrics.per_class.items():
        rows.append({"class": names.get(c, c) if names else c, **m})
    rows.append({"class": "accuracy", "precision": np.nan, "recall": np.nan, "f1": metrics.accuracy,
                 "support": int(metrics.confusion.sum())})
    if metrics.auc is not None:
        rows.append({"class": "auc", "precision": np.nan, "recall": np.nan, "f1": metrics.auc,
                     "support": int(metrics.confusion.sum())})
    return pd.DataFrame(rows, columns=["class", "precision", "recall", "f1", "support"])


def format_report(metrics: EvalMetrics, title: str = "", names=None) -> str:
    lines = [title] if title else []
    lines.append(f"{'class':<24}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>10}")
    for c, m in metrics.per_class.items():
        label = str(names.get(c, c) if names else c)
        lines.append(f"{label:<24}{m['precision']:>10.3f}{m['recall']:>10.3f}{m['f1']:>10.3f}{m['support']:>10d}")
    lines.append(f"{'accuracy':<24}{'':>20}{metrics.accuracy:>10.3f}{int(metrics.confusion.sum()):>10d}")
    if metrics.auc is not None:
        lines.append(f"{'auc':<24}{'':>20}{metrics.auc:>10.3f}")
    lines.extend(f"note: {n}" for n in metrics.notes)
    return "\n".join(lines)


def save_roc(path, roc: np.ndarray) -> None:
    pd.DataFrame(roc, columns=["fpr", "tpr"]).to_csv(path, index=False, lineterminator="\n")
