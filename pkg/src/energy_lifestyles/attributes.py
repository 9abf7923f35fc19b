"""Energy attributes: LDA over household shape-count matrices.

Fitting is mean-field variational EM. Each household j gets a variational Dirichlet
``gamma[j]`` over attributes and each attribute k a variational Dirichlet ``lam[k]``
over dictionary shapes; the per-token assignment posterior is kept implicit
(``phi ∝ exp(E[log theta] + E[log psi])``). The E-step is warm-started from the
previous iteration so that every update is a coordinate ascent step and the evidence
lower bound never decreases.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.special import gammaln, psi as digamma

from .clustering.dictionary import CountMatrix, ShapeDictionary
from .errors import ConfigError, DimensionError, DomainError, ParseError
from .metrics import correlation_distance

log = logging.getLogger(__name__)

MODEL_FORMAT = "energy-lifestyles/attribute-model"
MODEL_VERSION = 1
_TINY = 1e-100


@dataclass
class AttributeModel:
    alpha: np.ndarray                 # (K,) Dirichlet prior on household mixtures
    beta: float                       # symmetric Dirichlet prior on attribute shape weights
    theta: np.ndarray                 # (M, K) posterior-mean household mixtures
    psi: np.ndarray                   # (K, S) posterior-mean shape distributions
    lam: np.ndarray                   # (K, S) variational Dirichlet parameters of psi
    household_ids: tuple = ()
    log_likelihood_trace: list = field(default_factory=list)
    dictionary_fingerprint: str | None = None
    merged_from: list | None = None   # original attribute ids behind each attribute

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1, len(self.alpha))
        self.psi = np.asarray(self.psi, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if (self.alpha <= 0).any() or self.beta <= 0:
            raise ConfigError("alpha and beta must be > 0")
        if self.psi.shape[0] != self.K or self.lam.shape != self.psi.shape:
            raise DimensionError("psi/lam must have one row per attribute")
        for name in ("theta", "psi"):
            a = getattr(self, name)
            if a.size and ((a < 0).any() or not np.allclose(a.sum(axis=1), 1.0, atol=1e-8)):
                raise DomainError(f"{name} rows must lie on the probability simplex")
        if self.merged_from is None:
            self.merged_from = [[k] for k in range(self.K)]

    @property
    def K(self) -> int:
        return len(self.alpha)

    @property
    def n_shapes(self) -> int:
        return self.psi.shape[1]

    def save(self, path) -> None:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "K": self.K,
            "alpha": self.alpha.tolist(),
            "beta": self.beta,
            "dictionary_fingerprint": self.dictionary_fingerprint,
            "merged_from": self.merged_from,
            "log_likelihood_trace": self.log_likelihood_trace,
            "psi": self.psi.tolist(),
            "lam": self.lam.tolist(),
            "household_ids": list(self.household_ids),
            "theta": self.theta.tolist(),
        }
        Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "AttributeModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ParseError(f"{path} is not a version-{MODEL_VERSION} attribute model")
        return cls(
            alpha=doc["alpha"], beta=doc["beta"], theta=np.array(doc["theta"], dtype=float).reshape(-1, doc["K"]),
            psi=doc["psi"], lam=doc["lam"], household_ids=tuple(doc["household_ids"]),
            log_likelihood_trace=doc["log_likelihood_trace"],
            dictionary_fingerprint=doc["dictionary_fingerprint"], merged_from=doc["merged_from"],
        )


@dataclass
class SampleTrace:
    z: list            # per document: attribute of every token
    s: list            # per document: shape index of every token
    theta: np.ndarray  # mixtures actually used
    psi: np.ndarray    # shape distributions actually used


def _dirichlet_expectation(a):
    return digamma(a) - digamma(a.sum(axis=1, keepdims=True))


def _e_step(X, alpha, exp_elog_beta, gamma, max_iter, tol):
    """Coordinate ascent on the household posteriors with the attributes fixed."""
    gamma = gamma.copy()
    for _ in range(max_iter):
        exp_elog_theta = np.exp(_dirichlet_expectation(gamma))
        phinorm = exp_elog_theta @ exp_elog_beta + _TINY
        new = alpha + exp_elog_theta * ((X / phinorm) @ exp_elog_beta.T)
        change = np.abs(new - gamma).mean(axis=1).max()
        gamma = new
        if change < tol:
            break
    return gamma


def _sufficient_stats(X, gamma, exp_elog_beta):
    exp_elog_theta = np.exp(_dirichlet_expectation(gamma))
    phinorm = exp_elog_theta @ exp_elog_beta + _TINY
    return (exp_elog_theta.T @ (X / phinorm)) * exp_elog_beta


def evidence_lower_bound(X, alpha, beta, gamma, lam) -> float:
    """ELBO with the token assignments at their optimum for the given ``gamma``/``lam``."""
    elog_theta = _dirichlet_expectation(gamma)
    elog_beta = _dirichlet_expectation(lam)
    # log sum_k exp(Elog theta_jk + Elog psi_ki), stabilised per document
    shift = elog_theta.max(axis=1, keepdims=True)
    phinorm = np.exp(elog_theta - shift) @ np.exp(elog_beta) + _TINY
    mask = X > 0
    score = float((X[mask] * (np.log(phinorm) + shift)[mask]).sum())
    M, K = gamma.shape
    score += float(((alpha - gamma) * elog_theta).sum())
    score += float(gammaln(gamma).sum() - gammaln(gamma.sum(axis=1)).sum())
    score += M * (gammaln(alpha.sum()) - gammaln(alpha).sum())
    V = lam.shape[1]
    score += float(((beta - lam) * elog_beta).sum())
    score += float(gammaln(lam).sum() - gammaln(lam.sum(axis=1)).sum())
    score += K * (gammaln(V * beta) - V * gammaln(beta))
    return score


def _as_counts(counts):
    if isinstance(counts, CountMatrix):
        return counts.counts.astype(float), counts.household_ids
    X = np.asarray(counts, dtype=float)
    return X, tuple(f"D{i:05d}" for i in range(len(X)))


def _init_lambda(X, K, rng):
    """Start each attribute near a distinct household's empirical shape distribution.

    Households are picked by distance-weighted sampling on their normalized counts, so
    the starting attributes are spread out; a little gamma noise breaks symmetry.
    """
    M, V = X.shape
    lam = rng.gamma(100.0, 1.0 / 100.0, (K, V))
    totals = X.sum(axis=1)
    rows = np.nonzero(totals > 0)[0]
    if not len(rows):
        return lam
    P = X[rows] / totals[rows, None]
    picks = [int(rng.integers(len(rows)))]
    d2 = ((P - P[picks[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        if d2.sum() <= 0:
            picks.append(int(rng.integers(len(rows))))
        else:
            picks.append(int(np.searchsorted(np.cumsum(d2), rng.random() * d2.sum(), side="right").clip(max=len(rows) - 1)))
        d2 = np.minimum(d2, ((P - P[picks[-1]]) ** 2).sum(axis=1))
    return lam + V * P[picks]


def lda_fit(counts, K: int, alpha: float | None = None, beta: float | None = None,
            max_iter: int = 200, tol: float = 1e-4, seed: int = 0,
            e_step_max_iter: int = 200, e_step_tol: float = 1e-6,
            dictionary_fingerprint: str | None = None) -> AttributeModel:
    """Fit K attributes to a shape-count matrix by variational EM.

    Defaults: ``alpha = 1/K`` and ``beta = 1/S``. Iteration stops when the relative
    ELBO improvement falls below ``tol`` or after ``max_iter`` EM rounds.
    """
    X, ids = _as_counts(counts)
    if K < 1:
        raise ConfigError("K must be >= 1")
    if X.ndim != 2 or X.size == 0:
        raise ConfigError("counts must be a non-empty matrix")
    if (X < 0).any():
        raise DomainError("counts must be non-negative")
    M, V = X.shape
    alpha = np.full(K, 1.0 / K if alpha is None else float(alpha))
    beta = 1.0 / V if beta is None else float(beta)
    if (alpha <= 0).any() or beta <= 0:
        raise ConfigError("alpha and beta must be > 0")
    empty = X.sum(axis=1) == 0
    if empty.any():
        log.warning("%d households have no counts; they get the prior-mean mixture", int(empty.sum()))

    rng = np.random.default_rng(seed)
    lam = _init_lambda(X, K, rng)
    gamma = np.tile(alpha, (M, 1)) + X.sum(axis=1, keepdims=True) / K
    trace = []
    for it in range(max_iter):
        exp_elog_beta = np.exp(_dirichlet_expectation(lam))
        gamma = _e_step(X, alpha, exp_elog_beta, gamma, e_step_max_iter, e_step_tol)
        lam = beta + _sufficient_stats(X, gamma, exp_elog_beta)
        trace.append(evidence_lower_bound(X, alpha, beta, gamma, lam))
        if it and (trace[-1] - trace[-2]) < tol * abs(trace[-2]):
            break
    # final E-step so the stored mixtures match the final attributes
    gamma = _e_step(X, alpha, np.exp(_dirichlet_expectation(lam)), gamma, e_step_max_iter, e_step_tol)
    trace.append(evidence_lower_bound(X, alpha, beta, gamma, lam))
    theta = gamma / gamma.sum(axis=1, keepdims=True)
    return AttributeModel(alpha=alpha, beta=beta, theta=theta, psi=lam / lam.sum(axis=1, keepdims=True),
                          lam=lam, household_ids=tuple(ids), log_likelihood_trace=trace,
                          dictionary_fingerprint=dictionary_fingerprint)


def lda_transform(counts, model: AttributeModel, max_iter: int = 500, tol: float = 1e-8) -> np.ndarray:
    """Attribute mixtures for new count rows with the model's attributes frozen.

    A row without counts gets the prior mean ``alpha / sum(alpha)``.
    """
    X, _ = _as_counts(counts)
    if X.ndim != 2 or X.shape[1] != model.n_shapes:
        raise DimensionError(f"counts have {X.shape[-1]} shapes, model expects {model.n_shapes}")
    gamma = np.tile(model.alpha, (len(X), 1)) + X.sum(axis=1, keepdims=True) / model.K
    gamma = _e_step(X, model.alpha, np.exp(_dirichlet_expectation(model.lam)), gamma, max_iter, tol)
    return gamma / gamma.sum(axis=1, keepdims=True)


def lda_sample(model: AttributeModel, n_docs: int, doc_len: int, seed: int = 0,
               use_model_theta: bool = False, draw_psi: bool = False):
    """Draw a synthetic corpus from the generative process.

    Shape distributions come from ``model.psi`` (or Dir(beta) with ``draw_psi``);
    household mixtures from Dir(alpha), or ``model.theta`` rows when
    ``use_model_theta`` is set. Each token picks an attribute from the mixture, then a
    shape from that attribute.
    """
    rng = np.random.default_rng(seed)
    K, V = model.K, model.n_shapes
    psi = rng.dirichlet(np.full(V, model.beta), size=K) if draw_psi else model.psi
    if use_model_theta:
        if n_docs != len(model.theta):
            raise ConfigError("use_model_theta needs n_docs equal to the model's household count")
        theta = model.theta
    else:
        theta = rng.dirichlet(model.alpha, size=n_docs)
    cum_theta = np.cumsum(theta, axis=1)
    cum_psi = np.cumsum(psi, axis=1)
    counts = np.zeros((n_docs, V), dtype=np.int64)
    zs, ss = [], []
    for j in range(n_docs):
        z = np.minimum(np.searchsorted(cum_theta[j], rng.random(doc_len), side="right"), K - 1)
        u = rng.random(doc_len)
        s = np.minimum((u[:, None] >= cum_psi[z]).sum(axis=1), V - 1)
        counts[j] = np.bincount(s, minlength=V)
        zs.append(z)
        ss.append(s)
    ids = tuple(f"D{j:05d}" for j in range(n_docs))
    return CountMatrix(ids, counts, "sampled"), SampleTrace(zs, ss, theta, psi)


def attribute_shape(model: AttributeModel, dictionary: ShapeDictionary) -> np.ndarray:
    """Composite 24-hour shape of each attribute: psi-weighted sum of dictionary shapes."""
    if len(dictionary) != model.n_shapes:
        raise DimensionError(f"dictionary has {len(dictionary)} shapes, model expects {model.n_shapes}")
    return model.psi @ dictionary.shapes


def composite_distances(shapes: np.ndarray) -> np.ndarray:
    """Pairwise correlation distance between composite shapes.

    A constant composite has no defined correlation; it is treated as uncorrelated
    (distance 1) with everything else.
    """
    K = len(shapes)
    D = np.zeros((K, K))
    flat = np.ptp(shapes, axis=1) == 0
    for a in range(K):
        for b in range(a + 1, K):
            d = 1.0 if flat[a] or flat[b] else correlation_distance(shapes[a], shapes[b])
            D[a, b] = D[b, a] = d
    return D


def merge_attributes(model: AttributeModel, dictionary: ShapeDictionary, threshold: float = 0.1) -> AttributeModel:
    """Merge attributes whose composite shapes have correlation distance below ``threshold``.

    Similar pairs form a graph; each connected component becomes one attribute whose
    shape distribution is the posterior-mass-weighted average of its members (the
    variational parameters are summed) and whose household weight is the sum of the
    members' weights. Merging repeats until no pair is below the threshold, so the
    operation is idempotent.
    """
    if not 0 < threshold < 2:
        raise ConfigError("threshold must lie in (0, 2)")
    current = model
    while current.K > 1:
        D = composite_distances(attribute_shape(current, dictionary))
        adjacency = (D < threshold) & ~np.eye(current.K, dtype=bool)
        if not adjacency.any():
            break
        n_comp, comp = connected_components(adjacency, directed=False)
        # number components by their lowest member
        first = [np.nonzero(comp == c)[0][0] for c in range(n_comp)]
        groups = [np.nonzero(comp == c)[0] for c in np.argsort(first)]
        lam = np.array([current.lam[g].sum(axis=0) for g in groups])
        theta = np.stack([current.theta[:, g].sum(axis=1) for g in groups], axis=1)
        alpha = np.array([current.alpha[g].sum() for g in groups])
        merged_from = [sorted(sum((current.merged_from[i] for i in g), [])) for g in groups]
        current = AttributeModel(
            alpha=alpha, beta=current.beta, theta=theta, psi=lam / lam.sum(axis=1, keepdims=True), lam=lam,
            household_ids=current.household_ids, log_likelihood_trace=list(current.log_likelihood_trace),
            dictionary_fingerprint=current.dictionary_fingerprint, merged_from=merged_from,
        )
    return current
