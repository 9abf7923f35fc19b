import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import calinski_harabasz_score, davies_bouldin_score

from energy_lifestyles.clustering import (
    CountMatrix, DictConfig, ShapeDictionary, barycenter, bin_partition, build_dictionary, chi_score,
    clustering_inertia, dbi_score, dbscan_fit, encode_counts, kcenter_fit, ward_fit, ward_merge_cost,
)
from energy_lifestyles.data import Dataset, SynthConfig, generate_synthetic
from energy_lifestyles.errors import ConfigError, DomainError, ParseError


def _as_sets(labels):
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), set()).add(i)
    return sorted(map(frozenset, groups.values()), key=min)


# --- kcenter ---------------------------------------------------------------------


def test_kcenter_k1_mean_is_columnwise_mean():
    rng = np.random.default_rng(0)
    X = rng.random((30, 5))
    fit = kcenter_fit(X, 1)
    assert np.allclose(fit.centers[0], X.mean(axis=0), atol=1e-12)


def test_kcenter_k1_median():
    fit = kcenter_fit(np.array([0.0, 0.0, 10.0]), 1, center_rule="median")
    assert fit.centers[0, 0] == 0.0


def test_kcenter_separated_blobs():
    X = np.array([0.0, 0.1, 0.2, 10.0, 10.1, 10.2])
    fit = kcenter_fit(X, 2, seed=3)
    assert sorted(fit.centers[:, 0].round(12)) == [0.1, 10.1]
    assert fit.inertia == pytest.approx(0.04, abs=1e-12)
    assert _as_sets(fit.labels) == [frozenset({0, 1, 2}), frozenset({3, 4, 5})]


def test_kcenter_rejects_too_many_centers():
    with pytest.raises(ConfigError):
        kcenter_fit(np.array([[1.0], [1.0], [2.0]]), 3)
    with pytest.raises(ConfigError):
        kcenter_fit(np.ones((3, 2)), 1, center_rule="mode")


@pytest.mark.parametrize("seed", range(5))
def test_kcenter_inertia_monotone_and_reproducible(seed):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(c, 0.5, (40, 3)) for c in (0, 3, 6, 9)])
    fit = kcenter_fit(X, 4, seed=seed)
    assert all(b <= a + 1e-9 for a, b in zip(fit.history, fit.history[1:]))
    again = kcenter_fit(X, 4, seed=seed)
    assert np.array_equal(fit.centers, again.centers) and np.array_equal(fit.labels, again.labels)
    assert clustering_inertia(X, fit.centers, fit.labels) == pytest.approx(fit.inertia, abs=1e-9)


@pytest.mark.parametrize("metric,rule", [("hybrid:0.5", "median"), ("dtw", "mean"), ("manhattan", "median")])
def test_kcenter_inertia_recomputes(metric, rule):
    rng = np.random.default_rng(4)
    X = rng.random((60, 24))
    fit = kcenter_fit(X, 5, metric=metric, center_rule=rule, seed=1)
    assert fit.sizes().min() > 0
    assert set(fit.labels) <= set(range(5))
    assert clustering_inertia(X, fit.centers, fit.labels, metric) == pytest.approx(fit.inertia, abs=1e-9)


def test_kcenter_repairs_empty_clusters():
    # a far-off initial center attracts nothing and must be re-seeded
    X = np.array([[0.0], [0.1], [5.0], [5.1], [9.0]])
    fit = kcenter_fit(X, 3, init=[[0.0], [5.0], [100.0]])
    assert fit.sizes().min() > 0


# --- ward, dbscan, barycenter ---------------------------------------------------------


def test_ward_merge_cost_singletons():
    a, b = np.array([1.0, 2.0]), np.array([4.0, 6.0])
    assert ward_merge_cost(a, b) == pytest.approx(0.5 * 25.0)


def test_ward_examples():
    fit = ward_fit(np.array([0.0, 1.0, 10.0, 11.0]), 2)
    assert _as_sets(fit.labels) == [frozenset({0, 1}), frozenset({2, 3})]
    assert np.allclose(sorted(fit.centers[:, 0]), [0.5, 10.5])
    single = ward_fit(np.array([0.0, 1.0, 10.0, 11.0]), 4)
    assert single.inertia == 0.0 and len(set(single.labels)) == 4
    with pytest.raises(ConfigError):
        ward_fit(np.array([0.0, 1.0]), 0)


def test_ward_matches_greedy_oracle():
    # independent oracle: repeatedly merge the pair with the smallest ward cost
    rng = np.random.default_rng(5)
    X = rng.random((9, 2))
    groups = [[i] for i in range(len(X))]
    while len(groups) > 3:
        a, b = min(itertools.combinations(range(len(groups)), 2),
                   key=lambda p: ward_merge_cost(X[groups[p[0]]], X[groups[p[1]]]))
        groups[a] = groups[a] + groups[b]
        del groups[b]
    fit = ward_fit(X, 3)
    assert _as_sets(fit.labels) == sorted(map(frozenset, groups), key=min)


def test_dbscan_examples():
    same = dbscan_fit(np.full((5, 2), 3.0), eps=0.1, n_min=3)
    assert (same.labels == 0).all()
    lone = dbscan_fit(np.array([0.0, 0.1, 0.2, 7.0]), eps=0.5, n_min=2)
    assert lone.labels[-1] == -1 and (lone.labels[:3] == 0).all()
    two = dbscan_fit(np.array([0.0, 0.1, 0.2, 5.0, 5.1]), eps=0.3, n_min=2)
    assert _as_sets(two.labels) == [frozenset({0, 1, 2}), frozenset({3, 4})]
    assert np.allclose(sorted(two.centers[:, 0]), [0.1, 5.05])


def test_barycenter_examples():
    p = np.array([[0.5, 2.0, 1.0]])
    assert np.array_equal(barycenter(p), p[0])
    pts = np.array([[1.0, 1.0], [3.0, 3.0]])
    assert np.allclose(barycenter(pts, "euclidean"), [2, 2])
    assert np.allclose(barycenter(pts, "dtw"), [2, 2])
    with pytest.raises(DomainError):
        barycenter(np.empty((0, 3)))


# --- validity indices ------------------------------------------------------------


def test_chi_dbi_examples():
    X = np.array([0.0, 2.0, 10.0, 12.0])
    labels = np.array([0, 0, 1, 1])
    assert chi_score(X, labels) == pytest.approx(50.0, abs=1e-12)
    assert dbi_score(X, labels) == pytest.approx(0.2, abs=1e-12)
    with pytest.raises(DomainError):
        chi_score(X, np.zeros(4))
    with pytest.raises(DomainError):
        dbi_score(X, np.zeros(4))
    tight = np.array([1.0, 1.0, 4.0, 4.0])
    assert chi_score(tight, labels) == float("inf")
    assert dbi_score(tight, labels) == 0.0


def test_dbi_coincident_centroids():
    X = np.array([0.0, 2.0, 1.0, 1.0])
    assert dbi_score(X, [0, 0, 1, 1]) == float("inf")


def _hand_indices(X, labels):
    """Textbook CHI and DBI with explicit loops over points and cluster pairs."""
    ids = sorted(set(labels))
    groups = [[x for x, lab in zip(X, labels) if lab == c] for c in ids]
    cents = [[sum(col) / len(g) for col in zip(*g)] for g in groups]
    overall = [sum(col) / len(X) for col in zip(*X)]
    n, k = len(X), len(ids)
    B = sum(len(g) * math.dist(c, overall) ** 2 for g, c in zip(groups, cents))
    W = sum(math.dist(x, c) ** 2 for g, c in zip(groups, cents) for x in g)
    scat = [sum(math.dist(x, c) for x in g) / len(g) for g, c in zip(groups, cents)]
    R = [max((scat[i] + scat[j]) / math.dist(cents[i], cents[j]) for j in range(k) if j != i) for i in range(k)]
    return (B / (k - 1)) / (W / (n - k)), sum(R) / k


small_instances = st.integers(4, 6).flatmap(lambda n: st.tuples(
    st.lists(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=2), min_size=n, max_size=n),
    st.lists(st.integers(0, 2), min_size=n, max_size=n)))


def _usable(X, labels):
    k = len(set(labels))
    if k < 2 or len(X) <= k:
        return False
    ids = sorted(set(labels))
    cent = np.array([X[labels == j].mean(axis=0) for j in ids])
    if ((X - cent[np.searchsorted(ids, labels)]) ** 2).sum() < 1e-9:
        return False
    gaps = np.sqrt(((cent[:, None] - cent[None]) ** 2).sum(axis=2))[np.triu_indices(k, 1)]
    return gaps.min() > 1e-6


@settings(max_examples=80, deadline=None)
@given(small_instances)
def test_validity_matches_hand_computation(case):
    X, labels = np.array(case[0]), np.array(case[1])
    if not _usable(X, labels):
        return
    chi, dbi = _hand_indices(X.tolist(), labels.tolist())
    assert chi_score(X, labels) == pytest.approx(chi, rel=1e-9, abs=1e-9)
    assert dbi_score(X, labels) == pytest.approx(dbi, rel=1e-9, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(small_instances)
def test_validity_matches_library(case):
    # the library computes euclidean distances through a dot-product expansion,
    # which costs about seven digits, hence the looser tolerance
    X, labels = np.array(case[0]), np.array(case[1])
    if not _usable(X, labels):
        return
    assert chi_score(X, labels) == pytest.approx(calinski_harabasz_score(X, labels), rel=1e-9)
    assert dbi_score(X, labels) == pytest.approx(davies_bouldin_score(X, labels), rel=1e-6, abs=1e-9)


# --- dictionary ------------------------------------------------------------------


def _archetype_data(seed=0, n_households=20, n_days=40):
    cfg = SynthConfig(n_households=n_households, n_days=n_days, n_archetypes=4, n_attributes=2,
                      n_lifestyles=0, noise_sd=0.0)
    return generate_synthetic(cfg, seed=seed)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_dictionary_zero_noise_recovery(seed):
    data, truth = _archetype_data()
    cfg = DictConfig(bin_size=5, stage1_centers=4, stage2_centers=4, seed=seed)
    dic = build_dictionary(data, cfg)
    assert len(dic) == 4
    D = np.sqrt(((dic.shapes[:, None, :] - truth.archetypes[None, :, :]) ** 2).sum(axis=2))
    assert sorted(D.argmin(axis=1)) == [0, 1, 2, 3]
    assert D.min(axis=1).max() < 1e-6


def test_dictionary_deterministic_and_reduces_size(caplog):
    # days drawn from four exact vectors: only four distinct shapes exist
    rng = np.random.default_rng(0)
    base = rng.random((4, 24))
    base /= base.sum(axis=1, keepdims=True)
    kwh = base[rng.integers(4, size=(8, 10))]
    data = Dataset([f"h{i}" for i in range(8)], np.arange("2011-01-01", "2011-01-11", dtype="datetime64[D]"), kwh)
    cfg = DictConfig(bin_size=4, stage1_centers=6, stage2_centers=6, seed=9)
    a = build_dictionary(data, cfg)
    assert len(a) == 4
    assert "reducing" in caplog.text
    b = build_dictionary(data, cfg)
    assert np.array_equal(a.shapes, b.shapes)
    assert len(np.unique(a.shapes, axis=0)) == len(a)


def test_dictionary_shapes_are_unit_sum():
    data, _ = generate_synthetic(SynthConfig(n_households=12, n_days=30), seed=3)
    dic = build_dictionary(data, DictConfig(bin_size=6, stage1_centers=10, stage2_centers=8, seed=0))
    assert np.allclose(dic.shapes.sum(axis=1), 1, atol=1e-12) and (dic.shapes >= 0).all()


def test_dictionary_config_validation():
    with pytest.raises(ConfigError):
        DictConfig(bin_size=0)
    with pytest.raises(ConfigError):
        DictConfig(stage1_centers=2, stage2_centers=10, bin_size=10).validate_for(20)
    study_scale = DictConfig()
    assert (study_scale.bin_size, study_scale.stage1_centers, study_scale.stage2_centers) == (100, 100, 200)
    assert str(study_scale.metric) == "hybrid:0.5" and study_scale.center_rule == "median"
    assert study_scale.n_bins(60000) == 600
    study_scale.validate_for(60000)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 500), st.integers(1, 120), st.integers(0, 10))
def test_bin_partition_covers_households(n, size, seed):
    bins = bin_partition(n, DictConfig(bin_size=size, seed=seed))
    allh = np.concatenate(bins)
    assert len(allh) == n and np.array_equal(np.sort(allh), np.arange(n))
    assert all(len(b) == size for b in bins[:-1]) and 0 < len(bins[-1]) <= size


def test_dictionary_save_load(tmp_path):
    data, _ = _archetype_data(n_households=6, n_days=10)
    dic = build_dictionary(data, DictConfig(bin_size=3, stage1_centers=4, stage2_centers=4))
    dic.save(tmp_path / "d.json")
    back = ShapeDictionary.load(tmp_path / "d.json")
    assert np.array_equal(back.shapes, dic.shapes) and back.metric == dic.metric
    assert back.fingerprint() == dic.fingerprint()
    text = (tmp_path / "d.json").read_text().replace('"version": 1', '"version": 9')
    (tmp_path / "bad.json").write_text(text)
    with pytest.raises(ParseError):
        ShapeDictionary.load(tmp_path / "bad.json")


def test_encode_single_shape_household():
    shapes = np.eye(24)[:10] * 0.9 + 0.1 / 24
    shapes /= shapes.sum(axis=1, keepdims=True)
    dic = ShapeDictionary(shapes, metric=DictConfig().metric)
    dates = np.arange("2010-09-01", "2011-09-01", dtype="datetime64[D]")
    kwh = np.broadcast_to(shapes[7] * 12.0, (1, 365, 24))
    counts = encode_counts(Dataset(["H"], dates, kwh), dic)
    expected = np.zeros(10, dtype=int)
    expected[7] = 365
    assert np.array_equal(counts.counts[0], expected)


def test_encode_conservation_and_ties(tmp_path):
    data, _ = generate_synthetic(SynthConfig(n_households=9, n_days=120), seed=6)
    dic = build_dictionary(data, DictConfig(bin_size=5, stage1_centers=12, stage2_centers=10))
    counts = encode_counts(data, dic)
    assert (counts.counts.sum(axis=1) == data.n_days).all()
    assert counts.counts.dtype.kind == "i" and (counts.counts >= 0).all()
    winter = encode_counts(data, dic, "winter")
    assert (winter.counts.sum(axis=1) == 29).all() and winter.period == "winter"
    # duplicated shape: every match lands on the lower index
    dup = ShapeDictionary(np.vstack([dic.shapes[:3], dic.shapes[1:2]]), dic.metric)
    c = encode_counts(data, dup)
    assert (c.counts[:, 3] == 0).all()
    counts.save(tmp_path / "c.csv")
    back = CountMatrix.load(tmp_path / "c.csv")
    assert np.array_equal(back.counts, counts.counts) and back.household_ids == counts.household_ids


def test_count_row_layout():
    # a count row is a plain integer vector over shapes, one entry per dictionary shape
    data, _ = _archetype_data(n_households=3, n_days=365)
    dic = build_dictionary(data, DictConfig(bin_size=3, stage1_centers=4, stage2_centers=4))
    row = encode_counts(data, dic).counts[0]
    assert row.shape == (4,) and row.sum() == 365
