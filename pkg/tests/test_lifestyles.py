import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from energy_lifestyles.attributes import lda_fit
from energy_lifestyles.clustering import ShapeDictionary, encode_counts
from energy_lifestyles.data import SEASON_NAMES, Dataset
from energy_lifestyles.errors import ConfigError, DimensionError, DomainError
from energy_lifestyles.lifestyles import (
    LifestyleModel, assign, assign_all, changer_split, elbow_curve, fit_lifestyles, save_seasonal_labels,
    seasonal_labels, seasonal_thetas, transitions,
)
from energy_lifestyles.metrics import DistanceKind


def _corners(per=3):
    return np.repeat(np.eye(6), per, axis=0)


# --- fitting ---------------------------------------------------------------------


def test_corners_recovered():
    model = fit_lifestyles(_corners(), 6, seed=0)
    assert model.inertia == pytest.approx(0.0, abs=1e-12)
    assert sorted(map(tuple, model.centers)) == sorted(map(tuple, np.eye(6)))


def test_single_lifestyle_is_mean():
    theta = np.random.default_rng(0).dirichlet(np.ones(4), size=30)
    model = fit_lifestyles(theta, 1)
    assert np.allclose(model.centers[0], theta.mean(axis=0), atol=1e-12)
    with pytest.raises(ConfigError):
        fit_lifestyles(theta[:3], 4)
    with pytest.raises(DomainError):
        fit_lifestyles(theta * 2, 2)


def test_lifestyles_ordered_by_size():
    theta = np.vstack([np.tile([1.0, 0, 0], (5, 1)), np.tile([0, 1.0, 0], (12, 1)), np.tile([0, 0, 1.0], (8, 1))])
    model = fit_lifestyles(theta, 3, seed=2, names=["a", "b", "c"])
    assert model.sizes.tolist() == [12, 8, 5]
    assert np.allclose(model.centers[0], [0, 1, 0])
    assert model.label(0) == "a"
    assert LifestyleModel(np.eye(2), 0.0).label(1) == "L1"


def test_elbow_corners():
    curve = elbow_curve(_corners(), range(1, 7), seed=0)
    inertias = [v for _, v in curve]
    assert all(b <= a + 1e-12 for a, b in zip(inertias, inertias[1:]))
    assert inertias[4] > 0 and inertias[5] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConfigError):
        elbow_curve(_corners(), [3, 2])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_elbow_monotone_on_random_mixtures(seed):
    theta = np.random.default_rng(seed).dirichlet(np.full(5, 0.4), size=25)
    curve = elbow_curve(theta, range(1, 26, 3), seed=seed, n_init=2)
    inertias = [v for _, v in curve]
    assert all(b <= a + 1e-12 for a, b in zip(inertias, inertias[1:]))
    n_distinct = len(np.unique(theta, axis=0))
    assert elbow_curve(theta, [n_distinct], n_init=1)[0][1] == pytest.approx(0.0, abs=1e-12)


def test_assign_rules():
    centers = np.array([[1, 0, 0], [0.5, 0.5, 0], [0, 1, 0], [0, 0, 1], [0.5, 0, 0.5]])
    model = LifestyleModel(centers, 0.0)
    assert assign(centers[3], model) == 3
    # equidistant from centers 1 and 4
    assert assign([0.5, 0.25, 0.25], model) == 1
    # nearer center 2: squared gaps 0.09+0.0+0.01 vs 0.34 for center 1
    assert assign([0.0, 0.7, 0.3], model) == 2
    with pytest.raises(DimensionError):
        assign([1.0, 0.0], model)
    assert assign_all(centers, model).tolist() == [0, 1, 2, 3, 4]


# --- transitions and changers ----------------------------------------------------------


def test_transitions_example():
    table = transitions([(0, 0, 0, 0), (0, 1, 1, 1), (2, 2, 0, 2)], k=3)
    first = table.counts[0]
    assert first[0, 0] == 1 and first[0, 1] == 1 and first[2, 2] == 1 and first.sum() == 3
    assert table.pairs == ["autumn->winter", "winter->spring", "spring->summer"]
    assert table.population().tolist() == [[2, 0, 1], [1, 1, 1], [2, 1, 0], [1, 1, 1]]
    flows = table.flows()
    assert list(flows.columns) == ["source", "target", "season_pair", "count"]
    assert flows["count"].sum() == 9


def test_transitions_constant_is_diagonal():
    labels = np.repeat(np.arange(4)[:, None], 4, axis=1)
    table = transitions(labels)
    for c in table.counts:
        assert np.array_equal(c, np.eye(4, dtype=int))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(*[st.integers(0, 4)] * 4), min_size=1, max_size=40))
def test_transition_conservation(rows):
    table = transitions(rows, k=5)
    assert (table.counts.sum(axis=(1, 2)) == len(rows)).all()
    pop = table.population()
    labels = np.array(rows)
    for s in range(4):
        assert np.array_equal(pop[s], np.bincount(labels[:, s], minlength=5))
    changer = changer_split(rows)
    assert np.array_equal(~changer.changer, (labels == labels[:, :1]).all(axis=1))
    for L, (idx, lab) in changer.per_lifestyle.items():
        assert set(idx[lab == 0]) <= set(np.nonzero(~changer.changer)[0])
        assert all((labels[i] == L).any() for i in idx)


def test_missing_season_names_household():
    with pytest.raises(DomainError, match="H2"):
        transitions([(0, 0, 0, 0), (1, -1, 1, 1)], household_ids=["H1", "H2"])


def test_changer_examples():
    split = changer_split([(4, 4, 4, 4), (4, 4, 3, 4), (1, 2, 1, 1)])
    assert split.changer.tolist() == [False, True, True]
    assert split.fraction == pytest.approx(2 / 3)
    idx4, lab4 = split.per_lifestyle[4]
    assert idx4.tolist() == [0, 1] and lab4.tolist() == [0, 1]
    idx3, lab3 = split.per_lifestyle[3]
    assert idx3.tolist() == [1] and lab3.tolist() == [1]


def test_save_seasonal_labels(tmp_path):
    labels = np.array([[0, 0, 0, 0], [1, 0, 1, 1]])
    save_seasonal_labels(tmp_path / "s.csv", ["a", "b"], labels, changer_split(labels))
    frame = pd.read_csv(tmp_path / "s.csv")
    assert list(frame.columns) == ["household_id", *SEASON_NAMES, "changer_flag"]
    assert frame["changer_flag"].tolist() == [0, 1]


# --- seasonal mixtures -----------------------------------------------------------


def _cyclic_dataset(n_days=365, start="2010-09-01"):
    """Households repeating a fixed weekly cycle of shapes, so every season looks alike."""
    rng = np.random.default_rng(0)
    shapes = rng.random((6, 24)) ** 4
    shapes /= shapes.sum(axis=1, keepdims=True)
    weeks = [[0, 0, 1, 0, 0, 2, 2], [3, 3, 3, 4, 3, 5, 5], [0, 3, 0, 3, 1, 4, 2], [5, 5, 5, 5, 5, 1, 1]]
    dates = np.arange(np.datetime64(start), np.datetime64(start) + n_days)
    kwh = np.array([[shapes[w[d % 7]] * 10 for d in range(n_days)] for w in weeks])
    return Dataset([f"h{i}" for i in range(4)], dates, kwh), ShapeDictionary(shapes, DistanceKind("euclidean"))


def test_seasonal_mixtures_stationary():
    data, dic = _cyclic_dataset()
    model = lda_fit(encode_counts(data, dic), 3, seed=0, dictionary_fingerprint=dic.fingerprint())
    thetas = seasonal_thetas(data, dic, model)
    assert list(thetas) == list(SEASON_NAMES)
    for season, (counts, theta) in thetas.items():
        assert (counts.counts.sum(axis=1) == {"autumn": 91, "winter": 90, "spring": 92, "summer": 92}[season]).all()
        assert np.allclose(theta.sum(axis=1), 1, atol=1e-8)
    ref = thetas["autumn"][1]
    for _, theta in thetas.values():
        assert (0.5 * np.abs(theta - ref).sum(axis=1)).max() < 0.05
    lifestyles = fit_lifestyles(model.theta, 2, seed=0)
    labels = seasonal_labels(thetas, lifestyles, 4)
    assert not changer_split(labels).changer.any()


def test_empty_season_skipped(caplog):
    data, dic = _cyclic_dataset(n_days=120)
    model = lda_fit(encode_counts(data, dic), 2, seed=0)
    thetas = seasonal_thetas(data, dic, model)
    assert set(thetas) == {"autumn", "winter"}
    assert "spring has no days" in caplog.text
    labels = seasonal_labels(thetas, fit_lifestyles(model.theta, 2), 4)
    assert (labels[:, 2:] == -1).all()
    with pytest.raises(DomainError):
        transitions(labels)


def test_seasonal_thetas_refuse_other_dictionary():
    data, dic = _cyclic_dataset(n_days=30)
    model = lda_fit(encode_counts(data, dic), 2, dictionary_fingerprint="not-this-one")
    with pytest.raises(ConfigError):
        seasonal_thetas(data, dic, model)
