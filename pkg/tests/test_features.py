import datetime as dt
import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from energy_lifestyles.data import Dataset, ReadingDay, SynthConfig, generate_synthetic, partition_seasons
from energy_lifestyles.errors import ConfigError, DimensionError, DomainError
from energy_lifestyles.features import (
    FEATURE_NAMES, compute_features, extract_features, feature_matrix, load_features, minmax_scale, save_features,
)

EXPECTED_NAMES = (
    ["e_day", "e_hour", "e_peak", "e_base", "e_min", "e_morning", "e_noon", "e_evening", "e_night", "e_wholeday"]
    + ["r_base", "r_min2max", "r_m2w", "r_n2w", "r_e2w", "r_ni2w"]
    + [f"pi_{h:02d}" for h in range(24)]
)


def _oracle(days):
    """Per-day loop over plain lists; averages taken at the end."""
    per_day, ratios, peaks = [], [], [0] * 24
    for day in days:
        day = list(day)
        total = sum(day)
        low3 = sorted(day)[:3]
        win = [sum(day[h] for h in hours) for hours in (range(6, 10), range(10, 14), range(18, 22), (22, 23, 0, 1))]
        per_day.append([total, total / 24, max(day), sum(low3) / 3, min(day), *win, total])
        if total > 0:
            ratios.append([sum(low3) / 3 / total, min(day) / max(day), *(w / total for w in win)])
        peaks[day.index(max(day))] += 1
    mean = [sum(col) / len(per_day) for col in zip(*per_day)]
    rmean = [sum(col) / len(ratios) for col in zip(*ratios)] if ratios else [0.0] * 6
    return mean + rmean + [p / len(days) for p in peaks], len(days) - len(ratios)


def test_constant_input():
    fv = extract_features([[1.0] * 24] * 5)
    assert (fv.e_day, fv.e_hour, fv.e_peak, fv.e_min, fv.r_min2max) == (24.0, 1.0, 1.0, 1.0, 1.0)
    assert fv.r_m2w == pytest.approx(4 / 24, abs=1e-15) and fv.r_ni2w == pytest.approx(4 / 24, abs=1e-15)
    assert fv.pi[0] == 1.0 and sum(fv.pi) == 1.0


def test_single_spike():
    day = [0.0] * 24
    day[19] = 1.0
    fv = extract_features([day])
    assert fv.e_wholeday == 1.0 and fv.r_e2w == 1.0 and fv.pi[19] == 1.0
    assert fv.r_m2w == 0.0 and fv.e_min == 0.0


def test_reading_days_and_zero_days():
    days = [ReadingDay("h", dt.date(2011, 1, d), tuple([0.0] * 24)) for d in (1, 2)]
    days.append(ReadingDay("h", dt.date(2011, 1, 3), tuple(float(h) for h in range(24))))
    fv = extract_features(days)
    assert fv.skipped_days == 2
    assert fv.r_min2max == 0.0  # min 0 over max 23 on the only valid day
    assert fv.pi[0] == pytest.approx(2 / 3) and fv.pi[23] == pytest.approx(1 / 3)
    with pytest.raises(DomainError):
        extract_features([])


def test_as_array_order():
    fv = extract_features(np.random.default_rng(0).random((4, 24)))
    arr = fv.as_array()
    assert arr.shape == (40,)
    assert arr[FEATURE_NAMES.index("r_base")] == fv.r_base and arr[16 + 5] == fv.pi[5]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12).flatmap(lambda d: st.lists(
    st.lists(st.floats(0, 50, allow_nan=False), min_size=24, max_size=24), min_size=d, max_size=d)))
def test_features_match_loop_oracle(days):
    fv = extract_features(np.array(days))
    expected, skipped = _oracle(days)
    assert np.allclose(fv.as_array(), expected, rtol=1e-9, atol=1e-12)
    assert fv.skipped_days == skipped


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10).flatmap(lambda d: st.lists(
    st.lists(st.floats(0, 50, allow_nan=False), min_size=24, max_size=24), min_size=d, max_size=d)))
def test_feature_invariants(days):
    fv = extract_features(np.array(days))
    assert abs(sum(fv.pi) - 1) <= 1e-9 and min(fv.pi) >= 0
    assert 0 <= fv.r_min2max <= 1
    tol = 1e-9 * (1 + fv.e_peak)
    assert fv.e_min - tol <= fv.e_base <= fv.e_hour + tol <= fv.e_peak + 2 * tol
    assert fv.r_m2w + fv.r_n2w + fv.r_e2w + fv.r_ni2w <= 1 + 1e-9


def test_batch_matches_single_household():
    data, _ = generate_synthetic(SynthConfig(n_households=5, n_days=40), seed=1)
    X, names = feature_matrix(data)
    assert X.shape == (5, 40) and names == EXPECTED_NAMES
    for j in range(5):
        assert np.allclose(X[j], extract_features(data.kwh[j]).as_array(), rtol=1e-12)
    small, _ = feature_matrix(data, chunk=2)
    assert np.array_equal(small, X)


def test_period_selection():
    data, _ = generate_synthetic(SynthConfig(n_households=3, n_days=200), seed=2)
    winter, _ = feature_matrix(data, "winter")
    assert np.allclose(winter, compute_features(partition_seasons(data)["winter"].kwh)[0])
    window, _ = feature_matrix(data, ("2010-12-01", "2011-02-28"))
    assert np.array_equal(window, winter)
    with pytest.raises(ConfigError):
        feature_matrix(data, "monsoon")


def test_scaling():
    data, _ = generate_synthetic(SynthConfig(n_households=6, n_days=20), seed=3)
    X, _ = feature_matrix(data, scale=True)
    assert X.min() >= 0 and X.max() <= 1
    assert np.allclose(minmax_scale(np.array([[1.0, 5.0], [3.0, 5.0]])), [[0, 0], [1, 0]])


def test_column_order_hash():
    digest = hashlib.sha256(",".join(FEATURE_NAMES).encode()).hexdigest()
    assert digest == hashlib.sha256(",".join(EXPECTED_NAMES).encode()).hexdigest()
    assert len(FEATURE_NAMES) == 40


def test_feature_csv_round_trip(tmp_path):
    data, _ = generate_synthetic(SynthConfig(n_households=3, n_days=10), seed=4)
    X, _ = feature_matrix(data)
    save_features(tmp_path / "f.csv", data.household_ids, X)
    ids, back = load_features(tmp_path / "f.csv")
    assert ids == data.household_ids and np.allclose(back, X, rtol=1e-15)


def test_bad_shapes_rejected():
    with pytest.raises(DimensionError):
        compute_features(np.ones((2, 3, 23)))
    with pytest.raises(DomainError):
        compute_features(-np.ones((1, 2, 24)))
    dates = np.array(["2011-01-01"], dtype="datetime64[D]")
    X, _ = feature_matrix(Dataset(["a", "b"], dates, np.ones((2, 1, 24))))
    assert X.shape == (2, 40)
