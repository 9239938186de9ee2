from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from engagecf.data import (FEATURE_NAMES, N_FEATURES, RATIO_MASK, STD_EPS, Dataset, NormStats, dataset_from_csv,
                           dataset_to_csv, denormalize, fit_normalizer, load_dataset, load_norm_stats, normalize,
                           normalize_dataset, save_dataset, save_norm_stats, split_by_session, to_native)
from engagecf.errors import EngageError


def make_dataset(n_sessions=4, per_session=5, seed=0):
    rng = np.random.default_rng(seed)
    n = n_sessions * per_session
    X = rng.normal(size=(n, N_FEATURES))
    X[:, RATIO_MASK] = rng.uniform(0, 1, size=(n, int(RATIO_MASK.sum())))
    sids = tuple(f"S{i // per_session:02d}" for i in range(n))
    return Dataset(X=X, y=rng.integers(0, 2, n), session_ids=sids, window_index=np.arange(n) % per_session)


def test_feature_order_is_fixed():
    assert len(FEATURE_NAMES) == 18
    assert FEATURE_NAMES[0] == "VAL_F" and FEATURE_NAMES[2] == "HD_AC" and FEATURE_NAMES[-1] == "EN_HA"


def test_constant_column_std_is_clamped():
    ds = make_dataset()
    X = ds.X.copy()
    X[:, 0] = 0.0
    stats = fit_normalizer(Dataset(X, ds.y, ds.session_ids, ds.window_index))
    assert stats.mean[0] == 0.0
    assert stats.std[0] == STD_EPS
    assert stats.clamped[0] and not stats.clamped[1:].any()


def test_population_std_hand_value():
    X = np.zeros((3, N_FEATURES))
    X[:, 2] = [1.0, 2.0, 3.0]
    stats = fit_normalizer(Dataset(X, [0, 1, 0], ("a", "b", "c"), [0, 0, 0]))
    assert stats.mean[2] == pytest.approx(2.0)
    # sqrt(2/3), computed independently at 30 digits
    assert stats.std[2] == pytest.approx(0.816496580927726032732428024902, abs=1e-15)


def test_fit_normalizer_is_deterministic():
    assert fit_normalizer(make_dataset()) == fit_normalizer(make_dataset())


def test_fit_normalizer_empty():
    empty = Dataset(np.zeros((0, N_FEATURES)), [], (), [])
    with pytest.raises(EngageError) as exc:
        fit_normalizer(empty)
    assert exc.value.code == "empty-dataset"


def test_normalize_special_points():
    stats = NormStats(np.arange(N_FEATURES, dtype=float), np.full(N_FEATURES, 2.0))
    np.testing.assert_array_equal(normalize(stats.mean, stats), np.zeros(N_FEATURES))
    np.testing.assert_allclose(normalize(stats.mean + stats.std, stats), np.ones(N_FEATURES))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=N_FEATURES, max_size=N_FEATURES),
       st.lists(st.floats(1e-3, 1e3), min_size=N_FEATURES, max_size=N_FEATURES),
       st.lists(st.floats(-1e3, 1e3), min_size=N_FEATURES, max_size=N_FEATURES))
def test_normalize_round_trip(mean, std, x):
    stats = NormStats(np.array(mean), np.array(std))
    x = np.array(x)
    np.testing.assert_allclose(denormalize(normalize(x, stats), stats), x, rtol=0, atol=1e-10)


def test_to_native_clips_ratio_features():
    stats = NormStats(np.zeros(N_FEATURES), np.ones(N_FEATURES))
    z = np.full(N_FEATURES, 3.0)
    out = to_native(z, stats)
    assert np.all(out[RATIO_MASK] == 1.0) and np.all(out[~RATIO_MASK] == 3.0)


def test_normalized_training_data_is_standardized():
    ds = make_dataset(6, 20)
    z = normalize_dataset(ds, fit_normalizer(ds))
    np.testing.assert_allclose(z.X.mean(axis=0), 0.0, atol=1e-6)
    np.testing.assert_allclose(z.X.std(axis=0), 1.0, atol=1e-6)


def test_split_19_sessions_into_13_and_6():
    ds = make_dataset(19, 3)
    train, test = split_by_session(ds, 13 / 19, seed=5)
    assert len(train.sessions) == 13 and len(test.sessions) == 6


def test_split_two_sessions_half():
    train, test = split_by_session(make_dataset(2, 4), 0.5, seed=0)
    assert len(train.sessions) == 1 and len(test.sessions) == 1


def test_split_deterministic():
    a = split_by_session(make_dataset(8, 3), 0.5, seed=3)
    b = split_by_session(make_dataset(8, 3), 0.5, seed=3)
    assert a[0].equals(b[0]) and a[1].equals(b[1])


def test_split_needs_two_sessions():
    with pytest.raises(EngageError) as exc:
        split_by_session(make_dataset(1, 4), 0.5, seed=0)
    assert exc.value.code == "insufficient-sessions"


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(1, 6), st.floats(0.05, 0.95), st.integers(0, 2**31 - 1))
def test_split_partitions_by_session(n_sessions, per_session, frac, seed):
    ds = make_dataset(n_sessions, per_session, seed=seed % 97)
    train, test = split_by_session(ds, frac, seed)
    assert not set(train.sessions) & set(test.sessions)
    assert len(train) + len(test) == len(ds)
    rows = sorted(map(tuple, np.vstack([train.X, test.X]).tolist()))
    assert rows == sorted(map(tuple, ds.X.tolist()))


def test_csv_round_trip_is_bit_exact(tmp_path):
    ds = make_dataset()
    path = tmp_path / "features.csv"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.equals(ds)
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    assert raw.startswith(b"session_id,window_index,label,VAL_F,GZ_DR")


def test_csv_rejects_bad_header():
    text = dataset_to_csv(make_dataset()).replace("VAL_F", "VALENCE", 1)
    with pytest.raises(EngageError) as exc:
        dataset_from_csv(text)
    assert exc.value.code == "invalid-file"


def test_norm_stats_file_round_trip(tmp_path):
    stats = fit_normalizer(make_dataset())
    save_norm_stats(stats, tmp_path / "stats.json")
    assert load_norm_stats(tmp_path / "stats.json") == stats


def test_dataset_rejects_out_of_range_ratio():
    ds = make_dataset()
    X = ds.X.copy()
    X[0, RATIO_MASK.argmax()] = 1.5
    with pytest.raises(EngageError):
        Dataset(X, ds.y, ds.session_ids, ds.window_index)


def test_dataset_rejects_nan_and_bad_labels():
    ds = make_dataset()
    X = ds.X.copy()
    X[0, 0] = np.nan
    with pytest.raises(EngageError):
        Dataset(X, ds.y, ds.session_ids, ds.window_index)
    with pytest.raises(EngageError):
        Dataset(ds.X, np.full(len(ds), 2), ds.session_ids, ds.window_index)
