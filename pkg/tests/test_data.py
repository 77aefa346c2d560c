"""Ingestion, scaling, windowing, and the synthetic generator."""

import numpy as np
import pytest

from tsgraph.data import (
    Scaler,
    SyntheticConfig,
    TimeSeriesFrame,
    chronological_split,
    fit_scaler,
    generate_bivariate,
    load_csv,
    load_labels,
    make_windows,
    rule_next_values,
    stack_windows,
    windows_in_range,
    write_csv,
    write_labels,
)
from tsgraph.errors import ContractViolation, IngestionError


# ---------------------------------------------------------------------------
# load_csv
# ---------------------------------------------------------------------------


def test_load_csv_basic(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x,y\n1,2\n3,4\n5,6\n")
    frame = load_csv(path)
    assert frame.length == 3 and frame.width == 2
    assert frame.names == ["x", "y"]
    np.testing.assert_array_equal(frame.values, [[1, 2], [3, 4], [5, 6]])


def test_load_csv_orders_columns_lexicographically(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("b,a\n1,2\n3,4\n")
    frame = load_csv(path)
    assert frame.names == ["a", "b"]
    np.testing.assert_array_equal(frame.values, [[2, 1], [4, 3]])


def test_load_csv_empty_body(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("a,b\n")
    with pytest.raises(IngestionError, match="no data rows"):
        load_csv(path)


def test_load_csv_non_numeric_cell_names_location(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("a,b\n1,2\n1,oops\n")
    with pytest.raises(IngestionError, match=r":3: column 'b'"):
        load_csv(path)


def test_load_csv_ragged_row(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("a,b\n1,2\n3\n")
    with pytest.raises(IngestionError, match="expected 2 fields"):
        load_csv(path)


def test_load_csv_duplicate_names(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("a,a\n1,2\n")
    with pytest.raises(IngestionError, match="duplicate column names"):
        load_csv(path)


def test_csv_round_trip(tmp_path, rng):
    frame = TimeSeriesFrame(names=["a", "b"], values=rng.uniform(size=(20, 2)))
    path = tmp_path / "data.csv"
    write_csv(frame, path)
    loaded = load_csv(path)
    np.testing.assert_array_equal(loaded.values, frame.values)
    assert loaded.names == frame.names


# ---------------------------------------------------------------------------
# scaler
# ---------------------------------------------------------------------------


def test_scaler_maps_midpoint():
    frame = TimeSeriesFrame(names=["a"], values=np.array([[0.0], [5.0], [10.0]]))
    scaler = fit_scaler(frame, (0, 3))
    np.testing.assert_allclose(scaler.apply(np.array([[5.0]])), [[0.5]])


def test_scaler_round_trip(rng):
    frame = TimeSeriesFrame(names=["a", "b"], values=rng.normal(size=(50, 2)) * 7)
    scaler = fit_scaler(frame, (0, 40))
    values = rng.normal(size=(10, 2)) * 7
    np.testing.assert_allclose(scaler.invert(scaler.apply(values)), values, atol=1e-12)


def test_scaler_out_of_range_values_allowed():
    frame = TimeSeriesFrame(names=["a"], values=np.array([[0.0], [1.0], [5.0]]))
    scaler = fit_scaler(frame, (0, 2))  # train range sees only [0, 1]
    out = scaler.apply(frame.values)
    assert out[2, 0] > 1.0


def test_scaler_constant_series_sentinel_and_flag():
    frame = TimeSeriesFrame(names=["a", "b"], values=np.column_stack([np.full(5, 2.0), np.arange(5.0)]))
    with pytest.warns(RuntimeWarning, match="constant training series"):
        scaler = fit_scaler(frame, (0, 5))
    assert scaler.constant_flags.tolist() == [True, False]
    np.testing.assert_allclose(scaler.maximums[0] - scaler.minimums[0], 1.0)


def test_scaler_serialization_round_trip():
    frame = TimeSeriesFrame(names=["a"], values=np.array([[0.0], [2.0]]))
    scaler = fit_scaler(frame, (0, 2))
    again = Scaler.from_dict(scaler.to_dict())
    np.testing.assert_array_equal(again.minimums, scaler.minimums)
    np.testing.assert_array_equal(again.maximums, scaler.maximums)


def test_scaler_empty_range_rejected():
    frame = TimeSeriesFrame(names=["a"], values=np.zeros((3, 1)))
    with pytest.raises(ContractViolation):
        fit_scaler(frame, (2, 2))


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------


def test_make_windows_count(rng):
    frame = TimeSeriesFrame(names=["a", "b"], values=rng.uniform(size=(100, 2)))
    samples = make_windows(frame, 8)
    assert len(samples) == 92


def test_make_windows_targets(rng):
    frame = TimeSeriesFrame(names=["a"], values=rng.uniform(size=(10, 1)))
    samples = make_windows(frame, 3)
    np.testing.assert_array_equal(samples[0].target, frame.values[3])
    np.testing.assert_array_equal(samples[-1].target, frame.values[9])
    assert samples[0].target_index == 3 and samples[-1].target_index == 9


def test_windows_reconstruct_tail_rows(rng):
    frame = TimeSeriesFrame(names=["a", "b"], values=rng.uniform(size=(30, 2)))
    m = 4
    samples = make_windows(frame, m)
    rebuilt = np.stack([s.target for s in samples])
    np.testing.assert_array_equal(rebuilt, frame.values[m:])
    for s in samples:
        np.testing.assert_array_equal(
            s.inputs, frame.values[s.target_index - m : s.target_index]
        )


def test_windows_too_short(rng):
    frame = TimeSeriesFrame(names=["a"], values=rng.uniform(size=(4, 1)))
    with pytest.raises(ContractViolation):
        make_windows(frame, 4)


def test_windows_in_range_respects_bounds(rng):
    frame = TimeSeriesFrame(names=["a"], values=rng.uniform(size=(40, 1)))
    samples = windows_in_range(frame, 5, 10, 25)
    assert all(10 + 5 <= s.target_index < 25 for s in samples)
    assert len(samples) == 25 - 10 - 5


def test_stack_windows_shapes(rng):
    frame = TimeSeriesFrame(names=["a", "b"], values=rng.uniform(size=(20, 2)))
    inputs, targets, indices = stack_windows(make_windows(frame, 6))
    assert inputs.shape == (14, 6, 2)
    assert targets.shape == (14, 2)
    assert indices.tolist() == list(range(6, 20))


def test_chronological_split_covers_everything():
    train, dev, test = chronological_split(10000)
    assert train == (0, 7000)
    assert dev == (7000, 8500)
    assert test == (8500, 10000)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


def test_rule_one_transition_example():
    a = np.zeros(7)
    b = np.zeros(7)
    a[6], a[2] = 0.3, 0.7
    b[3], b[0] = 0.2, 0.4
    a_next, b_next, rule = rule_next_values(a, b, 6)
    assert rule == 1
    np.testing.assert_allclose([a_next, b_next], [0.7, 0.3])


def test_rule_two_transition_example():
    a = np.zeros(7)
    b = np.zeros(7)
    a[6], a[0], a[3] = 0.7, 0.4, 0.55
    b[3] = 0.8
    a_next, b_next, rule = rule_next_values(a, b, 6)
    assert rule == 2
    np.testing.assert_allclose([a_next, b_next], [0.6, 0.55])


def test_generator_values_stay_in_unit_interval():
    frame, _ = generate_bivariate(SyntheticConfig(length=5000, seed=3))
    assert frame.values.min() >= 0.0
    assert frame.values.max() <= 1.0


def test_generator_without_regen_is_deterministic():
    config = SyntheticConfig(length=500, seed=9, regen_probability=0.0)
    f1, l1 = generate_bivariate(config)
    f2, l2 = generate_bivariate(config)
    np.testing.assert_array_equal(f1.values, f2.values)
    np.testing.assert_array_equal(l1, l2)
    # and the recursion is exactly reproducible from the warm-up
    a, b = f1.values[:, 0].copy(), f1.values[:, 1].copy()
    for t in range(6, 499):
        a_next, b_next, rule = rule_next_values(a, b, t)
        assert a[t + 1] == a_next and b[t + 1] == b_next
        assert l1[t + 1] == rule


def test_generator_labels_partition_and_balance():
    frame, labels = generate_bivariate(SyntheticConfig(length=10000, seed=0))
    assert (labels[:7] == 0).all()
    assert set(np.unique(labels[7:])) == {1, 2}
    share1 = (labels == 1).mean()
    share2 = (labels == 2).mean()
    assert share1 >= 0.10 and share2 >= 0.10


def test_generator_labels_match_stored_conditions():
    frame, labels = generate_bivariate(SyntheticConfig(length=3000, seed=4))
    a = frame.values[:, 0]
    for t in range(6, 2999):
        expected = 1 if a[t] < 0.5 else 2
        assert labels[t + 1] == expected


def test_generator_rule_predictor_error_is_bounded():
    """Re-generation perturbs values only mildly: predicting each row with
    the exact rule from stored history stays within the blend noise floor."""
    frame, labels = generate_bivariate(SyntheticConfig(length=3000, seed=5))
    a, b = frame.values[:, 0], frame.values[:, 1]
    preds = np.array([rule_next_values(a, b, t)[:2] for t in range(6, 2999)])
    errors = preds - frame.values[7:]
    floor = np.sqrt((errors**2).mean(axis=0))
    assert (floor < 0.05).all()
    # unperturbed rows are exact: at default probability 0.5 a good share
    # of entries must match the rule image to machine precision
    exact = (np.abs(errors) < 1e-12).mean(axis=0)
    assert (exact > 0.3).all()


def test_generator_is_seed_deterministic():
    f1, l1 = generate_bivariate(SyntheticConfig(length=1000, seed=42))
    f2, l2 = generate_bivariate(SyntheticConfig(length=1000, seed=42))
    np.testing.assert_array_equal(f1.values, f2.values)
    np.testing.assert_array_equal(l1, l2)


def test_generator_config_validation():
    with pytest.raises(ContractViolation):
        SyntheticConfig(length=5)
    with pytest.raises(ContractViolation):
        SyntheticConfig(regen_probability=1.5)


def test_labels_write_load_round_trip(tmp_path):
    _, labels = generate_bivariate(SyntheticConfig(length=200, seed=1))
    path = tmp_path / "labels.csv"
    write_labels(labels, path)
    loaded = load_labels(path)
    np.testing.assert_array_equal(loaded, labels)


def test_frame_rejects_duplicates_and_nan():
    with pytest.raises(ContractViolation):
        TimeSeriesFrame(names=["a", "a"], values=np.zeros((2, 2)))
    with pytest.raises(ContractViolation):
        TimeSeriesFrame(names=["a"], values=np.array([[np.nan]]))
