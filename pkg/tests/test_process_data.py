import os

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from errors import ConfigError, DataError, InsufficientDataError
from process_data import (apply_scaler, fit_scaler, invert_scaler, load_csv, main, make_split_spec,
                          resolve_dataset, scaler_from_stats, split, split_spec_for, subsample_train,
                          window_counts)


def test_load_csv_drops_timestamp_and_keeps_channel_order(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text("date,b,a\n2020-01-01,1.5,2\n2020-01-02,-3,4e-1\n")

    series = load_csv(str(path))

    assert list(series.columns) == ["b", "a"]
    assert series.dtypes.tolist() == [np.float64, np.float64]
    assert_allclose(series.to_numpy(), [[1.5, 2.0], [-3.0, 0.4]], rtol=1e-15)


def test_load_csv_reports_line_and_column_of_bad_cell(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("date,a,b\n1,1,2\n2,3,4\n3,5,oops\n")

    with pytest.raises(DataError, match=r"line 4, column 'b'"):
        load_csv(str(path))


def test_load_csv_rejects_missing_cells(tmp_path):
    path = tmp_path / "gap.csv"
    path.write_text("date,a\n1,1\n2,\n")

    with pytest.raises(DataError, match="line 3"):
        load_csv(str(path))


def test_load_csv_missing_file_and_channel_count(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_csv(str(tmp_path / "absent.csv"))

    path = tmp_path / "two.csv"
    path.write_text("date,a,b\n1,1,2\n")
    with pytest.raises(DataError, match="expected 7"):
        load_csv(str(path), expected_channels=7)


@pytest.mark.parametrize("t_len, expected", [(1000, (700, 100, 200)), (1001, (700, 100, 201)),
                                             (10, (7, 1, 2))])
def test_fractional_split_gives_remainder_to_test(t_len, expected):
    spec = make_split_spec(t_len)
    assert (spec.train_len, spec.val_len, spec.test_len) == expected
    assert spec.total_len == t_len


def test_fractional_split_with_validation_remainder():
    spec = make_split_spec(52696, remainder="val")
    assert (spec.train_len, spec.val_len, spec.test_len) == (36887, 5270, 10539)


@pytest.mark.parametrize("t_len, mode, counts, expected", [
    (17420, "explicit", (8640, 2880, 2880), (8033, 2785, 2785)),
    (52696, "fractional", None, (36280, 5175, 10444)),
    (966, "fractional", None, (69, 2, 98)),
])
def test_window_counts_at_benchmark_settings(t_len, mode, counts, expected):
    spec = make_split_spec(t_len, mode=mode, counts=counts, remainder="val")
    assert window_counts(spec, 512, 96) == expected


def test_explicit_split_errors():
    with pytest.raises(DataError, match="needs 300 rows"):
        make_split_spec(200, mode="explicit", counts=(100, 100, 100))
    with pytest.raises(ConfigError):
        make_split_spec(200, mode="explicit", counts=(100, 100))
    with pytest.raises(ConfigError):
        make_split_spec(200, mode="random")


def test_split_is_contiguous_and_ordered():
    series = pd.DataFrame({"a": np.arange(20.0), "b": -np.arange(20.0)})
    train, val, test = split(series, make_split_spec(20))

    assert_array_equal(pd.concat([train, val, test]).to_numpy(), series.to_numpy())
    assert train["a"].iloc[-1] < val["a"].iloc[0] < test["a"].iloc[0]


def test_scaler_uses_population_statistics_and_round_trips(make_ar):
    series = make_ar([0.5], 300, n_channels=3, seed=3) * [1.0, 10.0, 0.1] + [0.0, 5.0, -2.0]

    scaler = fit_scaler(series)
    scaled = apply_scaler(scaler, series)

    assert_allclose(scaled.mean().to_numpy(), 0.0, atol=1e-12)
    assert_allclose(scaled.to_numpy().std(axis=0, ddof=0), 1.0, rtol=1e-12)
    assert_allclose(invert_scaler(scaler, scaled).to_numpy(), series.to_numpy(), rtol=1e-12, atol=1e-12)
    assert_allclose(invert_scaler(scaler, scaled.to_numpy()), series.to_numpy(), rtol=1e-12, atol=1e-12)


def test_scaler_rebuilt_from_stored_statistics(make_ar):
    series = make_ar([0.5], 300, n_channels=2, seed=4) * [2.0, 0.5] + [1.0, -3.0]
    fitted = fit_scaler(series)

    rebuilt = scaler_from_stats(fitted.mean_.tolist(), fitted.scale_.tolist())

    assert_array_equal(apply_scaler(rebuilt, series).to_numpy(), apply_scaler(fitted, series).to_numpy())
    assert_allclose(invert_scaler(rebuilt, apply_scaler(rebuilt, series)).to_numpy(), series.to_numpy(),
                    rtol=1e-12, atol=1e-12)
    with pytest.raises(DataError, match="positive"):
        scaler_from_stats([0.0, 1.0], [1.0, 0.0])
    with pytest.raises(DataError, match="one length"):
        scaler_from_stats([0.0, 1.0], [1.0])
    with pytest.raises(DataError, match="fitted on 2 channels"):
        apply_scaler(rebuilt, series[["ch0"]])


def test_zero_variance_channel_is_rejected():
    series = pd.DataFrame({"a": np.arange(10.0), "flat": np.ones(10)})
    with pytest.raises(DataError, match="flat"):
        fit_scaler(series)


def test_subsample_keeps_most_recent_rows():
    train = pd.DataFrame({"a": np.arange(10.0)})

    kept = subsample_train(train, 0.25)

    assert_array_equal(kept["a"].to_numpy(), [8.0, 9.0])
    assert subsample_train(train, 1.0) is train
    with pytest.raises(ConfigError):
        subsample_train(train, 0.0)
    with pytest.raises(InsufficientDataError):
        subsample_train(train, 0.05)


def test_main_standardizes_with_full_training_statistics(make_ar):
    series = make_ar([0.7], 1000, n_channels=2, seed=5) + 3.0
    spec = make_split_spec(series.shape[0])

    data = main(series, spec, train_fraction=0.2)

    train = series.iloc[:spec.train_len]
    assert_allclose(data["scaler"].mean_, train.mean().to_numpy(), rtol=1e-12)
    assert data["train"].shape == (140, 2)
    assert data["history"].shape == (spec.train_len + spec.val_len, 2)
    assert data["test"].shape == (spec.test_len, 2)
    assert_allclose(data["train"].to_numpy(), apply_scaler(data["scaler"], train).to_numpy()[-140:])


def test_resolve_dataset_presets_and_paths():
    info = resolve_dataset("etth1", "data")
    assert info["name"] == "ETTh1"
    assert info["path"] == os.path.join("data", "ETTh1.csv")
    assert info["channels"] == 7
    assert split_spec_for(info, 17420).train_len == 8640

    ili = resolve_dataset("ILI")
    assert ili["horizons"] == (24, 36, 48, 60)
    assert split_spec_for(ili, 966).val_len == 97

    custom = resolve_dataset("some/dir/sales.csv")
    assert custom["name"] == "sales"
    assert custom["split"] == {"mode": "fractional", "remainder": "test"}

    with pytest.raises(ConfigError):
        resolve_dataset("NotADataset")
