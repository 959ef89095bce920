import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import evaluation
from ar_model import ArModel
from auto_ar import AutoArConfig
from errors import ConfigError, InsufficientDataError
from evaluation import (AUTO_AR, UNTUNED_AR, ZERO_SHOT_AR, EvalRecord, ForecastTask, ar_forecaster,
                        combine_records, evaluate, main)
from process_data import main as process_data
from process_data import make_split_spec


def persistence():
    return ar_forecaster(ArModel(p=1, intercept=0.0, coeffs=[1.0], d=0, noise_var=1.0, n_train_samples=1))


def prepared(make_ar, n_rows=1200, seed=0):
    series = make_ar([0.6, 0.2], n_rows, n_channels=3, seed=seed)
    return process_data(series, make_split_spec(n_rows))


SMALL = AutoArConfig(max_lookback=32, lookback_grid=(1, 2, 4, 8, 16, 32), zero_shot_window=32,
                     zero_shot_grid=(2, 4, 8))


def test_persistence_on_constant_series_is_exact():
    history = pd.DataFrame({"a": np.full(10, 2.0), "b": np.full(10, -1.0)})
    test = pd.DataFrame({"a": np.full(8, 2.0), "b": np.full(8, -1.0)})

    record = evaluate(persistence(), ForecastTask("flat", 3, context_len=4), test, history, "persistence")

    assert record.mse == 0.0
    assert record.mae == 0.0
    assert record.n_windows == 6


def test_errors_are_pooled_over_steps_and_channels():
    def fixed(contexts, horizon):
        return np.tile(np.array([[1.0], [2.0]]), (len(contexts), 1, 1))

    history = pd.DataFrame({"a": [5.0]})
    test = pd.DataFrame({"a": [0.0, 2.0]})

    record = evaluate(fixed, ForecastTask("toy", 2, context_len=1), test, history, "fixed")

    assert record.mse == 0.5
    assert record.mae == 0.5
    assert record.rmse == pytest.approx(np.sqrt(0.5))
    assert (record.n_windows, record.n_values) == (1, 2)


def test_window_count_and_stride(make_ar):
    series = make_ar([0.5], 60, n_channels=2, seed=1)
    history, test = series.iloc[:40], series.iloc[40:].reset_index(drop=True)
    task = ForecastTask("toy", 5, context_len=8)

    assert evaluate(persistence(), task, test, history, "p").n_windows == 16
    strided = evaluate(persistence(), task, test, history, "p", stride=4)
    assert strided.n_windows == 4
    assert strided.n_values == 4 * 5 * 2


def test_evaluation_preconditions(make_ar):
    series = make_ar([0.5], 30, seed=2)
    history, test = series.iloc[:20], series.iloc[20:].reset_index(drop=True)

    with pytest.raises(InsufficientDataError, match="shorter than the horizon"):
        evaluate(persistence(), ForecastTask("toy", 11, context_len=4), test, history, "p")
    with pytest.raises(InsufficientDataError, match="precede the test split"):
        evaluate(persistence(), ForecastTask("toy", 2, context_len=21), test, history, "p")
    with pytest.raises(ConfigError):
        evaluate(persistence(), ForecastTask("toy", 2, context_len=4), test, history, "p", stride=0)


def test_result_does_not_depend_on_batching_or_threads(make_ar, monkeypatch):
    series = make_ar([0.7], 300, n_channels=2, seed=3)
    history, test = series.iloc[:200], series.iloc[200:].reset_index(drop=True)
    model = ArModel(p=3, intercept=0.01, coeffs=[0.5, 0.2, -0.1], d=0, noise_var=1.0, n_train_samples=1)
    task = ForecastTask("toy", 7, context_len=16)

    whole = evaluate(ar_forecaster(model), task, test, history, "ar")
    monkeypatch.setattr(evaluation, "BATCH_VALUES", 40)
    serial = evaluate(ar_forecaster(model), task, test, history, "ar", n_jobs=1)
    threaded = evaluate(ar_forecaster(model), task, test, history, "ar", n_jobs=3)

    assert serial.mse == threaded.mse
    assert serial.mae == threaded.mae
    assert_allclose([serial.mse, serial.mae], [whole.mse, whole.mae], rtol=1e-12)


def test_combined_disjoint_windows_equal_the_full_evaluation(make_ar):
    series = make_ar([0.7], 80, n_channels=2, seed=4)
    history, test = series.iloc[:50], series.iloc[50:].reset_index(drop=True)
    task = ForecastTask("toy", 5, context_len=10)

    full = evaluate(persistence(), task, test, history, "p")
    first = evaluate(persistence(), task, test.iloc[:15], history, "p")
    second = evaluate(persistence(), task, test.iloc[11:].reset_index(drop=True),
                      pd.concat([history, test.iloc[:11]], ignore_index=True), "p")
    combined = combine_records(first, second)

    assert combined.n_windows == full.n_windows == 26
    assert_allclose([combined.mse, combined.mae, combined.rmse], [full.mse, full.mae, full.rmse], rtol=1e-12)


def test_record_derives_rmse_from_mse():
    assert EvalRecord("ETTh1", 96, AUTO_AR, mse=0.25).rmse == 0.5
    assert EvalRecord("ETTh1", 96, AUTO_AR, rmse=0.5).mse == 0.25
    assert EvalRecord("ETTh1", 96, AUTO_AR, mae=0.4).rmse is None


def test_task_validation():
    assert ForecastTask("etth1", 96).context_len == 512
    assert ForecastTask("sales.csv", 7).horizon == 7
    with pytest.raises(ConfigError, match="benchmark horizon"):
        ForecastTask("ETTh1", 100)
    with pytest.raises(ConfigError):
        ForecastTask("ILI", 96)
    with pytest.raises(ConfigError):
        ForecastTask("toy", 0)
    with pytest.raises(ConfigError):
        ForecastTask("toy", 5, train_fraction=1.5)


def test_main_auto_ar_reports_selection_and_scaler(make_ar):
    data = prepared(make_ar)
    tasks = [ForecastTask("toy", 24, context_len=64), ForecastTask("toy", 48, context_len=64)]

    results = main(data, tasks, AUTO_AR, SMALL, stride=8)

    assert [result["record"].horizon for result in results] == [24, 48]
    record, model, selection = results[0]["record"], results[0]["model"], results[0]["selection"]
    assert record.method == AUTO_AR
    assert record.chosen_p == selection.chosen_p == model.p
    assert record.chosen_p in SMALL.lookback_grid
    assert record.d == selection.d
    assert record.fit_seconds >= 0
    assert 0 < record.mse < 2
    assert_allclose(model.scaler_mean, data["scaler"].mean_)
    assert results[1]["model"] is model


def test_main_untuned_lowers_lookback_for_short_training(make_ar, caplog):
    data = prepared(make_ar, seed=5)
    data = dict(data, train=data["train"].iloc[-20:].reset_index(drop=True))

    results = main(data, [ForecastTask("toy", 12, context_len=64)], UNTUNED_AR, SMALL, stride=16)

    record = results[0]["record"]
    assert record.chosen_p == 19
    assert record.d == 0
    assert results[0]["selection"] is None
    assert "lowered from 32 to 19" in caplog.text


def test_main_zero_shot_per_window(make_ar):
    data = prepared(make_ar, seed=6)

    results = main(data, [ForecastTask("toy", 24, context_len=64)], ZERO_SHOT_AR, SMALL, stride=16)

    record = results[0]["record"]
    assert results[0]["model"] is None
    assert record.chosen_p is None
    assert record.extras == {"zero_shot_window": 32, "zero_shot_mode": "per_window"}
    assert record.n_windows == len(range(0, data["test"].shape[0] - 24 + 1, 16))
    assert np.isfinite(record.mse)


def test_main_zero_shot_per_dataset(make_ar):
    data = prepared(make_ar, seed=7)
    config = AutoArConfig(max_lookback=32, lookback_grid=(1, 2, 4), zero_shot_window=32,
                          zero_shot_grid=(2, 4, 8), zero_shot_mode="per_dataset")

    results = main(data, [ForecastTask("toy", 24, context_len=64)], ZERO_SHOT_AR, config, stride=16)

    record = results[0]["record"]
    assert record.chosen_p in (2, 4, 8)
    assert results[0]["selection"].chosen_p == record.chosen_p
    assert record.extras["zero_shot_mode"] == "per_dataset"


def test_main_rejects_unknown_method_and_mixed_tasks(make_ar):
    data = prepared(make_ar, seed=8)
    with pytest.raises(ConfigError, match="Unknown method"):
        main(data, [ForecastTask("toy", 24, context_len=64)], "Prophet", SMALL)
    with pytest.raises(ConfigError, match="share"):
        main(data, [ForecastTask("toy", 24, context_len=64), ForecastTask("toy", 24, context_len=32)],
             AUTO_AR, SMALL)


def test_fitted_channels_forecast_in_order(make_ar):
    data = prepared(make_ar, seed=9)
    results = main(data, [ForecastTask("toy", 24, context_len=64)], AUTO_AR, SMALL, stride=32)
    model = results[0]["model"]

    context = data["history"].to_numpy()[-64:]
    prediction = ar_forecaster(model)(context[None], 24)[0]

    assert prediction.shape == (24, 3)
    assert_array_equal(model.channel_names, ("ch0", "ch1", "ch2"))


def test_selected_lookback_fits_in_the_evaluation_context(make_ar, caplog):
    # weekly-style lag equal to the context length, on a trending series
    shocks = make_ar([0.0] * 31 + [0.9], 1200, n_channels=3, seed=11)
    series = shocks.cumsum()
    data = process_data(series, make_split_spec(1200))
    config = AutoArConfig(max_lookback=32, lookback_grid=(1, 2, 4, 8, 16, 32), force_d=1)

    results = main(data, [ForecastTask("toy", 24, context_len=32)], AUTO_AR, config, stride=16)

    record, selection = results[0]["record"], results[0]["selection"]
    assert record.d == 1
    assert selection.skipped == (32,)
    assert record.chosen_p + record.d <= 32
    assert np.isfinite(record.mse)
    assert "Skipping lookbacks [32]" in caplog.text


def test_untuned_lookback_is_capped_by_the_context(make_ar):
    data = prepared(make_ar, seed=12)

    results = main(data, [ForecastTask("toy", 12, context_len=16)], UNTUNED_AR, SMALL, stride=16)

    assert results[0]["record"].chosen_p == 16
