import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ar_model import check_channels, forecast_batch
from auto_ar import AutoArConfig, fit_zero_shot, run_auto_ar, run_untuned_ar
from dataset_presets import find_preset
from errors import ConfigError, DataError, InsufficientDataError
from process_data import SplitSpec

logger = logging.getLogger(__name__)

# Constants
CONTEXT_LEN = 512
BATCH_VALUES = 1 << 24
AUTO_AR = "Auto-AR"
UNTUNED_AR = "AR (d=0)"
ZERO_SHOT_AR = "Auto-AR (Zero Shot)"
METHODS = (AUTO_AR, UNTUNED_AR, ZERO_SHOT_AR)


@dataclass(frozen=True)
class ForecastTask:
    dataset_id: str
    horizon: int
    context_len: int = CONTEXT_LEN
    split: SplitSpec = None
    train_fraction: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"Horizon must be at least 1, got {self.horizon}")
        if self.context_len < 1:
            raise ConfigError(f"Context length must be at least 1, got {self.context_len}")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError(f"Training fraction must be in (0, 1], got {self.train_fraction}")
        found = find_preset(self.dataset_id)
        if found is not None and self.horizon not in found[1]["horizons"]:
            raise ConfigError(f"Horizon {self.horizon} is not a benchmark horizon of {found[0]}, "
                              f"expected one of {list(found[1]['horizons'])}")


@dataclass(frozen=True)
class EvalRecord:
    """
    Pooled test metrics of one method on one (dataset, horizon) task, on standardized data.
    Reference records may carry only some of the metrics; rmse is always sqrt(mse).
    """
    dataset: str
    horizon: int
    method: str
    mse: float = None
    mae: float = None
    rmse: float = None
    n_windows: int = 0
    n_values: int = 0
    chosen_p: int = None
    d: int = None
    fit_seconds: float = None
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.mse is not None:
            object.__setattr__(self, "rmse", math.sqrt(self.mse))
        elif self.rmse is not None:
            object.__setattr__(self, "mse", self.rmse ** 2)

    @property
    def key(self):
        return self.dataset, self.horizon, self.method

    def score(self, metric):
        return getattr(self, metric)


def _window_errors(forecaster, full, starts, offset, context_len, horizon):
    """Per-window sums of squared and absolute errors for one batch of test anchors."""
    contexts = np.stack([full[offset + s - context_len:offset + s] for s in starts])
    targets = np.stack([full[offset + s:offset + s + horizon] for s in starts])
    errors = forecaster(contexts, horizon) - targets
    return np.square(errors).sum(axis=(1, 2)), np.abs(errors).sum(axis=(1, 2))


def evaluate(forecaster, task, test, history, method, stride=1, n_jobs=1):
    """
    Function to score a forecaster on every stride-spaced window of the test split.
    Args:
        forecaster (callable): Maps (B x L x C contexts, H) to B x H x C standardized forecasts.
        task (ForecastTask): Dataset, horizon H and context length L.
        test (DataFrame): Standardized test split.
        history (DataFrame): Standardized rows preceding the test split; contexts of the first
            windows reach back into it.
        method (str): Name written to the record.
        stride (int): Distance between consecutive test anchors.
        n_jobs (int): Batches scored concurrently; batches are fixed, so the result does not depend on it.
    Returns:
        EvalRecord: Errors pooled over all windows, horizons and channels.
    """
    if stride < 1:
        raise ConfigError(f"Stride must be at least 1, got {stride}")
    if list(test.columns) != list(history.columns):
        raise DataError("Test and history splits have different channels")
    horizon = task.horizon
    context_len = task.context_len
    test_len, n_channels = test.shape
    if test_len < horizon:
        raise InsufficientDataError(f"Test split of {test_len} rows is shorter than the horizon {horizon}")
    offset = history.shape[0]
    if offset < context_len:
        raise InsufficientDataError(f"Only {offset} rows precede the test split, "
                                    f"the context needs {context_len}")

    full = np.concatenate([history.to_numpy(dtype=np.float64), test.to_numpy(dtype=np.float64)])
    starts = np.arange(0, test_len - horizon + 1, stride)
    batch_size = max(1, BATCH_VALUES // (context_len * n_channels))
    batches = [starts[idx:idx + batch_size] for idx in range(0, starts.shape[0], batch_size)]

    sums = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_window_errors)(forecaster, full, batch, offset, context_len, horizon) for batch in batches)

    n_values = starts.shape[0] * horizon * n_channels
    squared = math.fsum(np.concatenate([sq for sq, _ in sums]))
    absolute = math.fsum(np.concatenate([ab for _, ab in sums]))
    return EvalRecord(task.dataset_id, horizon, method, mse=squared / n_values, mae=absolute / n_values,
                      n_windows=int(starts.shape[0]), n_values=int(n_values))


def combine_records(first, second):
    """Merge two evaluations of disjoint window sets into their pooled evaluation."""
    if first.key != second.key:
        raise DataError(f"Cannot combine records of different tasks {first.key} and {second.key}")
    n_values = first.n_values + second.n_values
    if n_values == 0:
        raise DataError("Cannot combine records without sample counts")
    mse = (first.mse * first.n_values + second.mse * second.n_values) / n_values
    mae = (first.mae * first.n_values + second.mae * second.n_values) / n_values
    return replace(first, mse=mse, mae=mae, rmse=None, n_windows=first.n_windows + second.n_windows,
                   n_values=n_values)


def ar_forecaster(model):
    def forecaster(contexts, horizon):
        return forecast_batch(model, contexts, horizon)
    return forecaster


def zero_shot_forecaster(config, columns):
    """Refit the zero-shot pipeline on every context before forecasting from it."""
    columns = list(columns)

    def forecaster(contexts, horizon):
        predictions = []
        for context in contexts:
            model, _ = fit_zero_shot(pd.DataFrame(context, columns=columns), config)
            predictions.append(forecast_batch(model, context[None], horizon)[0])
        return np.stack(predictions)
    return forecaster


def first_context(task, history):
    """Context of the first test window: the last L rows before the test split."""
    if history.shape[0] < task.context_len:
        raise InsufficientDataError(f"Only {history.shape[0]} rows precede the test split, "
                                    f"the context needs {task.context_len}")
    return history.iloc[history.shape[0] - task.context_len:].reset_index(drop=True)


def fit_method(data, task, method, config):
    """
    Function to fit one benchmark method on the prepared splits.
    Returns:
        tuple: (forecaster, model or None, SelectionResult or None).
    """
    train = data["train"]
    if method == AUTO_AR:
        model, selection = run_auto_ar(train, config, context_len=task.context_len)
        return ar_forecaster(model), model, selection

    if method == UNTUNED_AR:
        p = min(config.max_lookback, train.shape[0] - 1, task.context_len)
        if p < config.max_lookback:
            logger.warning("%s H=%d: untuned lookback lowered from %d to %d for a training split of %d rows "
                           "and a context of %d rows", task.dataset_id, task.horizon, config.max_lookback, p,
                           train.shape[0], task.context_len)
        model = run_untuned_ar(train, p, config.n_jobs)
        return ar_forecaster(model), model, None

    if method == ZERO_SHOT_AR:
        zs_config = replace(config, zero_shot=True)
        if zs_config.zero_shot_mode == "per_dataset":
            model, selection = fit_zero_shot(first_context(task, data["history"]), zs_config)
            return ar_forecaster(model), model, selection
        return zero_shot_forecaster(zs_config, train.columns), None, None

    raise ConfigError(f"Unknown method {method!r}, expected one of {METHODS}")


def main(data, tasks, method, config=None, stride=1, n_jobs=1):
    """
    Main function to fit a method once on the prepared splits of a dataset and evaluate it
    on the test split for every task (horizon) of that dataset.
    Args:
        data (dict): Output of process_data.main (train, val, test, history, scaler, split).
        tasks (list): ForecastTasks of one dataset sharing the context length.
    Returns:
        list: Per task a dict with record (EvalRecord), model (ArModel carrying the scaler
              statistics, or None when every window is fitted separately) and selection.
    """
    config = config or AutoArConfig()
    if not tasks:
        raise ConfigError("No forecasting tasks given")
    if len({(task.dataset_id, task.context_len) for task in tasks}) > 1:
        raise ConfigError("Tasks evaluated together must share the dataset and the context length")

    started = time.perf_counter()
    forecaster, model, selection = fit_method(data, tasks[0], method, config)
    fit_seconds = time.perf_counter() - started

    if model is not None:
        check_channels(model, data["test"].columns)
        model = replace(model, scaler_mean=data["scaler"].mean_, scaler_std=data["scaler"].scale_)

    extras = {}
    if method == ZERO_SHOT_AR:
        extras = {"zero_shot_window": config.zero_shot_window, "zero_shot_mode": config.zero_shot_mode}

    results = []
    for task in tasks:
        record = evaluate(forecaster, task, data["test"], data["history"], method, stride, n_jobs)
        record = replace(record, chosen_p=None if model is None else model.p,
                         d=None if model is None else model.d, fit_seconds=fit_seconds, extras=extras)
        logger.info("%s H=%d %s: p=%s d=%s fit %.2fs mse=%.6f mae=%.6f", task.dataset_id, task.horizon,
                    method, record.chosen_p, record.d, fit_seconds, record.mse, record.mae)
        results.append({"record": record, "model": model, "selection": selection})
    return results
