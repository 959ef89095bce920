import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from dataset_presets import find_preset
from errors import ConfigError, DataError, InsufficientDataError

logger = logging.getLogger(__name__)

# Constants
TRAIN_FRACTION = 0.7
VAL_FRACTION = 0.1
TEST_FRACTION = 0.2
SPLIT_MODES = ("fractional", "explicit")
REMAINDER_POLICIES = ("test", "val")


@dataclass(frozen=True)
class SplitSpec:
    """Row counts of the contiguous train/validation/test segments."""
    train_len: int
    val_len: int
    test_len: int
    mode: str = "explicit"

    @property
    def total_len(self):
        return self.train_len + self.val_len + self.test_len


def load_csv(csv_file_path, expected_channels=None):
    """
    Function to load a benchmark CSV file into a multi-channel series.
    Args:
        csv_file_path (str): File with a header row, a timestamp first column and one column per channel.
        expected_channels (int, optional): Number of channels the file must contain.
    Returns:
        DataFrame: One float64 column per channel, timestamp column dropped, channel order preserved.
    """
    try:
        raw_df = pd.read_csv(csv_file_path, sep=",", encoding="utf-8", dtype=str,
                             keep_default_na=False, index_col=False)
    except FileNotFoundError:
        raise DataError(f"File {csv_file_path} not found")
    except pd.errors.EmptyDataError:
        raise DataError(f"CSV file {csv_file_path} is empty")
    except pd.errors.ParserError as e:
        raise DataError(f"Error parsing CSV file {csv_file_path}: {e}")

    if raw_df.shape[1] < 2:
        raise DataError(f"CSV file {csv_file_path} needs a timestamp column and at least one channel")

    channel_df = raw_df.iloc[:, 1:]
    if expected_channels is not None and channel_df.shape[1] != expected_channels:
        raise DataError(f"CSV file {csv_file_path} has {channel_df.shape[1]} channels, "
                        f"expected {expected_channels}")

    series = channel_df.apply(lambda column: pd.to_numeric(column.str.strip(), errors="coerce"))
    series = series.astype(np.float64)

    bad_cells = ~np.isfinite(series.to_numpy())
    if bad_cells.any():
        row, col = np.argwhere(bad_cells)[0]
        # +2: header line plus one-based line numbers
        raise DataError(f"CSV file {csv_file_path}: invalid value {channel_df.iat[row, col]!r} "
                        f"at line {row + 2}, column {channel_df.columns[col]!r}")

    series = series.reset_index(drop=True)
    validate_series(series)
    return series


def validate_series(series):
    """Check the invariants of a multi-channel series: T >= 1, C >= 1, finite float values."""
    if not isinstance(series, pd.DataFrame):
        raise DataError("Series must be a pandas DataFrame with one column per channel")
    if series.shape[0] < 1 or series.shape[1] < 1:
        raise DataError(f"Series must have at least one row and one channel, got shape {series.shape}")
    if not np.isfinite(series.to_numpy(dtype=np.float64)).all():
        raise DataError("Series contains missing or non-finite values")
    return series


def make_split_spec(t_len, mode="fractional", counts=None, remainder="test"):
    """
    Function to build the split specification for a series of t_len rows.
    Args:
        t_len (int): Number of rows of the full series.
        mode (str): 'fractional' (70/10/20) or 'explicit' (counts given).
        counts (tuple, optional): (train_len, val_len, test_len) for the explicit mode.
        remainder (str): In fractional mode, the segment that absorbs the rounding remainder.
            'test' floors 0.7T and 0.1T; 'val' floors 0.7T and 0.2T, the benchmark file convention.
    Returns:
        SplitSpec: The resolved row counts.
    """
    if mode not in SPLIT_MODES:
        raise ConfigError(f"Unknown split mode {mode!r}, expected one of {SPLIT_MODES}")

    if mode == "explicit":
        if counts is None or len(counts) != 3:
            raise ConfigError("Explicit split needs three counts (train, val, test)")
        train_len, val_len, test_len = (int(count) for count in counts)
    else:
        if remainder not in REMAINDER_POLICIES:
            raise ConfigError(f"Unknown remainder policy {remainder!r}, expected one of {REMAINDER_POLICIES}")
        # integer arithmetic keeps the floor exact
        train_len = t_len * 7 // 10
        if remainder == "test":
            val_len = t_len // 10
            test_len = t_len - train_len - val_len
        else:
            test_len = t_len * 2 // 10
            val_len = t_len - train_len - test_len

    if min(train_len, val_len, test_len) < 0 or train_len < 1:
        raise ConfigError(f"Invalid split counts {train_len}/{val_len}/{test_len}")
    spec = SplitSpec(train_len, val_len, test_len, mode)
    if spec.total_len > t_len:
        raise DataError(f"Split {train_len}/{val_len}/{test_len} needs {spec.total_len} rows, "
                        f"series has {t_len}")
    return spec


def split(series, spec):
    """Function to cut the series into contiguous, ordered train, validation and test segments."""
    t_len = series.shape[0]
    if spec.total_len > t_len:
        raise DataError(f"Split {spec.train_len}/{spec.val_len}/{spec.test_len} needs "
                        f"{spec.total_len} rows, series has {t_len}")

    train_end = spec.train_len
    val_end = train_end + spec.val_len
    test_end = val_end + spec.test_len

    train = series.iloc[:train_end].reset_index(drop=True)
    val = series.iloc[train_end:val_end].reset_index(drop=True)
    test = series.iloc[val_end:test_end].reset_index(drop=True)
    return train, val, test


def window_counts(spec, context_len, horizon):
    """
    Number of stride-1 forecasting windows per segment under the border protocol,
    where validation and test contexts may reach back into the preceding segments.
    """
    train_windows = max(spec.train_len - context_len - horizon + 1, 0)
    val_windows = max(spec.val_len - horizon + 1, 0)
    test_windows = max(spec.test_len - horizon + 1, 0)
    return train_windows, val_windows, test_windows


def fit_scaler(train):
    """
    Function to fit the per-channel standardization on the training split.
    The standard deviation is the population one (divide by N).
    """
    validate_series(train)
    values = train.to_numpy(dtype=np.float64)
    zero_variance = np.flatnonzero(values.std(axis=0) == 0)
    if zero_variance.size:
        names = [str(train.columns[idx]) for idx in zero_variance]
        raise DataError(f"Zero-variance channel(s) in training split: {', '.join(names)}")

    scaler = StandardScaler()
    scaler.fit(values)
    return scaler


def scaler_from_stats(mean, std):
    """Rebuild a fitted StandardScaler from stored per-channel means and standard deviations."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.shape != std.shape or mean.ndim != 1:
        raise DataError(f"Scaler statistics must be two vectors of one length, got {mean.shape} and {std.shape}")
    if np.any(std <= 0):
        raise DataError("Scaler standard deviations must be positive")

    scaler = StandardScaler()
    scaler.mean_ = mean
    scaler.scale_ = std
    scaler.var_ = std ** 2
    scaler.n_features_in_ = mean.shape[0]
    scaler.n_samples_seen_ = 0
    return scaler


def apply_scaler(scaler, series):
    """Standardize a series with training statistics, keeping its columns."""
    values = _check_scaler_width(scaler, series)
    scaled = scaler.transform(values)
    return pd.DataFrame(scaled, columns=series.columns)


def invert_scaler(scaler, series):
    """Undo apply_scaler; accepts a DataFrame or an array whose last axis is the channel axis."""
    if isinstance(series, pd.DataFrame):
        values = _check_scaler_width(scaler, series)
        return pd.DataFrame(scaler.inverse_transform(values), columns=series.columns)
    values = np.asarray(series, dtype=np.float64)
    return values * scaler.scale_ + scaler.mean_


def _check_scaler_width(scaler, series):
    values = series.to_numpy(dtype=np.float64)
    if values.shape[1] != scaler.mean_.shape[0]:
        raise DataError(f"Scaler was fitted on {scaler.mean_.shape[0]} channels, "
                        f"series has {values.shape[1]}")
    return values


def subsample_train(train, fraction):
    """
    Function to keep the trailing floor(fraction * T) rows of the training split.
    Args:
        train (DataFrame): The training split.
        fraction (float): Share of the training rows to keep, in (0, 1].
    Returns:
        DataFrame: The most recent rows; fraction=1 returns the split unchanged.
    """
    if not 0 < fraction <= 1:
        raise ConfigError(f"Training fraction must be in (0, 1], got {fraction}")
    if fraction == 1:
        return train

    keep = int(np.floor(fraction * train.shape[0]))
    if keep < 1:
        raise InsufficientDataError(f"Training fraction {fraction} leaves no rows of {train.shape[0]}")
    return train.iloc[train.shape[0] - keep:].reset_index(drop=True)


def resolve_dataset(dataset, data_dir="dataset"):
    """
    Function to resolve a preset name or a CSV path into its loading instructions.
    Returns:
        dict: name, path, expected channel count, split description and default horizons.
    """
    found = find_preset(dataset)
    if found is not None:
        name, preset = found
        return {
            "name": name,
            "path": os.path.join(data_dir, preset["file"]),
            "channels": preset["channels"],
            "split": dict(preset["split"]),
            "horizons": tuple(preset["horizons"]),
        }

    if not str(dataset).lower().endswith(".csv"):
        raise ConfigError(f"Unknown dataset preset {dataset!r}")
    return {
        "name": os.path.splitext(os.path.basename(dataset))[0],
        "path": dataset,
        "channels": None,
        "split": {"mode": "fractional", "remainder": "test"},
        "horizons": None,
    }


def split_spec_for(dataset_info, t_len):
    """Resolve the split description of a dataset against the row count of its file."""
    split_info = dataset_info["split"]
    return make_split_spec(t_len, mode=split_info["mode"], counts=split_info.get("counts"),
                           remainder=split_info.get("remainder", "test"))


def main(series, spec, train_fraction=1.0):
    """
    Main function to split the series, standardize every segment by the training
    statistics and subsample the standardized training split.
    Returns:
        dict: train, val, test (standardized), history (train+val, the rows preceding the test
              split), scaler and the split specification.
    """

    train, val, test = split(series, spec)
    scaler = fit_scaler(train)

    train_scaled = apply_scaler(scaler, train)
    val_scaled = apply_scaler(scaler, val)
    test_scaled = apply_scaler(scaler, test)
    history = pd.concat([train_scaled, val_scaled], ignore_index=True)

    fit_data = subsample_train(train_scaled, train_fraction)
    logger.debug("Split %d/%d/%d rows, fitting on %d training rows",
                 spec.train_len, spec.val_len, spec.test_len, fit_data.shape[0])

    return {
        "train": fit_data,
        "val": val_scaled,
        "test": test_scaled,
        "history": history,
        "scaler": scaler,
        "split": spec,
    }
