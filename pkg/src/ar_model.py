import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg

from errors import ConfigError, DataError, InsufficientDataError, NumericalError
from kpss_test import difference, integrate

logger = logging.getLogger(__name__)

# Constants
RIDGE_SCALE = 1e-8
CHOLESKY_TOL = 1e-7
CHUNK_ROWS = 4096
VARIANCE_FLOOR = np.finfo(np.float64).tiny
MODEL_FORMAT = "autoar-model/1"


@dataclass(frozen=True, eq=False)
class ArModel:
    """
    Fitted autoregression x_t = a0 + a1 x_{t-1} + ... + ap x_{t-p} on the d-differenced series.
    Pooled models share one coefficient vector across channels; per-channel models carry
    a (C, p) coefficient matrix and a C-vector of intercepts.
    """
    p: int
    intercept: np.ndarray
    coeffs: np.ndarray
    d: int
    noise_var: float
    n_train_samples: int
    pooled: bool = True
    include_intercept: bool = True
    channel_names: tuple = ()
    scaler_mean: np.ndarray = None
    scaler_std: np.ndarray = None

    def __post_init__(self):
        for name in ("intercept", "coeffs", "scaler_mean", "scaler_std"):
            value = getattr(self, name)
            if value is None:
                continue
            array = np.array(value, dtype=np.float64)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        object.__setattr__(self, "channel_names", tuple(str(name) for name in self.channel_names))

    @property
    def n_params(self):
        return parameter_count(self)


@dataclass(frozen=True)
class FitDiagnostics:
    rss: float
    n: int
    log_likelihood: float
    bic: float
    k: int = field(default=0)


def parameter_count(model):
    """Number of regression parameters: p coefficients plus the intercept, per channel when unpooled."""
    per_model = model.p + (1 if model.include_intercept else 0)
    if model.pooled:
        return per_model
    return per_model * int(np.asarray(model.intercept).shape[0])


def information_criterion(rss, n, k):
    """
    BIC n*ln(RSS/n) + k*ln(n) and the Gaussian log-likelihood at the least-squares optimum.
    An exact fit is scored at the variance floor so both stay finite.
    """
    log_sigma2 = np.log(max(rss / n, VARIANCE_FLOOR))
    bic = float(n * log_sigma2 + k * np.log(n))
    log_likelihood = float(-0.5 * n * (np.log(2.0 * np.pi) + log_sigma2 + 1.0))
    return bic, log_likelihood


def _lag_design(x, p, start, stop):
    """Rows [1, x_{t-1}, ..., x_{t-p}, x_t] for targets t in [start, stop)."""
    windows = sliding_window_view(x[start - p:stop], p + 1)
    design = np.empty((windows.shape[0], p + 2))
    design[:, 0] = 1.0
    design[:, 1:p + 1] = windows[:, p - 1::-1]
    design[:, p + 1] = windows[:, p]
    return design


def _channel_gram(x, p, start, stop, weights):
    gram = np.zeros((p + 2, p + 2))
    for chunk_start in range(start, stop, CHUNK_ROWS):
        chunk_stop = min(chunk_start + CHUNK_ROWS, stop)
        design = _lag_design(x, p, chunk_start, chunk_stop)
        if weights is None:
            gram += design.T @ design
        else:
            gram += (design * weights[chunk_start:chunk_stop, None]).T @ design
    return gram


def lagged_gram(values, p, start=None, stop=None, weights=None, pooled=True, n_jobs=1):
    """
    Function to accumulate the Gram matrix Z'WZ of the lagged design Z = [1, lags, target].
    Args:
        values (ndarray): T x C series (already differenced).
        p (int): Number of lags.
        start, stop (int, optional): Target range [start, stop); defaults to every target with a full lookback.
        weights (ndarray, optional): Per-target multiplicity, length T, shared by all channels.
        pooled (bool): Sum over channels (shape (p+2, p+2)) or keep one Gram per channel (C, p+2, p+2).
    Returns:
        ndarray: The Gram matrix; channel contributions are reduced in channel order.
    """
    t_len, n_channels = values.shape
    start = p if start is None else start
    stop = t_len if stop is None else stop
    if start < p or stop > t_len:
        raise DataError(f"Target range [{start}, {stop}) invalid for lookback {p} and length {t_len}")
    if stop <= start:
        shape = (p + 2, p + 2) if pooled else (n_channels, p + 2, p + 2)
        return np.zeros(shape)

    columns = np.ascontiguousarray(values.T)
    grams = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_channel_gram)(columns[idx], p, start, stop, weights) for idx in range(n_channels))

    if not pooled:
        return np.stack(grams)
    total = np.zeros((p + 2, p + 2))
    for gram in grams:
        total += gram
    return total


def gram_block(gram, p_big, p, include_intercept=True):
    """Extract the Gram of a p-lag design from a Gram built with p_big >= p lags (same targets)."""
    index = list(range(0 if include_intercept else 1, p + 1)) + [p_big + 1]
    index = np.asarray(index)
    return gram[..., index[:, None], index]


def solve_normal_equations(xtx, xty):
    """
    Function to solve X'X b = X'y.
    Cholesky first; on failure or near-singularity a ridge of RIDGE_SCALE * mean(diag) is added,
    and the last resort is a column-pivoted orthogonal least-squares solve.
    """
    try:
        factor = linalg.cho_factor(xtx, check_finite=False)
        diag = np.abs(np.diag(factor[0]))
        if diag.min() > CHOLESKY_TOL * diag.max():
            return linalg.cho_solve(factor, xty, check_finite=False)
    except linalg.LinAlgError:
        pass

    ridge = RIDGE_SCALE * float(np.mean(np.diag(xtx)))
    regularized = xtx + ridge * np.eye(xtx.shape[0])
    logger.debug("Normal equations ill-conditioned, adding ridge %.3g", ridge)
    try:
        factor = linalg.cho_factor(regularized, check_finite=False)
        coef = linalg.cho_solve(factor, xty, check_finite=False)
    except linalg.LinAlgError:
        logger.debug("Regularized Cholesky failed, falling back to pivoted QR")
        coef = linalg.lstsq(regularized, xty, lapack_driver="gelsy")[0]

    if not np.all(np.isfinite(coef)):
        raise NumericalError("Least-squares solve produced non-finite coefficients")
    return coef


def residual_sum_of_squares(values, p, intercept, coeffs, start=None, stop=None, weights=None):
    """Exact (weighted) residual sum of squares over the same targets as lagged_gram."""
    t_len, n_channels = values.shape
    start = p if start is None else start
    stop = t_len if stop is None else stop
    intercept = np.broadcast_to(intercept, (n_channels,))
    coeffs = np.broadcast_to(coeffs, (n_channels, p))

    rss = 0.0
    for idx in range(n_channels):
        x = values[:, idx]
        for chunk_start in range(start, stop, CHUNK_ROWS):
            chunk_stop = min(chunk_start + CHUNK_ROWS, stop)
            design = _lag_design(x, p, chunk_start, chunk_stop)
            resid = design[:, p + 1] - intercept[idx] - design[:, 1:p + 1] @ coeffs[idx]
            if weights is None:
                rss += float(resid @ resid)
            else:
                rss += float((resid * weights[chunk_start:chunk_stop]) @ resid)
    return rss


def estimate_from_gram(values, p, d, gram, n_samples, start=None, stop=None, weights=None,
                       include_intercept=True, pooled=True, channel_names=()):
    """
    Function to solve the (pooled) least-squares problem from an accumulated Gram matrix.
    Maximizing the i.i.d. Gaussian multi-channel likelihood is the same as minimizing the
    pooled residual sum of squares, so the noise variance is RSS / n.
    Returns:
        tuple: (ArModel, FitDiagnostics).
    """
    n_channels = values.shape[1]
    block = gram_block(gram, p, p, include_intercept)
    offset = 1 if include_intercept else 0

    if pooled:
        solution = solve_normal_equations(block[:-1, :-1], block[:-1, -1])
        intercept = np.array(solution[0] if include_intercept else 0.0)
        coeffs = solution[offset:]
    else:
        solutions = [solve_normal_equations(channel[:-1, :-1], channel[:-1, -1]) for channel in block]
        solutions = np.stack(solutions)
        intercept = solutions[:, 0] if include_intercept else np.zeros(n_channels)
        coeffs = solutions[:, offset:]

    rss = residual_sum_of_squares(values, p, intercept, coeffs, start, stop, weights)
    rss = max(rss, 0.0)
    n_params = (p + offset) * (1 if pooled else n_channels)
    k = n_params + 1
    bic, log_likelihood = information_criterion(rss, n_samples, k)

    model = ArModel(p=p, intercept=intercept, coeffs=coeffs, d=d, noise_var=rss / n_samples,
                    n_train_samples=int(n_samples), pooled=pooled, include_intercept=include_intercept,
                    channel_names=tuple(channel_names))
    return model, FitDiagnostics(rss, int(n_samples), log_likelihood, bic, k)


def check_lookback(p, d, t_len):
    if p < 1:
        raise ConfigError(f"Lookback must be at least 1, got {p}")
    if d not in (0, 1):
        raise ConfigError(f"Only differencing orders 0 and 1 are supported, got {d}")
    if t_len - d <= p:
        raise InsufficientDataError(f"Lookback {p} with d={d} needs more than {p + d} rows, got {t_len}")


def fit(train, p, d, include_intercept=True, pooled=True, n_jobs=1):
    """
    Function to fit one autoregression shared by all channels.
    Args:
        train (DataFrame): Standardized training series (T x C).
        p (int): Lookback.
        d (int): Differencing order, 0 or 1.
        include_intercept (bool): Whether to estimate the constant a0 (a drift term when d = 1).
        pooled (bool): One coefficient vector for all channels, or one per channel.
        n_jobs (int): Threads used to accumulate the Gram matrix.
    Returns:
        tuple: (ArModel, FitDiagnostics).
    """
    check_lookback(p, d, train.shape[0])
    values = difference(train, d).to_numpy(dtype=np.float64)

    gram = lagged_gram(values, p, pooled=pooled, n_jobs=n_jobs)
    n_samples = values.shape[1] * (values.shape[0] - p)
    return estimate_from_gram(values, p, d, gram, n_samples, include_intercept=include_intercept,
                              pooled=pooled, channel_names=train.columns)


def forecast_batch(model, contexts, horizon):
    """
    Function to roll the autoregression forward recursively for a batch of contexts.
    Args:
        model (ArModel): Fitted model.
        contexts (ndarray): B x L x C standardized contexts, L >= p + d.
        horizon (int): Number of steps H.
    Returns:
        ndarray: B x H x C forecasts, integrated back to levels when d = 1.
    """
    contexts = np.asarray(contexts, dtype=np.float64)
    n_batch, context_len, n_channels = contexts.shape
    p = model.p
    if context_len < p + model.d:
        raise InsufficientDataError(f"Context of length {context_len} is shorter than p + d = {p + model.d}")
    if horizon < 0:
        raise ConfigError(f"Horizon must be non-negative, got {horizon}")

    series = np.diff(contexts, axis=1) if model.d == 1 else contexts
    buffer = np.empty((n_batch, n_channels, p + horizon))
    buffer[:, :, :p] = series[:, -p:, :].transpose(0, 2, 1)

    # buffer runs oldest to newest, so the coefficients are applied reversed
    weights = model.coeffs[..., ::-1]
    for step in range(horizon):
        window = buffer[:, :, step:step + p]
        if model.pooled:
            buffer[:, :, p + step] = model.intercept + window @ weights
        else:
            buffer[:, :, p + step] = model.intercept + np.einsum("bcp,cp->bc", window, weights)

    predictions = buffer[:, :, p:].transpose(0, 2, 1)
    if model.d == 1:
        predictions = integrate(predictions, contexts[:, -1:, :])
    return np.ascontiguousarray(predictions)


def forecast(model, context, horizon):
    """Forecast H steps (H x C) from one standardized context."""
    if isinstance(context, pd.DataFrame):
        check_channels(model, context.columns)
        context = context.to_numpy(dtype=np.float64)
    return forecast_batch(model, np.asarray(context)[None], horizon)[0]


def check_channels(model, columns):
    columns = tuple(str(column) for column in columns)
    if not model.pooled and len(columns) != np.asarray(model.intercept).shape[0]:
        raise DataError(f"Model has {np.asarray(model.intercept).shape[0]} channels, context has {len(columns)}")
    if model.channel_names and columns != model.channel_names:
        raise DataError(f"Context channels {list(columns)} do not match model channels "
                        f"{list(model.channel_names)}")


def model_to_dict(model):
    return {
        "format": MODEL_FORMAT,
        "p": model.p,
        "d": model.d,
        "intercept": np.asarray(model.intercept).tolist(),
        "coeffs": np.asarray(model.coeffs).tolist(),
        "noise_var": model.noise_var,
        "n_train_samples": model.n_train_samples,
        "pooled": model.pooled,
        "include_intercept": model.include_intercept,
        "channel_names": list(model.channel_names),
        "scaler_mean": None if model.scaler_mean is None else model.scaler_mean.tolist(),
        "scaler_std": None if model.scaler_std is None else model.scaler_std.tolist(),
    }


def model_from_dict(data):
    if data.get("format") != MODEL_FORMAT:
        raise DataError(f"Unsupported model format {data.get('format')!r}")
    try:
        return ArModel(p=int(data["p"]), intercept=data["intercept"], coeffs=data["coeffs"],
                       d=int(data["d"]), noise_var=float(data["noise_var"]),
                       n_train_samples=int(data["n_train_samples"]), pooled=bool(data["pooled"]),
                       include_intercept=bool(data["include_intercept"]),
                       channel_names=tuple(data.get("channel_names") or ()),
                       scaler_mean=data.get("scaler_mean"), scaler_std=data.get("scaler_std"))
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"Malformed model record: {e}") from e


def save_model(model, path):
    """Write the model as a flat JSON record; floats are written with their shortest exact repr."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model), f, indent=2)
        f.write("\n")


def load_model(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise DataError(f"Model file {path} not found")
    except json.JSONDecodeError as e:
        raise DataError(f"Model file {path} is not valid JSON: {e}")
    return model_from_dict(data)

