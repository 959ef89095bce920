import logging
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from ar_model import estimate_from_gram, fit, forecast, gram_block, lagged_gram
from errors import ConfigError, InsufficientDataError
from kpss_test import DEFAULT_SIGNIFICANCE, critical_value_for
from kpss_test import main as kpss_test

logger = logging.getLogger(__name__)

# Constants
MAX_LOOKBACK = 512
DEFAULT_LOOKBACK_GRID = (1, 2, 4, 8, 16, 32, 64, 96, 128, 192, 256, 384, 512)
ZERO_SHOT_GRID = (64, 96, 128, 192)
ZERO_SHOT_WINDOW = 256
ZERO_SHOT_MODES = ("per_window", "per_dataset")


@dataclass(frozen=True)
class AutoArConfig:
    max_lookback: int = MAX_LOOKBACK
    lookback_grid: tuple = DEFAULT_LOOKBACK_GRID
    kpss_significance: float = DEFAULT_SIGNIFICANCE
    zero_shot: bool = False
    zero_shot_window: int = ZERO_SHOT_WINDOW
    zero_shot_grid: tuple = ZERO_SHOT_GRID
    zero_shot_mode: str = "per_window"
    force_d: int = None
    include_intercept: bool = True
    pooled: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "lookback_grid", tuple(int(p) for p in self.lookback_grid))
        object.__setattr__(self, "zero_shot_grid", tuple(int(p) for p in self.zero_shot_grid))
        check_grid(self.lookback_grid, "lookback_grid", self.max_lookback)
        check_grid(self.zero_shot_grid, "zero_shot_grid")
        critical_value_for(self.kpss_significance)
        if self.zero_shot_window < 2:
            raise ConfigError(f"Zero-shot window must be at least 2, got {self.zero_shot_window}")
        if self.zero_shot_mode not in ZERO_SHOT_MODES:
            raise ConfigError(f"Unknown zero-shot mode {self.zero_shot_mode!r}, expected one of {ZERO_SHOT_MODES}")
        if self.force_d not in (None, 0, 1):
            raise ConfigError(f"force_d must be 0, 1 or unset, got {self.force_d}")
        if self.n_jobs == 0:
            raise ConfigError("n_jobs must be non-zero")


@dataclass(frozen=True)
class SelectionResult:
    chosen_p: int
    d: int
    bic_by_p: dict
    per_channel_reject: tuple
    skipped: tuple = ()


def check_grid(grid, name, max_lookback=None):
    """Grid entries must be distinct, sorted ascending, positive and at most max_lookback when given."""
    if list(grid) != sorted(set(grid)):
        raise ConfigError(f"{name} must be distinct and sorted ascending, got {list(grid)}")
    if grid and grid[0] < 1:
        raise ConfigError(f"{name} entries must be positive, got {list(grid)}")
    if grid and max_lookback is not None and grid[-1] > max_lookback:
        raise ConfigError(f"{name} entries must not exceed {max_lookback}, got {list(grid)}")


def _candidate_fit(values, p, p_big, big_gram, d, config, channel_names):
    """Fit one grid candidate reusing the Gram matrix built for the largest candidate."""
    gram = gram_block(big_gram, p_big, p) + lagged_gram(values, p, start=p, stop=p_big,
                                                        pooled=config.pooled)
    n_samples = values.shape[1] * (values.shape[0] - p)
    return estimate_from_gram(values, p, d, gram, n_samples, include_intercept=config.include_intercept,
                              pooled=config.pooled, channel_names=channel_names)


def select_lookback(values, candidates, d, config, channel_names=()):
    """
    Function to fit every candidate lookback on the differenced training series and score it by BIC.
    Returns:
        tuple: bic_by_p (ordered by p) and the fitted (model, diagnostics) per candidate.
    """
    p_big = max(candidates)
    big_gram = lagged_gram(values, p_big, pooled=config.pooled, n_jobs=config.n_jobs)

    fits = Parallel(n_jobs=config.n_jobs, prefer="threads")(
        delayed(_candidate_fit)(values, p, p_big, big_gram, d, config, channel_names) for p in candidates)

    fits = dict(zip(candidates, fits))
    bic_by_p = {p: fits[p][1].bic for p in candidates}
    for p in candidates:
        logger.debug("Lookback %d: BIC %.6f", p, bic_by_p[p])
    return bic_by_p, fits


def argmin_bic(bic_by_p):
    """Lookback with the smallest BIC; ties go to the smallest lookback."""
    return min(bic_by_p, key=lambda p: (bic_by_p[p], p))


def run_auto_ar(train, config=None, context_len=None):
    """
    Main pipeline: decide the differencing with KPSS, select the lookback by BIC over the grid,
    and return the maximum-likelihood model at the chosen lookback.
    Args:
        train (DataFrame): Standardized training split.
        config (AutoArConfig): Pipeline settings.
        context_len (int): Rows of history the model will forecast from; lookbacks needing
                           more than context_len - d rows are skipped. None leaves them unbounded.
    Returns:
        tuple: (ArModel, SelectionResult).
    """
    config = config or AutoArConfig()
    grid = config.lookback_grid
    if not grid:
        raise ConfigError("Lookback grid is empty")

    t_len = train.shape[0]
    upper = min(config.max_lookback, t_len - 1, t_len if context_len is None else context_len)
    if not any(p <= upper for p in grid):
        raise InsufficientDataError(f"No lookback in {list(grid)} is at most {upper} for a training split "
                                    f"of {t_len} rows; all candidates skipped")

    differenced, decision = kpss_test(train, config.kpss_significance, config.force_d)
    values = differenced.to_numpy(dtype=np.float64)

    # the largest lookback still leaving one training sample per channel
    limit = min(config.max_lookback, values.shape[0] - 1)
    if context_len is not None:
        limit = min(limit, context_len - decision.d)
    candidates = [p for p in grid if p <= limit]
    skipped = tuple(p for p in grid if p > limit)
    if skipped:
        logger.warning("Skipping lookbacks %s: differenced training split has %d rows, forecast context %s",
                       list(skipped), values.shape[0], "unbounded" if context_len is None else context_len)
    if not candidates:
        raise InsufficientDataError(f"All lookbacks {list(skipped)} skipped: differenced training "
                                    f"split has {values.shape[0]} rows, the largest feasible lookback is {limit}")

    bic_by_p, fits = select_lookback(values, candidates, decision.d, config, train.columns)
    chosen_p = argmin_bic(bic_by_p)
    model, _ = fits[chosen_p]

    selection = SelectionResult(chosen_p, decision.d, bic_by_p, decision.per_channel_reject, skipped)
    return model, selection


def run_untuned_ar(train, p=MAX_LOOKBACK, n_jobs=1):
    """The untuned baseline: fixed lookback, no differencing, no selection."""
    model, diagnostics = fit(train, p, 0, n_jobs=n_jobs)
    logger.debug("Untuned AR(%d): BIC %.6f", p, diagnostics.bic)
    return model


def zero_shot_weights(series_len, window, p):
    """
    Multiplicity of every target index when all series_len - window + 1 rolling windows of
    length `window` are stacked and each contributes its targets with a full lookback p.
    """
    targets = np.arange(series_len)
    upper = np.minimum(targets - p, series_len - window)
    lower = np.maximum(0, targets - window + 1)
    return np.clip(upper - lower + 1, 0, None).astype(np.float64)


def zero_shot_sample_count(context_len, window, p, n_channels):
    """Rows of the pooled zero-shot design: C * (L - W + 1) * (W - p)."""
    return n_channels * (context_len - window + 1) * max(window - p, 0)


def fit_zero_shot(context, config):
    """
    Function to run the three-step pipeline on the rolling windows of a single context.
    Args:
        context (DataFrame): The length-L history of one test example (standardized).
        config (AutoArConfig): Settings; zero_shot must be enabled and every grid entry below W.
    Returns:
        tuple: (ArModel, SelectionResult).
    """
    if not config.zero_shot:
        raise ConfigError("Zero-shot fitting requires zero_shot=True in the configuration")
    context_len = context.shape[0]
    window = config.zero_shot_window
    if window >= context_len:
        raise ConfigError(f"Zero-shot window {window} must be shorter than the context length {context_len}")
    grid = config.zero_shot_grid
    if not grid:
        raise ConfigError("Zero-shot grid is empty")
    if grid[-1] >= window:
        raise ConfigError(f"Zero-shot grid entries {list(grid)} must be smaller than the window {window}")

    differenced, decision = kpss_test(context, config.kpss_significance, config.force_d)
    values = differenced.to_numpy(dtype=np.float64)
    series_len = values.shape[0]
    # differencing a window of length W leaves W - d points
    diff_window = window - decision.d

    candidates = [p for p in grid if p < diff_window]
    skipped = tuple(p for p in grid if p >= diff_window)
    if skipped:
        logger.warning("Skipping zero-shot lookbacks %s: differenced window has %d points",
                       list(skipped), diff_window)
    if not candidates:
        raise InsufficientDataError(f"No zero-shot lookback fits in a window of {diff_window} points")

    bic_by_p = {}
    fits = {}
    for p in candidates:
        weights = zero_shot_weights(series_len, diff_window, p)
        gram = lagged_gram(values, p, weights=weights, pooled=config.pooled)
        n_samples = zero_shot_sample_count(series_len, diff_window, p, values.shape[1])
        fits[p] = estimate_from_gram(values, p, decision.d, gram, n_samples, weights=weights,
                                     include_intercept=config.include_intercept, pooled=config.pooled,
                                     channel_names=context.columns)
        bic_by_p[p] = fits[p][1].bic

    chosen_p = argmin_bic(bic_by_p)
    selection = SelectionResult(chosen_p, decision.d, bic_by_p, decision.per_channel_reject, skipped)
    return fits[chosen_p][0], selection


def run_zero_shot(context, config, horizon):
    """Fit on the context's rolling windows only, then forecast H steps from the full context."""
    model, _ = fit_zero_shot(context, config)
    return forecast(model, context, horizon)
