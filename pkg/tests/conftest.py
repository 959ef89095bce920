import numpy as np
import pandas as pd
import pytest


def simulate_ar(coeffs, n_rows, n_channels=1, intercept=0.0, noise=1.0, seed=0, burn_in=200):
    """Channels drawn independently from x_t = intercept + sum_i coeffs[i] x_{t-i} + noise * e_t."""
    rng = np.random.default_rng(seed)
    p = len(coeffs)
    total = n_rows + burn_in
    values = np.zeros((total, n_channels))
    shocks = rng.standard_normal((total, n_channels)) * noise
    for t in range(p, total):
        values[t] = intercept + sum(coeffs[i] * values[t - 1 - i] for i in range(p)) + shocks[t]
    return pd.DataFrame(values[burn_in:], columns=[f"ch{idx}" for idx in range(n_channels)])


@pytest.fixture
def make_ar():
    return simulate_ar


@pytest.fixture
def write_csv(tmp_path):
    """Write a series as a benchmark CSV (date column first) and return its path."""
    def write(series, name="toy.csv"):
        frame = series.copy()
        frame.insert(0, "date", np.arange(len(series)))
        path = tmp_path / name
        frame.to_csv(path, index=False)
        return str(path)
    return write
