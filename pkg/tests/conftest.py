import numpy as np
import pytest

from sfnn.data import RawSeriesTable, SplitSpec, zscore_fit_transform


def make_table(values: np.ndarray, names=None) -> RawSeriesTable:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if names is None:
        names = tuple(f"s{i}" for i in range(values.shape[1]))
    return RawSeriesTable(names=tuple(names), timestamps=None, values=values)


def make_dataset(values, split="7:1:2"):
    return zscore_fit_transform(make_table(values), SplitSpec.from_string(split))


def sinusoid(period=24, length=1200, level=2.0, n_series=1, phase_step=0.7):
    """Noiseless sinusoid(s); distinct phases keep multiple series independent."""
    t = np.arange(length)
    cols = [
        np.sin(2 * np.pi * t / period + i * phase_step) + level for i in range(n_series)
    ]
    return np.column_stack(cols)


@pytest.fixture
def sinusoid_dataset():
    return make_dataset(sinusoid())


def ar2_series(length=3000, noise=0.1, seed=42):
    """A stable second-order autoregression; its best forecaster is linear."""
    rng = np.random.default_rng(seed)
    x = np.zeros(length)
    eps = noise * rng.standard_normal(length)
    for t in range(2, length):
        x[t] = 1.6 * x[t - 1] - 0.8 * x[t - 2] + eps[t]
    return x
