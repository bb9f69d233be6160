"""Shared helpers for the test suite."""

import io

import numpy as np
import pytest

from mosaictest import (
    ExposureSeries,
    ReturnsPanel,
    SimConfig,
    gen_semisynthetic,
)


def gaussian_null(T, p, k, seed):
    """A panel that satisfies the null exactly, all Gaussian."""
    config = SimConfig(
        T=T, p=p, k=k, rho=0.0, factor_dist="gaussian",
        noise_dist="gaussian", seed=seed,
    )
    panel, exposures, _ = gen_semisynthetic(config)
    return panel, exposures


def panel_from_values(values, available=None, start="2020-01-01"):
    """Wrap a raw matrix in a ReturnsPanel with synthetic labels."""
    values = np.asarray(values, dtype=np.float64)
    T, p = values.shape
    if available is None:
        available = np.ones((T, p), dtype=bool)
    values = np.where(available, values, np.nan)
    return ReturnsPanel(
        times=np.datetime64(start, "D") + np.arange(T),
        assets=tuple(f"A{j:03d}" for j in range(p)),
        values=values,
        available=np.asarray(available, dtype=bool),
    )


def constant_exposures(L, T):
    L = np.asarray(L, dtype=np.float64)
    return ExposureSeries.constant(
        L, factor_ids=tuple(f"F{q}" for q in range(L.shape[1])), n_times=T
    )


def csv_source(text):
    """An in-memory CSV file."""
    return io.StringIO(text)


@pytest.fixture
def tiny_returns_csv():
    return (
        "date,asset_id,return\n"
        "2021-03-01,AAA,0.5\n"
        "2021-03-01,BBB,-0.25\n"
        "2021-03-02,AAA,0.125\n"
        "2021-03-02,BBB,1.5\n"
    )
