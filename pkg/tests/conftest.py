import json
from pathlib import Path

import numpy as np
import pytest

from apci import Dataset, GridSpec

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def benchmark():
    with open(DATA_DIR / "benchmark_lfp.json") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def lfp_grid(benchmark):
    return GridSpec.from_dict(benchmark["grid"])


def square_grid(a: int, p: int) -> GridSpec:
    return GridSpec(age_breaks=tuple(range(a + 1)), period_breaks=tuple(range(p + 1)))


def balanced_dataset(
    a: int,
    p: int,
    rng: np.random.Generator,
    family: str = "gaussian",
    n_per_cell: int = 30,
    covariate_levels: int = 0,
    weighted: bool = False,
) -> Dataset:
    """Random dataset with every cell populated; optional 1 covariate column."""
    i = np.repeat(np.arange(1, a + 1), p * n_per_cell)
    j = np.tile(np.repeat(np.arange(1, p + 1), n_per_cell), a)
    n = len(i)
    if family == "gaussian":
        y = rng.normal(0.0, 1.0, n) + 0.3 * i + 0.1 * j
    else:
        y = (rng.random(n) < 0.3 + 0.4 * (i % 2)).astype(float)
    w = rng.uniform(0.5, 2.0, n) if weighted else np.ones(n)
    covs = {}
    if covariate_levels:
        covs["grp"] = np.asarray(
            [str(v) for v in rng.integers(0, covariate_levels, n)], dtype=object
        )
    return Dataset(y=y, weight=w, age_idx=i, period_idx=j, covariates=covs)


def binomial_cell_dataset(spec: GridSpec, eta: np.ndarray, n: int, rng: np.random.Generator) -> Dataset:
    """Per-cell binomial draws packed as two weighted rows per cell.

    Statistically identical to n Bernoulli records per cell; the weighted-row
    form keeps Monte Carlo sweeps fast. Logit standard errors are unaffected
    by the row compression (dispersion is fixed at 1).
    """
    a, p = spec.n_age, spec.n_period
    prob = 1.0 / (1.0 + np.exp(-np.asarray(eta, dtype=float)))
    successes = rng.binomial(n, prob)
    i0, j0 = np.meshgrid(np.arange(1, a + 1), np.arange(1, p + 1), indexing="ij")
    return Dataset(
        y=np.concatenate([np.ones(a * p), np.zeros(a * p)]),
        weight=np.concatenate([successes.ravel(), (n - successes).ravel()]).astype(float),
        age_idx=np.concatenate([i0.ravel(), i0.ravel()]),
        period_idx=np.concatenate([j0.ravel(), j0.ravel()]),
    )


@pytest.fixture
def make_dataset():
    return balanced_dataset


@pytest.fixture
def make_grid():
    return square_grid

