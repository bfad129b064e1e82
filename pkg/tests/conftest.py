"""Shared fixtures for the mitadml test suites."""

import numpy as np
import pytest

from mitadml.core.simulate import simulate
from mitadml.models.dataset import Dataset
from mitadml.models.design import DesignMatrix
from mitadml.models.simulation import DgpConfig

HEADER = "mita,lon,lat,dpot,dbnd,elev,slope,infants,children,adults,seg1,seg2,seg3,lhhequiv,district"

SMALL_ROWS = [
    "1,-0.50,0.10,7.10,12.5,3.9,5.1,0,2,2,0,1,0,5.41,D01",
    "1,-0.40,0.20,7.40,30.0,4.1,6.0,1,1,3,0,1,0,5.62,D01",
    "0,0.30,-0.10,9.80,55.0,3.6,9.2,0,0,2,0,0,1,6.20,D02",
    "1,-0.20,0.00,8.10,74.9,3.8,7.7,2,3,2,1,0,0,5.05,D02",
    "0,0.60,-0.30,10.20,75.0,3.5,4.4,0,1,4,0,0,1,6.48,D03",
    "1,-0.70,0.40,6.90,99.0,4.2,8.8,1,2,1,0,0,0,5.33,D03",
    "0,0.10,0.30,9.10,100.0,3.7,3.2,0,0,2,1,0,0,6.02,D04",
    "0,0.80,-0.50,10.90,140.0,3.4,2.9,1,1,3,0,0,1,6.11,D04",
]


def csv_text(rows, header=HEADER) -> str:
    """Join a header and data rows into comma-delimited text."""
    return "\n".join([header] + list(rows)) + "\n"


@pytest.fixture
def small_csv():
    """Eight hand-written household records spanning the three bands."""
    return csv_text(SMALL_ROWS)


@pytest.fixture(scope="session")
def synthetic():
    """A simulated dataset with its ground truth."""
    return simulate(DgpConfig(n=600, seed=11))


@pytest.fixture(scope="session")
def synthetic_ds(synthetic) -> Dataset:
    return synthetic[0]


def random_design(rng: np.random.Generator, n: int, k: int, clusters: int = 0) -> DesignMatrix:
    """Random linear design with an intercept and k - 1 covariates."""
    covariates = rng.normal(size=(n, k - 1))
    d = (covariates[:, 0] + rng.normal(size=n) > 0).astype(np.float64)
    if d.min() == d.max():
        d[:2] = [0.0, 1.0]
    y = 0.5 * d + covariates @ rng.normal(size=k - 1) + rng.normal(size=n)
    ids = np.arange(n) % clusters if clusters else np.arange(n)
    return DesignMatrix(
        y=y,
        d=d,
        x=np.column_stack([np.ones(n), covariates]),
        cluster_ids=np.array([f"c{i}" for i in ids]),
        column_names=["const"] + [f"x{j}" for j in range(1, k)],
        include_intercept=True,
    )
