import os

import numpy as np
import pytest

from nscov import SpatialDataset

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")


def make_dataset(n=40, seed=0, covariates=("u",), response=True, d=2,
                 loc=None):
    """Small synthetic dataset with standardized covariate columns."""
    rng = np.random.default_rng(seed)
    if loc is None:
        loc = rng.uniform(0.0, 1.0, size=(n, d))
    else:
        loc = np.asarray(loc, dtype=float)
        n = loc.shape[0]
    covs = {}
    for name in covariates:
        v = rng.standard_normal(n)
        covs[name] = (v - v.mean()) / v.std(ddof=1)
    z = rng.standard_normal(n) if response else None
    return SpatialDataset(loc, z, covs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def data_dir():
    return DATA_DIR
