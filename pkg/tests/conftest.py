import numpy as np
import pytest

from netlasso.data import Dataset, standardize
from netlasso.weights import WeightMatrix, from_pairs


def make_dataset(n=80, p=6, maf=0.4, seed=0, beta=None, pair_beta=None,
                 noise=0.5):
    """Small binomial-dosage dataset with a known linear trait."""
    rng = np.random.default_rng(seed)
    g = rng.binomial(2, maf, size=(n, p)).astype(np.float64)
    while np.any(np.ptp(g, axis=0) == 0):
        g = rng.binomial(2, maf, size=(n, p)).astype(np.float64)
    y = noise * rng.standard_normal(n)
    if beta:
        for j, b in beta.items():
            y = y + b * g[:, j]
    if pair_beta:
        for (j, k), b in pair_beta.items():
            y = y + b * g[:, j] * g[:, k]
    return Dataset(
        genotypes=g,
        snp_ids=[f"snp{j + 1}" for j in range(p)],
        y=y,
        sample_ids=[f"id{i + 1}" for i in range(n)],
    )


@pytest.fixture(scope="session")
def small_ds():
    return make_dataset(
        n=120, p=6, seed=3,
        beta={0: 0.8, 1: -0.6}, pair_beta={(0, 1): 0.5},
    )


@pytest.fixture(scope="session")
def small_sd(small_ds):
    return standardize(small_ds)


@pytest.fixture(scope="session")
def small_w(small_ds) -> WeightMatrix:
    # pairs (0,1), (0,2), (1,2), (3,4): one true pair plus neighbors
    return from_pairs([(0, 1), (0, 2), (1, 2), (3, 4)], small_ds.n_snps)
