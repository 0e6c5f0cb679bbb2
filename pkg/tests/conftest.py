import numpy as np
import pytest

from phc.data import apply_normal_scores, assign_splits
from phc.simulate import SimConfig, simulate

SMALL_SIM = SimConfig(
    n_subgroups=6, n_true_clusters=2, rows_per_subgroup=150, n_features=8, binary_fraction=0.5, seed=3
)


@pytest.fixture(scope="session")
def small_sim():
    """A quick 6-subgroup, 2-cluster dataset shared by integration tests."""
    dataset, truth = simulate(SMALL_SIM)
    dataset = apply_normal_scores(dataset)
    splits = assign_splits(dataset, seed=SMALL_SIM.seed)
    return dataset, splits, truth


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
