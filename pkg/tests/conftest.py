import numpy as np
import pytest

from slipnet.dataset import DESK_CUBE, build_dataset, train_test_split_indices
from slipnet.estimator import SlipRegressor


@pytest.fixture(scope="session")
def desk_dataset():
    return build_dataset(DESK_CUBE, seed=42)


@pytest.fixture(scope="session")
def desk_split(desk_dataset):
    fit_idx, test_idx = train_test_split_indices(len(desk_dataset), 0.1, 42)
    test_idx = test_idx[~desk_dataset.noisy[test_idx]]
    return fit_idx, test_idx


@pytest.fixture(scope="session")
def desk_estimator(desk_dataset, desk_split):
    """The desk-scale model: default cube, seed 42, 30 epochs, default hyperparameters."""
    fit_idx, _ = desk_split
    est = SlipRegressor(epochs=30, random_state=42)
    return est.fit(desk_dataset.X[fit_idx], desk_dataset.y[fit_idx])


@pytest.fixture(scope="session")
def desk_model_file(desk_estimator, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "desk.mdl"
    desk_estimator.save(path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
