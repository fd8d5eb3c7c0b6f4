import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from slipnet.estimator import SlipRegressor, check_windows
from slipnet.exceptions import DomainError


def _toy(n=400, seed=0):
    rng = np.random.default_rng(seed)
    lam = np.sort(rng.uniform(0, 1, (n, 3)), axis=1)
    mu = 0.8 * (1 - np.exp(-20 * lam))
    X = np.empty((n, 6))
    X[:, 0::2], X[:, 1::2] = lam, mu
    return X, 0.1 + 0.05 * lam[:, 0]


def test_get_set_params_and_clone():
    est = SlipRegressor(epochs=3, dropout=0.1)
    params = est.get_params()
    assert params["epochs"] == 3 and params["dropout"] == 0.1
    est.set_params(epochs=5)
    assert clone(est).get_params()["epochs"] == 5


def test_check_windows():
    with pytest.raises(DomainError):
        check_windows(np.zeros((2, 5)))
    with pytest.raises(DomainError):
        check_windows(np.full((2, 4), 2.0))
    with pytest.raises(DomainError):
        check_windows(np.zeros((2, 4)), n_pairs=3)
    with pytest.raises(ValueError):
        check_windows(np.array([[np.nan, 0.0]]))


def test_fit_predict_and_calibrated_sigma():
    X, y = _toy()
    est = SlipRegressor(hidden_layer_sizes=(16,), epochs=40, learning_rate=0.02, s_forwards=50, random_state=1).fit(X, y)
    mean, std = est.predict(X[:10], return_std=True)
    assert mean.shape == (10,) and np.all(std >= est.sigma_obs_)
    assert est.sigma_obs_ > 0
    assert est.n_features_in_ == 6
    assert len(est.loss_history_) == 40
    np.testing.assert_array_equal(est.predict(X[:10]), mean)


def test_explicit_sigma_obs_and_no_validation():
    X, y = _toy()
    est = SlipRegressor(hidden_layer_sizes=(8,), epochs=2, sigma_obs=0.05, s_forwards=10).fit(X, y)
    assert est.sigma_obs_ == 0.05


def test_unfitted_and_mismatched_inputs():
    with pytest.raises(NotFittedError):
        SlipRegressor().predict(np.zeros((1, 4)))
    X, y = _toy()
    est = SlipRegressor(hidden_layer_sizes=(8,), epochs=1, s_forwards=10).fit(X, y)
    with pytest.raises(DomainError):
        est.predict(np.zeros((1, 4)))
    with pytest.raises(ValueError):
        SlipRegressor().fit(X, y[:-1])


def test_save_load(tmp_path):
    X, y = _toy()
    est = SlipRegressor(hidden_layer_sizes=(8,), epochs=2, s_forwards=20).fit(X, y)
    est.save(tmp_path / "m.mdl")
    back = SlipRegressor.load(tmp_path / "m.mdl", s_forwards=20)
    assert back.sigma_obs_ == est.sigma_obs_
    np.testing.assert_array_equal(back.predict(X[:5]), est.predict(X[:5]))
    np.testing.assert_array_equal(back.predict_deterministic(X[:5]), est.predict_deterministic(X[:5]))


def test_memorises_micro_dataset():
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 1, (16, 6))
    y = rng.uniform(0.05, 0.35, 16)
    est = SlipRegressor(hidden_layer_sizes=(32, 32), dropout=0.0, epochs=5000, learning_rate=0.02,
                        batch_size=16, momentum=0.9, weight_decay=0.0, sigma_obs=0.0, s_forwards=2)
    est.fit(X, y)
    assert np.sqrt(np.mean((est.predict(X) - y) ** 2)) < 0.01 * y.std()
