"""scikit-learn front end for the MC-dropout optimal-slip regressor."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from slipnet import net
from slipnet.dataset import train_test_split_indices
from slipnet.exceptions import DomainError


def check_windows(X, n_pairs: int | None = None) -> np.ndarray:
    """Validate interleaved ``(lam_1, mu_1, ...)`` windows; returns a float64 2-D array."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] % 2:
        raise DomainError(f"window width {X.shape[1]} is odd; expected (slip, friction) pairs")
    if n_pairs is not None and X.shape[1] != 2 * n_pairs:
        raise DomainError(f"expected {n_pairs} pairs per window, got {X.shape[1] // 2}")
    lam = X[:, 0::2]
    if lam.min() < 0 or lam.max() > 1:
        raise DomainError("slip values must lie in [0, 1]")
    return X


class SlipRegressor(RegressorMixin, BaseEstimator):
    """MLP regressor from windows of (slip, friction) pairs to the optimal slip.

    ``fit`` holds out ``validation_fraction`` of the rows and sets
    ``sigma_obs_`` to the held-out RMSE of the MC predictive mean, unless
    ``sigma_obs`` is given. ``predict`` returns the MC predictive mean over
    ``s_forwards`` dropout passes; with ``return_std=True`` it also returns
    the predictive standard deviation, observation noise included.
    """

    def __init__(
        self,
        hidden_layer_sizes=(30, 30),
        dropout=0.2,
        dropout_placement="except_last",
        epochs=100,
        learning_rate=1e-3,
        weight_decay=1e-4,
        batch_size=64,
        momentum=0.0,
        s_forwards=500,
        sigma_obs=None,
        validation_fraction=0.1,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.dropout = dropout
        self.dropout_placement = dropout_placement
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.momentum = momentum
        self.s_forwards = s_forwards
        self.sigma_obs = sigma_obs
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y, callback=None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        X = check_windows(X)
        seed = int(self.random_state)
        if self.sigma_obs is None and self.validation_fraction > 0:
            fit_idx, val_idx = train_test_split_indices(X.shape[0], self.validation_fraction, seed)
        else:
            fit_idx, val_idx = np.arange(X.shape[0]), np.empty(0, dtype=np.int64)
        config = net.TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            momentum=self.momentum,
            seed=seed,
        )
        result = net.train(
            X[fit_idx], y[fit_idx], config,
            hidden=tuple(self.hidden_layer_sizes),
            dropout_p=self.dropout,
            dropout_placement=self.dropout_placement,
            callback=callback,
        )
        self.model_ = result.model
        self.loss_history_ = list(result.history)
        self.n_features_in_ = X.shape[1]
        self.sigma_obs_ = 0.0
        if self.sigma_obs is not None:
            self.sigma_obs_ = float(self.sigma_obs)
        elif val_idx.size:
            mean, _ = self._moments(X[val_idx])
            self.sigma_obs_ = float(np.sqrt(np.mean((mean - y[val_idx]) ** 2)))
        return self

    @classmethod
    def from_model(cls, model: net.MlpModel, sigma_obs: float = 0.0, **params) -> "SlipRegressor":
        """Wrap an already trained network (e.g. one read with :func:`net.load_model`)."""
        est = cls(
            hidden_layer_sizes=tuple(model.layer_dims[1:-1]),
            dropout=model.dropout_p,
            dropout_placement=model.dropout_placement,
            **params,
        )
        est.model_ = model
        est.sigma_obs_ = float(sigma_obs)
        est.n_features_in_ = model.layer_dims[0]
        est.loss_history_ = []
        return est

    def _moments(self, X):
        cfg = net.UncertaintyConfig(self.s_forwards, 0.0, int(self.random_state))
        return net.predict_batch_with_uncertainty(self.model_, X, cfg)

    def _check_input(self, X):
        check_is_fitted(self, "model_")
        X = check_windows(X)
        if X.shape[1] != self.n_features_in_:
            raise DomainError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return X

    def predict(self, X, return_std: bool = False):
        X = self._check_input(X)
        mean, var = self._moments(X)
        if return_std:
            return mean, np.sqrt(self.sigma_obs_ ** 2 + var)
        return mean

    def predict_deterministic(self, X):
        """Single pass with dropout disabled."""
        X = self._check_input(X)
        return net.forward(self.model_, X)

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        net.save_model(self.model_, path, sigma_obs=self.sigma_obs_)

    @classmethod
    def load(cls, path, **params) -> "SlipRegressor":
        model, header = net.load_model(path, return_header=True)
        return cls.from_model(model, float(header.get("sigma_obs", 0.0) or 0.0), **params)
