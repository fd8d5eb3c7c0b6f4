"""From-scratch dropout MLP: backprop, SGD with weight decay, MC-dropout.

Layers are stored as ``W`` of shape ``(fan_in, fan_out)`` and ``b`` of shape
``(fan_out,)`` so a batch ``X`` of shape ``(B, fan_in)`` maps to ``X @ W + b``.
Hidden layers use ReLU, the output layer is linear.

Dropout is inverted: kept units are scaled by ``1/(1-p)`` when the mask is
drawn, so the deterministic forward pass is the plain network and needs no
rescaling.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from slipnet.exceptions import DivergenceError, DomainError, FormatError

logger = logging.getLogger(__name__)

MAGIC = b"MLPDROP1"
FORMAT_VERSION = 1
PLACEMENTS = ("all", "except_last")


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_p: float = 0.2
    dropout_placement: str = "except_last"
    seed: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DomainError("weights and biases must be non-empty and of equal length")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise DomainError(f"layer {k}: weight {W.shape} and bias {b.shape} disagree")
            if k and W.shape[0] != self.weights[k - 1].shape[1]:
                raise DomainError(f"layer {k}: input width {W.shape[0]} does not chain")
        if not 0.0 <= self.dropout_p < 1.0:
            raise DomainError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.dropout_placement not in PLACEMENTS:
            raise DomainError(f"dropout_placement must be one of {PLACEMENTS}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def dropout_layers(self) -> tuple[int, ...]:
        """Indices of hidden layers whose output passes through dropout."""
        hidden = len(self.weights) - 1
        if self.dropout_placement == "except_last":
            return tuple(range(max(hidden - 1, 0)))
        return tuple(range(hidden))

    def parameters(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.dropout_p,
            self.dropout_placement,
            self.seed,
        )

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])


def init_model(
    layer_dims: Sequence[int],
    dropout_p: float = 0.2,
    seed: int = 0,
    dropout_placement: str = "except_last",
) -> MlpModel:
    """He-uniform weights (bound ``sqrt(6/fan_in)``), zero biases."""
    if len(layer_dims) < 2 or any(int(d) < 1 for d in layer_dims):
        raise DomainError(f"invalid layer_dims {layer_dims}")
    rng = np.random.default_rng([int(seed), 1])
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases, float(dropout_p), dropout_placement, int(seed))


def sample_masks(model: MlpModel, batch_size: int, rng: np.random.Generator) -> dict[int, np.ndarray]:
    """Inverted-dropout masks keyed by hidden-layer index."""
    p = model.dropout_p
    masks = {}
    for k in model.dropout_layers:
        width = model.weights[k].shape[1]
        if p == 0.0:
            masks[k] = np.ones((batch_size, width))
        else:
            keep = rng.random((batch_size, width)) >= p
            masks[k] = keep / (1.0 - p)
    return masks


def _as_batch(model: MlpModel, X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.layer_dims[0]:
        raise DomainError(f"expected input width {model.layer_dims[0]}, got shape {X.shape}")
    return X, single


def _forward_cache(model: MlpModel, X: np.ndarray, masks: dict[int, np.ndarray] | None):
    """Forward pass keeping what backprop needs.

    Returns ``(out, acts, pre)`` where ``acts[k]`` is the input to layer ``k``
    (after ReLU and dropout) and ``pre[k]`` its pre-activation.
    """
    acts = [X]
    pre = []
    h = X
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        pre.append(z)
        if k == last:
            return z[:, 0] if z.shape[1] == 1 else z, acts, pre
        h = np.maximum(z, 0.0)
        if masks is not None and k in masks:
            h = h * masks[k]
        acts.append(h)
    raise AssertionError("unreachable")


def forward(model: MlpModel, X, rng: np.random.Generator | None = None, masks=None):
    """Network output. Stochastic (dropout active) when ``rng`` or ``masks`` is given.

    A 1-D input gives a float, a 2-D batch a 1-D array.
    """
    X, single = _as_batch(model, X)
    if masks is None and rng is not None:
        masks = sample_masks(model, X.shape[0], rng)
    out, _, _ = _forward_cache(model, X, masks)
    return float(out[0]) if single else out


def weight_penalty(model: MlpModel) -> float:
    return float(sum(np.sum(p * p) for p in model.parameters()))


def loss(model: MlpModel, X, y, weight_decay: float = 0.0, masks=None) -> float:
    """Mean squared error plus ``weight_decay`` times the squared parameter norm."""
    X, _ = _as_batch(model, X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] == 0:
        raise DomainError("loss of an empty batch")
    out, _, _ = _forward_cache(model, X, masks)
    mse = float(np.mean((out - y) ** 2))
    if weight_decay:
        return mse + weight_decay * weight_penalty(model)
    return mse


def backward(model: MlpModel, X, y, weight_decay: float = 0.0, masks=None):
    """Gradient of :func:`loss` under fixed ``masks``.

    Returns ``(loss_value, grads)`` with ``grads`` ordered like
    ``model.parameters()``: ``[dW0, db0, dW1, db1, ...]``.
    """
    X, _ = _as_batch(model, X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    B = X.shape[0]
    out, acts, pre = _forward_cache(model, X, masks)
    err = out - y
    value = float(np.mean(err * err))

    delta = (2.0 / B) * err[:, None]
    grads: list[np.ndarray] = [None] * (2 * len(model.weights))
    for k in range(len(model.weights) - 1, -1, -1):
        grads[2 * k] = acts[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k == 0:
            break
        delta = delta @ model.weights[k].T
        if masks is not None and (k - 1) in masks:
            delta = delta * masks[k - 1]
        delta = delta * (pre[k - 1] > 0.0)

    if weight_decay:
        params = model.parameters()
        for i, p in enumerate(params):
            grads[i] = grads[i] + 2.0 * weight_decay * p
        value += weight_decay * weight_penalty(model)
    return value, grads


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise DomainError("learning_rate must be positive and weight_decay non-negative")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError("momentum must be in [0, 1)")


@dataclass
class TrainResult:
    model: MlpModel
    history: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")


def train(
    X,
    y,
    config: TrainConfig = TrainConfig(),
    model: MlpModel | None = None,
    hidden: Sequence[int] = (30, 30),
    dropout_p: float = 0.2,
    dropout_placement: str = "except_last",
    callback=None,
) -> TrainResult:
    """Minibatch SGD on the dropout objective.

    ``history[e]`` is the mean minibatch loss of epoch ``e`` (dropout active).
    ``initial_loss`` is the same quantity for the untrained network evaluated
    deterministically on the full training set.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[0] != y.shape[0]:
        raise DomainError(f"bad training arrays X{X.shape} y{y.shape}")
    if model is None:
        model = init_model([X.shape[1], *hidden, 1], dropout_p, config.seed, dropout_placement)
    else:
        model = model.copy()
    rng = np.random.default_rng([int(config.seed), 2])
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]
    lr, mom = config.learning_rate, config.momentum

    initial = loss(model, X, y, config.weight_decay)
    history = []
    N = X.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(N)
        total = 0.0
        nbatches = 0
        for bi, start in enumerate(range(0, N, config.batch_size)):
            idx = order[start:start + config.batch_size]
            masks = sample_masks(model, len(idx), rng)
            value, grads = backward(model, X[idx], y[idx], config.weight_decay, masks)
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch + 1}, batch {bi}", epoch=epoch + 1, batch=bi
                )
            for p, g, v in zip(params, grads, velocity):
                if mom:
                    v *= mom
                    v += g
                    p -= lr * v
                else:
                    p -= lr * g
            total += value
            nbatches += 1
        history.append(total / nbatches)
        logger.info("epoch %d/%d loss %.6g", epoch + 1, config.epochs, history[-1])
        if callback is not None:
            callback(epoch + 1, history[-1])
    return TrainResult(model, history, initial)


@dataclass
class UncertaintyConfig:
    s_forwards: int = 500
    sigma_obs: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.s_forwards < 2:
            raise DomainError("s_forwards must be >= 2")
        if not (self.sigma_obs >= 0 and math.isfinite(self.sigma_obs)):
            raise DomainError("sigma_obs must be finite and non-negative")


@dataclass(frozen=True)
class Prediction:
    mean: float
    variance: float
    s_forwards: int
    eps: float = 1e-6

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def normalized_uncertainty(self) -> float:
        """``std / mean``; NaN when the mean is not safely positive."""
        if self.mean > self.eps:
            return self.std / self.mean
        return float("nan")

    @property
    def normalized_defined(self) -> bool:
        return self.mean > self.eps


def mc_moments(model: MlpModel, X, s_forwards: int, rng: np.random.Generator):
    """Per-input mean and (biased, 1/S) sample variance over ``s_forwards`` dropout passes.

    Returns arrays of shape ``(B,)``. Rows are centred on the first pass
    before averaging so identical passes give exactly zero variance.
    """
    X, _ = _as_batch(model, X)
    B = X.shape[0]
    rep = np.repeat(X, s_forwards, axis=0)
    masks = sample_masks(model, rep.shape[0], rng)
    out, _, _ = _forward_cache(model, rep, masks)
    f = out.reshape(B, s_forwards)
    d = f - f[:, :1]
    dbar = d.mean(axis=1)
    mean = f[:, 0] + dbar
    var = np.mean((d - dbar[:, None]) ** 2, axis=1)
    return mean, var


def predict_with_uncertainty(
    model: MlpModel,
    x,
    config: UncertaintyConfig = UncertaintyConfig(),
    rng: np.random.Generator | None = None,
) -> Prediction:
    """MC-dropout predictive mean and variance for one input window.

    variance = sigma_obs**2 + (1/S) sum f_s**2 - mean**2
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DomainError("predict_with_uncertainty takes a single flattened window")
    if rng is None:
        rng = np.random.default_rng([int(config.seed), 3])
    mean, var = mc_moments(model, x, config.s_forwards, rng)
    return Prediction(float(mean[0]), config.sigma_obs ** 2 + float(var[0]), config.s_forwards)


def predict_batch_with_uncertainty(
    model: MlpModel,
    X,
    config: UncertaintyConfig = UncertaintyConfig(),
    chunk: int = 256,
):
    """Vectorised MC-dropout over many windows. Returns ``(mean, variance)`` arrays."""
    X, _ = _as_batch(model, X)
    rng = np.random.default_rng([int(config.seed), 3])
    means, variances = [], []
    for start in range(0, X.shape[0], chunk):
        m, v = mc_moments(model, X[start:start + chunk], config.s_forwards, rng)
        means.append(m)
        variances.append(v)
    if not means:
        return np.empty(0), np.empty(0)
    return np.concatenate(means), config.sigma_obs ** 2 + np.concatenate(variances)


# --- serialization ---------------------------------------------------------

def save_model(model: MlpModel, path, sigma_obs: float | None = None) -> None:
    """Write ``MLPDROP1``, a key=value header line, then packed little-endian f64 parameters."""
    fields = {
        "format_version": str(FORMAT_VERSION),
        "dims": ":".join(str(d) for d in model.layer_dims),
        "p": repr(float(model.dropout_p)),
        "placement": model.dropout_placement,
        "seed": str(int(model.seed)),
    }
    if sigma_obs is not None:
        fields["sigma_obs"] = repr(float(sigma_obs))
    header = " ".join(f"{k}={v}" for k, v in fields.items())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("ascii") + b"\n")
        fh.write(model.flat_parameters().astype("<f8").tobytes())


def load_model(path, return_header: bool = False):
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise FormatError(f"{path}: not a model file (bad magic)")
    end = raw.find(b"\n", len(MAGIC))
    if end < 0:
        raise FormatError(f"{path}: missing header terminator")
    try:
        fields = dict(tok.split("=", 1) for tok in raw[len(MAGIC):end].decode("ascii").split())
        version = int(fields["format_version"])
        dims = [int(d) for d in fields["dims"].split(":")]
        p = float(fields["p"])
        placement = fields.get("placement", "except_last")
        seed = int(fields.get("seed", 0))
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt model header ({exc})") from None
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported model format_version {version}")
    sizes = [(a, b) for a, b in zip(dims[:-1], dims[1:])]
    expected = sum(a * b + b for a, b in sizes)
    body = raw[end + 1:]
    if len(body) != expected * 8:
        raise FormatError(f"{path}: expected {expected} parameters for dims {dims}, found {len(body) / 8:g}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    weights, biases = [], []
    pos = 0
    for a, b in sizes:
        weights.append(flat[pos:pos + a * b].reshape(a, b).copy())
        pos += a * b
        biases.append(flat[pos:pos + b].copy())
        pos += b
    try:
        model = MlpModel(weights, biases, p, placement, seed)
    except DomainError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if return_header:
        return model, fields
    return model
