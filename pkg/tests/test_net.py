import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slipnet import net
from slipnet.exceptions import DivergenceError, DomainError, FormatError

from gradcheck import gradient_check


def test_init_shapes_and_zero_biases():
    m = net.init_model([30, 30, 30, 1], 0.2, seed=3)
    assert m.layer_dims == [30, 30, 30, 1]
    assert all(np.all(b == 0) for b in m.biases)
    bound = np.sqrt(6 / 30)
    assert np.abs(m.weights[0]).max() <= bound


def test_placements():
    assert net.init_model([4, 5, 5, 1], 0.2, dropout_placement="all").dropout_layers == (0, 1)
    assert net.init_model([4, 5, 5, 1], 0.2, dropout_placement="except_last").dropout_layers == (0,)
    with pytest.raises(DomainError):
        net.init_model([4, 5, 1], 0.2, dropout_placement="input")
    with pytest.raises(DomainError):
        net.init_model([4, 5, 1], 1.0)


def test_forward_deterministic_without_rng():
    m = net.init_model([6, 8, 8, 1], 0.5, seed=1)
    x = np.linspace(0, 1, 6)
    assert isinstance(net.forward(m, x), float)
    assert net.forward(m, x[None]).shape == (1,)
    np.testing.assert_array_equal(net.forward(m, x[None]), net.forward(m, x[None]))
    assert net.forward(m, x, rng=np.random.default_rng(0)) != net.forward(m, x)


def test_masks_are_inverted_dropout(rng):
    m = net.init_model([6, 2000, 1], 0.2, seed=1, dropout_placement="all")
    masks = net.sample_masks(m, 4, rng)
    vals = np.unique(masks[0])
    np.testing.assert_allclose(sorted(vals), [0.0, 1 / 0.8])
    assert masks[0].mean() == pytest.approx(1.0, abs=0.02)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    m = net.init_model([6, 7, 5, 1], 0.3, seed=seed)
    for b in m.biases:  # keep pre-activations off the ReLU kink at exactly zero
        b[:] = rng.uniform(0.05, 0.2, b.shape)
    X = rng.uniform(0, 1, (9, 6))
    y = rng.uniform(0, 0.3, 9)
    masks = net.sample_masks(m, 9, rng)
    assert gradient_check(m, X, y, 1e-3, masks) <= 1e-5


def test_weight_decay_gradient_is_twice_wd_theta():
    m = net.init_model([3, 4, 1], 0.0, seed=0)
    X = np.zeros((2, 3))
    y = np.zeros(2)
    _, g0 = net.backward(m, X, y, 0.0)
    _, g1 = net.backward(m, X, y, 0.5)
    for p, a, b in zip(m.parameters(), g0, g1):
        np.testing.assert_allclose(b - a, 2 * 0.5 * p, atol=1e-12)


def test_training_reduces_loss_and_is_reproducible():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, (512, 4))
    y = 0.2 * X[:, 0] + 0.1 * X[:, 1] ** 2
    cfg = net.TrainConfig(epochs=20, learning_rate=0.05, seed=3)
    a = net.train(X, y, cfg, hidden=(16,))
    b = net.train(X, y, cfg, hidden=(16,))
    assert a.history[-1] < a.initial_loss
    np.testing.assert_array_equal(a.model.flat_parameters(), b.model.flat_parameters())


def test_momentum_and_batch_size_validation():
    with pytest.raises(DomainError):
        net.TrainConfig(momentum=1.0)
    with pytest.raises(DomainError):
        net.TrainConfig(batch_size=0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, (64, 4)) * 1e3
    y = rng.uniform(0, 1, 64) * 1e3
    with pytest.raises(DivergenceError) as info:
        net.train(X, y, net.TrainConfig(epochs=5, learning_rate=1e6, seed=0), hidden=(8,))
    assert 1 <= info.value.epoch <= 5


def test_p_zero_variance_is_exactly_sigma_obs():
    m = net.init_model([6, 8, 8, 1], 0.0, seed=2)
    pred = net.predict_with_uncertainty(m, np.full(6, 0.3), net.UncertaintyConfig(50, 0.02, 0))
    assert pred.variance == 0.02 ** 2
    assert pred.mean == pytest.approx(net.forward(m, np.full(6, 0.3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.1), st.floats(0.05, 0.8))
def test_variance_at_least_sigma_obs(seed, sigma, p):
    m = net.init_model([4, 6, 6, 1], p, seed=seed)
    x = np.random.default_rng(seed).uniform(0, 1, 4)
    pred = net.predict_with_uncertainty(m, x, net.UncertaintyConfig(20, sigma, seed))
    assert pred.variance >= sigma ** 2


def test_normalized_uncertainty_guard():
    assert np.isnan(net.Prediction(0.0, 1.0, 10).normalized_uncertainty)
    assert not net.Prediction(-0.1, 1.0, 10).normalized_defined
    assert net.Prediction(0.5, 0.01, 10).normalized_uncertainty == pytest.approx(0.2)


def test_batch_matches_moments_definition():
    m = net.init_model([4, 6, 1], 0.3, seed=5)
    X = np.random.default_rng(1).uniform(0, 1, (3, 4))
    mean, var = net.predict_batch_with_uncertainty(m, X, net.UncertaintyConfig(200, 0.0, 9))
    rng = np.random.default_rng([9, 3])
    rep = np.repeat(X, 200, axis=0)
    f = net.forward(m, rep, masks=net.sample_masks(m, rep.shape[0], rng)).reshape(3, 200)
    np.testing.assert_allclose(mean, f.mean(1), atol=1e-14)
    np.testing.assert_allclose(var, (f ** 2).mean(1) - f.mean(1) ** 2, atol=1e-12)


def test_model_file_round_trip(tmp_path):
    m = net.init_model([30, 30, 30, 1], 0.2, seed=4)
    net.save_model(m, tmp_path / "m.mdl", sigma_obs=0.015)
    back, header = net.load_model(tmp_path / "m.mdl", return_header=True)
    np.testing.assert_array_equal(back.flat_parameters(), m.flat_parameters())
    assert back.dropout_p == 0.2 and back.dropout_placement == m.dropout_placement
    assert float(header["sigma_obs"]) == 0.015
    raw = (tmp_path / "m.mdl").read_bytes()
    assert raw.startswith(net.MAGIC)


def test_model_file_errors(tmp_path):
    m = net.init_model([4, 3, 1], 0.2, seed=0)
    net.save_model(m, tmp_path / "m.mdl")
    raw = (tmp_path / "m.mdl").read_bytes()
    cases = {
        "magic": b"NOTMODEL" + raw[8:],
        "short": raw[:-8],
        "version": raw.replace(b"format_version=1", b"format_version=9", 1),
        "header": raw.replace(b"dims=", b"dimz=", 1),
    }
    for name, blob in cases.items():
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(FormatError):
            net.load_model(tmp_path / name)
