import math

import numpy as np
import pytest

from pdfa.network import (Activation, Network, accuracy, apply, derivative, load_checkpoint,
                          loss_and_error, one_hot, save_checkpoint, softmax, with_bias)


def naive_forward(weights, acts, x):
    h = list(x)
    hs = []
    for W, act in zip(weights, acts):
        hb = h + [1.0]
        z = [sum(W[i][k] * hb[k] for k in range(len(hb))) for i in range(len(W))]
        fn = {Activation.TANH: math.tanh, Activation.IDENTITY: lambda t: t,
              Activation.RELU: lambda t: max(t, 0.0),
              Activation.SIGMOID: lambda t: 1 / (1 + math.exp(-t))}[act]
        h = [fn(v) for v in z]
        hs.append(h)
    return hs


def test_identity_layer_passthrough():
    W = np.hstack([np.eye(3), np.zeros((3, 1))])
    net = Network([W], [Activation.IDENTITY])
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(net.forward(x).h[-1], x)


def test_zero_weights_uniform_prediction():
    net = Network.init((5, 4, 3), "tanh")
    for W in net.weights:
        W[:] = 0
    trace = net.forward(np.ones(5))
    assert not trace.h[1].any()
    np.testing.assert_allclose(softmax(trace.yhat), 1 / 3)


def test_forward_matches_scalar_reference(rng):
    for kind in ("tanh", "relu", "sigmoid"):
        net = Network.init((6, 5, 4, 3), kind, seed=int(rng.integers(1000)))
        x = rng.normal(size=6)
        ref = naive_forward([W.tolist() for W in net.weights], net.activations, x.tolist())
        trace = net.forward(x)
        for got, want in zip(trace.h[1:], ref):
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-15)


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        Network.init((4, 3, 2)).forward(np.ones(5))


def test_network_shape_chain():
    with pytest.raises(ValueError):
        Network([np.zeros((3, 5)), np.zeros((2, 5))], [Activation.TANH, Activation.IDENTITY])
    net = Network.init((784, 512, 512, 10))
    assert [W.shape for W in net.weights] == [(512, 785), (512, 513), (10, 513)]
    assert net.widths == (784, 512, 512, 10)
    assert all(not W[:, -1].any() for W in net.weights)


def test_loss_and_error_examples():
    y = one_hot([0], 10)
    loss, e = loss_and_error(np.zeros((1, 10)), y)
    assert loss == pytest.approx(math.log(10))
    np.testing.assert_allclose(e[0], [0.1 - 1] + [0.1] * 9)
    _, e = loss_and_error(np.array([[50.0, 0, 0]]), one_hot([0], 3))
    assert np.abs(e).max() < 1e-20
    with pytest.raises(ValueError):
        loss_and_error(np.zeros((1, 3)), np.array([[0.5, 0.5, 0.0]]))


def test_error_sums_to_zero(rng):
    _, e = loss_and_error(rng.normal(scale=5, size=(100, 10)), one_hot(rng.integers(0, 10, 100), 10))
    np.testing.assert_allclose(e.sum(axis=1), 0, atol=1e-14)


def test_softmax_stable():
    p = softmax(np.array([[1000.0, 1000.0, -1000.0]]))
    np.testing.assert_allclose(p, [[0.5, 0.5, 0.0]])


def test_derivative_examples():
    assert derivative(Activation.TANH, np.array([0.0]))[0] == 1.0
    assert derivative(Activation.RELU, np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 1.0]


@pytest.mark.parametrize("kind", [Activation.TANH, Activation.SIGMOID, Activation.RELU, Activation.IDENTITY])
def test_derivative_finite_differences(kind, rng):
    z = rng.uniform(-4, 4, size=100)
    z = z[np.abs(z) > 1e-3]
    h = 1e-6
    fd = (apply(kind, z + h) - apply(kind, z - h)) / (2 * h)
    np.testing.assert_allclose(derivative(kind, z), fd, atol=1e-6)


@pytest.mark.parametrize("kind", list(Activation))
def test_gamma_max_holds(kind, rng):
    z = rng.normal(scale=5, size=1_000_000)
    assert np.abs(derivative(kind, z)).max() <= kind.gamma_max
    assert kind.gamma_min(3.0) <= np.abs(derivative(kind, z[np.abs(z) <= 3.0])).min()


def test_gamma_values():
    assert Activation.TANH.gamma_max == 1 and Activation.SIGMOID.gamma_max == 0.25
    assert Activation.RELU.gamma_max == 1
    assert Activation.RELU.gamma_min() == 0
    assert Activation.TANH.gamma_min(2.0) == pytest.approx(1 - math.tanh(2.0) ** 2)
    assert Activation.TANH.gamma_min() == 0


def test_with_bias():
    assert with_bias(np.array([[1.0, 2.0]])).tolist() == [[1.0, 2.0, 1.0]]


def test_accuracy_examples(rng):
    W = np.array([[1.0, 0.0], [0.0, 0.0]])
    net = Network([W], [Activation.IDENTITY])
    assert accuracy(net, np.array([[2.0]]), np.array([0])) == 1.0
    with pytest.raises(ValueError):
        accuracy(net, np.zeros((0, 1)), np.zeros(0, dtype=int))
    const = Network([np.hstack([np.zeros((10, 4)), np.arange(10.0)[:, None]])], [Activation.IDENTITY])
    labels = np.repeat(np.arange(10), 100)
    assert accuracy(const, rng.normal(size=(1000, 4)), labels) == pytest.approx(0.1)
    rand = Network.init((20, 30, 10), seed=3)
    X = rng.normal(size=(10_000, 20))
    assert abs(accuracy(rand, X, rng.integers(0, 10, 10_000)) - 0.1) < 0.03


def test_checkpoint_roundtrip(tmp_path):
    net = Network.init((7, 5, 3), "sigmoid", seed=2)
    path = tmp_path / "net.bin"
    save_checkpoint(net, path, {"seed": 2})
    back = load_checkpoint(path)
    assert back.activations == net.activations
    for a, b in zip(back.weights, net.weights):
        assert np.array_equal(a, b)
    assert (tmp_path / "net.bin.json").exists()
    raw = path.read_bytes()
    assert raw[:8] == b"PDFANET\x00"
    path.write_bytes(b"garbage!" + raw[8:])
    with pytest.raises(ValueError):
        load_checkpoint(path)
    path.write_bytes(raw[:-3])
    with pytest.raises(ValueError):
        load_checkpoint(path)
