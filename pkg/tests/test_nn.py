"""Networks, backprop, optimizers and checkpoints."""
import json

import numpy as np
import pytest

from nqe import nn
from nqe.nn import Cnn2d, Mlp, Optimizer


def test_zero_weights_give_zero_output():
    net = Mlp([3, 5, 2], seed=0)
    net.params = [np.zeros_like(p) for p in net.params]
    assert np.array_equal(net(np.ones(3)), np.zeros(2))


def test_identity_layer_passes_input():
    net = Mlp([3, 3], seed=0)
    net.params = [np.eye(3), np.zeros(3)]
    x = np.array([-1.0, 0.5, 2.0])
    assert np.array_equal(net(x), x)


def test_forward_matches_dense_oracle(rng):
    net = Mlp([4, 6, 5, 3], seed=1)
    x = rng.normal(size=(7, 4))
    h = x
    w = net.params
    h = np.maximum(h @ w[0].T + w[1], 0)
    h = np.maximum(h @ w[2].T + w[3], 0)
    h = h @ w[4].T + w[5]
    assert np.allclose(net(x), h, atol=1e-12)


def test_zero_upstream_gradient():
    net = Mlp([3, 4, 2], seed=0)
    out, cache = net.forward(np.ones((2, 3)))
    grads, gx = net.backward(cache, np.zeros_like(out))
    assert all(np.all(g == 0) for g in grads) and np.all(gx == 0)


def test_single_linear_layer_gradient(rng):
    net = Mlp([3, 2], seed=0)
    x = rng.normal(size=3)
    y, cache = net.forward(x)
    # L = 1/2 ||y||^2 -> dL/dy = y, dW = y x^T
    grads, _ = net.backward(cache, y)
    assert np.allclose(grads[0], np.outer(y, x))
    assert np.allclose(grads[1], y)


def _fd_check(net, x, rel_tol=1e-6):
    rng = np.random.default_rng(5)
    out, cache = net.forward(x)
    weights = rng.normal(size=out.shape)
    loss = lambda: float(np.sum(weights * net(x)))
    grads, gx = net.backward(cache, weights)
    h = 1e-5
    num, ana = [], []
    for p, g in zip(net.params, grads):
        flat = p.reshape(-1)
        for idx in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            old = flat[idx]
            flat[idx] = old + h
            up = loss()
            flat[idx] = old - h
            down = loss()
            flat[idx] = old
            num.append((up - down) / (2 * h))
            ana.append(g.reshape(-1)[idx])
    num, ana = np.array(num), np.array(ana)
    scale = max(np.max(np.abs(num)), 1.0)
    assert np.max(np.abs(num - ana)) / scale <= rel_tol
    return gx


def test_mlp_backprop_matches_finite_differences(rng):
    net = Mlp([4, 12, 12, 8], seed=3)
    _fd_check(net, rng.uniform(0, np.pi, (5, 4)))


def test_cnn_backprop_matches_finite_differences(rng):
    net = Cnn2d(3, channels=(1, 2, 3), input_size=8, seed=2)
    _fd_check(net, rng.uniform(0, 1, (2, 64)))


def test_input_gradient_matches_finite_differences(rng):
    net = Mlp([3, 5, 2], seed=4)
    x = rng.normal(size=3)
    out, cache = net.forward(x)
    _, gx = net.backward(cache, np.ones(2))
    h = 1e-6
    fd = [(net(x + h * e).sum() - net(x - h * e).sum()) / (2 * h) for e in np.eye(3)]
    assert np.allclose(gx, fd, atol=1e-6)


def test_stale_cache_rejected():
    net = Mlp([2, 2], seed=0)
    _, cache = net.forward(np.ones(2))
    net.params = [p.copy() for p in net.params]
    with pytest.raises(ValueError):
        net.backward(cache, np.ones(2))


def test_input_validation():
    with pytest.raises(ValueError):
        Mlp([3, 2], seed=0)(np.ones(4))
    with pytest.raises(ValueError):
        Mlp([3])
    with pytest.raises(ValueError):
        Cnn2d(2, input_size=30, channels=(1, 2, 3, 4))


def test_sgd_steps():
    p = [np.array([1.0])]
    Optimizer("sgd", 0.1).step(p, [np.zeros(1)])
    assert p[0][0] == 1.0
    Optimizer("sgd", 0.1).step(p, [np.ones(1)])
    assert p[0][0] == pytest.approx(0.9)


def test_adam_minimizes_quadratic():
    p = [np.array([1.0])]
    opt = Optimizer("adam", 0.05)
    for _ in range(200):
        opt.step(p, [2 * p[0]])
    assert abs(p[0][0]) < 0.05


def test_nesterov_converges_on_quadratic():
    p = [np.array([1.0, -2.0])]
    opt = Optimizer("nesterov", 0.05, momentum=0.9)
    for _ in range(300):
        opt.step(p, [2 * p[0]])
    assert np.all(np.abs(p[0]) < 1e-3)


def test_optimizer_rejects_bad_input():
    with pytest.raises(FloatingPointError):
        Optimizer().step([np.zeros(1)], [np.array([np.nan])])
    with pytest.raises(ValueError):
        Optimizer().step([np.zeros(2)], [np.zeros(3)])
    with pytest.raises(ValueError):
        Optimizer("rmsprop")
    with pytest.raises(ValueError):
        Optimizer("sgd", lr=0.0)


def test_flatten_round_trip(rng):
    net = Mlp([3, 4, 2], seed=0)
    flat = nn.flatten_params(net.params)
    back = nn.unflatten_params(flat, net.params)
    assert all(np.array_equal(a, b) for a, b in zip(back, net.params))
    with pytest.raises(ValueError):
        nn.unflatten_params(flat[:-1], net.params)


@pytest.mark.parametrize("make", [lambda: Mlp([4, 6, 3], seed=9, output_activation="relu"),
                                  lambda: Cnn2d(3, channels=(1, 2), input_size=4, seed=9)])
def test_checkpoint_round_trip(make, tmp_path, rng):
    net = make()
    path = tmp_path / "ck.json"
    nn.save_checkpoint(path, net, rng_seed=9, config_hash="abc")
    doc = json.loads(path.read_text())
    assert doc["format_version"] == nn.FORMAT_VERSION and doc["config_hash"] == "abc"
    loaded, _ = nn.load_checkpoint(path)
    x = rng.normal(size=(3,) + net.input_shape)
    assert np.array_equal(loaded(x), net(x))


def test_checkpoint_version_check():
    doc = nn.checkpoint_dict(Mlp([2, 2], seed=0))
    doc["format_version"] = 99
    with pytest.raises(ValueError):
        nn.load_checkpoint(doc)
