"""Small numpy neural networks with manual backpropagation, plus optimizers."""
from __future__ import annotations

import json
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

FORMAT_VERSION = 1


def _uniform_init(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _relu(x):
    return np.maximum(x, 0.0)


class Mlp:
    """Fully connected network: ReLU on hidden layers, identity (or ReLU) on the output.

    Weights follow ``y = W x + b`` with ``W`` of shape (out, in).
    """

    kind = "mlp"

    def __init__(self, layer_dims: Sequence[int], seed=None, output_activation: str = "identity"):
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if output_activation not in ("identity", "relu"):
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.layer_dims = [int(d) for d in layer_dims]
        self.output_activation = output_activation
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params = []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            self.params.append(_uniform_init(rng, (fan_out, fan_in), fan_in))
            self.params.append(np.zeros(fan_out))

    @property
    def n_outputs(self):
        return self.layer_dims[-1]

    @property
    def input_shape(self):
        return (self.layer_dims[0],)

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.layer_dims[0]:
            raise ValueError(f"expected input dim {self.layer_dims[0]}, got {h.shape[1]}")
        cache = {"inputs": [], "pre": [], "single": single, "params_id": id(self.params)}
        n_layers = len(self.params) // 2
        for layer in range(n_layers):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            cache["inputs"].append(h)
            z = h @ w.T + b
            cache["pre"].append(z)
            last = layer == n_layers - 1
            h = z if (last and self.output_activation == "identity") else _relu(z)
        return (h[0] if single else h), cache

    def backward(self, cache, grad_out):
        if cache.get("params_id") != id(self.params):
            raise ValueError("stale cache: parameters were replaced after forward")
        g = np.atleast_2d(np.asarray(grad_out, dtype=float))
        n_layers = len(self.params) // 2
        grads = [None] * len(self.params)
        for layer in reversed(range(n_layers)):
            last = layer == n_layers - 1
            if not (last and self.output_activation == "identity"):
                g = g * (cache["pre"][layer] > 0)
            w = self.params[2 * layer]
            grads[2 * layer] = g.T @ cache["inputs"][layer]
            grads[2 * layer + 1] = g.sum(axis=0)
            g = g @ w
        return grads, (g[0] if cache["single"] else g)

    def __call__(self, x):
        return self.forward(x)[0]

    def describe(self) -> dict:
        return {"net_kind": self.kind, "layer_dims": self.layer_dims,
                "output_activation": self.output_activation}


def _conv_forward(x, w, b):
    """3-D 'same' convolution (stride 1). x: (B, C, H, W), w: (O, C, k, k)."""
    k = w.shape[-1]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C, H, W, k, k)
    B, C, H, W = x.shape
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * k * k)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(B, H, W, -1).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, x_shape, w):
    B, C, H, W = x_shape
    O, _, k, _ = w.shape
    pad = k // 2
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, O)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(O, -1)).reshape(B, H, W, C, k, k)
    dxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + H, j : j + W] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dw, db, dxp[:, :, pad : pad + H, pad : pad + W]


def _pool_forward(x):
    B, C, H, W = x.shape
    t = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
    idx = t.argmax(axis=-1)
    return np.take_along_axis(t, idx[..., None], axis=-1)[..., 0], idx


def _pool_backward(dout, idx, x_shape):
    B, C, H, W = x_shape
    t = np.zeros((B, C, H // 2, W // 2, 4))
    np.put_along_axis(t, idx[..., None], dout[..., None], axis=-1)
    t = t.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return t.reshape(B, C, H, W)


class Cnn2d:
    """Conv(3x3, same) -> ReLU -> 2x2 max-pool blocks, then a dense layer.

    The default maps 1x28x28 images through 8 and 16 channels (28 -> 14 -> 7)
    to ``n_outputs`` values.
    """

    kind = "cnn2d"

    def __init__(self, n_outputs: int, channels: Sequence[int] = (1, 8, 16), kernel: int = 3,
                 input_size: int = 28, seed=None):
        if input_size % 2 ** (len(channels) - 1):
            raise ValueError("input size must halve cleanly at every pooling stage")
        self.channels = [int(c) for c in channels]
        self.kernel = int(kernel)
        self.input_size = int(input_size)
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params = []
        for c_in, c_out in zip(self.channels[:-1], self.channels[1:]):
            fan_in = c_in * kernel * kernel
            self.params.append(_uniform_init(rng, (c_out, c_in, kernel, kernel), fan_in))
            self.params.append(np.zeros(c_out))
        side = self.input_size // 2 ** (len(self.channels) - 1)
        flat = self.channels[-1] * side * side
        self.params.append(_uniform_init(rng, (n_outputs, flat), flat))
        self.params.append(np.zeros(n_outputs))
        self.layer_dims = [self.input_size * self.input_size] + self.channels[1:] + [n_outputs]

    @property
    def n_outputs(self):
        return self.params[-1].shape[0]

    @property
    def input_shape(self):
        return (self.channels[0], self.input_size, self.input_size)

    def spatial_sizes(self):
        return [self.input_size // 2**i for i in range(len(self.channels))]

    def _as_images(self, x):
        """Accept flat pixels (..., c*s*s) or images (..., [c,] s, s)."""
        x = np.asarray(x, dtype=float)
        c, s = self.channels[0], self.input_size
        if x.size % (c * s * s):
            raise ValueError(f"input shape {x.shape} does not match {c}x{s}x{s}")
        single = x.ndim == 1 or x.shape == (s, s) or (c > 1 and x.shape == (c, s, s))
        return x.reshape(-1, c, s, s), single

    def forward(self, x):
        h, single = self._as_images(x)
        cache = {"layers": [], "single": single, "in_shape": np.shape(x), "params_id": id(self.params)}
        n_conv = len(self.channels) - 1
        for layer in range(n_conv):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            z, cols = _conv_forward(h, w, b)
            a = _relu(z)
            p, idx = _pool_forward(a)
            cache["layers"].append((h.shape, cols, z, idx))
            h = p
        flat = h.reshape(h.shape[0], -1)
        cache["pooled_shape"] = h.shape
        cache["flat"] = flat
        out = flat @ self.params[-2].T + self.params[-1]
        return (out[0] if single else out), cache

    def backward(self, cache, grad_out):
        if cache.get("params_id") != id(self.params):
            raise ValueError("stale cache: parameters were replaced after forward")
        g = np.atleast_2d(np.asarray(grad_out, dtype=float))
        grads = [None] * len(self.params)
        grads[-2] = g.T @ cache["flat"]
        grads[-1] = g.sum(axis=0)
        g = (g @ self.params[-2]).reshape(cache["pooled_shape"])
        for layer in reversed(range(len(self.channels) - 1)):
            x_shape, cols, z, idx = cache["layers"][layer]
            g = _pool_backward(g, idx, z.shape) * (z > 0)
            dw, db, g = _conv_backward(g, cols, x_shape, self.params[2 * layer])
            grads[2 * layer], grads[2 * layer + 1] = dw, db
        gx = g.reshape(cache["in_shape"])
        return grads, gx

    def __call__(self, x):
        return self.forward(x)[0]

    def describe(self) -> dict:
        return {"net_kind": self.kind, "layer_dims": self.layer_dims, "channels": self.channels,
                "kernel": self.kernel, "input_size": self.input_size}


def flatten_params(params) -> np.ndarray:
    return np.concatenate([np.ravel(p) for p in params])


def unflatten_params(flat, like) -> list[np.ndarray]:
    out, pos = [], 0
    for p in like:
        out.append(np.asarray(flat[pos : pos + p.size], dtype=float).reshape(p.shape))
        pos += p.size
    if pos != len(flat):
        raise ValueError("flat parameter vector has the wrong length")
    return out


class Optimizer:
    """SGD, Nesterov momentum or Adam over a list of parameter arrays.

    Nesterov uses the look-ahead-free form ``v <- mu v + g; p <- p - lr (g + mu v)``.
    """

    def __init__(self, kind: str = "sgd", lr: float = 0.1, momentum: float = 0.9,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if kind not in ("sgd", "nesterov", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.kind = kind
        self.lr = lr
        self.momentum = momentum
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.buffers: list[list[np.ndarray]] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        """Update ``params`` in place and return them."""
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        for p, g in zip(params, grads):
            if np.shape(p) != np.shape(g):
                raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(p)}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient rejected")
        if self.buffers is None:
            n_buf = {"sgd": 0, "nesterov": 1, "adam": 2}[self.kind]
            self.buffers = [[np.zeros_like(p, dtype=float) for p in params] for _ in range(n_buf)]
        self.t += 1
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p -= self.lr * g
        elif self.kind == "nesterov":
            mu = self.momentum
            for p, g, v in zip(params, grads, self.buffers[0]):
                v *= mu
                v += g
                p -= self.lr * (g + mu * v)
        else:
            b1, b2 = self.betas
            for p, g, m, v in zip(params, grads, self.buffers[0], self.buffers[1]):
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                m_hat = m / (1 - b1**self.t)
                v_hat = v / (1 - b2**self.t)
                p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


def net_from_description(desc: dict, seed=None):
    if desc["net_kind"] == "mlp":
        return Mlp(desc["layer_dims"], seed=seed, output_activation=desc.get("output_activation", "identity"))
    if desc["net_kind"] == "cnn2d":
        return Cnn2d(desc["layer_dims"][-1], desc["channels"], desc["kernel"], desc["input_size"], seed=seed)
    raise ValueError(f"unknown net kind {desc['net_kind']!r}")


def checkpoint_dict(net, rng_seed=None, config_hash: str = "", extra: dict | None = None) -> dict:
    doc = {"format_version": FORMAT_VERSION, **net.describe()}
    doc["weights"] = [np.ravel(p).tolist() for p in net.params]
    doc["shapes"] = [list(p.shape) for p in net.params]
    doc["rng_seed"] = rng_seed
    doc["config_hash"] = config_hash
    if extra:
        doc.update(extra)
    return doc


def save_checkpoint(path, net, rng_seed=None, config_hash: str = "", extra: dict | None = None):
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(net, rng_seed, config_hash, extra), fh)


def load_checkpoint(path_or_doc):
    """Return (net, document)."""
    if isinstance(path_or_doc, dict):
        doc = path_or_doc
    else:
        with open(path_or_doc) as fh:
            doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    net = net_from_description(doc, seed=0)
    net.params = [np.asarray(w, dtype=float).reshape(s) for w, s in zip(doc["weights"], doc["shapes"])]
    net.seed = doc.get("rng_seed")
    return net, doc
