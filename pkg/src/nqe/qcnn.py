"""Quantum convolutional classifier on embedded states, trained on the linear loss."""
from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .embedding import EmbeddingSpec, trainable_unitary_circuit
from .metrics import ensemble_from_labels, weighted_trace_distance
from .sim import NoiseModel, Op, ParamCircuit, embed_operator, reduce_shifts, su4_ops

ANSATZ_ARITY = {"su4": 15, "simple": 2}
_Z = np.diag([1.0, -1.0]).astype(complex)


@dataclass(frozen=True)
class QcnnSpec:
    """Conv layers of weight-shared two-qubit blocks with optional discard pooling.

    ``layers`` lists the qubit pairs of each conv layer; the qubits in
    ``discard`` are dropped after layer ``pool_after`` and may not be touched
    afterwards.
    """

    n_qubits: int
    layers: tuple[tuple[tuple[int, int], ...], ...]
    ansatz: str = "su4"
    pooling: str = "discard"
    discard: tuple[int, ...] = ()
    pool_after: int = 0
    readout: int = 0

    def __post_init__(self):
        if self.ansatz not in ANSATZ_ARITY:
            raise ValueError(f"unknown ansatz {self.ansatz!r}")
        if self.pooling not in ("discard", "none"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.pooling == "none" and self.discard:
            raise ValueError("discarded qubits given without pooling")
        if not self.layers:
            raise ValueError("need at least one conv layer")
        live = set(range(self.n_qubits))
        for k, layer in enumerate(self.layers):
            for pair in layer:
                if len(pair) != 2 or pair[0] == pair[1]:
                    raise ValueError(f"bad pair {pair}")
                if not set(pair) <= live:
                    raise ValueError(f"layer {k} pair {pair} touches a discarded qubit")
            if self.pooling == "discard" and k == self.pool_after:
                live -= set(self.discard)
        if self.readout not in live:
            raise ValueError(f"readout qubit {self.readout} is not live at the end")

    @property
    def n_params(self) -> int:
        return ANSATZ_ARITY[self.ansatz] * len(self.layers)

    @classmethod
    def standard(cls, n_qubits: int, ansatz: str = "su4") -> "QcnnSpec":
        """Noiseless default: brick conv layers, then discard every other qubit
        and finish with conv layers on the survivors (4 qubits: (0,1),(2,3) |
        (1,2),(3,0) | drop 0,2 | (1,3), readout 1)."""
        live = list(range(n_qubits))
        if n_qubits == 2:
            return cls(2, (((0, 1),),), ansatz, "none", (), 0, 0)
        layers = [_brick(live, 0), _brick(live, 1)]
        discard, live = tuple(live[0::2]), live[1::2]
        layers.append(_brick(live, 0))
        if len(live) > 2:
            layers.append(_brick(live, 1))
        return cls(n_qubits, tuple(layers), ansatz, "discard", discard, 1, live[0])

    @classmethod
    def hardware(cls, n_qubits: int, ansatz: str = "simple") -> "QcnnSpec":
        """Shallow preset for noisy runs: two brick layers, no pooling, readout n/2."""
        live = list(range(n_qubits))
        layers = (_brick(live, 0),) if n_qubits == 2 else (_brick(live, 0), _brick(live, 1))
        return cls(n_qubits, layers, ansatz, "none", (), 0, n_qubits // 2)


def _brick(live, offset):
    n = len(live)
    if n == 2:
        return ((live[0], live[1]),)
    return tuple((live[(k + offset) % n], live[(k + 1 + offset) % n]) for k in range(0, n - (n % 2), 2))


@functools.lru_cache(maxsize=None)
def qcnn_circuit(spec: QcnnSpec) -> ParamCircuit:
    arity = ANSATZ_ARITY[spec.ansatz]
    ops = []
    for k, layer in enumerate(spec.layers):
        base = k * arity
        for q0, q1 in layer:
            if spec.ansatz == "su4":
                ops += [Op(kind, t, base + i) for i, (kind, t) in enumerate(su4_ops(q0, q1))]
            else:
                ops += [Op("RY", (q0,), base), Op("RY", (q1,), base + 1), Op("CNOT", (q0, q1))]
    return ParamCircuit(spec.n_qubits, tuple(ops), spec.n_params)


def readout_observable(spec: QcnnSpec) -> np.ndarray:
    return embed_operator(_Z, (spec.readout,), spec.n_qubits)


def effective_observable(spec: QcnnSpec, theta, noise: NoiseModel | None = None) -> np.ndarray:
    """U^dag Z U (or its noisy adjoint-channel version with readout confusion)
    for parameter rows of shape (..., n_params)."""
    o = qcnn_circuit(spec).heisenberg(np.asarray(theta, dtype=float), readout_observable(spec), noise)
    return _with_readout(o, spec, noise)


def _with_readout(o, spec, noise):
    if noise is None or noise.readout_flip is None:
        return o
    c = noise.confusion(spec.readout)
    e0, e1 = c[0, 1], c[1, 0]
    return (e1 - e0) * np.eye(o.shape[-1]) + (1 - e0 - e1) * o


def predict_from_observable(o, states) -> np.ndarray:
    """Tr(O rho) for O (..., d, d) against amplitudes (N, d) or densities (N, d, d)."""
    states = np.asarray(states)
    if states.ndim == 2:
        return np.real(np.einsum("ni,...ij,nj->...n", states.conj(), o, states, optimize=True))
    return np.real(np.einsum("...ij,nji->...n", o, states, optimize=True))


def qcnn_predict(state, spec: QcnnSpec, theta, noise: NoiseModel | None = None):
    """f = <x|U^dag Z U|x> in [-1, 1].

    ``state`` is a StateVector or DensityMatrix (returns a float), or an
    array batch: amplitudes (N, d) or densities (N, d, d).
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} parameters, got {theta.shape}")
    single = hasattr(state, "n_qubits")
    arr = np.asarray(getattr(state, "amplitudes", getattr(state, "matrix", state)))
    if single or arr.ndim == 1:
        arr = arr[None]
        single = True
    if arr.shape[-1] != 2**spec.n_qubits:
        raise ValueError("state size does not match the classifier")
    f = predict_from_observable(effective_observable(spec, theta, noise), arr)
    return float(f[0]) if single else f


def linear_loss(f, y) -> float:
    """(1/N) sum (1 - y f)/2."""
    f, y = np.asarray(f, dtype=float), np.asarray(y)
    if f.size == 0:
        raise ValueError("empty batch")
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be -1 or +1")
    return float(np.mean((1 - y * f) / 2))


def predict_labels(f) -> np.ndarray:
    """sign(f) with sign(0) = +1."""
    return np.where(np.asarray(f) >= 0, 1, -1)


def accuracy(states, labels, spec: QcnnSpec, theta, noise: NoiseModel | None = None) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty set")
    f = predict_from_observable(effective_observable(spec, theta, noise), states)
    return float(np.mean(predict_labels(f) == labels))


def loss_bound(states, labels) -> float:
    """1/2 - D_tr of the labelled ensemble (noiseless lower bound of the full loss)."""
    return 0.5 - weighted_trace_distance(ensemble_from_labels(states, labels))


def value_and_grad(spec: QcnnSpec, theta, states, labels, noise=None):
    """Linear loss on (states, labels) and its parameter-shift gradient."""
    circ, rows, reducer = qcnn_circuit(spec).shifted_params(theta)
    o = circ.heisenberg(rows, readout_observable(spec), noise)
    o = _with_readout(o, spec, noise)
    f = predict_from_observable(o, states)  # (2m+1, B)
    loss_rows = np.mean((1 - labels * f) / 2, axis=-1)
    return reduce_shifts(loss_rows, reducer)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class QcnnTrainConfig:
    iterations: int = 200
    batch_size: int = 128
    lr: float = 0.01
    optimizer: str = "nesterov"
    momentum: float = 0.9
    noise: NoiseModel | None = None
    seed: int = 0
    log_every: int = 1
    check_bound: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass
class QcnnHistory:
    batch_loss: list[float] = field(default_factory=list)
    full_iterations: list[int] = field(default_factory=list)
    full_loss: list[float] = field(default_factory=list)
    bound: float | None = None

    def write_csv(self, path, comment: str | None = None):
        full = dict(zip(self.full_iterations, self.full_loss))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if comment:
                fh.write(f"# {comment}\n")
            w.writerow(["iteration", "batch_loss", "full_loss", "bound"])
            for it in range(len(self.batch_loss) + 1):
                batch = self.batch_loss[it - 1] if it > 0 else None
                w.writerow([it, "" if batch is None else repr(batch),
                            repr(full[it]) if it in full else "",
                            "" if self.bound is None else repr(self.bound)])


class BoundViolation(AssertionError):
    pass


def init_params(n: int, seed) -> np.ndarray:
    return np.random.default_rng([seed, 11]).uniform(0, 2 * np.pi, size=n)


def train_qcnn(states, labels, spec: QcnnSpec, cfg: QcnnTrainConfig, theta0=None, log=None):
    """Mini-batch training on precomputed embedded states.

    ``states`` are amplitudes (N, d) or, for noisy embeddings, density
    matrices (N, d, d). Returns (theta, history). The
    full-dataset loss is checked against 1/2 - D_tr of the input ensemble at
    every logged iteration.
    """
    states = np.asarray(states)
    labels = np.asarray(labels)
    if len(np.unique(labels)) != 2:
        raise ValueError("training data must contain both classes")
    rng = np.random.default_rng(cfg.seed)
    theta = init_params(spec.n_params, cfg.seed) if theta0 is None else np.array(theta0, dtype=float)
    params = [theta]
    opt = nn.Optimizer(cfg.optimizer, cfg.lr, momentum=cfg.momentum)
    # channels and readout confusion keep the measurement a POVM, so the
    # bound of the (possibly noisy) input ensemble holds in every mode
    hist = QcnnHistory(bound=loss_bound(states, labels))

    def log_full(it):
        f = predict_from_observable(effective_observable(spec, theta, cfg.noise), states)
        loss = linear_loss(f, labels)
        hist.full_iterations.append(it)
        hist.full_loss.append(loss)
        if cfg.check_bound and loss < hist.bound - 1e-9:
            raise BoundViolation(f"iteration {it}: loss {loss} below bound {hist.bound}")

    log_full(0)
    n = len(labels)
    for it in range(1, cfg.iterations + 1):
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        loss, grad = value_and_grad(spec, theta, states[idx], labels[idx], cfg.noise)
        if not np.isfinite(loss):
            raise FloatingPointError(f"loss diverged at iteration {it}")
        opt.step(params, [grad])
        hist.batch_loss.append(float(loss))
        if it % cfg.log_every == 0 or it == cfg.iterations:
            log_full(it)
            if log:
                log(f"iter {it:4d}  batch {loss:.4f}  full {hist.full_loss[-1]:.4f}")
    return theta, hist


# ---------------------------------------------------------------------------
# Trainable unitary embedding trained jointly with the classifier
# ---------------------------------------------------------------------------


def _tu_states_and_grads(espec: EmbeddingSpec, theta_e, phi):
    """States (B, d) and their shift-rule companions for the trainable angles.

    Returns (circ values (2k+1, B, d), reducer restricted to theta_e).
    """
    circ = trainable_unitary_circuit(espec)
    params = np.concatenate([theta_e, np.zeros(circ.n_params - espec.n_angles)])
    ex, rows, reducer = circ.shifted_params(params)
    jac = circ.expanded()[1]
    full = np.concatenate([np.broadcast_to(theta_e, phi.shape[:-1] + theta_e.shape), phi], axis=-1)
    base = full @ jac.T  # (B, k)
    delta = rows - rows[0]
    psi = ex.run(base[None] + delta[:, None, :])  # (2k+1, B, d)
    return psi, reducer[:, : espec.n_angles]


def tu_value_and_grad(qspec: QcnnSpec, espec: EmbeddingSpec, theta_q, theta_e, phi, labels):
    """Linear loss and gradients w.r.t. classifier and embedding parameters."""
    o = effective_observable(qspec, theta_q)
    psi, red_e = _tu_states_and_grads(espec, theta_e, phi)
    f_e = predict_from_observable(o, psi.reshape(-1, psi.shape[-1])).reshape(psi.shape[:2])
    loss_e = np.mean((1 - labels * f_e) / 2, axis=-1)
    loss, g_e = reduce_shifts(loss_e, red_e)
    _, g_q = value_and_grad(qspec, theta_q, psi[0], labels)
    return float(loss), g_q, g_e


def tu_feature_angles(x, espec: EmbeddingSpec) -> np.ndarray:
    from .embedding import classical_feature_map

    return classical_feature_map(x, EmbeddingSpec(espec.n_qubits, 1, espec.topology))


def train_trainable_unitary(x, labels, qspec: QcnnSpec, espec: EmbeddingSpec, cfg: QcnnTrainConfig,
                            freeze_embedding: bool = False, log=None):
    """Joint training of the trainable unitary embedding and the classifier (noiseless)."""
    if cfg.noise is not None:
        raise NotImplementedError("joint trainable-unitary training is noiseless only")
    labels = np.asarray(labels)
    phi = tu_feature_angles(x, espec)
    rng = np.random.default_rng(cfg.seed)
    theta_q = init_params(qspec.n_params, cfg.seed)
    theta_e = np.zeros(espec.n_angles)
    params = [theta_q, theta_e]
    opt = nn.Optimizer(cfg.optimizer, cfg.lr, momentum=cfg.momentum)
    hist = QcnnHistory()
    circ = trainable_unitary_circuit(espec)

    def full_states():
        return circ.run(np.concatenate([np.broadcast_to(theta_e, (len(phi), espec.n_angles)), phi], axis=1))

    def log_full(it):
        s = full_states()
        f = predict_from_observable(effective_observable(qspec, theta_q), s)
        hist.full_iterations.append(it)
        hist.full_loss.append(linear_loss(f, labels))
        if cfg.check_bound and hist.full_loss[-1] < loss_bound(s, labels) - 1e-9:
            raise BoundViolation(f"iteration {it}: loss below the bound of the current embedding")

    log_full(0)
    n = len(labels)
    for it in range(1, cfg.iterations + 1):
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        loss, g_q, g_e = tu_value_and_grad(qspec, espec, theta_q, theta_e, phi[idx], labels[idx])
        if freeze_embedding:
            g_e = np.zeros_like(g_e)
        opt.step(params, [g_q, g_e])
        hist.batch_loss.append(loss)
        if it % cfg.log_every == 0 or it == cfg.iterations:
            log_full(it)
            if log:
                log(f"iter {it:4d}  batch {loss:.4f}  full {hist.full_loss[-1]:.4f}")
    hist.bound = loss_bound(full_states(), labels)
    return theta_q, theta_e, hist


def trainable_unitary_states(x, theta_e, espec: EmbeddingSpec) -> np.ndarray:
    phi = tu_feature_angles(x, espec)
    circ = trainable_unitary_circuit(espec)
    return circ.run(np.concatenate([np.broadcast_to(theta_e, (len(phi), espec.n_angles)), phi], axis=1))


# ---------------------------------------------------------------------------
# Loss inequalities
# ---------------------------------------------------------------------------


def loss_norms(y, f) -> tuple[float, float]:
    """(L_lin, L_mse) = (||y - f||_1, ||y - f||_2^2)."""
    r = np.asarray(y, dtype=float) - np.asarray(f, dtype=float)
    return float(np.abs(r).sum()), float((r**2).sum())


def loss_chain_holds(y, f, tol: float = 1e-9) -> bool:
    """(1/N) L_lin^2 <= L_mse <= L_lin^2."""
    lin, mse = loss_norms(y, f)
    n = np.size(y)
    return lin**2 / n <= mse + tol and mse <= lin**2 + tol
