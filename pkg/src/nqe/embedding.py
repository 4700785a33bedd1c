"""Data-embedding circuits: ZZ feature map, trainable unitary embedding, amplitude encoding."""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .sim import Op, ParamCircuit, StateVector

KINDS = ("zz_feature", "trainable_unitary", "amplitude")


@dataclass(frozen=True)
class EmbeddingSpec:
    n_qubits: int
    layers: int = 1
    topology: str = "ring"
    kind: str = "zz_feature"

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be >= 1")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.topology not in ("ring", "chain"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown embedding kind {self.kind!r}")

    @property
    def couplings(self) -> tuple[tuple[int, int], ...]:
        n = self.n_qubits
        pairs = [(i, i + 1) for i in range(n - 1)]
        if self.topology == "ring" and n >= 3:
            pairs.append((n - 1, 0))
        return tuple(pairs)

    @property
    def angles_per_layer(self) -> int:
        return self.n_qubits + len(self.couplings)

    @property
    def n_angles(self) -> int:
        return self.layers * self.angles_per_layer


@dataclass
class AngleVector:
    """Feature-map angles for every layer: singles (phi_i) then pairs (phi_ij)."""

    singles: np.ndarray  # (L, n)
    pairs: np.ndarray  # (L, n_couplings)

    def __post_init__(self):
        self.singles = np.atleast_2d(np.asarray(self.singles, dtype=float))
        self.pairs = np.asarray(self.pairs, dtype=float).reshape(self.singles.shape[0], -1)
        if not (np.all(np.isfinite(self.singles)) and np.all(np.isfinite(self.pairs))):
            raise ValueError("angles must be finite")

    @classmethod
    def from_flat(cls, flat, spec: EmbeddingSpec) -> "AngleVector":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (spec.n_angles,):
            raise ValueError(f"expected {spec.n_angles} angles, got {flat.shape}")
        per = flat.reshape(spec.layers, spec.angles_per_layer)
        return cls(per[:, : spec.n_qubits], per[:, spec.n_qubits :])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.singles, self.pairs], axis=1).ravel()


@dataclass
class TrainableEmbeddingParams:
    """Per-layer Y-generator angles: singles (theta_i) then pairs (theta_ij)."""

    values: np.ndarray  # flat, length L * (n + n_couplings)

    def check(self, spec: EmbeddingSpec):
        if np.shape(self.values) != (spec.n_angles,):
            raise ValueError(f"expected {spec.n_angles} trainable angles")


def classical_feature_map(x, spec: EmbeddingSpec) -> np.ndarray:
    """phi_i = x_i, phi_ij = (pi - x_i)(pi - x_j)/2, tiled over the spec's layers.

    Accepts a single vector (n,) or a batch (B, n); returns flat angle rows.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.n_qubits:
        raise ValueError(f"expected {spec.n_qubits} features, got {x.shape[-1]}")
    pairs = [(np.pi - x[..., i]) * (np.pi - x[..., j]) / 2 for i, j in spec.couplings]
    layer = np.concatenate([x, np.stack(pairs, axis=-1) if pairs else x[..., :0]], axis=-1)
    return np.concatenate([layer] * spec.layers, axis=-1)


def _zz_layer_ops(spec: EmbeddingSpec, offset: int) -> list[Op]:
    n = spec.n_qubits
    ops = [Op("H", (q,)) for q in range(n)]
    ops += [Op("RZ_PHASE", (q,), offset + q) for q in range(n)]
    ops += [Op("RZZ_PHASE", pair, offset + n + c) for c, pair in enumerate(spec.couplings)]
    return ops


@functools.lru_cache(maxsize=None)
def zz_feature_circuit(spec: EmbeddingSpec) -> ParamCircuit:
    """Parameterized circuit V(phi); parameter vector is the flat AngleVector."""
    ops = []
    for layer in range(spec.layers):
        ops += _zz_layer_ops(spec, layer * spec.angles_per_layer)
    return ParamCircuit(spec.n_qubits, tuple(ops), spec.n_angles)


@functools.lru_cache(maxsize=None)
def trainable_unitary_circuit(spec: EmbeddingSpec) -> ParamCircuit:
    """prod_l [V(phi) exp(i sum theta Y + i sum theta YY)] |0>.

    Parameters: the L*(n+c) trainable angles followed by one layer's (n+c)
    feature angles, which every layer reuses.
    """
    n, per = spec.n_qubits, spec.angles_per_layer
    phi0 = spec.n_angles
    ops = []
    for layer in range(spec.layers):
        base = layer * per
        ops += [Op("RY_PHASE", (q,), base + q) for q in range(n)]
        ops += [Op("RYY_PHASE", pair, base + n + c) for c, pair in enumerate(spec.couplings)]
        ops += _zz_layer_ops(spec, phi0)
    return ParamCircuit(n, tuple(ops), spec.n_angles + per)


def zz_feature_states(angles, spec: EmbeddingSpec) -> np.ndarray:
    """Batched amplitudes for angle rows of shape (..., n_angles)."""
    return zz_feature_circuit(spec).run(np.asarray(angles, dtype=float))


def zz_feature_state(angles: AngleVector | np.ndarray, spec: EmbeddingSpec) -> StateVector:
    flat = angles.flat() if isinstance(angles, AngleVector) else np.asarray(angles, dtype=float)
    if flat.shape != (spec.n_angles,):
        raise ValueError(f"expected {spec.n_angles} angles, got {flat.shape}")
    return StateVector(spec.n_qubits, zz_feature_states(flat, spec))


def trainable_unitary_states(x, theta, spec: EmbeddingSpec) -> np.ndarray:
    """Batched trainable-unitary amplitudes; x is (..., n) or already-broadcast."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != spec.n_angles:
        raise ValueError(f"expected {spec.n_angles} trainable angles, got {theta.shape[-1]}")
    one_layer = EmbeddingSpec(spec.n_qubits, 1, spec.topology)
    phi = classical_feature_map(x, one_layer)
    batch = np.broadcast_shapes(theta.shape[:-1], phi.shape[:-1])
    params = np.concatenate(
        [np.broadcast_to(theta, batch + theta.shape[-1:]), np.broadcast_to(phi, batch + phi.shape[-1:])],
        axis=-1,
    )
    return trainable_unitary_circuit(spec).run(params)


def trainable_unitary_state(x, params: TrainableEmbeddingParams | np.ndarray, spec) -> StateVector:
    theta = params.values if isinstance(params, TrainableEmbeddingParams) else params
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_angles,):
        raise ValueError(f"expected {spec.n_angles} trainable angles, got {theta.shape}")
    return StateVector(spec.n_qubits, trainable_unitary_states(x, theta, spec))


def amplitude_encode(x, n_qubits: int) -> StateVector:
    return StateVector(n_qubits, amplitude_states(x, n_qubits))


def amplitude_states(x, n_qubits: int) -> np.ndarray:
    """Normalized, zero-padded real amplitudes; works on (..., m) batches."""
    x = np.asarray(x, dtype=float)
    d = 2**n_qubits
    if x.shape[-1] > d:
        raise ValueError(f"{x.shape[-1]} features do not fit in {n_qubits} qubits")
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("cannot amplitude-encode a zero vector")
    pad = [(0, 0)] * (x.ndim - 1) + [(0, d - x.shape[-1])]
    return np.pad(x / norm, pad).astype(complex)


def amplitude_fidelity(a, b) -> float:
    """Classical shortcut |<a|b>|^2 = (a_hat . b_hat)^2 for real amplitude encodings."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float((a @ b / (np.linalg.norm(a) * np.linalg.norm(b))) ** 2)
