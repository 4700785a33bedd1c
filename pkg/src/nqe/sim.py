"""Statevector and density-matrix simulation of small parameterized circuits.

Basis ordering is little-endian: bit ``k`` of a basis index is qubit ``k``.

Rotation gates come in two conventions:

* ``*_PHASE`` gates implement ``exp(+i*phi*P)`` (the feature-map convention),
  differentiated with shift ``pi/4`` and coefficient 1.
* ``RX``/``RY``/``RZ``/``RXX``/``RYY``/``RZZ`` implement ``exp(-i*theta*P/2)``,
  differentiated with shift ``pi/2`` and coefficient 1/2.

Internally every rotation is reduced to ``exp(i*a*P)`` with ``a = scale*angle``.
All array routines accept leading batch dimensions so that many parameter
settings (shifted gradients, datasets) are simulated in one call.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# kind -> (pauli string over the targets, angle scale)
ROTATIONS = {
    "RX": ("X", -0.5),
    "RY": ("Y", -0.5),
    "RZ": ("Z", -0.5),
    "RXX": ("XX", -0.5),
    "RYY": ("YY", -0.5),
    "RZZ": ("ZZ", -0.5),
    "RY_PHASE": ("Y", 1.0),
    "RZ_PHASE": ("Z", 1.0),
    "RYY_PHASE": ("YY", 1.0),
    "RZZ_PHASE": ("ZZ", 1.0),
}
FIXED_GATES = {"H": 1, "X": 1, "CNOT": 2}
COMPOSITE_GATES = {"SU4_BLOCK": (2, 15)}

_H = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / np.sqrt(2.0)
_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def shift_rule(kind: str) -> tuple[float, float]:
    """(shift, coefficient) of the two-term parameter-shift rule for a gate kind."""
    if ROTATIONS[kind][1] == 1.0:
        return np.pi / 4, 1.0
    return np.pi / 2, 0.5


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (2**self.n_qubits,):
            raise ValueError(
                f"expected {2**self.n_qubits} amplitudes, got shape {self.amplitudes.shape}"
            )

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        amps = np.zeros(2**n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> "StateVector":
        amps = np.zeros(2**n_qubits, dtype=complex)
        amps[index] = 1.0
        return cls(n_qubits, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def to_density(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(self.n_qubits, np.outer(a, a.conj()))


@dataclass
class DensityMatrix:
    n_qubits: int
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        d = 2**self.n_qubits
        if self.matrix.shape != (d, d):
            raise ValueError(f"expected a {d}x{d} matrix, got {self.matrix.shape}")

    @classmethod
    def zero(cls, n_qubits: int) -> "DensityMatrix":
        return StateVector.zero(n_qubits).to_density()

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def is_valid(self, atol: float = 1e-10, psd_tol: float = 1e-9) -> bool:
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > atol:
            return False
        if abs(np.trace(m) - 1.0) > atol:
            return False
        return bool(np.linalg.eigvalsh(hermitize(m)).min() >= -psd_tol)


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    params: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        arity, nparams = _gate_signature(self.kind)
        if len(self.targets) != arity:
            raise ValueError(f"{self.kind} acts on {arity} qubit(s), got {self.targets}")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError(f"duplicate targets {self.targets}")
        if len(self.params) != nparams:
            raise ValueError(f"{self.kind} takes {nparams} parameter(s)")

    def matrix(self) -> np.ndarray:
        """Dense matrix on the gate's own targets (little-endian over ``targets``)."""
        k = len(self.targets)
        psi = np.eye(2**k, dtype=complex)
        local = Gate(self.kind, tuple(range(k)), self.params)
        # rows of `psi` are basis states; the result rows are the columns of U
        return apply_gates(psi, k, [local]).T

    def inverse(self) -> "Gate":
        if self.kind in ROTATIONS:
            return Gate(self.kind, self.targets, (-self.params[0],))
        if self.kind in FIXED_GATES:
            return self
        raise ValueError(f"{self.kind} has no direct inverse; expand it first")


def _gate_signature(kind: str) -> tuple[int, int]:
    if kind in ROTATIONS:
        return len(ROTATIONS[kind][0]), 1
    if kind in FIXED_GATES:
        return FIXED_GATES[kind], 0
    if kind in COMPOSITE_GATES:
        return COMPOSITE_GATES[kind]
    raise ValueError(f"unknown gate kind {kind!r}")


def su4_ops(q0: int, q1: int) -> list[tuple[str, tuple[int, ...]]]:
    """Elementary (kind, targets) sequence of the 15-parameter two-qubit block."""
    euler = [("RZ",), ("RY",), ("RZ",)]
    ops = [(k[0], (q0,)) for k in euler] + [(k[0], (q1,)) for k in euler]
    ops += [("RXX", (q0, q1)), ("RYY", (q0, q1)), ("RZZ", (q0, q1))]
    ops += [(k[0], (q0,)) for k in euler] + [(k[0], (q1,)) for k in euler]
    return ops


def expand_gate(gate: Gate) -> list[Gate]:
    if gate.kind == "SU4_BLOCK":
        return [Gate(k, t, (p,)) for (k, t), p in zip(su4_ops(*gate.targets), gate.params)]
    return [gate]


def adjoint_circuit(circuit: Sequence[Gate]) -> list[Gate]:
    out = []
    for gate in reversed(circuit):
        out.extend(g.inverse() for g in reversed(expand_gate(gate)))
    return out


@dataclass
class NoiseModel:
    """Generic NISQ noise: depolarizing + T1/T2 relaxation after each gate,
    and a classical readout confusion matrix per qubit.

    ``readout_flip[q][true][measured]`` is the probability of reading
    ``measured`` when the qubit is in ``true``.
    """

    p_dep_1q: float = 1e-3
    p_dep_2q: float = 1e-2
    t1: float | Sequence[float] = 100.0
    t2: float | Sequence[float] = 80.0
    gate_time_1q: float = 0.05
    gate_time_2q: float = 0.3
    readout_flip: np.ndarray | float | None = 0.02

    def __post_init__(self):
        for name in ("p_dep_1q", "p_dep_2q"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} is not a probability")
        if self.gate_time_1q < 0 or self.gate_time_2q < 0:
            raise ValueError("gate times must be non-negative")
        t1 = np.atleast_1d(np.asarray(self.t1, dtype=float))
        t2 = np.atleast_1d(np.asarray(self.t2, dtype=float))
        if np.any(t1 <= 0) or np.any(t2 <= 0):
            raise ValueError("T1 and T2 must be positive")
        if np.any(t2 > 2 * t1 + 1e-12):
            raise ValueError("T2 must not exceed 2*T1")
        if self.readout_flip is not None and np.ndim(self.readout_flip) > 0:
            ro = np.asarray(self.readout_flip, dtype=float)
            if ro.shape[-2:] != (2, 2):
                raise ValueError("readout confusion must be 2x2 per qubit")
            if np.any(ro < 0) or np.any(ro > 1):
                raise ValueError("readout entries must be probabilities")
            if np.max(np.abs(ro.sum(axis=-1) - 1.0)) > 1e-12:
                raise ValueError("readout confusion rows must sum to 1")
        elif self.readout_flip is not None and not 0.0 <= self.readout_flip <= 1.0:
            raise ValueError("readout flip must be a probability")

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(0.0, 0.0, np.inf, np.inf, 0.0, 0.0, None)

    def _per_qubit(self, value, q):
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        return float(arr[q] if arr.size > 1 else arr[0])

    def relaxation(self, q: int, duration: float) -> tuple[float, float]:
        """(amplitude damping gamma, pure dephasing lambda) for ``duration`` µs.

        Coherences decay as exp(-t/T2) overall; amplitude damping already
        contributes exp(-t/(2 T1)), the remainder is pure dephasing.
        """
        t1, t2 = self._per_qubit(self.t1, q), self._per_qubit(self.t2, q)
        if duration == 0:
            return 0.0, 0.0
        inv_t1 = 0.0 if np.isinf(t1) else 1.0 / t1
        inv_t2 = 0.0 if np.isinf(t2) else 1.0 / t2
        g1 = 1.0 - np.exp(-duration * inv_t1)
        lam = 1.0 - np.exp(-duration * max(2.0 * inv_t2 - inv_t1, 0.0))
        return float(g1), float(lam)

    def confusion(self, q: int) -> np.ndarray:
        ro = self.readout_flip
        if ro is None:
            return np.eye(2)
        if np.ndim(ro) == 0:
            e = float(ro)
            return np.array([[1 - e, e], [e, 1 - e]])
        ro = np.asarray(ro, dtype=float)
        return ro if ro.ndim == 2 else ro[q]


def desk_nisq() -> NoiseModel:
    """Default noise preset with magnitudes typical of small superconducting devices."""
    return NoiseModel()


@dataclass
class Observable:
    """Weighted Pauli string, e.g. ``Observable({0: "Z"})``."""

    paulis: dict[int, str]
    coefficient: float = 1.0

    def __post_init__(self):
        for q, p in self.paulis.items():
            if p not in "XYZ" or len(p) != 1:
                raise ValueError(f"bad Pauli {p!r} on qubit {q}")

    def matrix(self, n_qubits: int) -> np.ndarray:
        self._check(n_qubits)
        out = np.ones((1, 1), dtype=complex)
        for q in reversed(range(n_qubits)):
            out = np.kron(out, _PAULI[self.paulis.get(q, "I")])
        return self.coefficient * out

    def _check(self, n_qubits):
        for q in self.paulis:
            if not 0 <= q < n_qubits:
                raise ValueError(f"observable qubit {q} out of range for {n_qubits} qubits")


# ---------------------------------------------------------------------------
# Array kernels (act on the last axis)
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def pauli_table(n: int, paulis: str, qubits: tuple[int, ...]):
    """Permutation and phases such that ``(P psi)[j] = (phase * psi)[perm][j]``."""
    idx = np.arange(2**n)
    mask = 0
    phase = np.ones(2**n, dtype=complex)
    for p, q in zip(paulis, qubits):
        bit = (idx >> q) & 1
        sign = 1 - 2 * bit
        if p == "X":
            mask |= 1 << q
        elif p == "Y":
            mask |= 1 << q
            phase = phase * (1j * sign)
        elif p == "Z":
            phase = phase * sign
        else:
            raise ValueError(f"bad Pauli {p!r}")
    perm = None if mask == 0 else idx ^ mask
    return perm, phase


def _pauli_apply(arr, table):
    perm, phase = table
    out = arr * phase
    return out if perm is None else out[..., perm]


def _rotate(arr, table, a):
    """exp(i a P) applied along the last axis; ``a`` broadcasts against arr[..., 0]."""
    a = np.asarray(a, dtype=float)[..., None]
    return np.cos(a) * arr + 1j * np.sin(a) * _pauli_apply(arr, table)


def _apply_1q(arr, n, mat, q):
    shape = arr.shape
    t = arr.reshape(shape[:-1] + (2 ** (n - q - 1), 2, 2**q))
    t = np.einsum("ab,...ibj->...iaj", mat, t)
    return t.reshape(shape)


@functools.lru_cache(maxsize=None)
def _cnot_perm(n, c, t):
    idx = np.arange(2**n)
    return idx ^ (((idx >> c) & 1) << t)


def _act(arr, n, kind, targets, a):
    """Apply gate ``kind`` with internal angle ``a`` along the last axis."""
    if kind in ROTATIONS:
        return _rotate(arr, pauli_table(n, ROTATIONS[kind][0], targets), a)
    if kind == "H":
        return _apply_1q(arr, n, _H, targets[0])
    if kind == "X":
        return _pauli_apply(arr, pauli_table(n, "X", targets))
    if kind == "CNOT":
        return arr[..., _cnot_perm(n, targets[0], targets[1])]
    raise ValueError(f"cannot apply {kind!r} directly")


def _check_targets(targets, n):
    for t in targets:
        if not 0 <= t < n:
            raise ValueError(f"target {t} out of range for {n} qubits")


def apply_gates(psi: np.ndarray, n: int, gates: Sequence[Gate]) -> np.ndarray:
    """Apply a gate list to amplitude array(s) of shape (..., 2**n)."""
    for gate in gates:
        _check_targets(gate.targets, n)
        for g in expand_gate(gate):
            a = ROTATIONS[g.kind][1] * g.params[0] if g.kind in ROTATIONS else None
            psi = _act(psi, n, g.kind, g.targets, a)
    return psi


def hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))


# density-matrix helpers: arrays of shape (..., d, d)


def _left(rho, fn):
    """fn applied to every column: M -> U M."""
    return np.swapaxes(fn(np.swapaxes(rho, -1, -2)), -1, -2)


def _right_dag(rho, fn):
    """M -> M U^dagger, where fn applies U along the last axis."""
    return np.conj(fn(np.conj(rho)))


def _conjugate(rho, fn):
    return _right_dag(_left(rho, fn), fn)


def _depolarize(rho, n, targets, p):
    if p == 0:
        return rho
    k = len(targets)
    acc = np.zeros_like(rho)
    for ps in itertools.product("IXYZ", repeat=k):
        if all(c == "I" for c in ps):
            acc = acc + rho
            continue
        qs = tuple(q for c, q in zip(ps, targets) if c != "I")
        tab = pauli_table(n, "".join(c for c in ps if c != "I"), qs)
        acc = acc + _conjugate(rho, lambda x, t=tab: _pauli_apply(x, t))
    return (1.0 - p) * rho + p * acc / 4**k


def _relax(rho, n, q, g1, lam, adjoint=False):
    ops = []
    if g1 > 0:
        ops.append(amplitude_damping_kraus(g1))
    if lam > 0:
        ops.append(phase_damping_kraus(lam))
    if adjoint:
        ops = ops[::-1]
    for kraus in ops:
        out = np.zeros_like(rho)
        for k in kraus:
            k = k.conj().T if adjoint else k
            out = out + _conjugate(rho, lambda x, m=k: _apply_1q(x, n, m, q))
        rho = out
    return rho


def _gate_noise(rho, n, kind, targets, noise, adjoint=False):
    if noise is None:
        return rho
    two = len(targets) == 2
    p = noise.p_dep_2q if two else noise.p_dep_1q
    duration = noise.gate_time_2q if two else noise.gate_time_1q
    relax = [(q,) + noise.relaxation(q, duration) for q in targets]
    if adjoint:
        for q, g1, lam in relax:
            rho = _relax(rho, n, q, g1, lam, adjoint=True)
        return _depolarize(rho, n, targets, p)
    rho = _depolarize(rho, n, targets, p)
    for q, g1, lam in relax:
        rho = _relax(rho, n, q, g1, lam)
    return rho


# ---------------------------------------------------------------------------
# Kraus channels
# ---------------------------------------------------------------------------


def depolarizing_kraus(p: float) -> list[np.ndarray]:
    """Single-qubit depolarizing channel rho -> (1-p) rho + p I/2."""
    if not 0 <= p <= 1:
        raise ValueError("p must be in [0, 1]")
    return [np.sqrt(1 - 3 * p / 4) * _PAULI["I"]] + [
        np.sqrt(p / 4) * _PAULI[c] for c in "XYZ"
    ]


def amplitude_damping_kraus(gamma: float) -> list[np.ndarray]:
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must be in [0, 1]")
    return [
        np.array([[1, 0], [0, np.sqrt(1 - gamma)]], dtype=complex),
        np.array([[0, np.sqrt(gamma)], [0, 0]], dtype=complex),
    ]


def phase_damping_kraus(lam: float) -> list[np.ndarray]:
    if not 0 <= lam <= 1:
        raise ValueError("lambda must be in [0, 1]")
    return [
        np.array([[1, 0], [0, np.sqrt(1 - lam)]], dtype=complex),
        np.array([[0, 0], [0, np.sqrt(lam)]], dtype=complex),
    ]


def apply_channel(
    dm: DensityMatrix, kraus: Sequence[np.ndarray], qubits: Sequence[int] | None = None
) -> DensityMatrix:
    """Apply ``rho -> sum_i K_i rho K_i^dagger``.

    With ``qubits=None`` the Kraus operators act on the full register,
    otherwise on the listed qubits (little-endian within the operator).
    """
    kraus = [np.asarray(k, dtype=complex) for k in kraus]
    dim = kraus[0].shape[0]
    completeness = sum(k.conj().T @ k for k in kraus)
    if np.max(np.abs(completeness - np.eye(dim))) > 1e-10:
        raise ValueError("Kraus operators are not trace preserving")
    n = dm.n_qubits
    if qubits is None:
        if dim != 2**n:
            raise ValueError("Kraus dimension does not match the register")
        full = kraus
    else:
        qubits = tuple(qubits)
        _check_targets(qubits, n)
        if dim != 2 ** len(qubits):
            raise ValueError("Kraus dimension does not match the qubit list")
        full = [embed_operator(k, qubits, n) for k in kraus]
    out = sum(k @ dm.matrix @ k.conj().T for k in full)
    return DensityMatrix(n, out)


def _apply_matrix(arr, n, mat, qubits):
    """Apply a k-qubit matrix (little-endian over ``qubits``) along the last axis."""
    k = len(qubits)
    shape = arr.shape
    lead = len(shape) - 1
    t = arr.reshape(shape[:-1] + (2,) * n)
    m = np.asarray(mat, dtype=complex).reshape((2,) * (2 * k))
    # matrix axis i (row) / k+i (column) carries bit k-1-i of the local index
    arr_axes = [lead + n - 1 - qubits[k - 1 - i] for i in range(k)]
    out = np.tensordot(m, t, axes=(list(range(k, 2 * k)), arr_axes))
    out = np.moveaxis(out, list(range(k)), arr_axes)
    return out.reshape(shape)


def embed_operator(op: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    """Lift a k-qubit operator on ``qubits`` to the full n-qubit space."""
    d = 2**n
    return _apply_matrix(np.eye(d, dtype=complex), n, op, tuple(qubits)).T


# ---------------------------------------------------------------------------
# Spec-level operations on single states
# ---------------------------------------------------------------------------


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    _check_targets(gate.targets, state.n_qubits)
    return StateVector(state.n_qubits, apply_gates(state.amplitudes, state.n_qubits, [gate]))


def run_circuit(circuit: Sequence[Gate], n_qubits: int, initial: StateVector | None = None):
    state = StateVector.zero(n_qubits) if initial is None else initial
    return StateVector(n_qubits, apply_gates(state.amplitudes, n_qubits, circuit))


def fidelity_exact(a: StateVector, b: StateVector) -> float:
    if a.n_qubits != b.n_qubits:
        raise ValueError("states have different qubit counts")
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)


def expectation(state: StateVector | DensityMatrix, obs: Observable) -> float:
    n = state.n_qubits
    obs._check(n)
    qs = tuple(sorted(obs.paulis))
    tab = pauli_table(n, "".join(obs.paulis[q] for q in qs), qs)
    if isinstance(state, StateVector):
        val = np.vdot(state.amplitudes, _pauli_apply(state.amplitudes, tab))
    else:
        # Tr(P rho) = sum_j (P rho)_{jj}
        val = np.trace(_left(state.matrix, lambda x: _pauli_apply(x, tab)))
    return float(obs.coefficient * np.real(val))


def evolve_density(
    rho: np.ndarray, n: int, circuit: Sequence[Gate], noise: NoiseModel | None
) -> np.ndarray:
    for gate in circuit:
        _check_targets(gate.targets, n)
        for g in expand_gate(gate):
            a = ROTATIONS[g.kind][1] * g.params[0] if g.kind in ROTATIONS else None
            rho = _conjugate(rho, lambda x: _act(x, n, g.kind, g.targets, a))
            rho = _gate_noise(rho, n, g.kind, g.targets, noise)
    return rho


def evolve_noisy(circuit: Sequence[Gate], noise: NoiseModel, n_qubits: int) -> DensityMatrix:
    """Density-matrix evolution from |0...0> with noise after every gate."""
    if not isinstance(noise, NoiseModel):
        raise TypeError("noise must be a NoiseModel")
    rho = DensityMatrix.zero(n_qubits).matrix
    return DensityMatrix(n_qubits, evolve_density(rho, n_qubits, circuit, noise))


def readout_probabilities(probs: np.ndarray, n: int, noise: NoiseModel | None) -> np.ndarray:
    """Apply per-qubit readout confusion to computational-basis probabilities."""
    if noise is None or noise.readout_flip is None:
        return probs
    shape = probs.shape
    t = probs.reshape(shape[:-1] + (2,) * n)
    for q in range(n):
        axis = len(shape) - 1 + (n - 1 - q)
        t = np.moveaxis(np.tensordot(t, noise.confusion(q), axes=([axis], [0])), -1, axis)
    return t.reshape(shape)


def fidelity_sampled(
    prepare_i: Sequence[Gate],
    prepare_j: Sequence[Gate],
    shots: int,
    n_qubits: int,
    noise: NoiseModel | None = None,
    rng_seed=None,
) -> float:
    """Compute-uncompute estimate of ``|<0|V_j^dag V_i|0>|^2`` from ``shots`` samples."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    circuit = list(prepare_i) + adjoint_circuit(prepare_j)
    if noise is None:
        psi = run_circuit(circuit, n_qubits).amplitudes
        p0 = abs(psi[0]) ** 2
    else:
        rho = evolve_noisy(circuit, noise, n_qubits).matrix
        probs = readout_probabilities(np.clip(np.real(np.diag(rho)), 0, None), n_qubits, noise)
        p0 = probs[0]
    p0 = float(np.clip(p0, 0.0, 1.0))
    rng = np.random.default_rng(rng_seed)
    return rng.binomial(shots, p0) / shots


def grad_param_shift(
    fn: Callable[[np.ndarray], float],
    angles,
    which: Sequence[int] | None = None,
    *,
    shift: float = np.pi / 4,
    coeff: float = 1.0,
    vectorized: bool = False,
) -> np.ndarray:
    """Two-term parameter-shift gradient.

    Default rule is for gates ``exp(i*phi*P)``: ``f(phi + pi/4) - f(phi - pi/4)``.
    Pass ``shift=pi/2, coeff=0.5`` for ``exp(-i*theta*P/2)`` gates. With
    ``vectorized=True`` ``fn`` receives a (m, p) array of angle rows and
    returns m values.
    """
    angles = np.asarray(angles, dtype=float)
    which = range(angles.size) if which is None else list(which)
    which = np.asarray(list(which), dtype=int)
    if np.any(which < 0) or np.any(which >= angles.size):
        raise IndexError("parameter index out of range")
    m = len(which)
    rows = np.tile(angles, (2 * m, 1))
    rows[np.arange(m), which] += shift
    rows[m + np.arange(m), which] -= shift
    if vectorized:
        vals = np.asarray(fn(rows), dtype=float)
    else:
        vals = np.array([fn(r) for r in rows], dtype=float)
    return coeff * (vals[:m] - vals[m:])


# ---------------------------------------------------------------------------
# Parameterized circuits executed in batch
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Op:
    """One gate of a parameterized circuit; angle = ``coef * params[slot]``."""

    kind: str
    targets: tuple[int, ...]
    slot: int | None = None
    coef: float = 1.0


@dataclass(frozen=True)
class ParamCircuit:
    n_qubits: int
    ops: tuple[Op, ...]
    n_params: int
    _expanded: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for op in self.ops:
            _check_targets(op.targets, self.n_qubits)
            if (op.kind in ROTATIONS) != (op.slot is not None):
                raise ValueError(f"{op.kind} slot mismatch")
            if op.slot is not None and not 0 <= op.slot < self.n_params:
                raise ValueError("slot out of range")

    def __add__(self, other: "ParamCircuit") -> "ParamCircuit":
        if other.n_qubits != self.n_qubits:
            raise ValueError("qubit counts differ")
        shifted = tuple(
            Op(o.kind, o.targets, None if o.slot is None else o.slot + self.n_params, o.coef)
            for o in other.ops
        )
        return ParamCircuit(self.n_qubits, self.ops + shifted, self.n_params + other.n_params)

    def bind(self, params) -> list[Gate]:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        return [
            Gate(o.kind, o.targets, () if o.slot is None else (o.coef * params[o.slot],))
            for o in self.ops
        ]

    # -- batched execution ------------------------------------------------
    def _angles(self, params):
        params = np.asarray(params, dtype=float)
        if params.shape[-1] != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape[-1]}")
        return params

    def run(self, params, init: np.ndarray | None = None) -> np.ndarray:
        """Amplitudes for a batch of parameter rows.

        ``params`` has shape (*B, n_params). ``init`` (default |0...0>) has
        shape (*B', *E, 2**n) where *B' broadcasts against *B; the *E axes
        are carried along (used to push whole bases through the circuit).
        """
        params = self._angles(params)
        batch = params.shape[:-1]
        d = 2**self.n_qubits
        if init is None:
            psi = np.zeros(batch + (d,), dtype=complex)
            psi[..., 0] = 1.0
        else:
            psi = np.asarray(init, dtype=complex)
        extra = psi.ndim - 1 - len(batch)
        for op in self.ops:
            a = None
            if op.slot is not None:
                a = ROTATIONS[op.kind][1] * op.coef * params[..., op.slot]
                a = a.reshape(a.shape + (1,) * extra)
            psi = _act(psi, self.n_qubits, op.kind, op.targets, a)
        return psi

    def unitary(self, params) -> np.ndarray:
        """Dense unitaries of shape (*B, d, d)."""
        params = self._angles(params)
        d = 2**self.n_qubits
        cols = self.run(params, np.broadcast_to(np.eye(d, dtype=complex), params.shape[:-1] + (d, d)))
        return np.swapaxes(cols, -1, -2)

    def run_density(self, params, noise: NoiseModel | None, rho0: np.ndarray | None = None):
        params = self._angles(params)
        batch = params.shape[:-1]
        d = 2**self.n_qubits
        if rho0 is None:
            rho = np.zeros(batch + (d, d), dtype=complex)
            rho[..., 0, 0] = 1.0
        else:
            rho = np.asarray(rho0, dtype=complex)
        for op in self.ops:
            a = None
            if op.slot is not None:
                a = ROTATIONS[op.kind][1] * op.coef * params[..., op.slot]
                a = a[..., None]
            rho = _conjugate(rho, lambda x: _act(x, self.n_qubits, op.kind, op.targets, a))
            rho = _gate_noise(rho, self.n_qubits, op.kind, op.targets, noise)
        return rho

    def heisenberg(self, params, observable: np.ndarray, noise: NoiseModel | None) -> np.ndarray:
        """Observable pulled back through the (noisy) circuit: Lambda^dagger(O)."""
        params = self._angles(params)
        o = np.broadcast_to(np.asarray(observable, dtype=complex), params.shape[:-1] + observable.shape[-2:])
        for op in reversed(self.ops):
            o = _gate_noise(o, self.n_qubits, op.kind, op.targets, noise, adjoint=True)
            a = None
            if op.slot is not None:
                a = -ROTATIONS[op.kind][1] * op.coef * params[..., op.slot]
                a = a[..., None]
            fn = lambda x, op=op, a=a: _act(x, self.n_qubits, op.kind, op.targets, a)
            # U^dag O U for a self-inverse or angle-negated gate
            o = _conjugate(o, fn)
        return o

    def adjoint(self) -> "ParamCircuit":
        """U(params)^dagger: reversed gate order with negated rotation angles."""
        for o in self.ops:
            if o.slot is None and o.kind not in ("H", "X", "CNOT"):
                raise ValueError(f"no adjoint rule for {o.kind}")
        ops = tuple(Op(o.kind, o.targets, o.slot, -o.coef) if o.slot is not None else o for o in reversed(self.ops))
        return ParamCircuit(self.n_qubits, ops, self.n_params)

    # -- parameter shift ----------------------------------------------------
    def expanded(self) -> tuple["ParamCircuit", np.ndarray]:
        """Circuit with one slot per rotation gate, plus the Jacobian
        ``J[occurrence, param] = coef`` mapping gate angles back to params."""
        if "v" not in self._expanded:
            ops, jac_rows = [], []
            for o in self.ops:
                if o.slot is None:
                    ops.append(o)
                    continue
                row = np.zeros(self.n_params)
                row[o.slot] = o.coef
                jac_rows.append(row)
                ops.append(Op(o.kind, o.targets, len(jac_rows) - 1, 1.0))
            jac = np.array(jac_rows).reshape(len(jac_rows), self.n_params)
            self._expanded["v"] = (ParamCircuit(self.n_qubits, tuple(ops), len(jac_rows)), jac)
        return self._expanded["v"]

    def shifted_params(self, params) -> tuple["ParamCircuit", np.ndarray, np.ndarray]:
        """Expanded circuit, the unshifted row followed by 2*m shifted rows, and
        the (m, n_params) matrix turning ``f_plus - f_minus`` into d/dparams."""
        circ, jac = self.expanded()
        params = self._angles(params)
        base = jac @ params
        m = circ.n_params
        rows = np.tile(base, (2 * m + 1, 1))
        shifts = np.array([shift_rule(o.kind) for o in circ.ops if o.slot is not None]).reshape(m, 2)
        rows[1 + np.arange(m), np.arange(m)] += shifts[:, 0]
        rows[1 + m + np.arange(m), np.arange(m)] -= shifts[:, 0]
        return circ, rows, shifts[:, 1:2] * jac


def reduce_shifts(values: np.ndarray, reducer: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split values of a ``shifted_params`` batch (leading axis 2m+1) into the
    unshifted value and the gradient (leading axis n_params)."""
    m = reducer.shape[0]
    diff = values[1 : m + 1] - values[m + 1 :]
    return values[0], np.tensordot(reducer, diff, axes=([0], [0]))
