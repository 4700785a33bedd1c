"""Randomized invariants checked with hypothesis."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nqe import data as D
from nqe import kernels as K
from nqe import metrics as M
from nqe import qcnn as Q
from nqe import sim
from nqe.embedding import EmbeddingSpec, zz_feature_circuit, zz_feature_states
from nqe.nn import Mlp

from conftest import random_density, random_state

SEEDS = st.integers(0, 2**32 - 1)
FAST = settings(max_examples=25, deadline=None)


def _random_gates(rng, n, count):
    gates = []
    kinds = list(sim.ROTATIONS) + list(sim.FIXED_GATES)
    for _ in range(count):
        kind = kinds[rng.integers(len(kinds))]
        arity, nparams = sim._gate_signature(kind)
        if arity > n:
            continue
        targets = tuple(rng.choice(n, size=arity, replace=False))
        gates.append(sim.Gate(kind, targets, tuple(rng.uniform(-np.pi, np.pi, nparams))))
    return gates


@FAST
@given(seed=SEEDS, n=st.integers(1, 8), count=st.integers(0, 100))
def test_random_circuits_preserve_norm(seed, n, count):
    rng = np.random.default_rng(seed)
    psi = sim.run_circuit(_random_gates(rng, n, count), n).amplitudes
    assert abs(np.linalg.norm(psi) - 1) < 1e-9


@FAST
@given(seed=SEEDS)
def test_gate_matrices_are_unitary(seed):
    rng = np.random.default_rng(seed)
    kinds = list(sim.ROTATIONS) + list(sim.FIXED_GATES) + list(sim.COMPOSITE_GATES)
    for kind in kinds:
        arity, nparams = sim._gate_signature(kind)
        u = sim.Gate(kind, tuple(range(arity)), tuple(rng.uniform(-7, 7, nparams))).matrix()
        assert np.max(np.abs(u.conj().T @ u - np.eye(len(u)))) < 1e-12


def _trace_norm_half(a):
    return 0.5 * np.abs(np.linalg.eigvalsh(sim.hermitize(a))).sum()


@FAST
@given(seed=SEEDS, p=st.floats(0, 1), gamma=st.floats(0, 1))
def test_builtin_channels_are_contractive(seed, p, gamma):
    rng = np.random.default_rng(seed)
    r0 = sim.DensityMatrix(2, random_density(rng, 2))
    r1 = sim.DensityMatrix(2, random_density(rng, 2))
    before = _trace_norm_half(r0.matrix - r1.matrix)
    for kraus in (sim.depolarizing_kraus(p), sim.amplitude_damping_kraus(gamma), sim.phase_damping_kraus(gamma)):
        q = int(rng.integers(2))
        a, b = sim.apply_channel(r0, kraus, [q]), sim.apply_channel(r1, kraus, [q])
        assert _trace_norm_half(a.matrix - b.matrix) <= before + 1e-9


@settings(max_examples=10, deadline=None)
@given(seed=SEEDS)
def test_noise_model_contracts_ensembles(seed):
    rng = np.random.default_rng(seed)
    spec = EmbeddingSpec(3)
    angles = rng.uniform(0, np.pi, size=(12, spec.n_angles))
    labels = np.repeat([-1, 1], 6)
    clean = zz_feature_states(angles, spec)
    noisy = zz_feature_circuit(spec).run_density(angles, sim.desk_nisq())
    d_clean = M.weighted_trace_distance(M.ensemble_from_labels(clean, labels))
    d_noisy = M.weighted_trace_distance(M.ensemble_from_labels(noisy, labels))
    assert d_noisy <= d_clean + 1e-9


@FAST
@given(seed=SEEDS, n_minus=st.integers(1, 6), n_plus=st.integers(1, 6))
def test_any_povm_respects_the_bound(seed, n_minus, n_plus):
    rng = np.random.default_rng(seed)
    ens = M.ensemble_from_states([random_state(rng, 2) for _ in range(n_minus)],
                                 [random_state(rng, 2) for _ in range(n_plus)])
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    _, v = np.linalg.eigh(a + a.conj().T)
    e_plus = v @ np.diag(rng.uniform(0, 1, 4)) @ v.conj().T
    assert M.povm_loss(ens, e_plus) >= M.risk_lower_bound(ens) - 1e-9


@FAST
@given(seed=SEEDS, n=st.integers(1, 8))
def test_strong_convexity_bound(seed, n):
    rng = np.random.default_rng(seed)
    plus = np.array([random_state(rng, 2) for _ in range(n)])
    minus = np.array([random_state(rng, 2) for _ in range(n)])
    lhs = _trace_norm_half(M.mean_density(minus) - M.mean_density(plus))
    fid = np.abs(np.sum(plus.conj() * minus, axis=1)) ** 2
    assert lhs <= np.mean(np.sqrt(1 - fid)) + 1e-9


@FAST
@given(seed=SEEDS)
def test_global_phase_invariance(seed):
    rng = np.random.default_rng(seed)
    states = np.array([random_state(rng, 2) for _ in range(8)])
    labels = np.repeat([-1, 1], 4)
    rotated = states * np.exp(1j * rng.uniform(0, 2 * np.pi, size=(8, 1)))
    for order in (1, 2):
        assert M.expressibility_deviation(rotated, order).epsilon == pytest.approx(
            M.expressibility_deviation(states, order).epsilon, abs=1e-12)
    assert M.weighted_trace_distance(M.ensemble_from_labels(rotated, labels)) == pytest.approx(
        M.weighted_trace_distance(M.ensemble_from_labels(states, labels)), abs=1e-12)
    assert np.allclose(K.kernel_matrix(rotated), K.kernel_matrix(states), atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=SEEDS)
def test_qcnn_gradient_ignores_data_order(seed):
    rng = np.random.default_rng(seed)
    spec = Q.QcnnSpec.standard(4)
    theta = rng.uniform(-np.pi, np.pi, spec.n_params)
    states = np.array([random_state(rng, 4) for _ in range(6)])
    labels = np.array([-1, 1, -1, 1, 1, -1])
    perm = rng.permutation(6)
    v0, g0 = Q.value_and_grad(spec, theta, states, labels)
    v1, g1 = Q.value_and_grad(spec, theta, states[perm], labels[perm])
    assert v0 == pytest.approx(v1, abs=1e-12) and np.allclose(g0, g1, atol=1e-12)


@settings(max_examples=1000, deadline=None)
@given(f=st.lists(st.floats(-1, 1), min_size=1, max_size=30), seed=SEEDS)
def test_loss_inequality_chain(f, seed):
    y = np.random.default_rng(seed).choice([-1.0, 1.0], size=len(f))
    assert Q.loss_chain_holds(y, np.array(f))


@FAST
@given(seed=SEEDS, n=st.integers(2, 20))
def test_kernel_properties_and_monotone_bound(seed, n):
    rng = np.random.default_rng(seed)
    k = K.kernel_matrix(np.array([random_state(rng, 2) for _ in range(n)]))
    K.check_kernel(k)
    assert np.allclose(np.diag(k), 1.0) and np.allclose(k, k.T)
    y = rng.choice([-1.0, 1.0], size=n)
    g = K.generalization_bound(k, y, [1e-3, 1e-2, 1e-1, 1, 10])
    assert np.all(np.diff(g) <= 1e-12)
    assert K.kernel_rank(k) <= min(n, 16)


@FAST
@given(dim=st.integers(1, 6))
def test_led_is_monotone_in_data_size(dim):
    f_hat = np.eye(dim)[None]
    leds = []
    for n in (10, 100, 1000, 10_000, 100_000):
        kappa = n / (2 * np.pi * np.log(n))
        leds.append(M.led_from_normalized(f_hat, kappa))
    assert all(0 <= v <= dim for v in leds)
    assert np.all(np.diff(leds) >= -1e-12)


@FAST
@given(seed=SEEDS, n=st.integers(5, 40), m=st.integers(2, 6))
def test_pca_decorrelates(seed, n, m):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, m)) @ rng.normal(size=(m, m))
    k = min(m, n - 1)
    model = D.pca_fit(x, k)
    assert np.allclose(model.components @ model.components.T, np.eye(k), atol=1e-10)
    cov = np.cov(D.pca_transform(model, x), rowvar=False)
    assert np.allclose(cov - np.diag(np.diag(cov)), 0, atol=1e-8)


@FAST
@given(code=st.sampled_from(sorted(D.IDX_DTYPES)), dims=st.lists(st.integers(0, 4), min_size=1, max_size=3),
       seed=SEEDS)
def test_idx_bytes_round_trip(code, dims, seed):
    rng = np.random.default_rng(seed)
    data = (rng.normal(size=dims) * 100).astype(D.IDX_DTYPES[code])
    raw = D.serialize_idx(D.IdxTensor(code, tuple(dims), data))
    assert D.serialize_idx(D.parse_idx(raw)) == raw


@FAST
@given(seed=SEEDS)
def test_network_init_is_deterministic(seed):
    a, b = Mlp([4, 12, 12, 8], seed=seed), Mlp([4, 12, 12, 8], seed=seed)
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
