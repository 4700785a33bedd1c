"""Ensemble metrics: trace distance, Helstrom POVM, purity, expressibility and LED."""
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import pytest

from nqe import metrics as M

from conftest import random_density, random_state


def _ensemble(rng, n_qubits, n_minus, n_plus):
    a = np.stack([random_state(rng, n_qubits) for _ in range(n_minus)])
    b = np.stack([random_state(rng, n_qubits) for _ in range(n_plus)])
    return a, b


def test_single_state_ensembles_are_pure(rng):
    a, b = _ensemble(rng, 2, 1, 1)
    ens = M.ensemble_from_states(a, b)
    assert M.purity(ens.rho_minus) == pytest.approx(1.0) and M.purity(ens.rho_plus) == pytest.approx(1.0)


def test_copies_do_not_change_density(rng):
    psi = random_state(rng, 2)
    one = M.mean_density(psi[None])
    many = M.mean_density(np.repeat(psi[None], 7, axis=0))
    assert np.allclose(one, many, atol=1e-14)


def test_purity_double_sum_identity(rng):
    states = np.stack([random_state(rng, 3) for _ in range(4)])
    rho = M.mean_density(states)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
    overlaps = np.abs(states.conj() @ states.T) ** 2
    assert M.purity(rho) == pytest.approx(overlaps.sum() / 16, abs=1e-10)


def test_purity_limits():
    assert M.purity(np.eye(8) / 8) == pytest.approx(1 / 8)


def test_trace_distance_cases(rng):
    a, _ = _ensemble(rng, 2, 3, 1)
    ens = M.ensemble_from_states(a, a)
    assert M.weighted_trace_distance(ens) == pytest.approx(0.0, abs=1e-12)
    ens = M.ensemble_from_states(np.array([[1, 0]]), np.array([[0, 1]]))
    assert M.weighted_trace_distance(ens) == pytest.approx(0.5)
    assert M.reported_trace_distance(ens) == pytest.approx(1.0)


@pytest.mark.parametrize("reported, bound", [(0.273, 0.364), (0.840, 0.080), (0.792, 0.104)])
def test_bound_triples(reported, bound):
    # 0.3635 is a decimal tie that binary floats land just below; round the exact value half-up
    exact = Decimal("0.5") - Decimal(str(reported)) / 2
    assert M.bound_from_reported(reported) == pytest.approx(float(exact), abs=1e-15)
    assert exact.quantize(Decimal("0.001"), ROUND_HALF_UP) == Decimal(str(bound)).quantize(Decimal("0.001"))


def test_risk_bound_limits():
    ens = M.ensemble_from_states(np.array([[1, 0]]), np.array([[0, 1]]))
    assert M.risk_lower_bound(ens) == pytest.approx(0.0)
    ens = M.ensemble_from_states(np.array([[1, 0]]), np.array([[1, 0]]))
    assert M.risk_lower_bound(ens) == pytest.approx(0.5)


def test_helstrom_on_orthogonal_and_identical():
    ens = M.ensemble_from_states(np.array([[1, 0]]), np.array([[0, 1]]))
    e_plus, e_minus = M.helstrom_povm(ens)
    assert np.allclose(e_plus, np.diag([0, 1]))
    assert M.povm_loss(ens, e_plus) == pytest.approx(0.0)
    same = M.ensemble_from_states(np.array([[1, 0]]), np.array([[1, 0]]))
    assert M.povm_loss(same, np.eye(2)) == pytest.approx(0.5)
    assert M.povm_loss(same, M.helstrom_povm(same)[0]) == pytest.approx(M.risk_lower_bound(same))


def test_helstrom_attains_bound_on_random_ensembles(rng):
    for _ in range(20):
        a, b = _ensemble(rng, 3, rng.integers(1, 6), rng.integers(1, 6))
        ens = M.ensemble_from_states(a, b)
        e_plus, e_minus = M.helstrom_povm(ens)
        assert np.allclose(e_plus + e_minus, np.eye(8))
        assert M.povm_loss(ens, e_plus) == pytest.approx(M.risk_lower_bound(ens), abs=1e-9)


def test_empty_class_rejected():
    with pytest.raises(ValueError):
        M.ensemble_from_states(np.zeros((0, 2)), np.array([[1, 0]]))


def test_density_inputs(rng):
    rhos = np.stack([random_density(rng, 2) for _ in range(4)])
    ens = M.ensemble_from_labels(rhos, np.array([1, -1, 1, -1]))
    assert np.allclose(ens.rho_plus, (rhos[0] + rhos[2]) / 2)


def test_expressibility_fixtures():
    zero = np.array([[1.0, 0.0]])
    assert M.expressibility_deviation(zero, 1).epsilon == pytest.approx(1 / np.sqrt(2), abs=1e-10)
    assert M.expressibility_deviation(zero, 2).epsilon == pytest.approx(np.sqrt(2 / 3), abs=1e-10)


def test_haar_states_are_expressive(rng):
    states = rng.normal(size=(10_000, 2)) + 1j * rng.normal(size=(10_000, 2))
    states /= np.linalg.norm(states, axis=1, keepdims=True)
    assert M.expressibility_deviation(states, 1).epsilon < 0.02


def test_haar_second_moment_is_projector_on_symmetric_space():
    d = 3
    h = M.haar_moment(d, 2)
    assert np.trace(h) == pytest.approx(1.0)
    eig = np.linalg.eigvalsh(h)
    assert np.allclose(np.unique(np.round(eig, 12)), [0, 2 / (d * (d + 1))])


def test_expressibility_input_checks():
    with pytest.raises(ValueError):
        M.expressibility_deviation(np.array([[1.0, 0.0]]), 3)
    with pytest.raises(ValueError):
        M.expressibility_deviation(np.zeros((0, 2)), 1)


def test_led_constant_model_is_zero():
    f = np.zeros((4, 10))
    df = np.zeros((4, 10, 3))
    assert M.effective_dimension_from_fisher(M.binary_fisher(f, df), 100) == 0.0


def test_led_identity_fisher_clips_to_dimension():
    f_hat = np.stack([np.eye(2)] * 5)
    raw = 2 * np.log(101) / np.log(100)
    assert raw == pytest.approx(2.004, abs=1e-3)
    assert M.led_from_normalized(f_hat, 100.0) == 2.0


def test_led_matches_direct_formula(rng):
    a = rng.normal(size=(6, 3, 3))
    f_hat = a @ np.swapaxes(a, 1, 2) * 0.01
    kappa = 50.0
    dets = np.array([np.linalg.det(np.eye(3) + kappa * m) for m in f_hat])
    direct = 2 * np.log(np.mean(np.sqrt(dets))) / np.log(kappa)
    assert M.led_from_normalized(f_hat, kappa) == pytest.approx(np.clip(direct, 0, 3), abs=1e-10)


def test_binary_fisher_matches_definition(rng):
    f = rng.uniform(-0.9, 0.9, 5)
    df = rng.normal(size=(5, 2))
    fisher = M.binary_fisher(f, df)
    manual = np.zeros((2, 2))
    for k in range(5):
        for sign in (1, -1):
            p = (1 + sign * f[k]) / 2
            grad = sign * df[k] / 2
            manual += np.outer(grad, grad) / p
    assert np.allclose(fisher, manual / 5)


def test_led_config_validation():
    with pytest.raises(ValueError):
        M.LedConfig(gamma=0)
    with pytest.raises(ValueError):
        M.LedConfig(n_data=1)


def test_metrics_report_keys(rng):
    states = np.stack([random_state(rng, 2) for _ in range(6)])
    ens = M.ensemble_from_labels(states, np.array([1, -1] * 3))
    rep = M.metrics_report(ens, states, led=1.5)
    assert {"dtr_bound_convention", "dtr_reported", "risk_lower_bound", "epsilon_order1",
            "epsilon_order2", "led"} <= set(rep)
