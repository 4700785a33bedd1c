import functools

import numpy as np
import pytest


def random_state(rng, n_qubits):
    v = rng.normal(size=2**n_qubits) + 1j * rng.normal(size=2**n_qubits)
    return v / np.linalg.norm(v)


def random_density(rng, n_qubits, rank=None):
    d = 2**n_qubits
    rank = d if rank is None else rank
    a = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def pauli(label):
    """Dense Pauli string, label[k] acting on qubit k (little-endian)."""
    mats = {"I": np.eye(2), "X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, -1j], [1j, 0]]),
            "Z": np.diag([1.0, -1.0])}
    out = np.array([[1.0 + 0j]])
    for c in reversed(label):
        out = np.kron(out, mats[c])
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@functools.lru_cache(maxsize=None)
def mnist_setup(train_limit=None, test_limit=None):
    from nqe import experiments as X

    return X.prepare_mnist(4, (0, 1), train_limit, test_limit)


# criterion number -> (status, detail); filled by test_acceptance and printed at the end
ACCEPTANCE = {}


def record(criterion, ok, detail):
    ACCEPTANCE[criterion] = ("PASS" if ok else "FAIL", detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {status}  {detail}")
