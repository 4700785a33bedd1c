"""Ensemble-level metrics: trace distance, Helstrom measurement, purity,
expressibility deviation and local effective dimension."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .sim import DensityMatrix, StateVector, hermitize

EIG_ZERO = 1e-12


def _as_density_batch(states) -> np.ndarray:
    """Stack StateVectors / DensityMatrices / raw arrays into (N, d, d)."""
    if isinstance(states, np.ndarray):
        arr = states
    else:
        items = []
        for s in states:
            if isinstance(s, StateVector):
                items.append(s.amplitudes)
            elif isinstance(s, DensityMatrix):
                items.append(s.matrix)
            else:
                items.append(np.asarray(s))
        arr = np.stack(items) if items else np.zeros((0,))
    arr = np.asarray(arr, dtype=complex)
    if arr.ndim == 2:  # batch of pure amplitudes
        return np.einsum("ni,nj->nij", arr, arr.conj())
    if arr.ndim == 3:
        return arr
    raise ValueError(f"cannot interpret states of shape {arr.shape}")


def mean_density(states) -> np.ndarray:
    arr = np.asarray(states, dtype=complex) if isinstance(states, np.ndarray) else None
    if arr is not None and arr.ndim == 2:
        # mean outer product without materializing every projector
        return arr.T @ arr.conj() / arr.shape[0]
    return _as_density_batch(states).mean(axis=0)


@dataclass
class EnsemblePair:
    rho_minus: np.ndarray
    rho_plus: np.ndarray
    n_minus: int
    n_plus: int

    @property
    def p_minus(self) -> float:
        return self.n_minus / (self.n_minus + self.n_plus)

    @property
    def p_plus(self) -> float:
        return self.n_plus / (self.n_minus + self.n_plus)

    @property
    def n_qubits(self) -> int:
        return int(np.log2(self.rho_plus.shape[0]))

    def signed_difference(self) -> np.ndarray:
        """p+ rho+ - p- rho- (symmetrized)."""
        return hermitize(self.p_plus * self.rho_plus - self.p_minus * self.rho_minus)


def ensemble_from_states(states_minus, states_plus) -> EnsemblePair:
    n_minus = len(states_minus)
    n_plus = len(states_plus)
    if n_minus == 0 or n_plus == 0:
        raise ValueError("both classes need at least one state")
    return EnsemblePair(mean_density(states_minus), mean_density(states_plus), n_minus, n_plus)


def ensemble_from_labels(states, labels) -> EnsemblePair:
    labels = np.asarray(labels)
    states = np.asarray(states) if not isinstance(states, np.ndarray) else states
    return ensemble_from_states(states[labels == -1], states[labels == 1])


def weighted_trace_distance(ens: EnsemblePair) -> float:
    """D_tr(p- rho-, p+ rho+) = 1/2 || p- rho- - p+ rho+ ||_1 (the bound convention)."""
    eig = np.linalg.eigvalsh(ens.signed_difference())
    return float(0.5 * np.abs(eig).sum())


def reported_trace_distance(ens: EnsemblePair) -> float:
    """Unhalved 1-norm; the value quoted alongside training curves."""
    return 2.0 * weighted_trace_distance(ens)


def risk_lower_bound(ens: EnsemblePair) -> float:
    return 0.5 - weighted_trace_distance(ens)


def bound_from_reported(reported: float) -> float:
    return 0.5 - reported / 2.0


def helstrom_povm(ens: EnsemblePair) -> tuple[np.ndarray, np.ndarray]:
    """(E+, E-) with E+ the projector onto the non-negative eigenspace of p+rho+ - p-rho-."""
    eig, vec = np.linalg.eigh(ens.signed_difference())
    keep = eig >= -EIG_ZERO
    e_plus = vec[:, keep] @ vec[:, keep].conj().T
    return e_plus, np.eye(len(eig)) - e_plus


def povm_loss(ens: EnsemblePair, e_plus: np.ndarray) -> float:
    """Misclassification probability p- Tr(E+ rho-) + p+ Tr(E- rho+)."""
    e_minus = np.eye(e_plus.shape[0]) - e_plus
    val = ens.p_minus * np.trace(e_plus @ ens.rho_minus) + ens.p_plus * np.trace(e_minus @ ens.rho_plus)
    return float(np.real(val))


def purity(dm) -> float:
    m = dm.matrix if isinstance(dm, DensityMatrix) else np.asarray(dm)
    return float(np.real(np.einsum("ij,ji->", m, m)))


# ---------------------------------------------------------------------------
# Expressibility
# ---------------------------------------------------------------------------


@dataclass
class ExpressibilityReport:
    order: int
    epsilon: float
    n_samples: int


def haar_moment(d: int, order: int) -> np.ndarray:
    if order == 1:
        return np.eye(d) / d
    if order == 2:
        idx = np.arange(d * d)
        swap = np.zeros((d * d, d * d))
        swap[idx, (idx % d) * d + idx // d] = 1.0
        return (np.eye(d * d) + swap) / (d * (d + 1))
    raise ValueError("order must be 1 or 2")


def expressibility_deviation(states, order: int = 2) -> ExpressibilityReport:
    """Hilbert-Schmidt norm of (Haar t-th moment - ensemble t-th moment)."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if isinstance(states, np.ndarray):
        psi = np.asarray(states, dtype=complex)
    else:
        psi = np.stack([s.amplitudes if isinstance(s, StateVector) else np.asarray(s) for s in states])
    if psi.ndim != 2 or psi.shape[0] == 0:
        raise ValueError("need a non-empty (N, d) batch of state vectors")
    n, d = psi.shape
    if order == 2:
        if d > 64:
            raise ValueError("order-2 deviation is limited to 6 qubits")
        v = np.einsum("ni,nj->nij", psi, psi).reshape(n, d * d)
    else:
        v = psi
    moment = v.T @ v.conj() / n
    a = haar_moment(d, order) - moment
    eps = float(np.sqrt(max(np.real(np.vdot(a, a)), 0.0)))
    return ExpressibilityReport(order, eps, n)


# ---------------------------------------------------------------------------
# Local effective dimension
# ---------------------------------------------------------------------------


@dataclass
class LedConfig:
    n_data: int = 400
    gamma: float = 1.0
    radius: float = 0.05
    n_theta: int = 32
    n_fisher_data: int = 100

    def __post_init__(self):
        if self.n_data <= 1:
            raise ValueError("n_data must exceed 1")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.n_theta < 2:
            raise ValueError("need at least 2 parameter samples")


def binary_fisher(f: np.ndarray, df: np.ndarray) -> np.ndarray:
    """Fisher matrices for p(y|x) = (1 +- f)/2.

    ``f``: (..., N) predictions, ``df``: (..., N, D) gradients. Returns the
    per-sample Fisher averaged over the N data points, shape (..., D, D):
    sum_y grad p grad p^T / p = df df^T / (1 - f^2).
    """
    denom = np.clip(1.0 - f**2, 1e-12, None)
    w = df / np.sqrt(denom)[..., None]
    return np.einsum("...ni,...nj->...ij", w, w) / f.shape[-1]


def effective_dimension_from_fisher(fishers: np.ndarray, n_data: int, gamma: float = 1.0) -> float:
    """LED from a stack of Fisher matrices (S, D, D) sampled around one point.

    F_hat = D * F / mean_theta Tr F; LED = 2 ln(mean sqrt det(I + kappa F_hat)) / ln kappa,
    kappa = gamma n / (2 pi ln n); clipped to [0, D].
    """
    if n_data <= 1:
        raise ValueError("n_data must exceed 1")
    fishers = hermitize(np.asarray(fishers, dtype=float))
    s, dim, _ = fishers.shape
    mean_trace = np.trace(fishers, axis1=1, axis2=2).mean()
    if mean_trace <= 0:
        return 0.0
    f_hat = dim * fishers / mean_trace
    kappa = gamma * n_data / (2 * np.pi * np.log(n_data))
    return led_from_normalized(f_hat, kappa)


def led_from_normalized(f_hat: np.ndarray, kappa: float) -> float:
    """2 ln(mean_theta sqrt det(I + kappa F_hat)) / ln kappa, clipped to [0, D]."""
    f_hat = np.asarray(f_hat, dtype=float)
    s, dim, _ = f_hat.shape
    eig = np.clip(np.linalg.eigvalsh(hermitize(f_hat)), 0.0, None)
    half_logdet = 0.5 * np.log1p(kappa * eig).sum(axis=1)
    led = 2.0 * (logsumexp(half_logdet) - np.log(s)) / np.log(kappa)
    return float(np.clip(led, 0.0, dim))


def local_effective_dimension(predict_and_grad, theta_star, cfg: LedConfig, rng=None) -> float:
    """LED of a binary model in a ball around ``theta_star``.

    ``predict_and_grad(thetas)`` takes (S, D) parameter rows and returns
    predictions (S, N) and gradients (S, N, D) over the Fisher data set.
    """
    rng = np.random.default_rng(rng)
    theta_star = np.asarray(theta_star, dtype=float)
    dim = theta_star.size
    # uniform samples in the ball of the given radius
    direction = rng.normal(size=(cfg.n_theta, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radii = cfg.radius * rng.uniform(size=(cfg.n_theta, 1)) ** (1.0 / dim)
    thetas = theta_star + direction * radii
    f, df = predict_and_grad(thetas)
    return effective_dimension_from_fisher(binary_fisher(f, df), cfg.n_data, cfg.gamma)


def metrics_report(ens: EnsemblePair, states=None, led: float | None = None) -> dict:
    """Collect the JSON metrics block."""
    out = {
        "dtr_bound_convention": weighted_trace_distance(ens),
        "dtr_reported": reported_trace_distance(ens),
        "risk_lower_bound": risk_lower_bound(ens),
        "purity_minus": purity(ens.rho_minus),
        "purity_plus": purity(ens.rho_plus),
    }
    if states is not None:
        out["epsilon_order1"] = expressibility_deviation(states, 1).epsilon
        if np.shape(states)[-1] <= 64:
            out["epsilon_order2"] = expressibility_deviation(states, 2).epsilon
    if led is not None:
        out["led"] = led
    return out
