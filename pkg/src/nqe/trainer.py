"""Training the neural embedding on the pairwise fidelity loss."""
from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset, Preprocessor
from .embedding import EmbeddingSpec, classical_feature_map, zz_feature_circuit, zz_feature_states
from .metrics import ensemble_from_labels, reported_trace_distance
from .sim import NoiseModel, ParamCircuit, readout_probabilities, reduce_shifts


@dataclass
class NqeModel:
    """x -> preprocess -> net -> ZZ feature-map angles -> |x>.

    With ``head="features"`` the net emits n features that go through the
    classical angle map instead of emitting the angles directly.
    """

    net: object
    spec: EmbeddingSpec
    preprocess: Preprocessor | None = None
    head: str = "angles"

    def __post_init__(self):
        if self.spec.kind != "zz_feature":
            raise ValueError("the neural embedding drives a zz_feature circuit")
        if self.head not in ("angles", "features"):
            raise ValueError(f"unknown head {self.head!r}")
        want = self.spec.n_angles if self.head == "angles" else self.spec.n_qubits
        if self.net.n_outputs != want:
            raise ValueError(f"net emits {self.net.n_outputs} values, embedding needs {want}")

    def inputs(self, x):
        return self.preprocess(x) if self.preprocess is not None else np.asarray(x, dtype=float)

    def forward(self, x):
        out, cache = self.net.forward(self.inputs(x))
        if self.head == "features":
            return classical_feature_map(out, self.spec), (cache, out)
        return out, (cache, None)

    def backward(self, cache, d_angles):
        net_cache, feats = cache
        if feats is not None:
            d_angles = _feature_map_backward(feats, d_angles, self.spec)
        grads, _ = self.net.backward(net_cache, d_angles)
        return grads

    def angles(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def states(self, x) -> np.ndarray:
        return zz_feature_states(self.angles(x), self.spec)


def _feature_map_backward(feats, d_angles, spec: EmbeddingSpec):
    n, per = spec.n_qubits, spec.angles_per_layer
    d = d_angles.reshape(d_angles.shape[:-1] + (spec.layers, per)).sum(axis=-2)
    out = d[..., :n].copy()
    for c, (i, j) in enumerate(spec.couplings):
        out[..., i] -= d[..., n + c] * (np.pi - feats[..., j]) / 2
        out[..., j] -= d[..., n + c] * (np.pi - feats[..., i]) / 2
    return out


@dataclass
class NqeTrainConfig:
    iterations: int = 50
    batch_pairs: int = 10
    lr: float = 0.1
    optimizer: str = "sgd"
    fidelity_mode: str = "exact"
    shots: int = 1024
    noise: NoiseModel | None = None
    seed: int = 0
    td_every: int = 5
    eval_size: int = 256

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_pairs < 1:
            raise ValueError("batch_pairs must be >= 1")
        if self.fidelity_mode not in ("exact", "shots"):
            raise ValueError(f"unknown fidelity mode {self.fidelity_mode!r}")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.td_every < 1:
            raise ValueError("td_every must be >= 1")


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    td_iterations: list[int] = field(default_factory=list)
    trace_distance: list[float] = field(default_factory=list)

    def rows(self):
        td = dict(zip(self.td_iterations, self.trace_distance))
        out = []
        for it in range(len(self.loss) + 1):
            loss = self.loss[it - 1] if it > 0 else None
            out.append((it, loss, td.get(it)))
        return out

    def write_csv(self, path, comment: str | None = None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if comment:
                fh.write(f"# {comment}\n")
            w.writerow(["iteration", "mean_loss", "reported_trace_distance"])
            for it, loss, td in self.rows():
                w.writerow([it, "" if loss is None else repr(loss), "" if td is None else repr(td)])


def fid_loss(f, y_i, y_j):
    """[f - (1 + y_i y_j)/2]^2; works elementwise on arrays."""
    y_i, y_j = np.asarray(y_i), np.asarray(y_j)
    if not (np.all(np.isin(y_i, (-1, 1))) and np.all(np.isin(y_j, (-1, 1)))):
        raise ValueError("labels must be -1 or +1")
    target = (1 + y_i * y_j) / 2
    return (np.asarray(f, dtype=float) - target) ** 2


def sample_pairs(n: int, batch_pairs: int, rng) -> np.ndarray:
    """(batch_pairs, 2) i.i.d. uniform ordered index pairs with i != j."""
    if n < 2:
        raise ValueError("need at least 2 data points to form a pair")
    i = rng.integers(0, n, size=batch_pairs)
    j = (i + rng.integers(1, n, size=batch_pairs)) % n
    return np.stack([i, j], axis=1)


def _overlap_fidelities(spec, shifted, fixed):
    """|<psi(fixed)|psi(shifted)>|^2 for shifted rows (P, R, k) of the expanded circuit."""
    circ = zz_feature_circuit(spec).expanded()[0]
    psi_i = circ.run(shifted)
    psi_j = zz_feature_states(fixed, spec)
    return np.abs(np.einsum("pd,prd->pr", psi_j.conj(), psi_i)) ** 2


@functools.lru_cache(maxsize=None)
def compute_uncompute_circuit(spec: EmbeddingSpec) -> ParamCircuit:
    """V(a_j)^dagger V(a_i) acting on |0...0>; parameters are (a_i, a_j)."""
    base = zz_feature_circuit(spec)
    return base + base.adjoint()


def pair_values_and_grads(spec: EmbeddingSpec, a_i, a_j, cfg: NqeTrainConfig, rng=None):
    """Fidelities f(a_i, a_j) and parameter-shift gradients w.r.t. both angle sets.

    Noiseless runs use the state overlap; with noise the compute-uncompute
    circuit is simulated as a density matrix and read out through the
    confusion matrices. Returns f (P,), df/da_i (P, m), df/da_j (P, m).
    """
    rng = np.random.default_rng(rng)
    a_i, a_j = np.atleast_2d(a_i), np.atleast_2d(a_j)
    m = spec.n_angles
    if cfg.noise is None:
        base = zz_feature_circuit(spec)
        _, rows0, reducer = base.shifted_params(np.zeros(m))
        delta = rows0 - rows0[0]
        jac = base.expanded()[1]
        f = None
        grads = []
        for first, second in ((a_i, a_j), (a_j, a_i)):
            shifted = (first @ jac.T)[:, None, :] + delta[None]
            vals = _overlap_fidelities(spec, shifted, second)
            if cfg.fidelity_mode == "shots":
                vals = rng.binomial(cfg.shots, np.clip(vals, 0.0, 1.0)) / cfg.shots
            f0, g = reduce_shifts(np.moveaxis(vals, 1, 0), reducer)
            f = f0 if f is None else f
            grads.append(g.T)
        return f, grads[0], grads[1]
    full = compute_uncompute_circuit(spec)
    circ, rows0, reducer = full.shifted_params(np.zeros(2 * m))
    delta = rows0 - rows0[0]
    jac = full.expanded()[1]
    params = np.concatenate([a_i, a_j], axis=1)
    shifted = (params @ jac.T)[:, None, :] + delta[None]
    rho = circ.run_density(shifted, cfg.noise)
    probs = np.clip(np.real(np.diagonal(rho, axis1=-2, axis2=-1)), 0.0, None)
    vals = readout_probabilities(probs, spec.n_qubits, cfg.noise)[..., 0]
    if cfg.fidelity_mode == "shots":
        vals = rng.binomial(cfg.shots, np.clip(vals, 0.0, 1.0)) / cfg.shots
    f, g = reduce_shifts(np.moveaxis(vals, 1, 0), reducer)
    return f, g.T[:, :m], g.T[:, m:]


def hybrid_grad(model: NqeModel, x_i, y_i, x_j, y_j, cfg: NqeTrainConfig, rng=None):
    """Gradient of the summed pair loss w.r.t. the net parameters, plus the
    per-pair fidelities and losses."""
    x = np.concatenate([np.atleast_2d(x_i), np.atleast_2d(x_j)])
    p = len(np.atleast_2d(x_i))
    angles, cache = model.forward(x)
    f, g_i, g_j = pair_values_and_grads(model.spec, angles[:p], angles[p:], cfg, rng)
    target = (1 + np.asarray(y_i) * np.asarray(y_j)) / 2
    losses = fid_loss(f, y_i, y_j)
    dl_df = 2.0 * (f - target)
    d_angles = np.concatenate([dl_df[:, None] * g_i, dl_df[:, None] * g_j])
    return model.backward(cache, d_angles), f, losses


def eval_subset(labels, size: int, seed) -> np.ndarray:
    """Fixed class-balanced evaluation subset (all points when ``size`` >= N)."""
    n = len(labels)
    if size >= n:
        return np.arange(n)
    rng = np.random.default_rng([seed, 7])
    parts = []
    for lab, k in ((-1, size - size // 2), (1, size // 2)):
        pool = np.flatnonzero(labels == lab)
        parts.append(rng.choice(pool, size=min(k, len(pool)), replace=False))
    return np.sort(np.concatenate(parts))


def reported_distance(model_or_states, x=None, labels=None) -> float:
    states = model_or_states.states(x) if x is not None else model_or_states
    return reported_trace_distance(ensemble_from_labels(states, labels))


def train_nqe(data: Dataset, model: NqeModel, cfg: NqeTrainConfig, log=None):
    """Minimize the mean batch fidelity loss; returns (model, history).

    The trace distance is recorded exactly on a fixed evaluation subset at
    iteration 0, every ``td_every`` iterations and at the end.
    """
    if len(np.unique(data.labels)) != 2:
        raise ValueError("training data must contain both classes")
    rng = np.random.default_rng(cfg.seed)
    shot_rng = np.random.default_rng([cfg.seed, 1])
    opt = nn.Optimizer(cfg.optimizer, cfg.lr)
    ev = eval_subset(data.labels, cfg.eval_size, cfg.seed)
    hist = TrainHistory()

    def record(it):
        hist.td_iterations.append(it)
        hist.trace_distance.append(reported_distance(model, data.features[ev], data.labels[ev]))

    record(0)
    for it in range(1, cfg.iterations + 1):
        pairs = sample_pairs(len(data), cfg.batch_pairs, rng)
        i, j = pairs[:, 0], pairs[:, 1]
        grads, _, losses = hybrid_grad(model, data.features[i], data.labels[i], data.features[j],
                                       data.labels[j], cfg, shot_rng)
        mean_loss = float(losses.mean())
        if not np.isfinite(mean_loss):
            raise FloatingPointError(f"loss diverged at iteration {it}")
        grads = [g / cfg.batch_pairs for g in grads]
        try:
            opt.step(model.net.params, grads)
        except FloatingPointError as exc:
            raise FloatingPointError(f"iteration {it}: {exc}") from exc
        hist.loss.append(mean_loss)
        if it % cfg.td_every == 0 or it == cfg.iterations:
            record(it)
            if log:
                log(f"iter {it:4d}  loss {mean_loss:.4f}  distance {hist.trace_distance[-1]:.4f}")
    return model, hist


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _preprocess_doc(pre) -> dict | None:
    if pre is None:
        return None
    if not isinstance(pre, Preprocessor):
        raise TypeError("only Preprocessor pipelines can be checkpointed")
    return {
        "pca_mean": pre.pca.mean.tolist(),
        "pca_components": pre.pca.components.ravel().tolist(),
        "pca_variances": pre.pca.variances.tolist(),
        "scaler_min": pre.scaler.data_min.tolist(),
        "scaler_max": pre.scaler.data_max.tolist(),
        "scaler_range": [pre.scaler.lo, pre.scaler.hi],
    }


def _preprocess_from_doc(doc):
    if doc is None:
        return None
    from .data import PcaModel, RangeScaler

    mean = np.asarray(doc["pca_mean"], dtype=float)
    comps = np.asarray(doc["pca_components"], dtype=float).reshape(-1, mean.size)
    pca = PcaModel(mean, comps, np.asarray(doc["pca_variances"], dtype=float))
    lo, hi = doc["scaler_range"]
    scaler = RangeScaler(np.asarray(doc["scaler_min"], dtype=float), np.asarray(doc["scaler_max"], dtype=float), lo, hi)
    return Preprocessor(pca, scaler)


def nqe_checkpoint(model: NqeModel, rng_seed=None, config_hash: str = "") -> dict:
    spec = model.spec
    extra = {
        "embedding": {"n_qubits": spec.n_qubits, "layers": spec.layers, "topology": spec.topology},
        "head": model.head,
        "preprocess": _preprocess_doc(model.preprocess),
    }
    return nn.checkpoint_dict(model.net, rng_seed, config_hash, extra)


def load_nqe_checkpoint(path_or_doc) -> NqeModel:
    net, doc = nn.load_checkpoint(path_or_doc)
    e = doc["embedding"]
    spec = EmbeddingSpec(e["n_qubits"], e["layers"], e["topology"])
    return NqeModel(net, spec, _preprocess_from_doc(doc.get("preprocess")), doc.get("head", "angles"))
