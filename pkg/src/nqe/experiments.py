"""End-to-end pipelines behind the CLI, the demos and the acceptance suite."""
from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import data as D
from . import kernels as K
from . import metrics as M
from . import nn
from . import qcnn as Q
from .embedding import EmbeddingSpec, classical_feature_map, zz_feature_circuit, zz_feature_states
from .sim import NoiseModel, Op, ParamCircuit, embed_operator, reduce_shifts
from .trainer import NqeModel, NqeTrainConfig, reported_distance, train_nqe

# ---------------------------------------------------------------------------
# MNIST setup
# ---------------------------------------------------------------------------


@dataclass
class MnistSetup:
    """Train/test splits plus the PCA fitted on the training images.

    The fixed map reads raw PCA scores; the PCA-NQE network reads the same
    scores min-max scaled to [0, pi] on the training set.
    """

    train: D.Dataset
    test: D.Dataset
    pca: D.PcaModel
    scaler: D.RangeScaler
    spec: EmbeddingSpec

    def pca_scores(self, x):
        return D.pca_transform(self.pca, x)

    def nqe_inputs(self, x):
        return self.scaler.transform(self.pca_scores(x))

    def fixed_angles(self, x):
        return classical_feature_map(self.pca_scores(x), self.spec)

    def fixed_states(self, x):
        return zz_feature_states(self.fixed_angles(x), self.spec)


def prepare_mnist(n_qubits: int = 4, classes=(0, 1), train_limit=None, test_limit=None,
                  data_dir=None, topology: str = "ring") -> MnistSetup:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        train = D.load_binary_mnist(classes[0], classes[1], "train", train_limit, data_dir)
        test = D.load_binary_mnist(classes[0], classes[1], "test", test_limit, data_dir)
    pca = D.pca_fit(train.features, n_qubits)
    scaler = D.fit_scaler(D.pca_transform(pca, train.features))
    return MnistSetup(train, test, pca, scaler, EmbeddingSpec(n_qubits, 1, topology))


def pca_nqe_model(setup: MnistSetup, seed) -> NqeModel:
    n = setup.spec.n_qubits
    hidden = 3 * n  # 12 for four qubits, 24 for eight
    net = nn.Mlp([n, hidden, hidden, setup.spec.n_angles], seed=seed)
    return NqeModel(net, setup.spec, preprocess=D.Preprocessor(setup.pca, setup.scaler))


def cnn_nqe_model(setup: MnistSetup, seed) -> NqeModel:
    return NqeModel(nn.Cnn2d(setup.spec.n_angles, seed=seed), setup.spec)


def build_nqe(setup: MnistSetup, variant: str, cfg: NqeTrainConfig, data: D.Dataset | None = None,
              log=None):
    """Train a 'pca_nqe' or 'nqe' (CNN) model; returns (model, history)."""
    make = {"pca_nqe": pca_nqe_model, "nqe": cnn_nqe_model}[variant]
    model = make(setup, cfg.seed)
    return train_nqe(data if data is not None else setup.train, model, cfg, log=log)


def state_fn(setup: MnistSetup, variant: str, models: dict, noise: NoiseModel | None = None):
    """x -> embedded states (amplitudes, or densities when noise is set)."""
    if variant == "fixed":
        angles = setup.fixed_angles
    else:
        angles = models[variant].angles
    if noise is None:
        return lambda x: zz_feature_states(angles(x), setup.spec)
    circ = zz_feature_circuit(setup.spec)
    return lambda x: circ.run_density(angles(x), noise)


# ---------------------------------------------------------------------------
# Separability and classifier studies
# ---------------------------------------------------------------------------


def run_separability(setup: MnistSetup, cfg: NqeTrainConfig, seeds=(0, 1, 2), variant="pca_nqe",
                     data: D.Dataset | None = None) -> dict:
    data = data if data is not None else setup.train
    baseline = reported_distance(setup.fixed_states(data.features), None, data.labels)
    runs = []
    for seed in seeds:
        cfg_s = NqeTrainConfig(**{**cfg.__dict__, "seed": seed})
        model, hist = build_nqe(setup, variant, cfg_s, data)
        final = reported_distance(model, data.features, data.labels)
        runs.append({"seed": seed, "final": final, "history": hist})
    finals = [r["final"] for r in runs]
    return {"baseline": baseline, "finals": finals, "mean_final": float(np.mean(finals)), "runs": runs}


def run_qcnn_study(setup: MnistSetup, models: dict, variants, spec: Q.QcnnSpec, cfg: Q.QcnnTrainConfig,
                   seeds=(0,), log=None) -> dict:
    """Train a classifier per variant and seed; report losses, bounds and test accuracies."""
    report = {}
    for variant in variants:
        emb = state_fn(setup, variant, models, cfg.noise)
        s_train, s_test = emb(setup.train.features), emb(setup.test.features)
        clean = state_fn(setup, variant, models)(setup.train.features)
        bound = Q.loss_bound(clean, setup.train.labels)
        runs = []
        for seed in seeds:
            c = Q.QcnnTrainConfig(**{**cfg.__dict__, "seed": seed})
            theta, hist = Q.train_qcnn(s_train, setup.train.labels, spec, c, log=log)
            acc = Q.accuracy(s_test, setup.test.labels, spec, theta, cfg.noise)
            runs.append({"seed": seed, "theta": theta, "history": hist, "final_loss": hist.full_loss[-1],
                         "test_accuracy": acc})
        report[variant] = {
            "bound": bound,
            "runs": runs,
            "final_loss": float(np.mean([r["final_loss"] for r in runs])),
            "test_accuracy": float(np.mean([r["test_accuracy"] for r in runs])),
            "reported_distance": 1.0 - 2.0 * bound,
        }
    return report


def run_embedding_comparison(setup: MnistSetup, models: dict, variants, spec: Q.QcnnSpec,
                             cfg: Q.QcnnTrainConfig, seeds=(0,), log=None) -> dict:
    """Like ``run_qcnn_study`` but also accepts 'trainable_unitary(L)' variants,
    which learn their embedding jointly with the classifier."""
    report = {}
    plain = [v for v in variants if not v.startswith("trainable_unitary")]
    if plain:
        report.update(run_qcnn_study(setup, models, plain, spec, cfg, seeds, log))
    for v in variants:
        if not v.startswith("trainable_unitary"):
            continue
        layers = int(v[v.index("(") + 1 : v.index(")")])
        espec = EmbeddingSpec(setup.spec.n_qubits, layers, setup.spec.topology, "trainable_unitary")
        x_tr, x_te = setup.pca_scores(setup.train.features), setup.pca_scores(setup.test.features)
        runs = []
        for seed in seeds:
            c = Q.QcnnTrainConfig(**{**cfg.__dict__, "seed": seed})
            tq, te, hist = Q.train_trainable_unitary(x_tr, setup.train.labels, spec, espec, c, log=log)
            s_test = Q.trainable_unitary_states(x_te, te, espec)
            runs.append({"seed": seed, "theta": tq, "theta_embedding": te, "history": hist,
                         "final_loss": hist.full_loss[-1],
                         "test_accuracy": Q.accuracy(s_test, setup.test.labels, spec, tq),
                         "bound": hist.bound})
        report[v] = {
            "bound": float(np.mean([r["bound"] for r in runs])),
            "runs": runs,
            "final_loss": float(np.mean([r["final_loss"] for r in runs])),
            "test_accuracy": float(np.mean([r["test_accuracy"] for r in runs])),
            "reported_distance": float(np.mean([1.0 - 2.0 * r["bound"] for r in runs])),
        }
    return report


# ---------------------------------------------------------------------------
# Kernel and expressibility studies
# ---------------------------------------------------------------------------


def run_kernel_study(pool: D.Dataset, embeddings: dict, n: int = 200, reps: int = 5,
                     lambdas=K.DEFAULT_LAMBDAS, seed: int = 0, rank_tol=None) -> list[dict]:
    """Disjoint balanced resamples of ``pool``; one row per (repetition, lambda).

    ``embeddings`` maps a variant name to x -> states.
    """
    rng = np.random.default_rng(seed)
    used = []
    rows = []
    for rep in range(reps):
        idx = D.balanced_sample(pool, n, rng, exclude=np.concatenate(used) if used else None)
        used.append(idx)
        x, y = pool.features[idx], pool.labels[idx]
        stats = {}
        for name, emb in embeddings.items():
            km = K.kernel_matrix(emb(x))
            stats[name] = (K.generalization_bound(km, y, np.asarray(lambdas)), K.kernel_variance(km),
                           K.kernel_rank(km, rank_tol))
        for li, lam in enumerate(lambdas):
            row = {"repetition": rep, "lambda": float(lam)}
            for name, (g, var, rank) in stats.items():
                row[f"G_{name}"] = float(g[li])
                row[f"variance_{name}"] = var
                row[f"d_{name}"] = rank
            rows.append(row)
    return rows


def expressibility_table(embeddings: dict, datasets: dict) -> dict:
    """epsilon of order 1 and 2 for each (embedding, dataset) combination."""
    out = {}
    for name, emb in embeddings.items():
        for dname, ds in datasets.items():
            s = emb(ds.features)
            out[f"{name}/{dname}"] = {
                "epsilon_order1": M.expressibility_deviation(s, 1).epsilon,
                "epsilon_order2": M.expressibility_deviation(s, 2).epsilon if s.shape[-1] <= 64 else None,
            }
    return out


# ---------------------------------------------------------------------------
# Local effective dimension study
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def hardware_efficient_circuit(n_qubits: int = 4, reps: int = 2) -> ParamCircuit:
    """RY/RZ on every qubit, a CNOT chain, repeated; closing RY/RZ layer."""
    ops, slot = [], 0
    for r in range(reps + 1):
        for q in range(n_qubits):
            ops += [Op("RY", (q,), slot), Op("RZ", (q,), slot + 1)]
            slot += 2
        if r < reps:
            ops += [Op("CNOT", (q, q + 1)) for q in range(n_qubits - 1)]
    return ParamCircuit(n_qubits, tuple(ops), slot)


def qnn_observable(n_qubits: int) -> np.ndarray:
    return embed_operator(np.diag([1.0, -1.0]).astype(complex), (0,), n_qubits)


def qnn_predict_and_grad(states, thetas, n_qubits: int):
    """f (S, N) and df/dtheta (S, N, D) for parameter rows (S, D)."""
    circ = hardware_efficient_circuit(n_qubits)
    thetas = np.atleast_2d(thetas)
    ex, rows, reducer = circ.shifted_params(np.zeros(circ.n_params))
    jac = circ.expanded()[1]
    delta = rows - rows[0]
    shifted = (thetas @ jac.T)[:, None, :] + delta[None]  # (S, 2m+1, m)
    o = ex.heisenberg(shifted, qnn_observable(n_qubits), None)
    vals = Q.predict_from_observable(o, states)  # (S, 2m+1, N)
    f, g = reduce_shifts(np.moveaxis(vals, 1, 0), reducer)  # (S, N), (D, S, N)
    return f, np.moveaxis(g, 0, -1)


def train_qnn(states, labels, n_qubits: int, iterations: int, lr: float, batch: int, seed) -> np.ndarray:
    """Adam on the linear loss for the hardware-efficient classifier."""
    circ = hardware_efficient_circuit(n_qubits)
    rng = np.random.default_rng([seed, 5])
    theta = rng.uniform(0, 2 * np.pi, circ.n_params)
    opt = nn.Optimizer("adam", lr)
    for _ in range(iterations):
        idx = rng.choice(len(labels), size=min(batch, len(labels)), replace=False)
        f, df = qnn_predict_and_grad(states[idx], theta, n_qubits)
        grad = np.mean(-labels[idx, None] * df[0] / 2, axis=0)
        opt.step([theta], [grad])
    return theta


@dataclass
class LedStudyConfig:
    n_datasets: int = 10
    restarts: int = 5
    class_sep: float = 1.0
    nqe_iterations: int = 100
    nqe_batch_pairs: int = 25
    nqe_lr: float = 0.01
    qnn_iterations: int = 100
    qnn_lr: float = 0.05
    qnn_batch: int = 25
    led: M.LedConfig = field(default_factory=M.LedConfig)
    seed: int = 0


def led_single(ds: D.Dataset, use_nqe: bool, restart: int, cfg: LedStudyConfig) -> float:
    """LED of the classifier trained on one synthetic dataset, with or without NQE."""
    n = ds.features.shape[1]
    spec = EmbeddingSpec(n)
    seed = [cfg.seed, restart]
    if use_nqe:
        net = nn.Mlp([n, 12, n], seed=np.random.default_rng(seed).integers(2**31), output_activation="relu")
        model = NqeModel(net, spec, head="features")
        tcfg = NqeTrainConfig(iterations=cfg.nqe_iterations, batch_pairs=cfg.nqe_batch_pairs, lr=cfg.nqe_lr,
                              optimizer="adam", seed=int(np.random.default_rng(seed).integers(2**31)),
                              td_every=cfg.nqe_iterations)
        model, _ = train_nqe(ds, model, tcfg)
        states = model.states(ds.features)
    else:
        states = zz_feature_states(classical_feature_map(ds.features, spec), spec)
    theta = train_qnn(states, ds.labels, n, cfg.qnn_iterations, cfg.qnn_lr, cfg.qnn_batch, seed)
    rng = np.random.default_rng([cfg.seed, restart, 3])
    sub = rng.choice(len(ds), size=min(cfg.led.n_fisher_data, len(ds)), replace=False)
    fisher_states = states[sub]
    return M.local_effective_dimension(lambda th: qnn_predict_and_grad(fisher_states, th, n), theta,
                                       cfg.led, rng)


def led_dataset(k: int, cfg: LedStudyConfig) -> dict:
    """LED with and without NQE over all restarts on synthetic dataset ``k``."""
    ds = D.make_synthetic(D.SyntheticSpec(class_sep=cfg.class_sep, seed=cfg.seed * 1000 + k))
    with_nqe = [led_single(ds, True, r, cfg) for r in range(cfg.restarts)]
    without = [led_single(ds, False, r, cfg) for r in range(cfg.restarts)]
    return {"dataset": k, "led_nqe": with_nqe, "led_fixed": without,
            "median_nqe": float(np.median(with_nqe)), "median_fixed": float(np.median(without))}


def parallel_map(fn, items, workers: int = 1) -> list:
    """Ordered map; a process pool when ``workers`` > 1. Every task seeds itself,
    so results do not depend on the worker count."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


def run_led_study(cfg: LedStudyConfig = LedStudyConfig(), log=None, workers: int = 1) -> list[dict]:
    rows = parallel_map(led_dataset, [(k, cfg) for k in range(cfg.n_datasets)], workers)
    if log:
        for row in rows:
            log(f"dataset {row['dataset']}: median LED with NQE {row['median_nqe']:.3f}, "
                f"without {row['median_fixed']:.3f}")
    return rows
