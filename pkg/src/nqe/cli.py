"""Config-driven experiment runner.

Every subcommand reads a strict JSON config (or a bundled preset), fills in
defaults, and writes CSV/JSON artifacts stamped with the config hash and the
format version.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import data as D
from . import experiments as X
from . import kernels as K
from . import metrics as M
from . import qcnn as Q
from .embedding import EmbeddingSpec, classical_feature_map, zz_feature_circuit, zz_feature_states
from .nn import FORMAT_VERSION, Mlp
from .sim import NoiseModel
from .trainer import NqeModel, NqeTrainConfig, load_nqe_checkpoint, nqe_checkpoint, reported_distance, train_nqe

COMMANDS = ("train-nqe", "train-qcnn", "kernel-study", "metrics-report", "compare-embeddings")
PRESETS = ("toy", "fig2-noiseless", "fig2-noisy-desk", "fig3-comparison", "fig4-led", "fig5-kernel",
           "fig6-expressibility", "appendixF-rank")
VARIANT_PATTERN = r"^(fixed|pca_nqe|nqe|trainable_unitary\([1-9]\))$"


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# Schema and defaults
# ---------------------------------------------------------------------------


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


_INT = {"type": "integer", "minimum": 0}
_POS = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_POSNUM = {"type": "number", "exclusiveMinimum": 0}
_VARIANT = {"type": "string", "pattern": VARIANT_PATTERN}

SCHEMA = _obj({
    "experiment": {"enum": list(COMMANDS)},
    "seed": _INT,
    "output_dir": {"type": "string"},
    "dataset": _obj({
        "source": {"enum": ["mnist", "synthetic"]},
        "classes": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 9},
                    "minItems": 2, "maxItems": 2},
        "train_limit": {"type": ["integer", "null"], "minimum": 2},
        "test_limit": {"type": ["integer", "null"], "minimum": 2},
        "data_dir": {"type": ["string", "null"]},
        "synthetic": _obj({"n_samples": _POS, "n_features": _POS, "clusters_per_class": _POS,
                           "class_sep": _POSNUM}),
    }),
    "embedding": _obj({
        "variant": _VARIANT,
        "n_qubits": {"type": "integer", "minimum": 2, "maximum": 10},
        "layers": _POS,
        "topology": {"enum": ["ring", "chain"]},
        "checkpoint": {"type": ["string", "null"]},
    }),
    "nqe": _obj({
        "iterations": _POS, "batch_pairs": _POS, "lr": _POSNUM,
        "optimizer": {"enum": ["sgd", "nesterov", "adam"]},
        "fidelity_mode": {"enum": ["exact", "shots"]},
        "noisy_fidelity": {"type": "boolean"},
        "shots": _POS, "td_every": _POS, "eval_size": _POS,
    }),
    "qcnn": _obj({
        "iterations": _POS, "batch_size": _POS, "lr": _POSNUM,
        "optimizer": {"enum": ["sgd", "nesterov", "adam"]},
        "momentum": _NUM,
        "ansatz": {"enum": ["su4", "simple"]},
        "layout": {"enum": ["standard", "hardware"]},
        "seeds": {"type": "array", "items": _INT, "minItems": 1},
    }),
    "noise": _obj({
        "preset": {"enum": ["none", "desk-nisq", "custom"]},
        "p_dep_1q": _NUM, "p_dep_2q": _NUM, "t1": _POSNUM, "t2": _POSNUM,
        "gate_time_1q": _NUM, "gate_time_2q": _NUM, "readout_flip": _NUM,
    }),
    "metrics": _obj({
        "variants": {"type": "array", "items": _VARIANT},
        "expressibility": {"type": "boolean"},
        "contractivity": {"type": "boolean"},
        "led": {"type": "boolean"},
    }),
    "kernel": _obj({
        "n": _POS, "repetitions": _POS,
        "lambdas": {"type": "array", "items": _POSNUM, "minItems": 1},
        "variants": {"type": "array", "items": _VARIANT, "minItems": 1},
        "rank_tol": {"type": ["number", "null"], "exclusiveMinimum": 0},
    }),
    "comparison": _obj({"variants": {"type": "array", "items": _VARIANT, "minItems": 1}}),
    "led": _obj({
        "n_datasets": _POS, "restarts": _POS, "class_sep": _POSNUM,
        "nqe_iterations": _POS, "qnn_iterations": _POS, "n_theta": {"type": "integer", "minimum": 2},
        "radius": _POSNUM, "n_data": {"type": "integer", "minimum": 2},
    }),
})

DEFAULTS = {
    "output_dir": "out",
    "dataset": {"source": "mnist", "classes": [0, 1], "train_limit": None, "test_limit": None, "data_dir": None,
                "synthetic": {"n_samples": 400, "n_features": 4, "clusters_per_class": 4, "class_sep": 1.0}},
    "embedding": {"variant": "pca_nqe", "n_qubits": 4, "layers": 1, "topology": "ring", "checkpoint": None},
    "nqe": {"iterations": 50, "batch_pairs": 10, "lr": 0.1, "optimizer": "sgd", "fidelity_mode": "exact",
            "noisy_fidelity": False, "shots": 1024, "td_every": 5, "eval_size": 256},
    "qcnn": {"iterations": 200, "batch_size": 128, "lr": 0.01, "optimizer": "nesterov", "momentum": 0.9,
             "ansatz": "su4", "layout": "standard", "seeds": None},
    "noise": {"preset": "none"},
    "metrics": {"variants": ["fixed", "pca_nqe", "nqe"], "expressibility": True, "contractivity": True,
                "led": False},
    "kernel": {"n": 200, "repetitions": 5, "lambdas": list(K.DEFAULT_LAMBDAS),
               "variants": ["fixed", "pca_nqe", "nqe"], "rank_tol": None},
    "comparison": {"variants": ["fixed", "pca_nqe", "nqe"]},
    "led": {"n_datasets": 10, "restarts": 5, "class_sep": 1.0, "nqe_iterations": 100, "qnn_iterations": 100,
            "n_theta": 32, "radius": 0.05, "n_data": 400},
}

# applied when a noise preset is active and the user left these unset
NOISY_QCNN_DEFAULTS = {"iterations": 200, "lr": 0.05, "layout": "hardware"}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"config: unknown preset {name!r}")
    return json.loads(resources.files("nqe").joinpath("presets", f"{name}.json").read_text())


def resolve_config(raw: dict, command: str, seed: int | None = None) -> dict:
    """Validate ``raw`` and return the fully populated config."""
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw["seed"] = seed
    if "seed" not in raw:
        raise ConfigError("config: seed required")
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config: {where}: {exc.message}") from None
    if raw.get("experiment", command) != command:
        raise ConfigError(f"config: experiment {raw['experiment']!r} does not match subcommand {command!r}")
    cfg = _merge(DEFAULTS, raw)
    cfg["experiment"] = command
    if cfg["noise"]["preset"] != "none":
        for k, v in NOISY_QCNN_DEFAULTS.items():
            if k not in raw.get("qcnn", {}):
                cfg["qcnn"][k] = v
    if cfg["qcnn"]["seeds"] is None:
        cfg["qcnn"]["seeds"] = [cfg["seed"]]
    return cfg


def config_hash(cfg: dict) -> str:
    """sha256 over the canonical JSON of every field that affects numbers."""
    doc = {k: v for k, v in cfg.items() if k != "output_dir"}
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def noise_model(cfg: dict) -> NoiseModel | None:
    block = dict(cfg["noise"])
    preset = block.pop("preset")
    if preset == "none":
        return None
    if preset == "desk-nisq":
        if block:
            raise ConfigError("config: noise fields are only allowed with preset 'custom'")
        return NoiseModel()
    try:
        return NoiseModel(**block)
    except ValueError as exc:
        raise ConfigError(f"config: noise: {exc}") from None


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


class Outputs:
    def __init__(self, out_dir, cfg: dict):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hash = config_hash(cfg)
        self.written: list[str] = []

    @property
    def comment(self) -> str:
        return f"format_version={FORMAT_VERSION} config_hash={self.hash}"

    def path(self, name: str) -> Path:
        self.written.append(name)
        return self.dir / name

    def json(self, name: str, doc: dict):
        doc = {"format_version": FORMAT_VERSION, "config_hash": self.hash, **doc}
        with open(self.path(name), "w") as fh:
            json.dump(_plain(doc), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def csv(self, name: str, header: list[str], rows):
        with open(self.path(name), "w", newline="") as fh:
            fh.write(f"# {self.comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(row.get(h)) for h in header])


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _plain(obj):
    """numpy scalars/arrays -> JSON-native types."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


# ---------------------------------------------------------------------------
# Shared pipeline pieces
# ---------------------------------------------------------------------------


def _nqe_cfg(cfg: dict, noise=None) -> NqeTrainConfig:
    block = dict(cfg["nqe"])
    noisy = block.pop("noisy_fidelity")
    if noisy and noise is None:
        raise ConfigError("config: nqe.noisy_fidelity needs a noise preset")
    return NqeTrainConfig(seed=cfg["seed"], noise=noise if noisy else None, **block)


def _setup(cfg: dict) -> X.MnistSetup:
    ds, emb = cfg["dataset"], cfg["embedding"]
    return X.prepare_mnist(emb["n_qubits"], tuple(ds["classes"]), ds["train_limit"], ds["test_limit"],
                           ds["data_dir"], emb["topology"])


def _synthetic(cfg: dict) -> D.Dataset:
    return D.make_synthetic(D.SyntheticSpec(seed=cfg["seed"], **cfg["dataset"]["synthetic"]))


def _nqe_models(cfg: dict, setup: X.MnistSetup, variants, out: Outputs | None = None, log=None) -> dict:
    """Load the configured checkpoint or train each NQE variant that is needed."""
    models = {}
    noise = noise_model(cfg)
    for v in variants:
        if v not in ("pca_nqe", "nqe"):
            continue
        ckpt = cfg["embedding"]["checkpoint"]
        if ckpt and cfg["embedding"]["variant"] == v:
            models[v] = load_nqe_checkpoint(ckpt)
            continue
        models[v], _ = X.build_nqe(setup, v, _nqe_cfg(cfg, noise), log=log)
    return models


def _state_fn(setup: X.MnistSetup, variant: str, models: dict, noise=None):
    if variant.startswith("trainable_unitary"):
        raise ConfigError(f"config: variant {variant} is only supported by train-qcnn and compare-embeddings")
    return X.state_fn(setup, variant, models, noise)


def _qcnn_spec(cfg: dict) -> Q.QcnnSpec:
    q, n = cfg["qcnn"], cfg["embedding"]["n_qubits"]
    if q["layout"] == "hardware":
        return Q.QcnnSpec.hardware(n, q["ansatz"])
    return Q.QcnnSpec.standard(n, q["ansatz"])


def _qcnn_cfg(cfg: dict, noise) -> Q.QcnnTrainConfig:
    q = cfg["qcnn"]
    return Q.QcnnTrainConfig(iterations=q["iterations"], batch_size=q["batch_size"], lr=q["lr"],
                             optimizer=q["optimizer"], momentum=q["momentum"], noise=noise,
                             seed=q["seeds"][0])


def _history_rows(hist: Q.QcnnHistory, **extra) -> list[dict]:
    full = dict(zip(hist.full_iterations, hist.full_loss))
    rows = []
    for it in range(len(hist.batch_loss) + 1):
        rows.append({**extra, "iteration": it, "batch_loss": hist.batch_loss[it - 1] if it else None,
                     "full_loss": full.get(it), "bound": hist.bound})
    return rows


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_train_nqe(cfg: dict, out: Outputs, workers: int = 1, log=None) -> None:
    emb = cfg["embedding"]
    variant = emb["variant"]
    noise = noise_model(cfg)
    tcfg = _nqe_cfg(cfg, noise)
    if cfg["dataset"]["source"] == "synthetic":
        if variant != "pca_nqe":
            raise ConfigError("config: synthetic data supports only the 'pca_nqe' (MLP) variant")
        data = _synthetic(cfg)
        spec = EmbeddingSpec(data.features.shape[1], emb["layers"], emb["topology"])
        n = spec.n_qubits
        model = NqeModel(Mlp([n, 3 * n, 3 * n, spec.n_angles], seed=cfg["seed"]), spec)
        model, hist = train_nqe(data, model, tcfg, log=log)
        baseline_states = zz_feature_states(classical_feature_map(data.features, spec), spec)
    else:
        if variant not in ("pca_nqe", "nqe"):
            raise ConfigError("config: train-nqe needs embedding variant 'pca_nqe' or 'nqe'")
        setup = _setup(cfg)
        data = setup.train
        model, hist = X.build_nqe(setup, variant, tcfg, log=log)
        baseline_states = setup.fixed_states(data.features)

    states = model.states(data.features)
    report = {
        "variant": variant,
        "n_samples": len(data),
        "provenance": data.provenance,
        "nqe": M.metrics_report(M.ensemble_from_labels(states, data.labels),
                                states if cfg["metrics"]["expressibility"] else None),
        "fixed": M.metrics_report(M.ensemble_from_labels(baseline_states, data.labels),
                                  baseline_states if cfg["metrics"]["expressibility"] else None),
        "initial_reported_distance": hist.trace_distance[0],
        "final_reported_distance": hist.trace_distance[-1],
    }
    with open(out.path("checkpoint.json"), "w") as fh:
        json.dump(nqe_checkpoint(model, cfg["seed"], out.hash), fh)
        fh.write("\n")
    hist.write_csv(out.path("nqe_history.csv"), out.comment)
    out.json("metrics.json", report)


def cmd_train_qcnn(cfg: dict, out: Outputs, workers: int = 1, log=None) -> None:
    variant = cfg["embedding"]["variant"]
    noise = noise_model(cfg)
    setup = _setup(cfg)
    spec = _qcnn_spec(cfg)
    qcfg = _qcnn_cfg(cfg, noise)
    if variant.startswith("trainable_unitary"):
        if noise is not None:
            raise ConfigError("config: trainable_unitary runs are noiseless only")
        report = X.run_embedding_comparison(setup, {}, [variant], spec, qcfg, seeds=cfg["qcnn"]["seeds"], log=log)
        run = report[variant]["runs"][0]
        theta = {"theta": run["theta"], "theta_embedding": run["theta_embedding"]}
    else:
        models = _nqe_models(cfg, setup, [variant], log=log)
        if variant in models and not cfg["embedding"]["checkpoint"]:
            with open(out.path("checkpoint.json"), "w") as fh:
                json.dump(nqe_checkpoint(models[variant], cfg["seed"], out.hash), fh)
                fh.write("\n")
        report = X.run_qcnn_study(setup, models, [variant], spec, qcfg, seeds=cfg["qcnn"]["seeds"], log=log)
        run = report[variant]["runs"][0]
        theta = {"theta": run["theta"]}
    run["history"].write_csv(out.path("qcnn_history.csv"), out.comment)
    out.json("qcnn_checkpoint.json", {"qcnn": {"n_qubits": spec.n_qubits, "ansatz": spec.ansatz,
                                               "layout": cfg["qcnn"]["layout"]}, **theta})
    r = report[variant]
    out.json("metrics.json", {"variant": variant, "noise": cfg["noise"]["preset"], "bound": r["bound"],
                              "final_loss": r["final_loss"], "test_accuracy": r["test_accuracy"],
                              "reported_distance": r["reported_distance"]})


def cmd_compare_embeddings(cfg: dict, out: Outputs, workers: int = 1, log=None) -> None:
    variants = cfg["comparison"]["variants"]
    noise = noise_model(cfg)
    if noise is not None and any(v.startswith("trainable_unitary") for v in variants):
        raise ConfigError("config: trainable_unitary runs are noiseless only")
    setup = _setup(cfg)
    models = _nqe_models(cfg, setup, variants, log=log)
    report = X.run_embedding_comparison(setup, models, variants, _qcnn_spec(cfg), _qcnn_cfg(cfg, noise),
                                        seeds=cfg["qcnn"]["seeds"], log=log)
    summary, hist_rows = [], []
    for v in variants:
        for run in report[v]["runs"]:
            bound = run.get("bound", report[v]["bound"])
            summary.append({"variant": v, "seed": run["seed"], "final_loss": run["final_loss"],
                            "bound": bound, "test_accuracy": run["test_accuracy"]})
            hist_rows += _history_rows(run["history"], variant=v, seed=run["seed"])
    out.csv("comparison.csv", ["variant", "seed", "final_loss", "bound", "test_accuracy"], summary)
    out.csv("comparison_history.csv", ["variant", "seed", "iteration", "batch_loss", "full_loss", "bound"],
            hist_rows)
    out.json("metrics.json", {"noise": cfg["noise"]["preset"], "variants": {
        v: {k: report[v][k] for k in ("bound", "final_loss", "test_accuracy", "reported_distance")}
        for v in variants}})


def cmd_kernel_study(cfg: dict, out: Outputs, workers: int = 1, log=None) -> None:
    kc = cfg["kernel"]
    setup = _setup(cfg)
    models = _nqe_models(cfg, setup, kc["variants"], log=log)
    embeddings = {v: _state_fn(setup, v, models) for v in kc["variants"]}
    ds = cfg["dataset"]
    pool = D.load_mnist_pool(ds["classes"][0], ds["classes"][1], ds["data_dir"])
    rows = X.run_kernel_study(pool, embeddings, kc["n"], kc["repetitions"], kc["lambdas"], cfg["seed"],
                              kc["rank_tol"])
    lead = ["repetition", "lambda", "G_fixed", "G_pca_nqe", "G_nqe", "variance_fixed", "variance_nqe",
            "d_fixed", "d_nqe"]
    extra = sorted({k for r in rows for k in r} - set(lead))
    header = [h for h in lead if any(h in r for r in rows)] + extra
    out.csv("kernel_study.csv", header, rows)
    means = {}
    for v in kc["variants"]:
        means[v] = {
            "G_mean": [float(np.mean([r[f"G_{v}"] for r in rows if r["lambda"] == lam])) for lam in kc["lambdas"]],
            "variance_mean": float(np.mean([r[f"variance_{v}"] for r in rows])),
            "d_mean": float(np.mean([r[f"d_{v}"] for r in rows])),
        }
    out.json("kernel_summary.json", {"n": kc["n"], "repetitions": kc["repetitions"], "lambdas": kc["lambdas"],
                                     "pool": pool.provenance, "variants": means})


def cmd_metrics_report(cfg: dict, out: Outputs, workers: int = 1, log=None) -> None:
    mc = cfg["metrics"]
    report: dict = {"variants": {}}
    if mc["variants"]:
        setup = _setup(cfg)
        models = _nqe_models(cfg, setup, mc["variants"], log=log)
        x, y = setup.train.features, setup.train.labels
        # contractivity is always checked under some channel; desk-nisq when no preset is set
        noise = noise_model(cfg) or NoiseModel()
        for v in mc["variants"]:
            states = _state_fn(setup, v, models)(x)
            ens = M.ensemble_from_labels(states, y)
            entry = M.metrics_report(ens, states if mc["expressibility"] else None)
            if mc["contractivity"]:
                angles = setup.fixed_angles(x) if v == "fixed" else models[v].angles(x)
                noisy = zz_feature_circuit(setup.spec).run_density(angles, noise)
                d_noisy = M.weighted_trace_distance(M.ensemble_from_labels(noisy, y))
                entry["contractivity"] = {"dtr_clean": entry["dtr_bound_convention"], "dtr_noisy": d_noisy,
                                          "holds": bool(d_noisy <= entry["dtr_bound_convention"] + 1e-9)}
            report["variants"][v] = entry
        report["noise"] = cfg["noise"]["preset"] if cfg["noise"]["preset"] != "none" else "desk-nisq"
    if mc["led"]:
        lc = cfg["led"]
        led_cfg = X.LedStudyConfig(n_datasets=lc["n_datasets"], restarts=lc["restarts"], class_sep=lc["class_sep"],
                                   nqe_iterations=lc["nqe_iterations"], qnn_iterations=lc["qnn_iterations"],
                                   led=M.LedConfig(n_data=lc["n_data"], radius=lc["radius"],
                                                   n_theta=lc["n_theta"]),
                                   seed=cfg["seed"])
        rows = X.run_led_study(led_cfg, log=log, workers=workers)
        out.csv("led_study.csv", ["dataset", "restart", "led_nqe", "led_fixed"],
                [{"dataset": r["dataset"], "restart": i, "led_nqe": a, "led_fixed": b}
                 for r in rows for i, (a, b) in enumerate(zip(r["led_nqe"], r["led_fixed"]))])
        report["led"] = {"datasets": [{k: r[k] for k in ("dataset", "median_nqe", "median_fixed")} for r in rows],
                         "nqe_lower": sum(r["median_nqe"] < r["median_fixed"] for r in rows)}
    out.json("metrics.json", report)


HANDLERS = {
    "train-nqe": cmd_train_nqe,
    "train-qcnn": cmd_train_qcnn,
    "kernel-study": cmd_kernel_study,
    "metrics-report": cmd_metrics_report,
    "compare-embeddings": cmd_compare_embeddings,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nqe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="path to a JSON config")
        src.add_argument("--preset", choices=PRESETS, help="bundled desk-scale preset")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="parallel worker bound")
        s.add_argument("--out", help="output directory (overrides output_dir)")
        s.add_argument("--quiet", action="store_true")
    return p


def _read_config(args) -> dict:
    if args.preset:
        return load_preset(args.preset)
    try:
        with open(args.config) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {args.config}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON: {exc}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("config: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = resolve_config(_read_config(args), args.command, args.seed)
        out = Outputs(args.out or cfg["output_dir"], cfg)
        log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
        HANDLERS[args.command](cfg, out, workers=args.workers, log=log)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        print("\n".join(str(out.dir / name) for name in out.written))
    return 0


if __name__ == "__main__":
    sys.exit(main())
