"""Command-line entry point: synth, train, predict, eval, embed, gradcheck.

Runs are driven by a single JSON config document; a few per-run knobs (seed,
output directory) can be overridden by flags, and the environment variable
``TRVAE_SEED`` overrides the configured training seed. Exit codes: 0 success,
1 failed gradient check, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import Tensor, grad_check
from .data import (
    Dataset,
    Scaler,
    SyntheticSpec,
    load_csv,
    load_matrix_csv,
    split_holdout,
    standardize,
    synth_shift,
    write_csv,
    write_matrix_csv,
)
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    NumericError,
    ParseError,
    SchemaError,
)
from .evaluate import (
    EvalReport,
    evaluate_transform,
    export_embeddings,
    pearson,
    per_dim_stats,
)
from .mmd import KernelSpec
from .model import (
    ModelConfig,
    ModelParams,
    batch_loss,
    init_params,
    param_shapes,
    predict_transform,
)
from .train import TrainConfig, train

FORMAT_VERSION = 1


# ---- config parsing ---------------------------------------------------------


def _check_keys(doc: dict, allowed, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown config key {path}.{key}")


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None


MODEL_KEYS = (
    "input_dim", "condition_count", "encoder_hidden", "z_dim", "g1_dim", "g2_hidden",
    "activation_slope", "alpha", "eta", "beta", "mmd_layer", "kernel",
)
TRAIN_KEYS = (
    "learning_rate", "epochs", "batch_size", "seed", "adam_betas", "adam_epsilon",
    "early_stop_patience",
)
SYNTH_KEYS = (
    "domain_count", "condition_count", "dims", "samples_per_cell", "domain_separation",
    "shift_magnitude", "response_sparsity", "noise_sd", "seed",
)


def parse_model_section(doc: dict) -> dict:
    _check_keys(doc, MODEL_KEYS, "model")
    doc = dict(doc)
    if "kernel" in doc:
        _check_keys(doc["kernel"], ("gammas",), "model.kernel")
        try:
            doc["kernel"] = KernelSpec(gammas=tuple(doc["kernel"].get("gammas", KernelSpec().gammas)))
        except (ContractError, TypeError) as e:
            raise ConfigError(f"model.kernel: {e}") from None
    return doc


def finalize_model_config(section: dict, input_dim: int, condition_count: int) -> ModelConfig:
    section = dict(section)
    if section.setdefault("input_dim", input_dim) != input_dim:
        raise ConfigError(
            f"model.input_dim={section['input_dim']} but the data has {input_dim} features"
        )
    if section.setdefault("condition_count", condition_count) != condition_count:
        raise ConfigError(
            f"model.condition_count={section['condition_count']} but the data has "
            f"{condition_count} conditions"
        )
    try:
        return ModelConfig(**section)
    except ContractError as e:
        raise ConfigError(f"model: {e}") from None


def parse_train_config(doc: dict) -> TrainConfig:
    _check_keys(doc, TRAIN_KEYS, "train")
    doc = dict(doc)
    if "adam_betas" in doc:
        doc["adam_betas"] = tuple(doc["adam_betas"])
    try:
        return TrainConfig(**doc)
    except ContractError as e:
        raise ConfigError(f"train: {e}") from None


def parse_synthetic_spec(doc: dict) -> SyntheticSpec:
    _check_keys(doc, SYNTH_KEYS, "synthetic")
    try:
        return SyntheticSpec(**doc)
    except ContractError as e:
        raise ConfigError(f"synthetic: {e}") from None


@dataclass
class RunConfig:
    model_section: dict
    train_config: TrainConfig
    csv_source: dict | None
    synthetic: SyntheticSpec | None
    holdout: list
    output_dir: str


def parse_run_config(doc: dict) -> RunConfig:
    _check_keys(doc, ("model", "train", "data", "holdout", "output_dir"), "config")
    if "data" not in doc:
        raise ConfigError("config.data is required")
    data = doc["data"]
    _check_keys(data, ("csv", "synthetic"), "data")
    if ("csv" in data) == ("synthetic" in data):
        raise ConfigError("data needs exactly one of 'csv' or 'synthetic'")
    csv_source = None
    synthetic = None
    if "csv" in data:
        _check_keys(data["csv"], ("path", "condition_col", "domain_col"), "data.csv")
        if "path" not in data["csv"]:
            raise ConfigError("data.csv.path is required")
        csv_source = {
            "path": data["csv"]["path"],
            "condition_col": data["csv"].get("condition_col", "condition"),
            "domain_col": data["csv"].get("domain_col", "domain"),
        }
    else:
        synthetic = parse_synthetic_spec(data["synthetic"])

    holdout = []
    for i, pair in enumerate(doc.get("holdout", [])):
        _check_keys(pair, ("domain", "condition"), f"holdout[{i}]")
        if "domain" not in pair or "condition" not in pair:
            raise ConfigError(f"holdout[{i}] needs 'domain' and 'condition'")
        holdout.append((pair["domain"], pair["condition"]))

    return RunConfig(
        model_section=parse_model_section(doc.get("model", {})),
        train_config=parse_train_config(doc.get("train", {})),
        csv_source=csv_source,
        synthetic=synthetic,
        holdout=holdout,
        output_dir=doc.get("output_dir", "."),
    )


def _resolve_label(value, names, kind: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"{kind} label must be an index or name, got {value!r}")
    if isinstance(value, int):
        if not 0 <= value < len(names):
            raise ConfigError(f"{kind} index {value} out of range [0, {len(names)})")
        return value
    if isinstance(value, str):
        if value in names:
            return names.index(value)
        if value.isdigit() and int(value) < len(names):
            return int(value)
        raise ConfigError(f"unknown {kind} label {value!r}; known: {names}")
    raise ConfigError(f"{kind} label must be an index or name, got {value!r}")


# ---- checkpoint --------------------------------------------------------------


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: ModelParams
    scaler: Scaler
    feature_names: list[str]
    condition_names: list[str]
    domain_names: list[str]
    train_seed: int
    final_epoch: int


def _model_config_doc(config: ModelConfig) -> dict:
    return {
        "input_dim": config.input_dim,
        "condition_count": config.condition_count,
        "encoder_hidden": list(config.encoder_hidden),
        "z_dim": config.z_dim,
        "g1_dim": config.g1_dim,
        "g2_hidden": list(config.g2_hidden),
        "activation_slope": config.activation_slope,
        "alpha": config.alpha,
        "eta": config.eta,
        "beta": config.beta,
        "mmd_layer": config.mmd_layer,
        "kernel": {"gammas": list(config.kernel.gammas)},
    }


def save_checkpoint(ckpt: Checkpoint, path):
    doc = {
        "format_version": FORMAT_VERSION,
        "model_config": _model_config_doc(ckpt.model_config),
        "params": [
            {"name": name, "shape": list(leaf.shape), "values": [float(v) for v in leaf.ravel()]}
            for name, leaf in ckpt.params.flat()
        ],
        "scaler": {
            "mean": [float(v) for v in ckpt.scaler.mean],
            "scale": [float(v) for v in ckpt.scaler.scale],
        },
        "labels": {
            "feature_names": list(ckpt.feature_names),
            "condition_names": list(ckpt.condition_names),
            "domain_names": list(ckpt.domain_names),
        },
        "train_seed": ckpt.train_seed,
        "final_epoch": ckpt.final_epoch,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: invalid checkpoint JSON ({e})") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: unrecognized checkpoint version {doc.get('format_version')!r}")
    for key in ("model_config", "params", "scaler", "labels", "train_seed", "final_epoch"):
        if key not in doc:
            raise SchemaError(f"{path}: checkpoint is missing section {key!r}")
    section = parse_model_section(doc["model_config"])
    config = ModelConfig(**section)

    expected = param_shapes(config)
    by_name = {entry["name"]: entry for entry in doc["params"]}
    if list(by_name) != [name for name, _ in expected]:
        raise SchemaError(f"{path}: parameter names do not match the model layout")
    leaves = []
    for name, shape in expected:
        entry = by_name[name]
        if tuple(entry["shape"]) != shape:
            raise SchemaError(f"{path}: parameter {name} has shape {entry['shape']}, expected {shape}")
        values = np.array(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise SchemaError(f"{path}: parameter {name} payload length does not match its shape")
        leaves.append(values.reshape(shape))

    skeleton = ModelParams(
        encoder=[(None, None)] * len(config.encoder_hidden),
        mu=(None, None),
        logvar=(None, None),
        g1=(None, None),
        g2=[(None, None)] * (len(config.g2_hidden) + 1),
    )
    labels = doc["labels"]
    for key in ("feature_names", "condition_names", "domain_names"):
        if key not in labels:
            raise SchemaError(f"{path}: checkpoint labels are missing {key!r}")
    try:
        scaler = Scaler(
            mean=np.array(doc["scaler"]["mean"], dtype=np.float64),
            scale=np.array(doc["scaler"]["scale"], dtype=np.float64),
        )
    except KeyError as e:
        raise SchemaError(f"{path}: checkpoint scaler is missing {e}") from None
    if scaler.mean.shape != (config.input_dim,) or scaler.scale.shape != (config.input_dim,):
        raise SchemaError(f"{path}: scaler vectors must have length {config.input_dim}")
    return Checkpoint(
        model_config=config,
        params=skeleton.with_leaves(leaves),
        scaler=scaler,
        feature_names=list(labels["feature_names"]),
        condition_names=list(labels["condition_names"]),
        domain_names=list(labels["domain_names"]),
        train_seed=int(doc["train_seed"]),
        final_epoch=int(doc["final_epoch"]),
    )


def _align_conditions(dataset: Dataset, ckpt: Checkpoint, path) -> Dataset:
    """Remap a file's first-appearance condition indices onto the trained vocabulary."""
    mapping = []
    for name in dataset.condition_names:
        if name not in ckpt.condition_names:
            raise SchemaError(f"{path}: condition {name!r} was not seen in training")
        mapping.append(ckpt.condition_names.index(name))
    aligned = dataset.subset(np.arange(len(dataset)))
    aligned.condition = np.array([mapping[c] for c in dataset.condition], dtype=np.int64)
    aligned.condition_names = list(ckpt.condition_names)
    return aligned


def _unify_domains(a: Dataset, b: Dataset) -> tuple[Dataset, Dataset]:
    """Remap both datasets' domain indices onto the union of their name vocabularies."""
    union = list(dict.fromkeys(a.domain_names + b.domain_names))

    def remap(ds):
        mapping = [union.index(name) for name in ds.domain_names]
        out = ds.subset(np.arange(len(ds)))
        out.domain = np.array([mapping[d] for d in ds.domain], dtype=np.int64)
        out.domain_names = union
        return out

    return remap(a), remap(b)


# ---- commands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = parse_synthetic_spec(_load_json(args.spec))
    if spec.condition_count < 2:
        raise ConfigError("synthetic.condition_count must be >= 2: nothing to transform")
    dataset, truth = synth_shift(spec)
    write_csv(dataset, args.out)
    truth_path = args.truth or str(Path(args.out).with_suffix("")) + "_truth.json"
    cells = [
        {
            "domain": d,
            "condition": s,
            "mean": [float(v) for v in truth[(d, s)]["mean"]],
            "var": [float(v) for v in truth[(d, s)]["var"]],
        }
        for d in range(spec.domain_count)
        for s in range(spec.condition_count)
    ]
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump({"cells": cells}, fh, indent=1)
        fh.write("\n")
    print(f"wrote {args.out} ({len(dataset)} rows) and {truth_path}")
    return 0


def run_training(run: RunConfig):
    """Shared pipeline: load -> split -> standardize -> train. Returns artifacts."""
    if run.csv_source is not None:
        dataset = load_csv(
            run.csv_source["path"],
            condition_col=run.csv_source["condition_col"],
            domain_col=run.csv_source["domain_col"],
        )
    else:
        dataset, _ = synth_shift(run.synthetic)

    plan = [
        (
            _resolve_label(d, dataset.domain_names, "domain"),
            _resolve_label(s, dataset.condition_names, "condition"),
        )
        for d, s in run.holdout
    ]
    train_ds, heldout = split_holdout(dataset, plan)
    std, scaler = standardize(train_ds)
    config = finalize_model_config(
        run.model_section, dataset.n_features, len(dataset.condition_names)
    )
    params, trace = train(std, config, run.train_config)
    ckpt = Checkpoint(
        model_config=config,
        params=params,
        scaler=scaler,
        feature_names=dataset.feature_names,
        condition_names=dataset.condition_names,
        domain_names=dataset.domain_names,
        train_seed=run.train_config.seed,
        final_epoch=len(trace.epochs()),
    )
    return ckpt, trace, train_ds, heldout


def cmd_train(args) -> int:
    doc = _load_json(args.config)
    run = parse_run_config(doc)
    seed_override = os.environ.get("TRVAE_SEED")
    if args.seed is not None:
        run.train_config = replace(run.train_config, seed=int(args.seed))
    elif seed_override is not None:
        run.train_config = replace(run.train_config, seed=int(seed_override))
    if args.out is not None:
        run.output_dir = args.out

    out_dir = Path(run.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt, trace, _, _ = run_training(run)

    ckpt_path = out_dir / "checkpoint.json"
    trace_path = out_dir / "loss_trace.csv"
    save_checkpoint(ckpt, ckpt_path)
    trace.to_csv(trace_path)

    effective = dict(doc)
    effective.setdefault("train", {})
    effective["train"] = {**effective["train"], "seed": run.train_config.seed}
    effective["output_dir"] = str(run.output_dir)
    canonical = json.dumps(effective, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": "train",
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": run.train_config.seed,
        "versions": {
            "mmdcvae": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "artifacts": {"checkpoint": ckpt_path.name, "loss_trace": trace_path.name},
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    print(f"wrote {ckpt_path}, {trace_path}, {out_dir / 'manifest.json'}")
    return 0


def _load_aligned(path, ckpt: Checkpoint, args) -> Dataset:
    ds = load_csv(path, condition_col=args.condition_col, domain_col=args.domain_col)
    if ds.n_features != ckpt.model_config.input_dim:
        raise DimensionError(
            f"{path}: expected {ckpt.model_config.input_dim} feature columns, got {ds.n_features}"
        )
    return _align_conditions(ds, ckpt, path)


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    s_src = _resolve_label(args.source_condition, ckpt.condition_names, "condition")
    s_tgt = _resolve_label(args.target_condition, ckpt.condition_names, "condition")
    ds = _load_aligned(args.input, ckpt, args)
    if not np.all(ds.condition == s_src):
        raise ContractError(
            f"{args.input}: every row must have source condition "
            f"{ckpt.condition_names[s_src]!r}"
        )
    pred = ckpt.scaler.inverse(
        predict_transform(ckpt.params, ckpt.model_config, ckpt.scaler.transform(ds.x), s_src, s_tgt)
    )
    write_matrix_csv(pred, ds.feature_names, args.out)
    print(f"wrote {args.out} ({len(ds)} rows)")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    s_src = _resolve_label(args.source_condition, ckpt.condition_names, "condition")
    s_tgt = _resolve_label(args.target_condition, ckpt.condition_names, "condition")
    truth = _load_aligned(args.truth, ckpt, args)

    if args.pred:
        pred, _names = load_matrix_csv(args.source)
        if pred.shape[1] != truth.n_features:
            raise DimensionError(
                f"{args.source}: prediction has {pred.shape[1]} features, truth has {truth.n_features}"
            )
        means_pred, vars_pred = per_dim_stats(pred)
        means_true, vars_true = per_dim_stats(truth.x)
        report = EvalReport(
            r_mean=pearson(means_pred, means_true),
            r_var=pearson(vars_pred, vars_true),
            n_source=pred.shape[0],
            n_target=len(truth),
            means_pred=means_pred,
            means_true=means_true,
            vars_pred=vars_pred,
            vars_true=vars_true,
        )
    else:
        source = _load_aligned(args.source, ckpt, args)
        source, truth = _unify_domains(source, truth)
        report = evaluate_transform(
            ckpt.params, ckpt.model_config, source, truth, s_src, s_tgt, ckpt.scaler
        )

    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")
    print(f"r_mean={report.r_mean:.6f} r_var={report.r_var:.6f} -> {args.report}")

    if args.embed:
        if args.pred:
            raise ConfigError("--embed needs model inputs; it cannot be used with --pred")
        combined = Dataset(
            x=np.concatenate([source.x, truth.x]),
            condition=np.concatenate([source.condition, truth.condition]),
            domain=np.concatenate([source.domain, truth.domain]),
            feature_names=source.feature_names,
            condition_names=source.condition_names,
            domain_names=source.domain_names,
        )
        out = args.embed_out or str(Path(args.report).with_suffix("")) + f"_embed_{args.embed}.csv"
        export_embeddings(ckpt.params, ckpt.model_config, combined, args.embed, out, ckpt.scaler)
        print(f"wrote {out}")
    return 0


def cmd_embed(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = _load_aligned(args.input, ckpt, args)
    export_embeddings(ckpt.params, ckpt.model_config, ds, args.layer, args.out, ckpt.scaler)
    print(f"wrote {args.out} ({len(ds)} rows)")
    return 0


# ---- gradient check -------------------------------------------------------------


@contextmanager
def _corrupted_exp_backward():
    """Negative-control hook: breaks the exp backward rule on purpose."""
    original = Tensor.exp

    def bad_exp(self):
        y = np.exp(self.data)

        def backward(out):
            self.grad += out.grad * y * 1.01

        return Tensor._node(y, (self,), backward)

    Tensor.exp = bad_exp
    try:
        yield
    finally:
        Tensor.exp = original


GRADCHECK_SIZES = {
    # (input_dim, encoder_hidden, z_dim, g1_dim, g2_hidden, batch)
    "toy": (20, (12,), 4, 8, (12,), 8),
    "small": (6, (5,), 2, 3, (5,), 4),
}


def run_loss_gradcheck(size: str = "toy", corrupt: bool = False) -> float:
    """Gradient check of the full training loss on a fixed seeded network."""
    input_dim, enc, z_dim, g1_dim, g2, batch = GRADCHECK_SIZES[size]
    config = ModelConfig(
        input_dim=input_dim,
        condition_count=2,
        encoder_hidden=enc,
        z_dim=z_dim,
        g1_dim=g1_dim,
        g2_hidden=g2,
        alpha=1.0,
        eta=1.0,
        beta=1.0,
        mmd_layer="y1",
    )
    rng = np.random.Generator(np.random.Philox(20240921))
    params = init_params(config, rng)
    x = rng.standard_normal((batch, input_dim))
    s = np.arange(batch) % 2
    eps = rng.standard_normal((batch, z_dim))

    def build(ts):
        total, _ = batch_loss(params.with_leaves(ts), config, x, s, eps)
        return total

    if corrupt:
        with _corrupted_exp_backward():
            return grad_check(build, params.leaves(), h=1e-4)
    return grad_check(build, params.leaves(), h=1e-4)


def cmd_gradcheck(args) -> int:
    err = run_loss_gradcheck(size=args.size, corrupt=args.corrupt)
    status = "PASS" if err < 1e-5 else "FAIL"
    print(f"max_rel_error={err!r} threshold=1e-05 {status}")
    return 0 if err < 1e-5 else 1


# ---- argument parsing ----------------------------------------------------------


def _add_schema_flags(p):
    p.add_argument("--condition-col", default="condition", help="condition column name")
    p.add_argument("--domain-col", default="domain", help="domain column name")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmdcvae",
        description="MMD-regularized conditional VAE for out-of-sample condition transfer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("spec", help="synthetic spec JSON")
    p.add_argument("out", help="output dataset CSV")
    p.add_argument("--truth", default=None, help="ground-truth JSON path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("config", help="run config JSON")
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument("--seed", default=None, type=int, help="override training seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="transform rows from one condition to another")
    p.add_argument("checkpoint")
    p.add_argument("input", help="labeled CSV of source-condition rows")
    p.add_argument("out", help="output CSV of transformed features")
    p.add_argument("--source-condition", required=True)
    p.add_argument("--target-condition", required=True)
    _add_schema_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a transformation against ground truth")
    p.add_argument("checkpoint")
    p.add_argument("source", help="labeled CSV of source rows (or prediction CSV with --pred)")
    p.add_argument("truth", help="labeled CSV of true target rows")
    p.add_argument("--source-condition", required=True)
    p.add_argument("--target-condition", required=True)
    p.add_argument("--report", default="report.json", help="output report JSON")
    p.add_argument("--pred", action="store_true", help="source CSV is a precomputed prediction matrix")
    p.add_argument("--embed", choices=["z", "y1"], default=None, help="also export embeddings")
    p.add_argument("--embed-out", default=None)
    _add_schema_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", help="export per-row activations at a layer")
    p.add_argument("checkpoint")
    p.add_argument("input", help="labeled CSV")
    p.add_argument("out", help="output embedding CSV")
    p.add_argument("--layer", choices=["z", "y1"], required=True)
    _add_schema_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss gradient")
    p.add_argument("--size", choices=sorted(GRADCHECK_SIZES), default="toy")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (SchemaError, ParseError, DimensionError, ContractError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
