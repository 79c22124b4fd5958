"""Out-of-sample evaluation: transform held-out rows, score against ground truth.

Scores are Pearson correlations between per-feature mean vectors (and
variance vectors) of the transformed source population and the true target
population, computed in the original units of the input data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Dataset, Scaler
from .errors import ContractError, DimensionError
from .mmd import mmd
from .model import ModelConfig, ModelParams, decode, encode, predict_transform


def per_dim_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column sample mean and unbiased variance; needs at least two rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ContractError(f"need a matrix with >= 2 rows, got shape {x.shape}")
    return x.mean(axis=0), x.var(axis=0, ddof=1)


def pearson(a, b) -> float:
    """Sample Pearson correlation of two equal-length, non-constant vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"need equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ContractError("pearson needs at least 2 entries")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0.0:
        raise ContractError("pearson is undefined for a constant input")
    return float((da * db).sum() / denom)


@dataclass
class EvalReport:
    r_mean: float
    r_var: float
    n_source: int
    n_target: int
    means_pred: np.ndarray
    means_true: np.ndarray
    vars_pred: np.ndarray
    vars_true: np.ndarray

    def to_dict(self) -> dict:
        return {
            "r_mean": self.r_mean,
            "r_var": self.r_var,
            "n_source": self.n_source,
            "n_target": self.n_target,
            "means_pred": [float(v) for v in self.means_pred],
            "means_true": [float(v) for v in self.means_true],
            "vars_pred": [float(v) for v in self.vars_pred],
            "vars_true": [float(v) for v in self.vars_true],
        }


def evaluate_transform(
    params: ModelParams,
    config: ModelConfig,
    heldout_source: Dataset,
    ground_truth_target: Dataset,
    s_src: int,
    s_tgt: int,
    scaler: Scaler | None = None,
) -> EvalReport:
    """Transform source rows s_src -> s_tgt and score against the true target rows.

    The model operates in scaler units when a scaler is given; statistics and
    correlations are always computed in original units.
    """
    if heldout_source.n_features != ground_truth_target.n_features:
        raise DimensionError(
            f"feature dims disagree: {heldout_source.n_features} vs {ground_truth_target.n_features}"
        )
    if not np.all(heldout_source.condition == s_src):
        raise ContractError(f"every source row must have condition {s_src}")
    if not np.all(ground_truth_target.condition == s_tgt):
        raise ContractError(f"every truth row must have condition {s_tgt}")
    if set(np.unique(heldout_source.domain)) != set(np.unique(ground_truth_target.domain)):
        raise ContractError("source and truth must cover the same domains")

    xs = heldout_source.x if scaler is None else scaler.transform(heldout_source.x)
    pred = predict_transform(params, config, xs, s_src, s_tgt)
    if scaler is not None:
        pred = scaler.inverse(pred)
    means_pred, vars_pred = per_dim_stats(pred)
    means_true, vars_true = per_dim_stats(ground_truth_target.x)
    return EvalReport(
        r_mean=pearson(means_pred, means_true),
        r_var=pearson(vars_pred, vars_true),
        n_source=len(heldout_source),
        n_target=len(ground_truth_target),
        means_pred=means_pred,
        means_true=means_true,
        vars_pred=vars_pred,
        vars_true=vars_true,
    )


@dataclass
class CompactnessReport:
    """Cross-condition MMD per layer; keys are (condition_i, condition_j) pairs."""

    z: dict
    y1: dict


def _layer_activations(params: ModelParams, config: ModelConfig, dataset: Dataset, scaler):
    xs = dataset.x if scaler is None else scaler.transform(dataset.x)
    tensors = params.tensors()
    stats = encode(tensors, config, xs, dataset.condition)
    z = stats.mu.data
    y1, _ = decode(tensors, config, stats.mu, dataset.condition)
    return z, y1.data


def compactness_report(
    params: ModelParams,
    config: ModelConfig,
    dataset: Dataset,
    scaler: Scaler | None = None,
) -> CompactnessReport:
    """MMD between per-condition groups at the bottleneck and first decoder layer.

    Rows are encoded to their posterior means; y1 uses each row's own label.
    """
    conditions = np.unique(dataset.condition)
    if len(conditions) < 2:
        raise ContractError("compactness needs at least 2 conditions present")
    z, y1 = _layer_activations(params, config, dataset, scaler)
    report = CompactnessReport(z={}, y1={})
    for i in range(len(conditions)):
        for j in range(i + 1, len(conditions)):
            a, b = conditions[i], conditions[j]
            mask_a, mask_b = dataset.condition == a, dataset.condition == b
            key = (int(a), int(b))
            report.z[key] = mmd(z[mask_a], z[mask_b], config.kernel)
            report.y1[key] = mmd(y1[mask_a], y1[mask_b], config.kernel)
    return report


def export_embeddings(
    params: ModelParams,
    config: ModelConfig,
    dataset: Dataset,
    layer: str,
    path,
    scaler: Scaler | None = None,
):
    """Write per-row activations at ``layer`` ('z' or 'y1') with label columns."""
    if layer not in ("z", "y1"):
        raise ContractError(f"layer must be 'z' or 'y1', got {layer!r}")
    z, y1 = _layer_activations(params, config, dataset, scaler)
    matrix = z if layer == "z" else y1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"dim_{k}" for k in range(matrix.shape[1])] + ["condition", "domain"])
        for i in range(len(dataset)):
            writer.writerow(
                [repr(float(v)) for v in matrix[i]]
                + [dataset.condition_names[dataset.condition[i]], dataset.domain_names[dataset.domain[i]]]
            )
