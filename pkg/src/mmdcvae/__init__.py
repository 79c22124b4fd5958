"""MMD-regularized conditional VAE for out-of-sample condition transfer."""

__version__ = "0.1.0"

from .data import Dataset, Scaler, SyntheticSpec, load_csv, split_holdout, standardize, synth_shift
from .evaluate import EvalReport, compactness_report, evaluate_transform, pearson, per_dim_stats
from .mmd import KernelSpec, mmd, mmd_multigroup, multi_scale_kernel, rbf_kernel
from .model import ModelConfig, ModelParams, batch_loss, predict_transform
from .train import TrainConfig, train

__all__ = [
    "Dataset",
    "EvalReport",
    "KernelSpec",
    "ModelConfig",
    "ModelParams",
    "Scaler",
    "SyntheticSpec",
    "TrainConfig",
    "batch_loss",
    "compactness_report",
    "evaluate_transform",
    "load_csv",
    "mmd",
    "mmd_multigroup",
    "multi_scale_kernel",
    "pearson",
    "per_dim_stats",
    "predict_transform",
    "rbf_kernel",
    "split_holdout",
    "standardize",
    "synth_shift",
    "train",
]
