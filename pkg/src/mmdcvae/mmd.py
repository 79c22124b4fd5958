"""Multi-scale RBF kernels and the biased maximum mean discrepancy estimator.

The estimator is the V-statistic form: self-pair kernel terms are included,
which keeps the value nonnegative. ``mmd`` doubles as a differentiable loss
term: pass autodiff Tensors and it returns a graph node; pass plain arrays
and it returns a float.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, DimensionError

DEFAULT_GAMMAS = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class KernelSpec:
    """Bandwidth grid for the multi-scale RBF kernel k(x,x') = sum_i exp(-gamma_i ||x-x'||^2)."""

    gammas: tuple[float, ...] = DEFAULT_GAMMAS

    def __post_init__(self):
        if len(self.gammas) < 1:
            raise ContractError("kernel needs at least one bandwidth")
        if any(g <= 0 for g in self.gammas):
            raise ContractError(f"kernel bandwidths must be positive, got {self.gammas}")
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))


def rbf_kernel(x, y, gamma: float) -> float:
    """Gaussian kernel exp(-gamma * ||x - y||^2) between two vectors."""
    if gamma <= 0:
        raise ContractError(f"gamma must be positive, got {gamma}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"vector shapes disagree: {x.shape} vs {y.shape}")
    return float(np.exp(-gamma * np.sum((x - y) ** 2)))


def multi_scale_kernel(x, y, spec: KernelSpec) -> float:
    """Sum of RBF kernels over the bandwidth grid; in (0, len(gammas)]."""
    return sum(rbf_kernel(x, y, g) for g in spec.gammas)


def _as_matrix(m, label: str):
    arr = m.data if isinstance(m, Tensor) else np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{label} must be a 2-D sample matrix, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ContractError(f"{label} must contain at least one sample")
    return arr


def _pair_mean_graph(a: Tensor, b: Tensor, spec: KernelSpec) -> Tensor:
    n, m = a.shape[0], b.shape[0]
    aa = a.square().sum(axis=1, keepdims=True)
    bb = b.square().sum(axis=1, keepdims=True)
    dists = aa @ Tensor(np.ones((1, m))) + Tensor(np.ones((n, 1))) @ bb.T - (a @ b.T) * 2.0
    kernel = (dists * (-spec.gammas[0])).exp()
    for gamma in spec.gammas[1:]:
        kernel = kernel + (dists * (-gamma)).exp()
    return kernel.sum() * (1.0 / (n * m))


def _pair_mean_array(a: np.ndarray, b: np.ndarray, spec: KernelSpec) -> float:
    n, m = a.shape[0], b.shape[0]
    aa = np.square(a).sum(axis=1, keepdims=True)
    bb = np.square(b).sum(axis=1, keepdims=True)
    dists = aa @ np.ones((1, m)) + np.ones((n, 1)) @ bb.T - (a @ b.T) * 2.0
    kernel = np.exp(dists * (-spec.gammas[0]))
    for gamma in spec.gammas[1:]:
        kernel = kernel + np.exp(dists * (-gamma))
    return float(kernel.sum()) * (1.0 / (n * m))


def mmd(a, b, spec: KernelSpec):
    """Biased (V-statistic) MMD between two sample matrices.

    mean_k(a,a) + mean_k(b,b) - 2*mean_k(a,b) with self-pairs included.
    Returns a differentiable Tensor node when either input is a Tensor,
    otherwise a plain float.
    """
    arr_a = _as_matrix(a, "group a")
    arr_b = _as_matrix(b, "group b")
    if arr_a.shape[1] != arr_b.shape[1]:
        raise DimensionError(
            f"sample groups have different feature dims: {arr_a.shape[1]} vs {arr_b.shape[1]}"
        )
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        ta = a if isinstance(a, Tensor) else Tensor(arr_a)
        tb = b if isinstance(b, Tensor) else Tensor(arr_b)
        return (
            _pair_mean_graph(ta, ta, spec)
            + _pair_mean_graph(tb, tb, spec)
            - _pair_mean_graph(ta, tb, spec) * 2.0
        )
    return (
        _pair_mean_array(arr_a, arr_a, spec)
        + _pair_mean_array(arr_b, arr_b, spec)
        - _pair_mean_array(arr_a, arr_b, spec) * 2.0
    )


def mmd_multigroup(groups, spec: KernelSpec):
    """Sum of pairwise MMD over all unordered pairs of sample groups."""
    groups = list(groups)
    if len(groups) < 2:
        raise ContractError(f"need at least 2 groups, got {len(groups)}")
    total = None
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            pair = mmd(groups[i], groups[j], spec)
            total = pair if total is None else total + pair
    return total
