"""Conditional VAE with a distribution-matching penalty on the first decoder layer.

The network factors as encoder -> latent z -> first decoder layer y1 -> rest
of the decoder. The condition label is one-hot concatenated to the encoder
input and to the latent code; the layers after y1 never see it. The training
loss sums a per-condition CVAE objective (Gaussian likelihood, so MSE, plus a
KL term against a standard-normal prior) and adds beta times the multi-group
MMD between per-condition activations at the chosen layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, concat
from .errors import ContractError, DimensionError
from .mmd import KernelSpec, mmd_multigroup

MMD_LAYERS = ("none", "z", "y1")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    condition_count: int
    encoder_hidden: tuple[int, ...] = (128, 64)
    z_dim: int = 10
    g1_dim: int = 64
    g2_hidden: tuple[int, ...] = (128,)
    activation_slope: float = 0.2
    alpha: float = 0.12
    eta: float = 50.0
    beta: float = 25.0
    mmd_layer: str = "y1"
    kernel: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        object.__setattr__(self, "g2_hidden", tuple(int(h) for h in self.g2_hidden))
        dims = (self.input_dim, self.z_dim, self.g1_dim, *self.encoder_hidden, *self.g2_hidden)
        if any(d < 1 for d in dims):
            raise ContractError(f"all layer dims must be >= 1, got {dims}")
        if self.condition_count < 2:
            raise ContractError(f"condition_count must be >= 2, got {self.condition_count}")
        if not 0.0 <= self.activation_slope < 1.0:
            raise ContractError(f"activation_slope must be in [0, 1), got {self.activation_slope}")
        if self.alpha < 0 or self.beta < 0 or self.eta <= 0:
            raise ContractError(
                f"need alpha >= 0, beta >= 0, eta > 0; got {self.alpha}, {self.beta}, {self.eta}"
            )
        if self.mmd_layer not in MMD_LAYERS:
            raise ContractError(f"mmd_layer must be one of {MMD_LAYERS}, got {self.mmd_layer!r}")


@dataclass
class ModelParams:
    """Weights as (w, b) pairs; leaves are ndarrays at rest, Tensors during a pass.

    ``g2`` includes every layer after y1; its last entry is the linear output
    layer. A training step builds a fresh Tensor view with ``tensors()`` and
    produces a new ModelParams from the updated arrays, so a given instance
    never mutates.
    """

    encoder: list
    mu: tuple
    logvar: tuple
    g1: tuple
    g2: list

    def flat(self):
        """Ordered (name, leaf) pairs; the order is the checkpoint/optimizer layout."""
        out = []
        for i, (w, b) in enumerate(self.encoder):
            out += [(f"encoder.{i}.w", w), (f"encoder.{i}.b", b)]
        out += [("mu.w", self.mu[0]), ("mu.b", self.mu[1])]
        out += [("logvar.w", self.logvar[0]), ("logvar.b", self.logvar[1])]
        out += [("g1.w", self.g1[0]), ("g1.b", self.g1[1])]
        for i, (w, b) in enumerate(self.g2):
            out += [(f"g2.{i}.w", w), (f"g2.{i}.b", b)]
        return out

    def leaves(self):
        return [leaf for _, leaf in self.flat()]

    def with_leaves(self, leaves) -> "ModelParams":
        """Rebuild the same layer structure from a flat leaf list (flat() order)."""
        it = iter(leaves)

        def pair():
            return (next(it), next(it))

        return ModelParams(
            encoder=[pair() for _ in self.encoder],
            mu=pair(),
            logvar=pair(),
            g1=pair(),
            g2=[pair() for _ in self.g2],
        )

    def tensors(self) -> "ModelParams":
        if isinstance(self.g1[0], Tensor):
            return self
        return self.with_leaves([Tensor(a, param=True) for a in self.leaves()])


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Expected (name, shape) layout for a given configuration, in flat() order."""
    shapes = []
    fan_in = config.input_dim + config.condition_count
    for i, width in enumerate(config.encoder_hidden):
        shapes += [(f"encoder.{i}.w", (fan_in, width)), (f"encoder.{i}.b", (width,))]
        fan_in = width
    for head in ("mu", "logvar"):
        shapes += [(f"{head}.w", (fan_in, config.z_dim)), (f"{head}.b", (config.z_dim,))]
    shapes += [
        ("g1.w", (config.z_dim + config.condition_count, config.g1_dim)),
        ("g1.b", (config.g1_dim,)),
    ]
    fan_in = config.g1_dim
    for i, width in enumerate((*config.g2_hidden, config.input_dim)):
        shapes += [(f"g2.{i}.w", (fan_in, width)), (f"g2.{i}.b", (width,))]
        fan_in = width
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Seeded uniform weights scaled by sqrt(2 / (fan_in * (1 + slope^2))); zero biases.

    Draw order follows flat(): encoder layers, mu head, logvar head, g1, g2.
    """
    slope = config.activation_slope

    leaves = []
    for name, shape in param_shapes(config):
        if name.endswith(".b"):
            leaves.append(np.zeros(shape))
        else:
            limit = np.sqrt(2.0 / (shape[0] * (1.0 + slope**2)))
            leaves.append(rng.uniform(-limit, limit, size=shape))
    skeleton = ModelParams(
        encoder=[(None, None)] * len(config.encoder_hidden),
        mu=(None, None),
        logvar=(None, None),
        g1=(None, None),
        g2=[(None, None)] * (len(config.g2_hidden) + 1),
    )
    return skeleton.with_leaves(leaves)


@dataclass
class LatentStats:
    """Posterior mean and log-variance heads, shape (batch, z_dim) each."""

    mu: Tensor
    logvar: Tensor

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise DimensionError(f"mu/logvar shapes disagree: {self.mu.shape} vs {self.logvar.shape}")


def one_hot(labels, count: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels))
    if labels.ndim != 1:
        raise ContractError(f"labels must be 1-D, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ContractError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= count):
        raise ContractError(f"label out of range [0, {count}): {labels.min()}..{labels.max()}")
    out = np.zeros((labels.size, count))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _tensorized(params: ModelParams) -> ModelParams:
    return params.tensors()


def encode(params: ModelParams, config: ModelConfig, x, s) -> LatentStats:
    """Posterior heads for inputs x under condition labels s."""
    params = _tensorized(params)
    xt = x if isinstance(x, Tensor) else Tensor(x)
    if xt.data.ndim != 2 or xt.shape[1] != config.input_dim:
        raise DimensionError(f"expected input shape (batch, {config.input_dim}), got {xt.shape}")
    h = concat([xt, Tensor(one_hot(s, config.condition_count))], axis=1)
    for w, b in params.encoder:
        h = (h @ w + b).leaky_relu(config.activation_slope)
    mu = h @ params.mu[0] + params.mu[1]
    logvar = h @ params.logvar[0] + params.logvar[1]
    return LatentStats(mu, logvar)


def reparameterize(stats: LatentStats, eps) -> Tensor:
    """z = mu + exp(logvar / 2) * eps, differentiable in mu and logvar."""
    et = eps if isinstance(eps, Tensor) else Tensor(eps)
    if et.shape != stats.mu.shape:
        raise DimensionError(f"eps shape {et.shape} must match mu shape {stats.mu.shape}")
    return stats.mu + (stats.logvar * 0.5).exp() * et


def decode(params: ModelParams, config: ModelConfig, z, s) -> tuple[Tensor, Tensor]:
    """First decoder layer output y1 and reconstruction xhat.

    y1 is exactly one affine+activation layer over (z, one-hot s); the rest of
    the decoder sees only y1.
    """
    params = _tensorized(params)
    zt = z if isinstance(z, Tensor) else Tensor(z)
    if zt.data.ndim != 2 or zt.shape[1] != config.z_dim:
        raise DimensionError(f"expected latent shape (batch, {config.z_dim}), got {zt.shape}")
    zc = concat([zt, Tensor(one_hot(s, config.condition_count))], axis=1)
    y1 = (zc @ params.g1[0] + params.g1[1]).leaky_relu(config.activation_slope)
    h = y1
    for w, b in params.g2[:-1]:
        h = (h @ w + b).leaky_relu(config.activation_slope)
    w, b = params.g2[-1]
    xhat = h @ w + b
    return y1, xhat


def kl_divergence(stats: LatentStats) -> Tensor:
    """Batch-mean KL(q(z|x,s) || N(0, I)) = mean of 0.5 * sum_j(exp(lv) + mu^2 - 1 - lv)."""
    per_row = (stats.logvar.exp() + stats.mu.square() - 1.0 - stats.logvar).sum(axis=1)
    return per_row.mean() * 0.5


def cvae_loss(x, xhat, stats: LatentStats, alpha: float, eta: float) -> Tensor:
    """eta * MSE(x, xhat) + alpha * KL; the minimization form of the CVAE objective."""
    xt = x if isinstance(x, Tensor) else Tensor(x)
    if xt.shape != xhat.shape:
        raise DimensionError(f"x and xhat shapes disagree: {xt.shape} vs {xhat.shape}")
    mse = (xhat - xt).square().mean()
    return mse * eta + kl_divergence(stats) * alpha


@dataclass
class LossParts:
    """Raw (unweighted) loss components; total = eta*recon + alpha*kl + beta*mmd."""

    total: float
    recon: float
    kl: float
    mmd: float
    mmd_skipped: bool


def batch_loss(params: ModelParams, config: ModelConfig, x, s, eps) -> tuple[Tensor, LossParts]:
    """Full training loss on one minibatch.

    Sums the per-condition CVAE losses for every condition present, then adds
    beta times the multi-group MMD between per-condition activations at
    ``config.mmd_layer``. With fewer than two conditions in the batch the MMD
    term is skipped and flagged in the returned parts.
    """
    params = _tensorized(params)
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s)
    eps = np.asarray(eps, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ContractError(f"batch must be a non-empty matrix, got shape {x.shape}")
    if s.shape != (x.shape[0],):
        raise DimensionError(f"labels shape {s.shape} must be ({x.shape[0]},)")
    if eps.shape != (x.shape[0], config.z_dim):
        raise DimensionError(f"eps shape {eps.shape} must be ({x.shape[0]}, {config.z_dim})")

    recon, kl = None, None
    groups = []
    for c in np.unique(s):
        idx = np.flatnonzero(s == c)
        stats = encode(params, config, x[idx], s[idx])
        z = reparameterize(stats, eps[idx])
        y1, xhat = decode(params, config, z, s[idx])
        mse_c = (xhat - Tensor(x[idx])).square().mean()
        kl_c = kl_divergence(stats)
        recon = mse_c if recon is None else recon + mse_c
        kl = kl_c if kl is None else kl + kl_c
        if config.mmd_layer == "z":
            groups.append(z)
        elif config.mmd_layer == "y1":
            groups.append(y1)

    total = recon * config.eta + kl * config.alpha
    mmd_value, mmd_skipped = 0.0, True
    if config.mmd_layer != "none" and len(groups) >= 2:
        penalty = mmd_multigroup(groups, config.kernel)
        total = total + penalty * config.beta
        mmd_value, mmd_skipped = penalty.item(), False
    parts = LossParts(
        total=total.item(),
        recon=recon.item(),
        kl=kl.item(),
        mmd=mmd_value,
        mmd_skipped=mmd_skipped,
    )
    return total, parts


def predict_transform(params: ModelParams, config: ModelConfig, x, s_src: int, s_tgt: int) -> np.ndarray:
    """Deterministic condition transfer: encode under s_src, decode under s_tgt.

    Uses the posterior mean (no sampling), so repeated calls are bit-identical.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    src = np.full(n, int(s_src))
    tgt = np.full(n, int(s_tgt))
    params = _tensorized(params)
    stats = encode(params, config, x, src)
    _, xhat = decode(params, config, stats.mu, tgt)
    return xhat.data


def config_with(config: ModelConfig, **kwargs) -> ModelConfig:
    """Copy a config with some fields replaced (ablation switches)."""
    return replace(config, **kwargs)
