"""Deterministic minibatch training: Adam, stratified batches, loss trace.

All randomness (weight init, batch order, reparameterization noise) comes
from one Philox counter-based generator seeded by the config. The draw order
is fixed: init first, then per epoch the batch shuffle, then one eps matrix
per step. Repeated runs with the same inputs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import gradients
from .data import Dataset
from .errors import ContractError, NumericError
from .model import ModelConfig, batch_loss, init_params


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 60
    batch_size: int = 64
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    early_stop_patience: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ContractError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 2:
            raise ContractError(f"batch_size must be >= 2, got {self.batch_size}")
        b1, b2 = self.adam_betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise ContractError(f"adam betas must be in (0, 1), got {self.adam_betas}")
        if self.adam_epsilon <= 0:
            raise ContractError(f"adam_epsilon must be positive, got {self.adam_epsilon}")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ContractError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        object.__setattr__(self, "adam_betas", (float(b1), float(b2)))


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @staticmethod
    def initial(arrays) -> "AdamState":
        return AdamState(m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays])


def adam_step(arrays, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; returns fresh arrays and a fresh state."""
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ContractError("parameter, gradient, and state lists must align")
    for a, g in zip(arrays, grads):
        if a.shape != g.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {a.shape}")
    b1, b2 = config.adam_betas
    t = state.t + 1
    new_arrays, new_m, new_v = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_arrays.append(a - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_arrays, AdamState(m=new_m, v=new_v, t=t)


def make_batches(dataset: Dataset, batch_size: int, rng: np.random.Generator):
    """Condition-stratified shuffled index batches covering every row once.

    Each condition's shuffled indices are dealt into ceil(n / batch_size)
    chunks whose sizes differ by at most one, so per-batch condition
    proportions track the dataset's.
    """
    n = len(dataset)
    if n == 0:
        raise ContractError("cannot batch an empty dataset")
    if batch_size > n:
        raise ContractError(f"batch_size {batch_size} exceeds dataset size {n}")
    n_batches = -(-n // batch_size)
    batches = [[] for _ in range(n_batches)]
    for c in np.unique(dataset.condition):
        idx = np.flatnonzero(dataset.condition == c)
        rng.shuffle(idx)
        for i, chunk in enumerate(np.array_split(idx, n_batches)):
            batches[i].append(chunk)
    return [np.concatenate(parts) for parts in batches]


@dataclass
class StepRecord:
    epoch: int
    step: int
    total: float
    recon: float
    kl: float
    mmd: float


@dataclass
class LossTrace:
    records: list[StepRecord] = field(default_factory=list)

    def append(self, record: StepRecord):
        self.records.append(record)

    def epoch_mean_total(self, epoch: int) -> float:
        totals = [r.total for r in self.records if r.epoch == epoch]
        return float(np.mean(totals))

    def epoch_mean_mmd(self, epoch: int) -> float:
        values = [r.mmd for r in self.records if r.epoch == epoch]
        return float(np.mean(values))

    def epochs(self) -> list[int]:
        return sorted({r.epoch for r in self.records})

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,step,total,recon,kl,mmd\n")
            for r in self.records:
                fh.write(f"{r.epoch},{r.step},{r.total!r},{r.recon!r},{r.kl!r},{r.mmd!r}\n")


def train(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig):
    """Train on a (already preprocessed) dataset; returns (params, trace)."""
    if dataset.n_features != model_config.input_dim:
        raise ContractError(
            f"dataset has {dataset.n_features} features but model expects {model_config.input_dim}"
        )
    if len(dataset) and dataset.condition.max() >= model_config.condition_count:
        raise ContractError("dataset condition label exceeds model condition_count")

    rng = np.random.Generator(np.random.Philox(train_config.seed))
    params = init_params(model_config, rng)
    state = AdamState.initial(params.leaves())
    trace = LossTrace()

    best = np.inf
    stale = 0
    for epoch in range(train_config.epochs):
        batches = make_batches(dataset, train_config.batch_size, rng)
        for step, idx in enumerate(batches):
            eps = rng.standard_normal((len(idx), model_config.z_dim))
            leaves = params.tensors()
            total, parts = batch_loss(leaves, model_config, dataset.x[idx], dataset.condition[idx], eps)
            if not np.isfinite(parts.total):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step}: total={parts.total} "
                    f"recon={parts.recon} kl={parts.kl} mmd={parts.mmd}"
                )
            grads = gradients(total, leaves.leaves())
            arrays, state = adam_step(params.leaves(), grads, state, train_config)
            params = params.with_leaves(arrays)
            trace.append(StepRecord(epoch, step, parts.total, parts.recon, parts.kl, parts.mmd))
        if train_config.early_stop_patience is not None:
            epoch_mean = trace.epoch_mean_total(epoch)
            if epoch_mean < best - 1e-12:
                best, stale = epoch_mean, 0
            else:
                stale += 1
                if stale >= train_config.early_stop_patience:
                    break
    return params, trace
