"""Datasets: CSV ingestion, synthetic benchmark generation, splits, scaling.

CSV format: UTF-8, comma-separated, one header row. Feature columns are
numeric; the condition and domain columns hold label strings that are mapped
to dense indices in order of first appearance. Non-finite feature values are
rejected.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParseError, SchemaError


@dataclass
class Dataset:
    x: np.ndarray                 # (n, p) float64
    condition: np.ndarray         # (n,) int64
    domain: np.ndarray            # (n,) int64
    feature_names: list[str]
    condition_names: list[str]
    domain_names: list[str]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.condition = np.asarray(self.condition, dtype=np.int64)
        self.domain = np.asarray(self.domain, dtype=np.int64)
        n = self.x.shape[0]
        if self.x.ndim != 2:
            raise ContractError(f"x must be 2-D, got shape {self.x.shape}")
        if self.condition.shape != (n,) or self.domain.shape != (n,):
            raise ContractError("condition/domain labels must have one entry per row")
        if len(self.feature_names) != self.x.shape[1]:
            raise ContractError(
                f"{len(self.feature_names)} feature names for {self.x.shape[1]} columns"
            )
        if not np.all(np.isfinite(self.x)):
            raise ContractError("dataset contains non-finite values")
        if n:
            if self.condition.min() < 0 or self.condition.max() >= len(self.condition_names):
                raise ContractError("condition label out of range")
            if self.domain.min() < 0 or self.domain.max() >= len(self.domain_names):
                raise ContractError("domain label out of range")

    def __len__(self):
        return self.x.shape[0]

    @property
    def n_features(self):
        return self.x.shape[1]

    def subset(self, mask) -> "Dataset":
        """Row subset in stable order; label vocabularies are kept unchanged."""
        mask = np.asarray(mask)
        return Dataset(
            x=self.x[mask].copy(),
            condition=self.condition[mask].copy(),
            domain=self.domain[mask].copy(),
            feature_names=list(self.feature_names),
            condition_names=list(self.condition_names),
            domain_names=list(self.domain_names),
        )


def load_csv(path, condition_col: str = "condition", domain_col: str = "domain") -> Dataset:
    """Parse a labeled feature matrix; label indices follow first appearance."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        for col in (condition_col, domain_col):
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        cond_idx = header.index(condition_col)
        dom_idx = header.index(domain_col)
        feature_idx = [i for i in range(len(header)) if i not in (cond_idx, dom_idx)]
        feature_names = [header[i] for i in feature_idx]

        rows, conditions, domains = [], [], []
        cond_map: dict[str, int] = {}
        dom_map: dict[str, int] = {}
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}:{row_no}: expected {len(header)} cells, got {len(row)}")
            values = []
            for i in feature_idx:
                try:
                    v = float(row[i])
                except ValueError:
                    raise ParseError(
                        f"{path}:{row_no}: non-numeric value {row[i]!r} in column {header[i]!r}"
                    ) from None
                if not np.isfinite(v):
                    raise ParseError(f"{path}:{row_no}: non-finite value in column {header[i]!r}")
                values.append(v)
            rows.append(values)
            conditions.append(cond_map.setdefault(row[cond_idx], len(cond_map)))
            domains.append(dom_map.setdefault(row[dom_idx], len(dom_map)))

    if not rows:
        raise ParseError(f"{path}: no data rows")
    return Dataset(
        x=np.array(rows, dtype=np.float64),
        condition=np.array(conditions, dtype=np.int64),
        domain=np.array(domains, dtype=np.int64),
        feature_names=feature_names,
        condition_names=list(cond_map),
        domain_names=list(dom_map),
    )


def write_csv(dataset: Dataset, path, condition_col: str = "condition", domain_col: str = "domain"):
    """Inverse of load_csv; floats use repr so values round-trip exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*dataset.feature_names, condition_col, domain_col])
        for i in range(len(dataset)):
            writer.writerow(
                [repr(float(v)) for v in dataset.x[i]]
                + [dataset.condition_names[dataset.condition[i]], dataset.domain_names[dataset.domain[i]]]
            )


def write_matrix_csv(x: np.ndarray, feature_names, path):
    """Feature matrix only (prediction output); repr floats, no label columns."""
    x = np.asarray(x)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(feature_names))
        for row in x:
            writer.writerow([repr(float(v)) for v in row])


def load_matrix_csv(path) -> tuple[np.ndarray, list[str]]:
    """Read a feature-only CSV written by write_matrix_csv."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        rows = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}:{row_no}: expected {len(header)} cells, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ParseError(f"{path}:{row_no}: non-numeric cell") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64), header


@dataclass(frozen=True)
class SyntheticSpec:
    """Benchmark generator: domain clusters sharing a sparse condition response.

    Every domain is a Gaussian cluster around its own seeded mean. Within-
    cluster variation is low-rank (a shared factor basis with per-feature
    amplitudes in [0.5, 1.5]), mimicking structured tabular data. Each
    non-control condition applies one response shared by all domains: a
    sparse shift of size ~ shift_magnitude plus a mild per-feature scaling
    whose log-sd is 0.15 * shift_magnitude, then isotropic observation noise
    is added. Setting shift_magnitude to 0 turns the response off entirely.
    """

    domain_count: int = 3
    condition_count: int = 2
    dims: int = 100
    samples_per_cell: int = 500
    domain_separation: float = 2.0
    shift_magnitude: float = 3.5
    response_sparsity: float = 0.4
    noise_sd: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if min(self.domain_count, self.condition_count, self.dims, self.samples_per_cell) < 1:
            raise ContractError("all synthetic counts must be >= 1")
        if not 0.0 < self.response_sparsity <= 1.0:
            raise ContractError(f"response_sparsity must be in (0, 1], got {self.response_sparsity}")
        if self.noise_sd <= 0:
            raise ContractError(f"noise_sd must be positive, got {self.noise_sd}")


FACTOR_RANK = 8  # rank of the within-cluster covariance in synth_shift


def synth_shift(spec: SyntheticSpec) -> tuple[Dataset, dict]:
    """Generate the benchmark dataset plus exact per-(domain, condition) truth.

    Returns (dataset, truth) where truth maps (domain, condition) to the
    population ``mean`` and ``var`` vectors. Row order is domain-major, then
    condition, then sample index. Bit-identical for a fixed spec.
    """
    rng = np.random.Generator(np.random.Philox(spec.seed))
    p = spec.dims

    domain_means = spec.domain_separation * rng.standard_normal((spec.domain_count, p))
    rank = min(FACTOR_RANK, p)
    basis = rng.standard_normal((rank, p)) / np.sqrt(rank)
    base_sd = rng.uniform(0.5, 1.5, size=p)
    factor_var = base_sd**2 * np.square(basis).sum(axis=0)

    scales = np.ones((spec.condition_count, p))
    shifts = np.zeros((spec.condition_count, p))
    for s in range(1, spec.condition_count):
        mask = rng.random(p) < spec.response_sparsity
        shifts[s] = mask * (spec.shift_magnitude * rng.standard_normal(p))
        scales[s] = np.exp(mask * (0.15 * spec.shift_magnitude * rng.standard_normal(p)))

    blocks, conditions, domains = [], [], []
    truth = {}
    n = spec.samples_per_cell
    for d in range(spec.domain_count):
        for s in range(spec.condition_count):
            base = domain_means[d] + (rng.standard_normal((n, rank)) @ basis) * base_sd
            x = scales[s] * base + shifts[s] + spec.noise_sd * rng.standard_normal((n, p))
            blocks.append(x)
            conditions.extend([s] * n)
            domains.extend([d] * n)
            truth[(d, s)] = {
                "mean": scales[s] * domain_means[d] + shifts[s],
                "var": scales[s] ** 2 * factor_var + spec.noise_sd**2,
            }

    condition_names = ["control"] + [f"treat{i}" for i in range(1, spec.condition_count)]
    dataset = Dataset(
        x=np.concatenate(blocks, axis=0),
        condition=np.array(conditions, dtype=np.int64),
        domain=np.array(domains, dtype=np.int64),
        feature_names=[f"f{j}" for j in range(p)],
        condition_names=condition_names,
        domain_names=[f"domain{d}" for d in range(spec.domain_count)],
    )
    return dataset, truth


def split_holdout(dataset: Dataset, plan) -> tuple[Dataset, Dataset]:
    """Partition rows into (train, heldout) by a list of (domain, condition) pairs.

    Every domain named in the plan must keep at least one training row, so the
    transformation source for that domain still exists.
    """
    plan = [(int(d), int(s)) for d, s in plan]
    for d, s in plan:
        if not 0 <= d < len(dataset.domain_names):
            raise ContractError(f"holdout domain {d} out of range")
        if not 0 <= s < len(dataset.condition_names):
            raise ContractError(f"holdout condition {s} out of range")
    held = np.zeros(len(dataset), dtype=bool)
    for d, s in plan:
        held |= (dataset.domain == d) & (dataset.condition == s)
    if held.all():
        raise ContractError("holdout plan would empty the training set")
    for d in {d for d, _ in plan}:
        if not np.any((dataset.domain == d) & ~held):
            raise ContractError(
                f"holdout plan removes every row of domain {dataset.domain_names[d]!r}; "
                "no transformation source would remain"
            )
    return dataset.subset(~held), dataset.subset(held)


@dataclass
class Scaler:
    """Per-feature affine transform fitted on the training split."""

    mean: np.ndarray
    scale: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.scale + self.mean

    @staticmethod
    def identity(p: int) -> "Scaler":
        return Scaler(mean=np.zeros(p), scale=np.ones(p))


def standardize(dataset: Dataset) -> tuple[Dataset, Scaler]:
    """Zero-mean unit-variance features; constant features keep scale 1."""
    mean = dataset.x.mean(axis=0)
    scale = dataset.x.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    scaler = Scaler(mean=mean, scale=scale)
    out = Dataset(
        x=scaler.transform(dataset.x),
        condition=dataset.condition.copy(),
        domain=dataset.domain.copy(),
        feature_names=list(dataset.feature_names),
        condition_names=list(dataset.condition_names),
        domain_names=list(dataset.domain_names),
    )
    return out, scaler
