"""Synthetic data with known cluster structure over subgroups.

Each true cluster owns a coefficient vector drawn from a standard normal;
features are standard-normal draws with a leading block thresholded to binary,
and outcomes are Bernoulli with probability the inverse logit of the linear
predictor. Subgroups are contiguous, equally sized blocks of clusters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .cluster import ClusterAssignment
from .data import BINARY, CONTINUOUS, ColumnMeta, DataError, Dataset


@dataclass(frozen=True)
class SimConfig:
    n_subgroups: int = 20
    n_true_clusters: int = 4
    rows_per_subgroup: int = 1000
    n_features: int = 30
    binary_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.n_subgroups, self.n_true_clusters, self.rows_per_subgroup, self.n_features) < 1:
            raise DataError("all simulation counts must be positive")
        if self.n_subgroups % self.n_true_clusters != 0:
            raise DataError("n_true_clusters must divide n_subgroups (contiguous equal blocks)")
        if not (0.0 <= self.binary_fraction <= 1.0):
            raise DataError("binary_fraction must be in [0, 1]")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    coefficients: np.ndarray  # (n_true_clusters, p)
    assignment: ClusterAssignment


def true_assignment(cfg: SimConfig) -> ClusterAssignment:
    """Contiguous block map: subgroups 1..B to cluster 1, B+1..2B to cluster 2, ..."""
    block = cfg.n_subgroups // cfg.n_true_clusters
    mapping = {g: (g - 1) // block + 1 for g in range(1, cfg.n_subgroups + 1)}
    return ClusterAssignment(mapping=mapping, threshold=None)


def simulate(cfg: SimConfig, theta: np.ndarray | None = None) -> tuple[Dataset, GroundTruth]:
    """Generate one dataset plus its ground truth, bit-reproducible per seed.

    The generator stream order is fixed: cluster coefficient rows first (when
    ``theta`` is not supplied), then the feature matrix column by column, then
    one uniform draw per row for the outcome. ``theta`` is a diagnostic hook
    that replaces the coefficient draw entirely.
    """
    rng = np.random.default_rng(cfg.seed)
    p = cfg.n_features
    n = cfg.n_subgroups * cfg.rows_per_subgroup
    if theta is None:
        theta = rng.standard_normal((cfg.n_true_clusters, p))
    else:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (cfg.n_true_clusters, p):
            raise DataError(f"theta must have shape {(cfg.n_true_clusters, p)}")

    X = np.ascontiguousarray(rng.standard_normal((p, n)).T)
    q = math.ceil(cfg.binary_fraction * p)
    if q > 0:
        X[:, :q] = (X[:, :q] > 0.0).astype(np.float64)

    group = np.repeat(np.arange(1, cfg.n_subgroups + 1), cfg.rows_per_subgroup)
    truth = true_assignment(cfg)
    cluster_per_row = truth.labels_for(group.tolist())
    eta = np.einsum("ij,ij->i", X, theta[cluster_per_row - 1])
    prob = 1.0 / (1.0 + np.exp(-eta))
    y = (rng.random(n) < prob).astype(np.int64)

    meta = tuple(
        ColumnMeta(name=f"x{j + 1}", kind=BINARY if j < q else CONTINUOUS) for j in range(p)
    )
    dataset = Dataset(features=X, outcome=y, group=group, column_meta=meta)
    return dataset, GroundTruth(coefficients=theta, assignment=truth)


def write_truth_csv(truth: ClusterAssignment, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subgroup_id", "true_cluster"])
        for g in sorted(truth.mapping):
            writer.writerow([str(g), int(truth.mapping[g])])


def read_truth_csv(path) -> ClusterAssignment:
    mapping = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["subgroup_id", "true_cluster"]:
            raise DataError(f"{path}: expected header subgroup_id,true_cluster")
        for row in reader:
            gid: object = row[0]
            try:
                gid = int(row[0])
            except ValueError:
                pass
            mapping[gid] = int(row[1])
    if not mapping:
        raise DataError(f"{path}: empty truth file")
    return ClusterAssignment(mapping=mapping, threshold=None)
