"""Clustering and prediction metrics: ROC/AUROC, PR/AUPRC, adjusted Rand index.

Per-cluster models for evaluation are trained on the pooled train+test rows
(the algorithm's internal split has served its purpose by then) and judged
only on untouched validation rows.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy import stats

from .cluster import ClusterAssignment, _derive_seed
from .data import DataError, Dataset, Role, SplitAssignment, subgroup_view
from .glm import GlmOptions, fit_lasso_logistic_cv, log_predictive_likelihood, predict_proba


@dataclass(frozen=True, eq=False)
class ScoredPredictions:
    """Outcome labels paired with predicted scores, validated once."""

    y_true: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y_true)
        s = np.asarray(self.scores, dtype=np.float64)
        if y.shape != s.shape or y.ndim != 1:
            raise DataError("y_true and scores must be 1-D vectors of equal length")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("y_true entries must all be 0 or 1")
        object.__setattr__(self, "y_true", y.astype(np.int64))
        object.__setattr__(self, "scores", s)


def _check_two_classes(y: np.ndarray, what: str):
    n_pos = int(np.sum(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError(f"undefined {what}: need at least one positive and one negative")
    return n_pos, n_neg


def auroc(y_true, scores) -> float:
    """Mann-Whitney AUROC: (concordant + 0.5 * tied pairs) / (positives * negatives)."""
    sp = ScoredPredictions(y_true, scores)
    n_pos, n_neg = _check_two_classes(sp.y_true, "AUROC")
    ranks = stats.rankdata(sp.scores, method="average")
    pos_rank_sum = float(np.sum(ranks[sp.y_true == 1]))
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _threshold_counts(sp: ScoredPredictions):
    """Cumulative TP/FP at each unique score, swept descending."""
    order = np.argsort(-sp.scores, kind="stable")
    s = sp.scores[order]
    y = sp.y_true[order]
    cum_tp = np.cumsum(y)
    cum_fp = np.cumsum(1 - y)
    last_of_value = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    return s[last_of_value], cum_tp[last_of_value], cum_fp[last_of_value]


def roc_points(y_true, scores) -> np.ndarray:
    """(threshold, fpr, tpr) rows swept over unique scores descending, with endpoints."""
    sp = ScoredPredictions(y_true, scores)
    n_pos, n_neg = _check_two_classes(sp.y_true, "ROC curve")
    thresholds, tp, fp = _threshold_counts(sp)
    rows = [(np.inf, 0.0, 0.0)]
    for t, tpi, fpi in zip(thresholds, tp, fp):
        rows.append((float(t), fpi / n_neg, tpi / n_pos))
    return np.asarray(rows)


def pr_points(y_true, scores) -> np.ndarray:
    """(threshold, recall, precision) rows swept over unique scores descending."""
    sp = ScoredPredictions(y_true, scores)
    n_pos, _ = _check_two_classes(sp.y_true, "PR curve")
    thresholds, tp, fp = _threshold_counts(sp)
    rows = [(np.inf, 0.0, 1.0)]
    for t, tpi, fpi in zip(thresholds, tp, fp):
        rows.append((float(t), tpi / n_pos, tpi / (tpi + fpi)))
    return np.asarray(rows)


def auprc(y_true, scores) -> float:
    """Average precision: sum of precision times recall increments over the sweep."""
    pts = pr_points(y_true, scores)
    recall = pts[:, 1]
    precision = pts[:, 2]
    return float(np.sum((recall[1:] - recall[:-1]) * precision[1:]))


def _as_mapping(assignment) -> dict:
    if isinstance(assignment, ClusterAssignment):
        return assignment.mapping
    return dict(assignment)


def adjusted_rand_index(a, b) -> float:
    """Chance-corrected partition agreement; 1 iff identical up to relabeling."""
    ma, mb = _as_mapping(a), _as_mapping(b)
    if set(ma) != set(mb):
        raise DataError("assignments must cover the same subgroup ids")
    ids = sorted(ma)
    n = len(ids)
    table: dict[tuple, int] = {}
    for g in ids:
        key = (ma[g], mb[g])
        table[key] = table.get(key, 0) + 1
    sum_cells = sum(comb(v, 2) for v in table.values())
    a_sizes: dict = {}
    b_sizes: dict = {}
    for g in ids:
        a_sizes[ma[g]] = a_sizes.get(ma[g], 0) + 1
        b_sizes[mb[g]] = b_sizes.get(mb[g], 0) + 1
    sum_a = sum(comb(v, 2) for v in a_sizes.values())
    sum_b = sum(comb(v, 2) for v in b_sizes.values())
    total = comb(n, 2)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0  # both partitions trivial; identical by construction
    return float((sum_cells - expected) / (max_index - expected))


@dataclass(frozen=True, eq=False)
class ClusterMetrics:
    cluster_id: int
    n: int
    prevalence: float
    auroc: float | None
    auprc: float | None
    single_class: bool
    log_likelihood: float


@dataclass(frozen=True, eq=False)
class MetricReport:
    auroc: float
    auprc: float
    n: int
    prevalence: float
    per_cluster: tuple[ClusterMetrics, ...] = field(default_factory=tuple)
    pooled: ScoredPredictions | None = None

    def to_json_dict(self) -> dict:
        return {
            "auroc": float(self.auroc),
            "auprc": float(self.auprc),
            "n": int(self.n),
            "prevalence": float(self.prevalence),
            "per_cluster": [
                {
                    "cluster_id": int(c.cluster_id),
                    "n": int(c.n),
                    "prevalence": float(c.prevalence),
                    "auroc": None if c.auroc is None else float(c.auroc),
                    "auprc": None if c.auprc is None else float(c.auprc),
                    "single_class": bool(c.single_class),
                    "log_likelihood": float(c.log_likelihood),
                }
                for c in self.per_cluster
            ],
        }


def evaluate_clustering(
    dataset: Dataset,
    splits: SplitAssignment,
    assignment,
    glm_opts: GlmOptions | None = None,
    seed: int = 0,
    n_threads: int = 1,
) -> MetricReport:
    """Fit one model per cluster on train+test rows, score validation rows, pool.

    Clusters whose validation rows are single-class get their per-cluster
    ranking metrics omitted (flagged); they still contribute to the pooled
    metrics. Per-cluster results assemble in cluster-id order regardless of
    scheduling.
    """
    glm_opts = glm_opts or GlmOptions()
    mapping = _as_mapping(assignment)
    missing = [g for g in dataset.subgroups if g not in mapping]
    if missing:
        raise DataError(f"assignment is missing subgroups: {missing!r}")
    clusters: dict = {}
    for g in dataset.subgroups:
        clusters.setdefault(mapping[g], []).append(g)

    def _one(item):
        cid, members = item
        fit_view = subgroup_view(dataset, members, (Role.TRAIN, Role.TEST), splits)
        val_view = subgroup_view(dataset, members, Role.VALIDATION, splits)
        fit_seed = _derive_seed(seed, members, tag="eval")
        model = fit_lasso_logistic_cv(
            fit_view.X, fit_view.y, opts=glm_opts, seed=fit_seed, feature_names=dataset.feature_names
        ).model
        scores = predict_proba(model, val_view.X)
        return cid, val_view.y, scores

    items = sorted(clusters.items())
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(_one, items))
    else:
        results = [_one(item) for item in items]

    per_cluster = []
    ys, ss = [], []
    for cid, y_val, scores in results:
        single = bool(np.all(y_val == y_val[0])) if y_val.size else True
        per_cluster.append(
            ClusterMetrics(
                cluster_id=cid,
                n=int(y_val.size),
                prevalence=float(np.mean(y_val)) if y_val.size else 0.0,
                auroc=None if single else auroc(y_val, scores),
                auprc=None if single else auprc(y_val, scores),
                single_class=single,
                log_likelihood=log_predictive_likelihood(y_val, scores),
            )
        )
        ys.append(y_val)
        ss.append(scores)

    pooled = ScoredPredictions(np.concatenate(ys), np.concatenate(ss))
    assert sum(c.n for c in per_cluster) == pooled.y_true.size
    return MetricReport(
        auroc=auroc(pooled.y_true, pooled.scores),
        auprc=auprc(pooled.y_true, pooled.scores),
        n=int(pooled.y_true.size),
        prevalence=float(np.mean(pooled.y_true)),
        per_cluster=tuple(per_cluster),
        pooled=pooled,
    )


def write_metric_report(report: MetricReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
        fh.write("\n")


def write_roc_csv(y_true, scores, path) -> None:
    pts = roc_points(y_true, scores)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fpr", "tpr"])
        for t, fpr, tpr in pts:
            writer.writerow([repr(float(t)), repr(float(fpr)), repr(float(tpr))])


def write_pr_csv(y_true, scores, path) -> None:
    pts = pr_points(y_true, scores)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "recall", "precision"])
        for t, rec, prec in pts:
            writer.writerow([repr(float(t)), repr(float(rec)), repr(float(prec))])
