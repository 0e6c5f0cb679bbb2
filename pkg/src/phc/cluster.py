"""The merge loop: Bayesian hypothesis scoring, merge prior, greedy tree build.

Every candidate merge pits one pooled model (fit on the union's train rows,
scored on its test rows) against the product of the two subtrees' tree
probabilities, weighted by a Dirichlet-style merge prior. All probability
arithmetic stays in natural-log space: held-out likelihood products underflow
after a few thousand observations and Gamma(n) overflows past n ~ 170.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_array

from .data import (
    DataError,
    Dataset,
    Role,
    SplitAssignment,
    assign_splits,
    subgroup_view,
)
from .glm import (
    ConvergenceError,
    FittedModel,
    GlmOptions,
    fit_lasso_logistic,
    fit_lasso_logistic_cv,
    lambda_max,
    log_predictive_likelihood,
    predict_proba,
    standardize,
)

logger = logging.getLogger(__name__)


class PhcRunError(RuntimeError):
    """Merge loop aborted; carries the partial dendrogram built so far."""

    def __init__(self, message, dendrogram=None, failures=None):
        super().__init__(message)
        self.dendrogram = dendrogram
        self.failures = failures or []


def update_prior(n_k: int, log_d_left: float, log_d_right: float, alpha: float) -> tuple[float, float]:
    """Merge-prior recursion in log space.

    d_k = alpha * Gamma(n_k) + d_left * d_right and pi_k = alpha * Gamma(n_k) / d_k,
    computed as log_d_k = logaddexp(log alpha + lgamma(n_k), log_d_left + log_d_right)
    and log_pi_k = log alpha + lgamma(n_k) - log_d_k.
    """
    if n_k < 2:
        raise DataError("update_prior applies to internal nodes (n_k >= 2)")
    if alpha <= 0.0:
        raise DataError("alpha must be > 0")
    log_merged_mass = math.log(alpha) + math.lgamma(n_k)
    log_d = float(np.logaddexp(log_merged_mass, log_d_left + log_d_right))
    log_pi = log_merged_mass - log_d
    return log_d, log_pi


def posterior_merge_probability(
    log_pi: float, log_one_minus_pi: float, log_p_h1: float, log_p_h2: float
) -> float:
    """Posterior probability of the merged hypothesis, via the log-odds sigmoid.

    Never exponentiates raw likelihoods; a forced prior (log_one_minus_pi of
    -inf) returns exactly 1.
    """
    log_odds = (log_pi + log_p_h1) - (log_one_minus_pi + log_p_h2)
    if log_odds == np.inf:
        return 1.0
    if log_odds == -np.inf:
        return 0.0
    if log_odds >= 0.0:
        return float(1.0 / (1.0 + np.exp(-log_odds)))
    e = np.exp(log_odds)
    return float(e / (1.0 + e))


@dataclass(frozen=True, eq=False)
class TreeNode:
    """One dendrogram node; a leaf holds a single subgroup."""

    id: int
    members: tuple
    children: tuple[int, int] | None
    n_k: int
    log_d: float
    log_pi: float
    log_one_minus_pi: float
    log_p_h1: float
    log_p_tree: float
    r: float
    model: FittedModel | None = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass(frozen=True, eq=False)
class MergeCandidate:
    pair: tuple[int, int]
    members: tuple
    r: float
    log_p_h1: float
    log_p_h2: float
    log_pi: float
    log_one_minus_pi: float
    log_d: float
    model: FittedModel | None
    valid: bool = True
    error: str | None = None


@dataclass(eq=False)
class Dendrogram:
    nodes: dict[int, TreeNode]
    merge_order: list[int]
    root_id: int | None
    alpha: float
    config: dict = field(default_factory=dict)
    complete: bool = True

    @property
    def n_leaves(self) -> int:
        return sum(1 for node in self.nodes.values() if node.is_leaf)

    def leaf_members(self) -> tuple:
        return tuple(sorted(m for node in self.nodes.values() if node.is_leaf for m in node.members))


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Many-to-one map from subgroup id to cluster id."""

    mapping: dict
    threshold: float | None = None

    @property
    def n_clusters(self) -> int:
        return len(set(self.mapping.values()))

    def labels_for(self, ids) -> np.ndarray:
        try:
            return np.asarray([self.mapping[g] for g in ids])
        except KeyError as exc:
            raise DataError(f"subgroup {exc.args[0]!r} missing from assignment") from None

    def clusters(self) -> dict:
        """Cluster id -> sorted tuple of member subgroup ids."""
        out: dict = {}
        for g, c in self.mapping.items():
            out.setdefault(c, []).append(g)
        return {c: tuple(sorted(gs)) for c, gs in sorted(out.items())}


def _derive_seed(seed: int, members, tag: str = "fit") -> int:
    """Stable per-task RNG seed: a pure function of the run seed and member set."""
    key = f"{tag}|{seed}|" + ",".join(str(g) for g in sorted(members))
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")


def _fallback_fit(X, y, glm_opts, feature_names) -> FittedModel:
    """Retry a failed CV fit once at the fixed penalty 0.01 * lambda_max."""
    Xs, _, _ = standardize(X)
    lam = 0.01 * lambda_max(Xs, y)
    return fit_lasso_logistic(X, y, lam, opts=glm_opts, feature_names=feature_names)


def _fit_scored(members, dataset, splits, glm_opts, seed):
    """Fit the pooled model on train rows, score held-out log-likelihood on test rows."""
    train = subgroup_view(dataset, members, Role.TRAIN, splits)
    test = subgroup_view(dataset, members, Role.TEST, splits)
    if len(train) == 0:
        raise DataError(f"subgroups {sorted(members)!r} have no train rows")
    if len(test) == 0:
        raise DataError(f"subgroups {sorted(members)!r} have no test rows (split contract violated)")
    fit_seed = _derive_seed(seed, members)
    try:
        model = fit_lasso_logistic_cv(
            train.X, train.y, opts=glm_opts, seed=fit_seed, feature_names=dataset.feature_names
        ).model
    except ConvergenceError:
        model = _fallback_fit(train.X, train.y, glm_opts, dataset.feature_names)
    p_hat = predict_proba(model, test.X)
    return model, log_predictive_likelihood(test.y, p_hat)


def score_leaf(
    subgroup_id,
    dataset: Dataset,
    splits: SplitAssignment,
    glm_opts: GlmOptions | None = None,
    seed: int = 0,
    alpha: float = 1.0,
    node_id: int = 0,
) -> TreeNode:
    """Initialize one leaf: fit on its train rows, store the test log-likelihood.

    A constant-outcome training set yields the intercept-only model rather than
    a failure; an empty test set is a split-contract violation and raises.
    """
    glm_opts = glm_opts or GlmOptions()
    model, log_p_h1 = _fit_scored((subgroup_id,), dataset, splits, glm_opts, seed)
    return TreeNode(
        id=node_id,
        members=(subgroup_id,),
        children=None,
        n_k=1,
        log_d=math.log(alpha),
        log_pi=0.0,
        log_one_minus_pi=-np.inf,
        log_p_h1=log_p_h1,
        log_p_tree=log_p_h1,
        r=1.0,
        model=model,
    )


def score_merge(
    node_i: TreeNode,
    node_j: TreeNode,
    dataset: Dataset,
    splits: SplitAssignment,
    alpha: float = 1.0,
    glm_opts: GlmOptions | None = None,
    seed: int = 0,
) -> MergeCandidate:
    """Score one candidate merge; a pure function of its arguments and the seed.

    Solver failures are retried once at a fixed fallback penalty and otherwise
    returned as an invalid (never silently dropped) candidate.
    """
    glm_opts = glm_opts or GlmOptions()
    if set(node_i.members) & set(node_j.members):
        raise DataError("candidate nodes must have disjoint members")
    members = tuple(sorted(node_i.members + node_j.members))
    pair = (node_i.id, node_j.id) if node_i.members <= node_j.members else (node_j.id, node_i.id)
    n_k = node_i.n_k + node_j.n_k
    log_d, log_pi = update_prior(n_k, node_i.log_d, node_j.log_d, alpha)
    log_one_minus_pi = node_i.log_d + node_j.log_d - log_d
    log_p_h2 = node_i.log_p_tree + node_j.log_p_tree
    try:
        model, log_p_h1 = _fit_scored(members, dataset, splits, glm_opts, seed)
    except ConvergenceError as exc:
        return MergeCandidate(
            pair=pair,
            members=members,
            r=np.nan,
            log_p_h1=np.nan,
            log_p_h2=log_p_h2,
            log_pi=log_pi,
            log_one_minus_pi=log_one_minus_pi,
            log_d=log_d,
            model=None,
            valid=False,
            error=str(exc),
        )
    r = posterior_merge_probability(log_pi, log_one_minus_pi, log_p_h1, log_p_h2)
    return MergeCandidate(
        pair=pair,
        members=members,
        r=r,
        log_p_h1=log_p_h1,
        log_p_h2=log_p_h2,
        log_pi=log_pi,
        log_one_minus_pi=log_one_minus_pi,
        log_d=log_d,
        model=model,
    )


def _materialize(candidate: MergeCandidate, node_i: TreeNode, node_j: TreeNode, node_id: int) -> TreeNode:
    log_p_tree = float(
        np.logaddexp(
            candidate.log_pi + candidate.log_p_h1,
            candidate.log_one_minus_pi + candidate.log_p_h2,
        )
    )
    first, second = sorted((node_i, node_j), key=lambda nd: nd.members)
    return TreeNode(
        id=node_id,
        members=candidate.members,
        children=(first.id, second.id),
        n_k=node_i.n_k + node_j.n_k,
        log_d=candidate.log_d,
        log_pi=candidate.log_pi,
        log_one_minus_pi=candidate.log_one_minus_pi,
        log_p_h1=candidate.log_p_h1,
        log_p_tree=log_p_tree,
        r=candidate.r,
        model=candidate.model,
    )


def run_phc(
    dataset: Dataset,
    splits: SplitAssignment,
    alpha: float = 1.0,
    glm_opts: GlmOptions | None = None,
    seed: int = 0,
    n_threads: int = 1,
    use_cache: bool = True,
) -> Dendrogram:
    """Greedy merge loop: G leaves, then G-1 merges of the highest-posterior pair.

    Ties in the posterior break toward the lexicographically smallest sorted
    member tuple, so the result is independent of presentation order and of
    the worker count. With the candidate cache enabled (the default), only
    pairs involving the newest node are scored after each merge; disabling it
    rescores every pair each iteration and must reproduce the same tree.
    """
    glm_opts = glm_opts or GlmOptions()
    gids = dataset.subgroups
    G = len(gids)
    if G < 2:
        raise DataError("need at least 2 subgroups to cluster")
    config = {
        "alpha": float(alpha),
        "seed": int(seed),
        "glm": {
            "n_lambda": glm_opts.n_lambda,
            "eps_ratio": glm_opts.eps_ratio,
            "n_folds": glm_opts.n_folds,
            "kkt_tol": glm_opts.kkt_tol,
            "max_outer": glm_opts.max_outer,
            "max_sweeps": glm_opts.max_sweeps,
        },
    }

    pool = ThreadPoolExecutor(max_workers=n_threads) if n_threads > 1 else None

    def _map(fn, items):
        if pool is None:
            return [fn(item) for item in items]
        return list(pool.map(fn, items))

    try:
        leaf_nodes = _map(
            lambda ig: score_leaf(ig[1], dataset, splits, glm_opts, seed, alpha, node_id=ig[0]),
            list(enumerate(gids)),
        )
        nodes = {node.id: node for node in leaf_nodes}
        active = {node.id for node in leaf_nodes}
        logger.info("initialized %d leaves", G)

        candidates: dict[frozenset, MergeCandidate] = {}
        merge_order: list[int] = []
        next_id = G

        for _ in range(G - 1):
            if not use_cache:
                candidates.clear()
            active_sorted = sorted(active, key=lambda nid: nodes[nid].members)
            wanted = [
                (a, b)
                for ai, a in enumerate(active_sorted)
                for b in active_sorted[ai + 1 :]
                if frozenset((a, b)) not in candidates
            ]
            scored = _map(lambda ab: score_merge(nodes[ab[0]], nodes[ab[1]], dataset, splits, alpha, glm_opts, seed), wanted)
            for (a, b), cand in zip(wanted, scored):
                candidates[frozenset((a, b))] = cand

            valid = [c for c in candidates.values() if c.valid]
            if not valid:
                failures = [c.error for c in candidates.values()]
                partial = Dendrogram(
                    nodes=nodes,
                    merge_order=merge_order,
                    root_id=None,
                    alpha=alpha,
                    config=config,
                    complete=False,
                )
                raise PhcRunError(
                    "all remaining merge candidates are invalid", dendrogram=partial, failures=failures
                )
            best = min(valid, key=lambda c: (-c.r, c.members))
            i, j = best.pair
            node = _materialize(best, nodes[i], nodes[j], next_id)
            nodes[next_id] = node
            merge_order.append(next_id)
            logger.info(
                "merge %d/%d: %s + %s -> node %d r=%.6f log_p_h1=%.4f log_p_h2=%.4f",
                len(merge_order),
                G - 1,
                list(nodes[i].members),
                list(nodes[j].members),
                next_id,
                best.r,
                best.log_p_h1,
                best.log_p_h2,
            )
            active.discard(i)
            active.discard(j)
            for key in [k for k in candidates if k & {i, j}]:
                del candidates[key]
            active.add(next_id)
            next_id += 1
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    return Dendrogram(
        nodes=nodes,
        merge_order=merge_order,
        root_id=merge_order[-1],
        alpha=alpha,
        config=config,
        complete=True,
    )


def cut_tree(dendrogram: Dendrogram, threshold: float = 0.5) -> ClusterAssignment:
    """Top-down cut: a subtree whose merge posterior clears the threshold is one cluster.

    Leaves always terminate the descent, so the partition is total. Cluster
    ids are renumbered 1..K by smallest member.
    """
    if not dendrogram.complete:
        raise DataError("cut_tree requires a complete dendrogram")
    groups: list[tuple] = []
    stack = [dendrogram.root_id]
    while stack:
        node = dendrogram.nodes[stack.pop()]
        if node.is_leaf or node.r >= threshold:
            groups.append(node.members)
        else:
            stack.extend(reversed(node.children))
    groups.sort(key=lambda ms: ms[0])
    mapping = {}
    for cid, members in enumerate(groups, start=1):
        for g in members:
            mapping[g] = cid
    return ClusterAssignment(mapping=mapping, threshold=threshold)


def export_dendrogram(dendrogram: Dendrogram, path) -> None:
    """Serialize to JSON; round-trips losslessly apart from fitted models."""
    payload = {
        "alpha": float(dendrogram.alpha),
        "merge_order": [int(i) for i in dendrogram.merge_order],
        "nodes": [
            {
                "id": int(node.id),
                "members": [int(g) if isinstance(g, (int, np.integer)) else str(g) for g in node.members],
                "children": None if node.children is None else [int(c) for c in node.children],
                "r": float(node.r),
                "log_pi": float(node.log_pi),
                "log_d": float(node.log_d),
                "log_p_h1": float(node.log_p_h1),
                "log_p_tree": float(node.log_p_tree),
            }
            for _, node in sorted(dendrogram.nodes.items())
        ],
        "complete": bool(dendrogram.complete),
        "config": dendrogram.config,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_dendrogram(path) -> Dendrogram:
    """Rebuild a dendrogram from its JSON export (models are not serialized)."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    raw_nodes = {int(n["id"]): n for n in payload["nodes"]}
    nodes: dict[int, TreeNode] = {}
    for nid, n in sorted(raw_nodes.items()):
        members = tuple(n["members"])
        children = None if n["children"] is None else (int(n["children"][0]), int(n["children"][1]))
        if children is None:
            log_one_minus_pi = -np.inf
        else:
            log_one_minus_pi = (
                nodes[children[0]].log_d + nodes[children[1]].log_d - float(n["log_d"])
            )
        nodes[nid] = TreeNode(
            id=nid,
            members=members,
            children=children,
            n_k=len(members),
            log_d=float(n["log_d"]),
            log_pi=float(n["log_pi"]),
            log_one_minus_pi=log_one_minus_pi,
            log_p_h1=float(n["log_p_h1"]),
            log_p_tree=float(n["log_p_tree"]),
            r=float(n["r"]),
            model=None,
        )
    merge_order = [int(i) for i in payload["merge_order"]]
    complete = bool(payload.get("complete", True))
    return Dendrogram(
        nodes=nodes,
        merge_order=merge_order,
        root_id=merge_order[-1] if complete and merge_order else None,
        alpha=float(payload["alpha"]),
        config=payload.get("config", {}),
        complete=complete,
    )


def write_assignment_csv(assignment: ClusterAssignment, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subgroup_id", "cluster_id"])
        for g in sorted(assignment.mapping):
            writer.writerow([str(g), int(assignment.mapping[g])])


def read_assignment_csv(path) -> ClusterAssignment:
    """Read `subgroup_id,cluster_id` rows (a `true_cluster` column also qualifies)."""
    mapping = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if (
            header is None
            or header[0].strip() != "subgroup_id"
            or len(header) < 2
            or header[1].strip() not in ("cluster_id", "true_cluster")
        ):
            raise DataError(f"{path}: expected header subgroup_id,cluster_id")
        for line_no, row in enumerate(reader, start=2):
            if len(row) < 2:
                raise DataError(f"{path}: line {line_no}: expected 2 fields")
            gid: object = row[0]
            try:
                gid = int(row[0])
            except ValueError:
                pass
            try:
                mapping[gid] = int(row[1])
            except ValueError:
                raise DataError(f"{path}: line {line_no}: cluster id must be an integer") from None
    if not mapping:
        raise DataError(f"{path}: empty assignment")
    return ClusterAssignment(mapping=mapping, threshold=None)


class PredictiveHierarchicalClustering(BaseEstimator):
    """Sklearn-style front end: fit(X, y, groups) builds the tree and cuts it.

    After fitting, ``labels_`` holds one cluster label per input row,
    ``assignment_`` the subgroup-level map, and ``dendrogram_`` the full tree.
    """

    def __init__(
        self,
        alpha=1.0,
        threshold=0.5,
        validation_fraction=0.2,
        train_fraction=2.0 / 3.0,
        n_lambda=50,
        eps_ratio=1e-3,
        n_folds=5,
        seed=0,
        n_threads=1,
        use_cache=True,
    ):
        self.alpha = alpha
        self.threshold = threshold
        self.validation_fraction = validation_fraction
        self.train_fraction = train_fraction
        self.n_lambda = n_lambda
        self.eps_ratio = eps_ratio
        self.n_folds = n_folds
        self.seed = seed
        self.n_threads = n_threads
        self.use_cache = use_cache

    def _opts(self) -> GlmOptions:
        return GlmOptions(n_lambda=self.n_lambda, eps_ratio=self.eps_ratio, n_folds=self.n_folds)

    def fit(self, X, y, groups):
        X = check_array(X, dtype=np.float64)
        dataset = Dataset.from_arrays(X, y, groups)
        splits = assign_splits(
            dataset,
            validation_fraction=self.validation_fraction,
            train_fraction=self.train_fraction,
            seed=self.seed,
        )
        self.dataset_ = dataset
        self.splits_ = splits
        self.dendrogram_ = run_phc(
            dataset,
            splits,
            alpha=self.alpha,
            glm_opts=self._opts(),
            seed=self.seed,
            n_threads=self.n_threads,
            use_cache=self.use_cache,
        )
        self.assignment_ = cut_tree(self.dendrogram_, self.threshold)
        self.subgroups_ = np.asarray(dataset.subgroups)
        self.labels_ = self.assignment_.labels_for(dataset.group.tolist())
        return self

    def fit_predict(self, X, y, groups):
        return self.fit(X, y, groups).labels_
