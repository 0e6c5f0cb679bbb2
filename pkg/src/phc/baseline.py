"""Classical agglomerative clustering over per-subgroup feature means.

The comparison baseline: average each predictor within a subgroup, take
Euclidean distances between those mean points, and merge greedily under
complete or average linkage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_array

from .cluster import ClusterAssignment
from .data import DataError, Dataset

COMPLETE = "complete"
AVERAGE = "average"


def subgroup_means(dataset: Dataset) -> tuple[tuple, np.ndarray]:
    """Per-subgroup mean feature vectors (all split roles pooled), in id order."""
    gids = dataset.subgroups
    means = np.empty((len(gids), dataset.n_features))
    for k, g in enumerate(gids):
        means[k] = dataset.features[dataset.rows_of(g)].mean(axis=0)
    return gids, means


def euclidean_distances(means: np.ndarray) -> np.ndarray:
    """Symmetric zero-diagonal matrix of pairwise l2 distances."""
    means = np.asarray(means, dtype=np.float64)
    if not np.all(np.isfinite(means)):
        raise DataError("means must be finite")
    diff = means[:, None, :] - means[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(frozen=True, eq=False)
class LinkageDendrogram:
    """Merge list [(a, b, height, new_id)] over leaf ids 0..G-1, then G, G+1, ..."""

    merges: tuple
    linkage: str
    leaf_labels: tuple

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_labels)

    @property
    def heights(self) -> np.ndarray:
        return np.asarray([m[2] for m in self.merges])


def linkage_cluster(dist: np.ndarray, kind: str = COMPLETE, labels=None) -> LinkageDendrogram:
    """Greedy agglomeration: merge the closest active pair, ties to the smallest ids.

    Complete linkage takes the max of the children's distances to each other
    node, average linkage their size-weighted mean. Heights are non-decreasing
    for both on metric input.
    """
    dist = np.asarray(dist, dtype=np.float64)
    G = dist.shape[0]
    if dist.shape != (G, G) or G < 2:
        raise DataError("dist must be a square matrix over >= 2 items")
    if labels is None:
        labels = tuple(range(G))
    labels = tuple(labels)
    if len(labels) != G:
        raise DataError("labels length must match the distance matrix")

    # distances indexed by node id; new nodes appended as they are created
    d: dict[tuple[int, int], float] = {}
    for a in range(G):
        for b in range(a + 1, G):
            d[(a, b)] = float(dist[a, b])
    sizes = {i: 1 for i in range(G)}
    active = set(range(G))
    merges = []
    next_id = G
    for _ in range(G - 1):
        best_pair = None
        best_dist = np.inf
        for a in sorted(active):
            for b in sorted(active):
                if b <= a:
                    continue
                v = d[(a, b)]
                if v < best_dist:
                    best_dist = v
                    best_pair = (a, b)
        a, b = best_pair
        for m in active:
            if m in (a, b):
                continue
            dam = d[(min(a, m), max(a, m))]
            dbm = d[(min(b, m), max(b, m))]
            if kind == COMPLETE:
                new = max(dam, dbm)
            elif kind == AVERAGE:
                new = (sizes[a] * dam + sizes[b] * dbm) / (sizes[a] + sizes[b])
            else:
                raise DataError(f"unknown linkage kind: {kind!r}")
            d[(m, next_id)] = new
        sizes[next_id] = sizes[a] + sizes[b]
        active.discard(a)
        active.discard(b)
        active.add(next_id)
        merges.append((a, b, best_dist, next_id))
        next_id += 1
    return LinkageDendrogram(merges=tuple(merges), linkage=kind, leaf_labels=labels)


def cut_k(dendrogram: LinkageDendrogram, k: int) -> ClusterAssignment:
    """Undo the last k-1 merges, leaving exactly k clusters."""
    G = dendrogram.n_leaves
    if not (1 <= k <= G):
        raise DataError(f"k must be in [1, {G}], got {k}")
    parent = {}

    def find(x):
        while x in parent:
            x = parent[x]
        return x

    for a, b, _, new_id in dendrogram.merges[: G - k]:
        parent[find(a)] = new_id
        parent[find(b)] = new_id

    roots: dict[int, list] = {}
    for leaf_idx, label in enumerate(dendrogram.leaf_labels):
        roots.setdefault(find(leaf_idx), []).append(label)
    groups = sorted(roots.values(), key=lambda ms: ms[0])
    mapping = {}
    for cid, members in enumerate(groups, start=1):
        for g in members:
            mapping[g] = cid
    return ClusterAssignment(mapping=mapping, threshold=None)


def _members_of(dendrogram: LinkageDendrogram) -> dict[int, tuple]:
    members = {i: (label,) for i, label in enumerate(dendrogram.leaf_labels)}
    for a, b, _, new_id in dendrogram.merges:
        members[new_id] = tuple(sorted(members[a] + members[b]))
    return members


def export_linkage_dendrogram(dendrogram: LinkageDendrogram, path) -> None:
    """Same JSON schema as the merge tree, with `height` in place of r plus a linkage tag."""
    members = _members_of(dendrogram)
    heights = {new_id: h for _, _, h, new_id in dendrogram.merges}
    children = {new_id: (a, b) for a, b, _, new_id in dendrogram.merges}
    payload = {
        "linkage": dendrogram.linkage,
        "merge_order": [int(m[3]) for m in dendrogram.merges],
        "nodes": [
            {
                "id": int(nid),
                "members": [int(g) if isinstance(g, (int, np.integer)) else str(g) for g in members[nid]],
                "children": [int(c) for c in children[nid]] if nid in children else None,
                "height": float(heights.get(nid, 0.0)),
            }
            for nid in sorted(members)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


class AgglomerativeBaseline(BaseEstimator):
    """Sklearn-style wrapper: fit(X, y=None, groups=...) clusters subgroup means."""

    def __init__(self, n_clusters=4, linkage=COMPLETE):
        self.n_clusters = n_clusters
        self.linkage = linkage

    def fit(self, X, y=None, groups=None):
        if groups is None:
            raise DataError("groups is required")
        X = check_array(X, dtype=np.float64)
        outcome = np.zeros(X.shape[0], dtype=np.int64) if y is None else y
        dataset = Dataset.from_arrays(X, outcome, groups)
        gids, means = subgroup_means(dataset)
        self.dendrogram_ = linkage_cluster(euclidean_distances(means), self.linkage, labels=gids)
        self.assignment_ = cut_k(self.dendrogram_, self.n_clusters)
        self.subgroups_ = np.asarray(gids)
        self.labels_ = self.assignment_.labels_for(dataset.group.tolist())
        return self

    def fit_predict(self, X, y=None, groups=None):
        return self.fit(X, y, groups).labels_
