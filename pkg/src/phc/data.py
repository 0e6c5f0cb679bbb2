"""Tabular dataset with subgroup structure and a fixed train/test/validation split.

Every model comparison downstream is only meaningful if the candidate models
are scored on identical held-out rows, so the split is assigned once per run
and treated as immutable afterwards.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, NamedTuple

import numpy as np
from scipy import stats

CONTINUOUS = "continuous"
BINARY = "binary"


class DataError(ValueError):
    """Input data violates the expected format or a contract precondition."""


class Role(IntEnum):
    TRAIN = 0
    TEST = 1
    VALIDATION = 2


ROLE_NAMES = {Role.TRAIN: "train", Role.TEST: "test", Role.VALIDATION: "validation"}
_ROLE_FROM_NAME = {name: role for role, name in ROLE_NAMES.items()}


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    kind: str  # CONTINUOUS or BINARY


def _normalize_groups(group: Iterable) -> np.ndarray:
    """Return group labels as a homogeneous array (all int, else all str)."""
    labels = list(group)
    if len(labels) == 0:
        raise DataError("empty group vector")
    try:
        ints = []
        for g in labels:
            ig = int(g)
            if isinstance(g, float) and ig != g:
                raise ValueError(f"non-integer group id {g!r}")
            ints.append(ig)
        return np.asarray(ints, dtype=np.int64)
    except (TypeError, ValueError):
        return np.asarray([str(g) for g in labels])


def infer_column_meta(features: np.ndarray, names: Iterable[str]) -> tuple[ColumnMeta, ...]:
    """Flag a column as binary iff its observed values are a subset of {0, 1}."""
    meta = []
    for j, name in enumerate(names):
        col = features[:, j]
        kind = BINARY if np.all((col == 0.0) | (col == 1.0)) else CONTINUOUS
        meta.append(ColumnMeta(name=name, kind=kind))
    return tuple(meta)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable observations: feature matrix, binary outcome, subgroup label.

    Attributes
    ----------
    features : (n, p) float array, no missing values.
    outcome : (n,) array with entries in {0, 1}.
    group : (n,) array of subgroup ids (homogeneous int or str).
    column_meta : one ColumnMeta per feature column.
    """

    features: np.ndarray
    outcome: np.ndarray
    group: np.ndarray
    column_meta: tuple[ColumnMeta, ...]

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        outcome = np.asarray(self.outcome)
        group = _normalize_groups(self.group)
        if outcome.shape != (features.shape[0],) or group.shape != (features.shape[0],):
            raise DataError("features, outcome and group must agree on row count")
        if not np.all((outcome == 0) | (outcome == 1)):
            raise DataError("outcome entries must all be 0 or 1")
        if not np.all(np.isfinite(features)):
            raise DataError("features contain missing or non-finite values")
        if len(self.column_meta) != features.shape[1]:
            raise DataError("column_meta length must match the feature count")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "outcome", outcome.astype(np.int64))
        object.__setattr__(self, "group", group)
        object.__setattr__(self, "column_meta", tuple(self.column_meta))
        index: dict = {}
        for i, g in enumerate(group.tolist()):
            index.setdefault(g, []).append(i)
        object.__setattr__(
            self, "_group_index", {g: np.asarray(ix, dtype=np.intp) for g, ix in index.items()}
        )

    @classmethod
    def from_arrays(cls, features, outcome, group, feature_names=None) -> "Dataset":
        features = np.asarray(features, dtype=np.float64)
        if feature_names is None:
            feature_names = [f"x{j + 1}" for j in range(features.shape[1])]
        meta = infer_column_meta(features, feature_names)
        return cls(features=features, outcome=outcome, group=group, column_meta=meta)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.column_meta)

    @property
    def subgroups(self) -> tuple:
        """Subgroup ids in sorted order."""
        return tuple(sorted(self._group_index))

    def rows_of(self, subgroup_id) -> np.ndarray:
        try:
            return self._group_index[subgroup_id]
        except KeyError:
            raise DataError(f"unknown subgroup id: {subgroup_id!r}") from None

    def group_sizes(self) -> dict:
        return {g: len(ix) for g, ix in self._group_index.items()}


def load_csv(path, group_col: str = "group", outcome_col: str = "y") -> Dataset:
    """Parse a dataset CSV: one group column, one {0,1} outcome column, features.

    Rejects malformed rows, missing values and out-of-range outcomes with the
    offending line number; no silent imputation.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if group_col not in header or outcome_col not in header:
            raise DataError(f"{path}: header must contain {group_col!r} and {outcome_col!r}")
        gi = header.index(group_col)
        yi = header.index(outcome_col)
        feat_cols = [(k, name) for k, name in enumerate(header) if k not in (gi, yi)]
        if not feat_cols:
            raise DataError(f"{path}: no feature columns")

        groups: list = []
        ys: list[int] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}"
                )
            if any(tok.strip() == "" for tok in row):
                raise DataError(f"{path}: line {line_no}: missing value")
            try:
                yv = float(row[yi])
            except ValueError:
                raise DataError(f"{path}: line {line_no}: outcome {row[yi]!r} is not numeric") from None
            if yv not in (0.0, 1.0):
                raise DataError(f"{path}: line {line_no}: outcome {row[yi]!r} outside {{0,1}}")
            vals = []
            for k, name in feat_cols:
                try:
                    v = float(row[k])
                except ValueError:
                    raise DataError(
                        f"{path}: line {line_no}: feature {name!r} value {row[k]!r} is not numeric"
                    ) from None
                if not np.isfinite(v):
                    raise DataError(f"{path}: line {line_no}: feature {name!r} is missing/non-finite")
                vals.append(v)
            groups.append(row[gi])
            ys.append(int(yv))
            rows.append(vals)

    if not rows:
        raise DataError(f"{path}: no data rows")
    features = np.asarray(rows, dtype=np.float64)
    names = [name for _, name in feat_cols]
    return Dataset(
        features=features,
        outcome=np.asarray(ys),
        group=groups,
        column_meta=infer_column_meta(features, names),
    )


def write_csv(dataset: Dataset, path, group_col: str = "group", outcome_col: str = "y") -> None:
    """Write a dataset in the load_csv format; floats round-trip bit-exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([group_col, outcome_col, *dataset.feature_names])
        for i in range(dataset.n_rows):
            writer.writerow(
                [
                    str(dataset.group[i]),
                    int(dataset.outcome[i]),
                    *[repr(float(v)) for v in dataset.features[i]],
                ]
            )


class FilterResult(NamedTuple):
    dataset: Dataset
    retained_fraction: float


def filter_min_group_size(dataset: Dataset, min_n: int) -> FilterResult:
    """Drop every subgroup smaller than ``min_n`` rows; report the kept fraction."""
    if min_n < 1:
        raise DataError("min_n must be >= 1")
    keep_groups = {g for g, size in dataset.group_sizes().items() if size >= min_n}
    if not keep_groups:
        raise DataError("no subgroup meets threshold")
    mask = np.asarray([g in keep_groups for g in dataset.group.tolist()])
    retained = float(mask.sum()) / dataset.n_rows
    filtered = Dataset(
        features=dataset.features[mask],
        outcome=dataset.outcome[mask],
        group=dataset.group[mask],
        column_meta=dataset.column_meta,
    )
    return FilterResult(dataset=filtered, retained_fraction=retained)


def normal_scores_transform(values) -> np.ndarray:
    """Map values to standard-normal quantiles of their plotting positions.

    Output[i] = Phi^-1((rank_i - 0.5) / m) with average ranks for ties, which
    makes the result invariant to any strictly monotone transform of the input.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DataError("normal_scores_transform expects a nonempty 1-D vector")
    ranks = stats.rankdata(v, method="average")
    return stats.norm.ppf((ranks - 0.5) / v.size)


def apply_normal_scores(dataset: Dataset) -> Dataset:
    """Apply the normal scores transform to continuous columns; binary columns pass through."""
    features = dataset.features.copy()
    for j, meta in enumerate(dataset.column_meta):
        if meta.kind == CONTINUOUS:
            features[:, j] = normal_scores_transform(features[:, j])
    return Dataset(
        features=features,
        outcome=dataset.outcome,
        group=dataset.group,
        column_meta=dataset.column_meta,
    )


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    """Per-row role labels, fixed for the lifetime of a run."""

    role: np.ndarray  # int8 codes, see Role
    seed: int
    validation_fraction: float
    train_fraction: float

    @property
    def ratios(self) -> tuple[float, float]:
        return (self.validation_fraction, self.train_fraction)

    def mask(self, roles) -> np.ndarray:
        if roles is None:
            return np.ones(self.role.shape[0], dtype=bool)
        if isinstance(roles, (Role, int)):
            roles = (roles,)
        codes = {int(r) for r in roles}
        return np.isin(self.role, list(codes))

    def counts(self) -> dict[Role, int]:
        return {r: int(np.sum(self.role == int(r))) for r in Role}


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def assign_splits(
    dataset: Dataset,
    validation_fraction: float = 0.2,
    train_fraction: float = 2.0 / 3.0,
    seed: int = 0,
) -> SplitAssignment:
    """Assign every row to train/test/validation, stratified by subgroup and outcome.

    The validation share is carved out first; the remainder is split
    ``train_fraction`` / (1 - ``train_fraction``). All three roles are
    guaranteed nonempty within each subgroup (requires >= 3 rows per subgroup).
    """
    if not (0.0 <= validation_fraction < 1.0):
        raise DataError("validation_fraction must be in [0, 1)")
    if not (0.0 < train_fraction < 1.0):
        raise DataError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    role = np.full(dataset.n_rows, -1, dtype=np.int8)

    for gid in dataset.subgroups:
        rows = dataset.rows_of(gid)
        if rows.size < 3:
            raise DataError(f"subgroup {gid!r} has {rows.size} rows; need >= 3 to populate all roles")
        for cls in (0, 1):
            idx = rows[dataset.outcome[rows] == cls]
            if idx.size == 0:
                continue
            shuffled = rng.permutation(idx)
            m = shuffled.size
            n_val = _round_half_up(validation_fraction * m)
            rem = m - n_val
            n_train = _round_half_up(train_fraction * rem)
            role[shuffled[:n_val]] = int(Role.VALIDATION)
            role[shuffled[n_val : n_val + n_train]] = int(Role.TRAIN)
            role[shuffled[n_val + n_train :]] = int(Role.TEST)
        # repair: every role must be nonempty at the subgroup level
        for _ in range(2):
            counts = {r: int(np.sum(role[rows] == int(r))) for r in Role}
            missing = [r for r in Role if counts[r] == 0]
            if not missing:
                break
            donor = max(Role, key=lambda r: (counts[r], -int(r)))
            donor_rows = rows[role[rows] == int(donor)]
            role[donor_rows[-1]] = int(missing[0])

    assert np.all(role >= 0)
    return SplitAssignment(
        role=role,
        seed=seed,
        validation_fraction=validation_fraction,
        train_fraction=train_fraction,
    )


def export_split_manifest(splits: SplitAssignment, path) -> None:
    """Write `row_index,role` rows for reproducibility audits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_index", "role"])
        for i, code in enumerate(splits.role.tolist()):
            writer.writerow([i, ROLE_NAMES[Role(code)]])


def load_split_manifest(path) -> np.ndarray:
    """Read a split manifest back into the int8 role-code vector."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["row_index", "role"]:
            raise DataError(f"{path}: not a split manifest")
        codes = []
        for line_no, row in enumerate(reader, start=2):
            try:
                codes.append(int(_ROLE_FROM_NAME[row[1]]))
            except (KeyError, IndexError):
                raise DataError(f"{path}: line {line_no}: bad role") from None
    return np.asarray(codes, dtype=np.int8)


@dataclass(frozen=True, eq=False)
class DataView:
    """Row selection of a dataset: a set of subgroups intersected with a role filter.

    Rows are ordered by (subgroup id, within-subgroup position), so the view
    is identical however the subgroups happen to be laid out in the file.
    """

    dataset: Dataset
    ids: frozenset
    role: tuple[Role, ...] | None
    splits: SplitAssignment | None

    def __post_init__(self):
        mask = None if self.role is None else self.splits.mask(self.role)
        parts = []
        for g in sorted(self.ids):
            rows = self.dataset.rows_of(g)
            parts.append(rows if mask is None else rows[mask[rows]])
        idx = np.concatenate(parts) if parts else np.empty(0, dtype=np.intp)
        object.__setattr__(self, "_indices", idx)

    @property
    def indices(self) -> np.ndarray:
        return self._indices

    @property
    def X(self) -> np.ndarray:
        return self.dataset.features[self._indices]

    @property
    def y(self) -> np.ndarray:
        return self.dataset.outcome[self._indices]

    def __len__(self) -> int:
        return int(self._indices.size)


def subgroup_view(dataset: Dataset, ids, role=None, splits: SplitAssignment | None = None) -> DataView:
    """View of the rows whose subgroup is in ``ids`` and whose role matches.

    ``role`` may be a single Role, an iterable of roles, or None for all rows;
    a non-None role requires the split assignment that defines it.
    """
    ids = frozenset(ids)
    if not ids:
        raise DataError("ids must be nonempty")
    for g in ids:
        dataset.rows_of(g)  # raises on unknown id
    if role is not None:
        if splits is None:
            raise DataError("a role filter requires the split assignment")
        if isinstance(role, (Role, int)):
            role = (Role(role),)
        else:
            role = tuple(Role(r) for r in role)
    return DataView(dataset=dataset, ids=ids, role=role, splits=splits)
