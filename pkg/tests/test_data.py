import numpy as np
import pytest
from scipy import stats

from phc.data import (
    BINARY,
    CONTINUOUS,
    DataError,
    Dataset,
    Role,
    apply_normal_scores,
    assign_splits,
    export_split_manifest,
    filter_min_group_size,
    load_csv,
    load_split_manifest,
    normal_scores_transform,
    subgroup_view,
    write_csv,
)
from phc.simulate import SimConfig, simulate


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_three_row_file(self, tmp_path):
        path = _write(tmp_path, "grp,y,x1\n1,0,0.5\n1,1,-0.2\n2,0,1.1\n")
        ds = load_csv(path, group_col="grp")
        assert ds.n_rows == 3
        assert ds.n_features == 1
        assert ds.subgroups == (1, 2)
        assert np.array_equal(ds.outcome, [0, 1, 0])
        assert np.array_equal(ds.features[:, 0], [0.5, -0.2, 1.1])

    def test_outcome_out_of_range_names_line(self, tmp_path):
        path = _write(tmp_path, "group,y,x1\n1,0,0.5\n1,1,0.1\n1,2,0.2\n")
        with pytest.raises(DataError, match="line 4"):
            load_csv(path)

    def test_missing_value_rejected(self, tmp_path):
        path = _write(tmp_path, "group,y,x1\n1,0,0.5\n1,1,\n1,0,0.2\n")
        with pytest.raises(DataError, match="line 3"):
            load_csv(path)

    def test_malformed_row_names_line(self, tmp_path):
        path = _write(tmp_path, "group,y,x1\n1,0,0.5\n1,1\n")
        with pytest.raises(DataError, match="line 3"):
            load_csv(path)

    def test_non_numeric_feature_rejected(self, tmp_path):
        path = _write(tmp_path, "group,y,x1\n1,0,abc\n1,1,0.0\n")
        with pytest.raises(DataError, match="line 2"):
            load_csv(path)

    def test_missing_required_columns(self, tmp_path):
        path = _write(tmp_path, "a,b\n1,2\n")
        with pytest.raises(DataError, match="header"):
            load_csv(path)

    def test_string_group_ids(self, tmp_path):
        path = _write(tmp_path, "group,y,x1\nA,0,0.5\nA,1,0.2\nB,0,0.1\n")
        ds = load_csv(path)
        assert ds.subgroups == ("A", "B")

    def test_round_trip_bit_exact(self, tmp_path):
        dataset, _ = simulate(SimConfig(n_subgroups=20, n_true_clusters=4, rows_per_subgroup=25, n_features=6, seed=7))
        path = tmp_path / "sim.csv"
        write_csv(dataset, path)
        loaded = load_csv(path)
        assert np.array_equal(loaded.features, dataset.features)
        assert np.array_equal(loaded.outcome, dataset.outcome)
        assert np.array_equal(loaded.group, dataset.group)
        assert loaded.column_meta == dataset.column_meta


class TestDatasetInvariants:
    def test_binary_kind_inferred(self):
        X = np.array([[0.0, 1.5], [1.0, -0.5], [0.0, 2.5]])
        ds = Dataset.from_arrays(X, [0, 1, 0], [1, 1, 2])
        assert ds.column_meta[0].kind == BINARY
        assert ds.column_meta[1].kind == CONTINUOUS

    def test_outcome_outside_01_rejected(self):
        with pytest.raises(DataError, match="outcome"):
            Dataset.from_arrays(np.zeros((2, 1)), [0, 2], [1, 1])

    def test_nan_feature_rejected(self):
        with pytest.raises(DataError, match="missing"):
            Dataset.from_arrays(np.array([[np.nan], [0.0]]), [0, 1], [1, 1])

    def test_unknown_subgroup(self):
        ds = Dataset.from_arrays(np.zeros((2, 1)), [0, 1], [1, 1])
        with pytest.raises(DataError, match="unknown subgroup"):
            ds.rows_of(9)


class TestFilterMinGroupSize:
    def _sized(self, sizes):
        group = np.concatenate([[g + 1] * s for g, s in enumerate(sizes)])
        n = group.size
        return Dataset.from_arrays(np.linspace(0, 1, n)[:, None], np.zeros(n, dtype=int), group)

    def test_threshold_keeps_large_group(self):
        ds = self._sized([600, 400])
        result = filter_min_group_size(ds, 500)
        assert result.dataset.subgroups == (1,)
        assert result.retained_fraction == pytest.approx(0.6)

    def test_min_one_is_identity(self):
        ds = self._sized([5, 7])
        result = filter_min_group_size(ds, 1)
        assert result.retained_fraction == 1.0
        assert np.array_equal(result.dataset.features, ds.features)

    def test_retained_fraction_094(self):
        # sizes chosen so the kept share is exactly 94%
        ds = self._sized([470, 10, 10, 10])
        result = filter_min_group_size(ds, 100)
        assert result.retained_fraction == pytest.approx(0.94)

    def test_idempotent(self):
        ds = self._sized([50, 3, 40])
        once = filter_min_group_size(ds, 10).dataset
        twice = filter_min_group_size(once, 10).dataset
        assert np.array_equal(once.features, twice.features)
        assert np.array_equal(once.group, twice.group)

    def test_empty_result_errors(self):
        ds = self._sized([4, 5])
        with pytest.raises(DataError, match="no subgroup meets threshold"):
            filter_min_group_size(ds, 100)


class TestNormalScores:
    def test_three_values_against_quantile_oracle(self):
        out = normal_scores_transform([3.0, 1.0, 2.0])
        expected = stats.norm.ppf([2.5 / 3, 0.5 / 3, 1.5 / 3])
        assert np.allclose(out, expected, atol=1e-12)
        assert out == pytest.approx([0.9674, -0.9674, 0.0], abs=1e-3)

    def test_symmetric_input(self):
        out = normal_scores_transform([-4.2, 0.0, 4.2])
        assert out[1] == 0.0
        assert out[0] < out[1] < out[2]

    def test_monotone_transform_invariance(self, rng):
        v = rng.standard_normal(101)
        assert np.array_equal(normal_scores_transform(v), normal_scores_transform(np.exp(v)))

    def test_rank_monotonicity(self, rng):
        v = rng.standard_normal(57)
        out = normal_scores_transform(v)
        order = np.argsort(v)
        assert np.all(np.diff(out[order]) >= 0)

    def test_mean_near_zero(self, rng):
        for m in (5, 40, 400):
            out = normal_scores_transform(rng.standard_normal(m))
            assert abs(out.mean()) <= 3.0 / np.sqrt(m)

    def test_ties_get_average_rank(self):
        out = normal_scores_transform([1.0, 1.0, 2.0])
        assert out[0] == out[1] < out[2]

    def test_apply_skips_binary_columns(self):
        X = np.array([[0.0, 3.0], [1.0, 1.0], [0.0, 2.0]])
        ds = Dataset.from_arrays(X, [0, 1, 0], [1, 1, 2])
        transformed = apply_normal_scores(ds)
        assert np.array_equal(transformed.features[:, 0], X[:, 0])
        assert np.allclose(transformed.features[:, 1], normal_scores_transform(X[:, 1]))


class TestAssignSplits:
    def _dataset(self, n=300, positives=10, groups=None):
        y = np.zeros(n, dtype=int)
        y[:positives] = 1
        group = np.ones(n, dtype=int) if groups is None else groups
        return Dataset.from_arrays(np.arange(n, dtype=float)[:, None], y, group)

    def test_default_counts_for_300_rows(self):
        ds = self._dataset()
        splits = assign_splits(ds, seed=0)
        counts = splits.counts()
        assert abs(counts[Role.VALIDATION] - 60) <= 1
        assert abs(counts[Role.TRAIN] - 160) <= 1
        assert abs(counts[Role.TEST] - 80) <= 1

    def test_roles_partition_rows(self):
        ds = self._dataset(n=301, positives=17)
        splits = assign_splits(ds, seed=5)
        counts = splits.counts()
        assert sum(counts.values()) == 301
        assert np.all(splits.role >= 0)

    def test_determinism(self):
        ds = self._dataset()
        a = assign_splits(ds, seed=42)
        b = assign_splits(ds, seed=42)
        assert np.array_equal(a.role, b.role)

    def test_sparse_positives_reach_every_role(self):
        ds = self._dataset(n=300, positives=10)
        splits = assign_splits(ds, seed=1)
        y = ds.outcome
        for role in Role:
            assert np.sum(y[splits.role == int(role)] == 1) >= 1

    def test_small_subgroup_gets_all_roles(self):
        group = np.array([1, 1, 1, 2, 2, 2, 2])
        ds = self._dataset(n=7, positives=0, groups=group)
        splits = assign_splits(ds, seed=0)
        for g in (1, 2):
            rows = ds.rows_of(g)
            assert {int(r) for r in splits.role[rows]} == {0, 1, 2}

    def test_under_three_rows_errors(self):
        ds = self._dataset(n=5, positives=0, groups=np.array([1, 1, 1, 2, 2]))
        with pytest.raises(DataError, match="need >= 3"):
            assign_splits(ds, seed=0)

    def test_manifest_round_trip(self, tmp_path):
        ds = self._dataset(n=50, positives=9)
        splits = assign_splits(ds, seed=3)
        path = tmp_path / "splits.csv"
        export_split_manifest(splits, path)
        assert np.array_equal(load_split_manifest(path), splits.role)


class TestSubgroupView:
    @pytest.fixture()
    def ds_and_splits(self):
        dataset, _ = simulate(SimConfig(n_subgroups=4, n_true_clusters=2, rows_per_subgroup=30, n_features=3, seed=11))
        return dataset, assign_splits(dataset, seed=11)

    def test_single_group_train_rows(self, ds_and_splits):
        ds, splits = ds_and_splits
        view = subgroup_view(ds, {1}, Role.TRAIN, splits)
        rows = ds.rows_of(1)
        expected = rows[splits.role[rows] == int(Role.TRAIN)]
        assert np.array_equal(np.sort(view.indices), np.sort(expected))

    def test_union_additivity(self, ds_and_splits):
        ds, splits = ds_and_splits
        for role in (None, Role.TRAIN, Role.TEST):
            a = subgroup_view(ds, {1}, role, splits)
            b = subgroup_view(ds, {2, 3}, role, splits)
            ab = subgroup_view(ds, {1, 2, 3}, role, splits)
            assert len(ab) == len(a) + len(b)
            assert set(ab.indices) == set(a.indices) | set(b.indices)

    def test_all_ids_all_roles_is_full_dataset(self, ds_and_splits):
        ds, splits = ds_and_splits
        view = subgroup_view(ds, set(ds.subgroups), None, splits)
        assert set(view.indices) == set(range(ds.n_rows))

    def test_unknown_id_errors(self, ds_and_splits):
        ds, splits = ds_and_splits
        with pytest.raises(DataError, match="unknown subgroup"):
            subgroup_view(ds, {1, 99}, None, splits)

    def test_role_requires_splits(self, ds_and_splits):
        ds, _ = ds_and_splits
        with pytest.raises(DataError, match="split assignment"):
            subgroup_view(ds, {1}, Role.TRAIN, None)
