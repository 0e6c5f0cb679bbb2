import numpy as np
import pytest

from phc.cluster import ClusterAssignment
from phc.data import DataError, Dataset, assign_splits
from phc.metrics import (
    adjusted_rand_index,
    auprc,
    auroc,
    evaluate_clustering,
    pr_points,
    roc_points,
)

from oracles import brute_force_ari, brute_force_auroc, brute_force_average_precision


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0

    def test_constant_scores(self):
        assert auroc([0, 1, 0, 1], [0.3, 0.3, 0.3, 0.3]) == 0.5

    def test_three_point_example(self):
        # one concordant and one discordant pair of two
        assert auroc([1, 0, 1], [0.9, 0.8, 0.3]) == 0.5

    def test_matches_brute_force(self, rng):
        for _ in range(100):
            n = int(rng.integers(4, 51))
            y = rng.integers(0, 2, size=n)
            if y.min() == y.max():
                y[0] = 1 - y[0]
            scores = np.round(rng.random(n), 2)  # induce ties
            assert auroc(y, scores) == pytest.approx(brute_force_auroc(y, scores), abs=1e-12)

    def test_invariant_to_monotone_transform(self, rng):
        y = rng.integers(0, 2, size=40)
        y[:2] = [0, 1]
        s = rng.random(40)
        assert auroc(y, s) == pytest.approx(auroc(y, np.exp(3 * s)), abs=1e-12)

    def test_label_flip_complement(self, rng):
        y = rng.integers(0, 2, size=30)
        y[:2] = [0, 1]
        s = rng.permutation(np.linspace(0.01, 0.99, 30))  # tie-free
        assert auroc(y, s) + auroc(1 - y, s) == pytest.approx(1.0, abs=1e-12)

    def test_single_class_errors(self):
        with pytest.raises(DataError, match="undefined AUROC"):
            auroc([1, 1, 1], [0.1, 0.5, 0.9])


class TestCurves:
    def test_perfect_separator_passes_corner(self):
        pts = roc_points([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9])
        assert any(fpr == 0.0 and tpr == 1.0 for _, fpr, tpr in pts)

    def test_constant_scores_diagonal_endpoints(self):
        pts = roc_points([0, 1], [0.4, 0.4])
        assert pts.tolist() == [[np.inf, 0.0, 0.0], [0.4, 1.0, 1.0]]

    def test_three_point_roc_hand_enumerated(self):
        pts = roc_points([1, 0, 1], [0.9, 0.8, 0.3])
        # thresholds 0.9, 0.8, 0.3 -> (fpr, tpr) = (0, .5), (1, .5), (1, 1)
        assert pts.tolist() == [
            [np.inf, 0.0, 0.0],
            [0.9, 0.0, 0.5],
            [0.8, 1.0, 0.5],
            [0.3, 1.0, 1.0],
        ]

    def test_three_point_pr_hand_enumerated(self):
        pts = pr_points([1, 0, 1], [0.9, 0.8, 0.3])
        assert pts.tolist() == [
            [np.inf, 0.0, 1.0],
            [0.9, 0.5, 1.0],
            [0.8, 0.5, 0.5],
            [0.3, 1.0, 2.0 / 3.0],
        ]

    def test_curves_reject_single_class(self):
        with pytest.raises(DataError):
            roc_points([0, 0], [0.1, 0.2])
        with pytest.raises(DataError):
            pr_points([1, 1], [0.1, 0.2])


class TestAuprc:
    def test_perfect_separator(self):
        assert auprc([0, 1, 1], [0.1, 0.8, 0.9]) == 1.0

    def test_constant_scores_equal_prevalence(self):
        assert auprc([0, 1, 0, 0], [0.7, 0.7, 0.7, 0.7]) == pytest.approx(0.25, abs=1e-12)

    def test_three_point_example(self):
        y, s = [1, 0, 1], [0.9, 0.8, 0.3]
        expected = brute_force_average_precision(y, s)
        assert expected == pytest.approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0), abs=1e-12)
        assert auprc(y, s) == pytest.approx(expected, abs=1e-12)

    def test_matches_brute_force(self, rng):
        for _ in range(100):
            n = int(rng.integers(4, 51))
            y = rng.integers(0, 2, size=n)
            if y.min() == y.max():
                y[0] = 1 - y[0]
            scores = np.round(rng.random(n), 2)
            assert auprc(y, scores) == pytest.approx(
                brute_force_average_precision(y, scores), abs=1e-12
            )


class TestAdjustedRandIndex:
    def test_identical_up_to_relabeling(self):
        a = {1: 1, 2: 1, 3: 2, 4: 3}
        b = {1: 7, 2: 7, 3: 5, 4: 9}
        assert adjusted_rand_index(a, b) == 1.0

    def test_crossed_pairs(self):
        a = dict(zip("wxyz", [1, 1, 2, 2]))
        b = dict(zip("wxyz", [1, 2, 1, 2]))
        assert adjusted_rand_index(a, b) == pytest.approx(-0.5, abs=1e-12)

    def test_single_cluster_vs_nontrivial(self):
        a = {1: 1, 2: 1, 3: 2, 4: 2, 5: 3}
        b = {g: 1 for g in a}
        assert adjusted_rand_index(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_symmetric(self, rng):
        ids = list(range(12))
        a = {g: int(rng.integers(1, 4)) for g in ids}
        b = {g: int(rng.integers(1, 4)) for g in ids}
        assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_index(b, a), abs=1e-15)

    def test_matches_brute_force(self, rng):
        for _ in range(50):
            n = int(rng.integers(3, 15))
            ids = list(range(n))
            a = {g: int(rng.integers(1, 5)) for g in ids}
            b = {g: int(rng.integers(1, 5)) for g in ids}
            expected = brute_force_ari([a[g] for g in ids], [b[g] for g in ids])
            assert adjusted_rand_index(a, b) == pytest.approx(expected, abs=1e-12)

    def test_id_mismatch_errors(self):
        with pytest.raises(DataError, match="same subgroup ids"):
            adjusted_rand_index({1: 1, 2: 1}, {1: 1, 3: 1})

    def test_accepts_cluster_assignment_objects(self):
        a = ClusterAssignment(mapping={1: 1, 2: 2}, threshold=0.5)
        assert adjusted_rand_index(a, a) == 1.0


class TestEvaluateClustering:
    def test_truth_vs_singleton_on_small_sim(self, small_sim):
        dataset, splits, truth = small_sim
        rep_truth = evaluate_clustering(dataset, splits, truth.assignment, seed=1)
        singleton = {g: i + 1 for i, g in enumerate(dataset.subgroups)}
        rep_single = evaluate_clustering(dataset, splits, singleton, seed=1)
        assert rep_truth.auroc >= rep_single.auroc - 0.02
        assert rep_single.n == rep_truth.n

    def test_identical_assignments_identical_reports(self, small_sim):
        dataset, splits, truth = small_sim
        a = evaluate_clustering(dataset, splits, truth.assignment, seed=2)
        b = evaluate_clustering(dataset, splits, truth.assignment, seed=2)
        assert a.auroc == b.auroc
        assert a.auprc == b.auprc
        assert np.array_equal(a.pooled.scores, b.pooled.scores)

    def test_per_cluster_sizes_sum_to_pooled(self, small_sim):
        dataset, splits, truth = small_sim
        rep = evaluate_clustering(dataset, splits, truth.assignment, seed=0)
        assert sum(c.n for c in rep.per_cluster) == rep.n
        assert 0.0 < rep.prevalence < 1.0

    def test_missing_subgroup_errors(self, small_sim):
        dataset, splits, _ = small_sim
        partial = {g: 1 for g in dataset.subgroups[:-1]}
        with pytest.raises(DataError, match="missing subgroups"):
            evaluate_clustering(dataset, splits, partial, seed=0)

    def test_single_class_cluster_flagged(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((120, 2))
        y = np.r_[np.zeros(60, dtype=int), rng.integers(0, 2, size=60)]
        y[60:62] = [0, 1]
        group = np.r_[np.ones(60, dtype=int), np.full(60, 2)]
        ds = Dataset.from_arrays(X, y, group)
        splits = assign_splits(ds, seed=0)
        rep = evaluate_clustering(ds, splits, {1: 1, 2: 2}, seed=0)
        flags = {c.cluster_id: c.single_class for c in rep.per_cluster}
        assert flags[1] is True
        by_id = {c.cluster_id: c for c in rep.per_cluster}
        assert by_id[1].auroc is None
        assert rep.auroc is not None  # pooled still defined

    def test_threads_do_not_change_results(self, small_sim):
        dataset, splits, truth = small_sim
        a = evaluate_clustering(dataset, splits, truth.assignment, seed=5, n_threads=1)
        b = evaluate_clustering(dataset, splits, truth.assignment, seed=5, n_threads=4)
        assert np.array_equal(a.pooled.scores, b.pooled.scores)
        assert a.auroc == b.auroc
