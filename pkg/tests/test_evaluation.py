"""Ground truth, recall, seed statistics, and the theory checks."""

import numpy as np
import pytest

from ivftq.data_io import make_sift_like, make_synthetic_clusters
from ivftq.evaluation import (
    GroundTruth,
    SeedStats,
    exact_topk,
    per_query_recall,
    recall_at_k,
    verify_amplification,
    verify_theorem1,
)
from ivftq.index import IndexConfig, IvfTqIndex
from ivftq.lloydmax import design_quantizer
from ivftq.rotation import generate_rotation


def _naive_topk(db, queries, k):
    """Independent reference: per-query python loop with explicit tie rule."""
    out = np.empty((len(queries), k), dtype=np.int64)
    for qi, q in enumerate(queries):
        scores = [(-float(q @ row), i) for i, row in enumerate(db)]
        scores.sort()
        out[qi] = [i for _, i in scores[:k]]
    return out


class TestExactTopk:
    def test_single_row_database(self):
        db = np.ones((1, 8))
        truth = exact_topk(db, np.random.default_rng(0).standard_normal((5, 8)), 3)
        assert truth.ids.shape == (5, 1)
        assert np.all(truth.ids == 0)

    def test_self_recall_is_one(self):
        rng = np.random.default_rng(1)
        db = rng.standard_normal((50, 8))
        truth = exact_topk(db, db, 5)
        assert recall_at_k(truth.ids, truth, 5) == 1.0

    def test_matches_independent_naive_implementation(self):
        """Dual-implementation agreement on 1K x 100 instances."""
        rng = np.random.default_rng(2)
        db = rng.standard_normal((1000, 16))
        queries = rng.standard_normal((100, 16))
        truth = exact_topk(db, queries, 10)
        np.testing.assert_array_equal(truth.ids, _naive_topk(db, queries, 10))

    def test_ties_break_to_lower_id(self):
        db = np.tile(np.array([[1.0, 0.0]]), (4, 1))  # identical rows
        truth = exact_topk(db, np.array([[1.0, 0.0]]), 3)
        np.testing.assert_array_equal(truth.ids[0], [0, 1, 2])

    def test_empty_database_rejected(self):
        with pytest.raises(ValueError):
            exact_topk(np.zeros((0, 4)), np.ones((1, 4)), 3)

    def test_stale_tag_detected(self):
        rng = np.random.default_rng(3)
        db = rng.standard_normal((20, 4))
        truth = exact_topk(db, db[:2], 3, state_tag="n=20/v=1")
        truth.validate("n=20/v=1")
        with pytest.raises(ValueError, match="stale"):
            truth.validate("n=21/v=2")


class TestRecall:
    def test_perfect_and_disjoint_and_half(self):
        truth = GroundTruth(ids=np.arange(10)[None, :], k=10)
        assert recall_at_k(np.arange(10)[None, :], truth, 10) == 1.0
        assert recall_at_k(np.arange(10, 20)[None, :], truth, 10) == 0.0
        half = np.concatenate([np.arange(5), np.arange(50, 55)])[None, :]
        assert recall_at_k(half, truth, 10) == 0.5

    def test_length_mismatch_rejected(self):
        truth = GroundTruth(ids=np.arange(10)[None, :], k=10)
        with pytest.raises(ValueError):
            recall_at_k(np.zeros((2, 10), dtype=int), truth, 10)

    def test_bounds(self):
        rng = np.random.default_rng(4)
        truth = GroundTruth(ids=rng.integers(0, 100, (20, 10)), k=10)
        results = rng.integers(0, 100, (20, 10))
        r = per_query_recall(results, truth, 10)
        assert np.all((0 <= r) & (r <= 1))


class TestSeedStats:
    def test_three_seed_interval_uses_t_4303(self):
        stats = SeedStats.from_values([0.5, 0.6, 0.7])
        assert stats.mean == pytest.approx(0.6)
        assert stats.ci_half_width == pytest.approx(
            4.303 * np.std([0.5, 0.6, 0.7], ddof=1) / np.sqrt(3)
        )

    def test_single_value_degenerates(self):
        stats = SeedStats.from_values([0.4])
        assert stats.ci_half_width == 0.0

    def test_paired_delta_antisymmetry(self):
        a, b = [0.8, 0.7, 0.9], [0.5, 0.6, 0.4]
        ab = SeedStats.paired(a, b)
        ba = SeedStats.paired(b, a)
        assert ab.mean == -ba.mean
        assert ab.ci_half_width == ba.ci_half_width

    def test_paired_mean_is_mean_of_differences(self):
        a, b = [0.8, 0.7], [0.5, 0.65]
        assert SeedStats.paired(a, b).mean == pytest.approx(
            np.mean([0.3, 0.05])
        )


@pytest.fixture(scope="module")
def setup():
    return design_quantizer(4, 128), generate_rotation(128, seed=42)


class TestTheorem1:

    def test_envelope_holds_with_slack(self, setup):
        q, rot = setup
        report = verify_theorem1(q, rot, n_trials=1000, delta=0.01, seed=0)
        assert report["holds"]
        # the empirical error sits near the rate floor, far below the bound
        assert report["empirical_quantile"] < report["rate_term"] * 1.5
        assert report["bound_value"] == pytest.approx(
            np.sqrt(q.distortion) + np.sqrt(8 * np.log(200.0) / 126.0)
        )

    def test_tighter_delta_still_holds(self, setup):
        q, rot = setup
        report = verify_theorem1(q, rot, n_trials=1000, delta=0.5, seed=0)
        assert report["holds"]

    def test_error_shrinks_with_rate(self, setup):
        """Mean squared reconstruction error scales like the distortion
        ratio between 4 and 8 bits (about 16x in MSE terms)."""
        q4, rot = setup
        q8 = design_quantizer(8, 128)
        r4 = verify_theorem1(q4, rot, n_trials=400, delta=0.01, seed=1)
        r8 = verify_theorem1(q8, rot, n_trials=400, delta=0.01, seed=1)
        measured = (r4["mean_error"] / r8["mean_error"]) ** 2
        predicted = q4.distortion / q8.distortion
        assert 0.5 * predicted < measured < 2.0 * predicted


class TestAmplification:
    def test_synthetic_clusters_match_prediction(self):
        rows = make_synthetic_clusters(4200, 64, 8, spread=0.08, seed=5)
        data, queries = rows[:4000], rows[4000:]
        index = IvfTqIndex.build(
            IndexConfig(dim=64, bits=4, n_lists=8, kmeans_seed=3), data
        )
        report = verify_amplification(index, data, queries)
        assert abs(report["relative_gap"]) <= 0.25

    def test_data_equal_centroids_gives_zero_ratio(self):
        """Every vector on its own centroid: residuals vanish, and so does
        the measured IVF estimation error."""
        rows = make_synthetic_clusters(800, 32, 8, spread=0.0, seed=6)
        index = IvfTqIndex.build(
            IndexConfig(dim=32, bits=4, n_lists=8, kmeans_seed=4), rows
        )
        rng = np.random.default_rng(7)
        queries = rng.standard_normal((50, 32))
        report = verify_amplification(index, rows, queries)
        assert report["predicted_ratio"] < 1e-6
        assert report["measured_ratio"] < 1e-3

    def test_mean_ip_085_predicts_030(self):
        """The affinity-to-ratio map itself: 2 * (1 - 0.85) = 0.30."""
        assert 2.0 * (1.0 - 0.85) == pytest.approx(0.30)
