"""Index construction, encoding, search, accounting, and ablation."""

import numpy as np
import pytest

from ivftq.data_io import make_sift_like
from ivftq.evaluation import exact_topk, recall_at_k
from ivftq.index import (
    IndexConfig,
    IvfTqIndex,
    build,
    pack_fields,
    search_flat_tq,
    unpack_fields,
)


def _dataset(n=2000, d=32, seed=0):
    rows = make_sift_like(n, d, seed=seed)
    return rows


@pytest.fixture(scope="module")
def small_index():
    data = _dataset(2000, 32, seed=0)
    cfg = IndexConfig(dim=32, bits=4, n_lists=16, keep_raw=True)
    return IvfTqIndex.build(cfg, data), data


class TestPacking:
    @pytest.mark.parametrize("width", [1, 2, 3, 4, 5, 7, 8])
    def test_round_trip(self, width):
        rng = np.random.default_rng(width)
        values = rng.integers(0, 1 << width, size=(200, 37), dtype=np.uint8)
        packed = pack_fields(values, width)
        assert packed.shape == (200, -(-37 * width // 8))
        np.testing.assert_array_equal(unpack_fields(packed, width, 37), values)

    def test_layout_is_coordinate_major_little_endian(self):
        # two 4-bit fields per byte: value j=0 in the low nibble
        packed = pack_fields(np.array([[0x3, 0xA]], dtype=np.uint8), 4)
        assert packed.tolist() == [[0xA3]]

    def test_bad_width_rejected(self):
        with pytest.raises(ValueError):
            pack_fields(np.zeros((1, 4), dtype=np.uint8), 9)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            IndexConfig(dim=1, bits=4, n_lists=4)
        with pytest.raises(ValueError):
            IndexConfig(dim=8, bits=0, n_lists=4)
        with pytest.raises(ValueError):
            IndexConfig(dim=8, bits=4, n_lists=0)
        with pytest.raises(ValueError):
            IndexConfig(dim=8, bits=4, n_lists=2, flat=True)


class TestBuild:
    def test_zero_norm_row_rejected_with_index(self):
        data = _dataset(300, 16, seed=1).copy()
        data[7] = 0.0
        with pytest.raises(ValueError, match="row at index 7"):
            IvfTqIndex.build(IndexConfig(dim=16, bits=2, n_lists=4), data)

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValueError):
            IvfTqIndex.build(
                IndexConfig(dim=16, bits=2, n_lists=64), _dataset(32, 16, seed=1)
            )

    def test_self_retrieval_with_full_probe(self, small_index):
        """Nearly every training vector is its own nearest neighbor."""
        index, data = small_index
        ids, _ = index.search_batch(data[:500], 1, n_p=16)
        assert np.mean(ids[:, 0] == np.arange(500)) >= 0.99

    def test_single_list_degenerate_build_still_searches(self):
        data = _dataset(300, 16, seed=2)
        index = IvfTqIndex.build(IndexConfig(dim=16, bits=4, n_lists=1), data)
        result = index.search(data[0], 5, n_p=1)
        assert len(result.ids) == 5
        assert result.ids[0] == 0


class TestEncode:
    def test_centroid_input_has_zero_residual(self, small_index):
        index, _ = small_index
        code = index.encode(index.partition.centroids[3].astype(np.float64))
        assert code.list_id == 3
        assert float(code.residual_norm) == 0.0
        assert set(code.codes) == {0}
        assert set(code.signs) == {0}

    def test_encode_deterministic(self, small_index):
        index, data = small_index
        a = index.encode(data[17])
        b = index.encode(data[17])
        assert a == b

    def test_zero_vector_rejected(self, small_index):
        index, _ = small_index
        with pytest.raises(ValueError):
            index.encode(np.zeros(32))

    def test_reconstruction_error_within_rate_envelope(self, small_index):
        """|x_hat - x_tilde| <= |r| * (sqrt(D_b) + margin) for nearly all
        vectors; the quantized unit residual concentrates at sqrt(D_b)."""
        index, data = small_index
        from ivftq.refresh import reconstruct_all

        xn = data / np.linalg.norm(data, axis=1)[:, None]
        recon = reconstruct_all(index, renormalize=False)
        err = np.linalg.norm(recon - xn, axis=1)
        rnorm = index.norms.astype(np.float64)
        bound = rnorm * (np.sqrt(index.quantizer.distortion_sign) + 0.15)
        assert np.mean(err <= bound) >= 0.99

    def test_add_then_search_finds_new_vector(self, small_index):
        index, _ = small_index
        before = index.count
        rng = np.random.default_rng(5)
        v = rng.standard_normal(32)
        new_id = index.add(v)
        assert new_id == before
        ids, _ = index.search_batch(v[None, :], 1, n_p=16, rerank_depth=4)
        assert ids[0, 0] == new_id

    def test_adds_never_touch_compression_layer(self, small_index):
        index, _ = small_index
        quantizer, rot = index.quantizer, index.rot
        fp = index.compression_fingerprint()
        rng = np.random.default_rng(6)
        index.add_batch(rng.standard_normal((50, 32)))
        assert index.quantizer is quantizer
        assert index.rot is rot
        assert index.compression_fingerprint() == fp

    def test_interleaved_adds_match_batch_build_recall(self):
        """Equal final content + the same injected partition -> identical
        recall, regardless of add order or interleaved searches."""
        from ivftq.partition import CoarsePartition

        data = _dataset(1200, 16, seed=3)
        queries = _dataset(100, 16, seed=4)
        cfg = IndexConfig(dim=16, bits=3, n_lists=8)
        batch = IvfTqIndex.build(cfg, data)

        shared = CoarsePartition(
            n_lists=8, dim=16, centroids=batch.partition.centroids.copy()
        )
        incremental = IvfTqIndex(cfg, batch.quantizer, batch.rot, shared)
        incremental.add_batch(data[:600])
        incremental.search_batch(queries, 5, n_p=8)  # interleave
        for row in data[600:900]:
            incremental.add(row)
        incremental.add_batch(data[900:])

        truth = exact_topk(
            data / np.linalg.norm(data, axis=1)[:, None], queries, 10
        )
        r_batch = recall_at_k(batch.search_batch(queries, 10, n_p=8)[0], truth, 10)
        r_inc = recall_at_k(
            incremental.search_batch(queries, 10, n_p=8)[0], truth, 10
        )
        assert r_batch == r_inc


class TestSearch:
    def test_exact_self_query_with_rerank(self, small_index):
        index, data = small_index
        res = index.search(data[42], 1, n_p=16, rerank_depth=20)
        assert res.ids[0] == 42
        assert abs(res.scores[0] - 1.0) < 1e-4

    def test_scores_non_increasing_ids_distinct(self, small_index):
        index, data = small_index
        res = index.search(data[0], 10, n_p=4)
        assert np.all(np.diff(res.scores) <= 0)
        assert len(set(res.ids.tolist())) == len(res.ids)

    def test_candidate_superset_under_growing_probe(self, small_index):
        index, data = small_index
        rng = np.random.default_rng(8)
        q = rng.standard_normal(32)
        shallow, _ = index.search_batch(q[None], 2000, n_p=4)
        deep, _ = index.search_batch(q[None], 2000, n_p=8)
        shallow_ids = set(shallow[0][shallow[0] >= 0].tolist())
        deep_ids = set(deep[0][deep[0] >= 0].tolist())
        assert shallow_ids <= deep_ids

    def test_nprobe_clamped_with_warning(self, small_index):
        index, data = small_index
        with pytest.warns(UserWarning, match="clamping"):
            index.search(data[0], 3, n_p=999)

    def test_rerank_without_raw_store_rejected(self):
        data = _dataset(300, 16, seed=7)
        index = IvfTqIndex.build(
            IndexConfig(dim=16, bits=2, n_lists=4, keep_raw=False), data
        )
        with pytest.raises(ValueError, match="keep_raw"):
            index.search(data[0], 3, n_p=2, rerank_depth=5)

    def test_dimension_mismatch_rejected(self, small_index):
        index, _ = small_index
        with pytest.raises(ValueError, match="dim"):
            index.search(np.ones(16), 3, n_p=2)

    def test_invalid_k_and_np(self, small_index):
        index, data = small_index
        with pytest.raises(ValueError):
            index.search(data[0], 0, n_p=2)
        with pytest.raises(ValueError):
            index.search(data[0], 3, n_p=0)

    def test_score_decomposition_exact_without_quantization(self, small_index):
        """With the true unit residual and stored norm, the asymmetric score
        equals the exact inner product up to binary16 rounding of the norm."""
        index, data = small_index
        rng = np.random.default_rng(9)
        q = rng.standard_normal(32)
        qn = q / np.linalg.norm(q)
        for i in (3, 100, 999):
            x = data[i] / np.linalg.norm(data[i])
            l = int(index.list_ids[i])
            cent = index.partition.centroids[l].astype(np.float64)
            r = x - cent
            rho = index.rot.apply(r / np.linalg.norm(r))
            est = qn @ cent + float(index.norms[i]) * (index.rot.apply(qn) @ rho)
            exact = qn @ x
            assert abs(est - exact) <= np.linalg.norm(r) * 2**-10 + 1e-9


class TestFlatMode:
    def test_flat_search_matches_module_function(self):
        data = _dataset(500, 16, seed=10)
        index = IvfTqIndex.build(
            IndexConfig(dim=16, bits=8, n_lists=1, flat=True), data
        )
        res = search_flat_tq(index, data[5], 5)
        assert res.ids[0] == 5

    def test_flat_rejected_on_ivf_index(self, small_index):
        index, data = small_index
        with pytest.raises(ValueError):
            search_flat_tq(index, data[0], 5)

    def test_high_rate_flat_approaches_exact_search(self):
        """8-bit, no sign: recall against exact truth is essentially 1."""
        rng = np.random.default_rng(11)
        data = rng.standard_normal((10_000, 128))
        queries = rng.standard_normal((100, 128))
        index = IvfTqIndex.build(
            IndexConfig(dim=128, bits=8, n_lists=1, flat=True, use_sign_bit=False),
            data,
        )
        truth = exact_topk(
            data / np.linalg.norm(data, axis=1)[:, None], queries, 10
        )
        ids, _ = index.search_batch(queries, 10, n_p=1)
        assert recall_at_k(ids, truth, 10) >= 0.99


class TestAccounting:
    @pytest.mark.parametrize(
        "dim,n_lists,expected_exact,expected_paper",
        [(128, 1000, 666, 672), (96, 64, 502, 512), (200, 1000, 1026, 1032)],
    )
    def test_logical_bit_budget(self, dim, n_lists, expected_exact, expected_paper):
        rng = np.random.default_rng(12)
        data = rng.standard_normal((max(n_lists, 1200), dim))
        index = IvfTqIndex.build(
            IndexConfig(dim=dim, bits=4, n_lists=n_lists, kmeans_seed=1), data
        )
        acct = index.bit_accounting()
        assert acct["bits_per_vec"] == expected_exact
        assert acct["bits_per_vec_32bit_overhead"] == expected_paper
        breakdown = acct["breakdown"]
        assert breakdown["code_bits"] == 4 * dim
        assert breakdown["sign_bits"] == dim
        assert breakdown["norm_bits"] == 16

    def test_sign_off_drops_sign_bits(self):
        data = _dataset(300, 16, seed=13)
        index = IvfTqIndex.build(
            IndexConfig(dim=16, bits=4, n_lists=2, use_sign_bit=False), data
        )
        assert index.bit_accounting()["breakdown"]["sign_bits"] == 0


class TestBitFlipAblation:
    def test_zero_fraction_means_zero_drop(self, small_index):
        index, data = small_index
        queries = _dataset(50, 32, seed=14)
        report = index.bit_flip_ablation("msb_primary", 0.0, queries, 10, 16)
        assert report["recall_drop"] == 0.0

    def test_codes_restored_after_ablation(self, small_index):
        index, data = small_index
        queries = _dataset(50, 32, seed=15)
        before = index.bins.copy()
        index.bit_flip_ablation("msb_primary", 0.5, queries, 10, 16, seed=1)
        np.testing.assert_array_equal(index.bins, before)

    def test_msb_hurts_much_more_than_lsb(self):
        data = make_sift_like(8000, 64, seed=16)
        queries = make_sift_like(200, 64, seed=17)
        index = IvfTqIndex.build(
            IndexConfig(dim=64, bits=5, n_lists=32, keep_raw=True, kmeans_seed=3),
            data,
        )
        msb = index.bit_flip_ablation("msb_primary", 0.05, queries, 10, 32, seed=2)
        lsb = index.bit_flip_ablation("lsb_primary", 0.05, queries, 10, 32, seed=2)
        sign = index.bit_flip_ablation("sign", 0.05, queries, 10, 32, seed=2)
        assert msb["recall_drop"] > 3 * max(lsb["recall_drop"], 1e-3)
        assert sign["recall_drop"] <= lsb["recall_drop"] + 0.01

    def test_sign_ablation_requires_sign_bit(self):
        data = _dataset(300, 16, seed=18)
        index = IvfTqIndex.build(
            IndexConfig(dim=16, bits=2, n_lists=4, use_sign_bit=False, keep_raw=True),
            data,
        )
        with pytest.raises(ValueError):
            index.bit_flip_ablation("sign", 0.1, data[:10], 5, 4)


class TestBuildFunction:
    def test_module_level_build_wrapper(self):
        data = _dataset(300, 16, seed=19)
        index = build(IndexConfig(dim=16, bits=2, n_lists=4), data)
        assert index.count == 300
