"""Tests for dataset generation and ingestion.

Statistical claims are checked against binomial concentration bounds at
large n; the subsampler is checked against a brute-force enumeration of
equal-marginal subsets; mask contiguity uses scipy's connected-component
labelling as the oracle.
"""

import numpy as np
import pytest
from scipy import ndimage

from condis.datagen import (
    AttributeTable,
    DigitPairBatch,
    OcclusionParams,
    digit_pools,
    full_mask_table,
    load_mnist_splits,
    make_pair_batch,
    mask_labels,
    mnist_paths,
    occlusion_mask,
    occlusion_masks,
    parse_idx,
    phi_coefficient,
    read_idx_file,
    resize_bilinear,
    sample_correlated_attributes,
    subsample_to_correlation,
    toy_observations,
    write_idx,
)
from condis.errors import (
    BadMagic,
    EmptyPool,
    Infeasible,
    InfeasibleCorrelation,
    MissingData,
    TruncatedPayload,
)


class TestSampleCorrelatedAttributes:
    def test_values_are_plus_minus_one(self):
        t = sample_correlated_attributes(3, 0.5, 1000, np.random.default_rng(0))
        assert set(np.unique(t.s)) == {-1.0, 1.0}
        assert t.label_mask.all()

    def test_rho_one_pairs_always_agree(self):
        t = sample_correlated_attributes(2, 1.0, 500, np.random.default_rng(1))
        np.testing.assert_array_equal(t.s[:, 0], t.s[:, 1])

    def test_pair_agreement_rate(self):
        # P(s1 = s2) = (1 + rho) / 2 = 0.9 at rho = 0.8
        t = sample_correlated_attributes(2, 0.8, 10**6, np.random.default_rng(2))
        rate = np.mean(t.s[:, 0] == t.s[:, 1])
        assert rate == pytest.approx(0.9, abs=0.002)

    def test_negative_pair_correlation(self):
        t = sample_correlated_attributes(2, -0.5, 10**6, np.random.default_rng(3))
        corr = np.corrcoef(t.s[:, 0], t.s[:, 1])[0, 1]
        assert corr == pytest.approx(-0.5, abs=0.005)

    def test_common_cause_pairwise_correlations(self):
        t = sample_correlated_attributes(4, 0.25, 10**6, np.random.default_rng(4))
        c = np.corrcoef(t.s.T)
        for i in range(4):
            for j in range(i + 1, 4):
                assert c[i, j] == pytest.approx(0.25, abs=0.01), (i, j)

    def test_marginals_uniform_at_every_rho(self):
        n = 10**5
        bound = 3.0 / np.sqrt(n)
        for rho in (0.0, 0.3, 0.9):
            for K in (2, 3, 5):
                t = sample_correlated_attributes(K, rho, n, np.random.default_rng(5))
                assert np.abs(t.s.mean(axis=0)).max() < bound, (K, rho)

    def test_negative_rho_infeasible_beyond_pairs(self):
        with pytest.raises(InfeasibleCorrelation):
            sample_correlated_attributes(3, -0.1, 10, np.random.default_rng(0))

    def test_rho_out_of_range(self):
        with pytest.raises(ValueError):
            sample_correlated_attributes(2, 1.5, 10, np.random.default_rng(0))

    def test_deterministic(self):
        a = sample_correlated_attributes(3, 0.4, 100, np.random.default_rng(7))
        b = sample_correlated_attributes(3, 0.4, 100, np.random.default_rng(7))
        np.testing.assert_array_equal(a.s, b.s)


class TestToyObservations:
    def test_noiseless_identity_mixing(self):
        attrs = sample_correlated_attributes(2, 0.8, 50, np.random.default_rng(0))
        data = toy_observations(attrs, np.eye(2), 0.0, np.random.default_rng(1))
        np.testing.assert_array_equal(data.x, attrs.s)

    def test_observation_covariance(self):
        rng = np.random.default_rng(8)
        attrs = sample_correlated_attributes(2, 0.8, 10**6, rng)
        A = np.array([[1.0, 0.3], [-0.2, 0.9]])
        data = toy_observations(attrs, A, 0.5, rng)
        C_s = np.array([[1.0, 0.8], [0.8, 1.0]])
        expected = A @ C_s @ A.T + 0.25 * np.eye(2)
        emp = np.cov(data.x.T)
        np.testing.assert_allclose(emp, expected, atol=0.01)

    def test_observed_correlation_shrinks_with_noise(self):
        # identity mixing: corr(x1, x2) = rho / (1 + sigma^2)
        rng = np.random.default_rng(9)
        attrs = sample_correlated_attributes(2, 0.8, 10**6, rng)
        data = toy_observations(attrs, np.eye(2), np.sqrt(0.1), rng)
        corr = np.corrcoef(data.x.T)[0, 1]
        assert corr == pytest.approx(0.8 / 1.1, abs=0.005)

    def test_mixing_shape_checked(self):
        attrs = sample_correlated_attributes(2, 0.0, 10, np.random.default_rng(0))
        with pytest.raises(ValueError):
            toy_observations(attrs, np.eye(3), 0.1, np.random.default_rng(0))


def attrs_from_cells(n00, n01, n10, n11):
    rows = []
    for count, (a, b) in zip(
        (n00, n01, n10, n11), ((-1, -1), (-1, 1), (1, -1), (1, 1))
    ):
        rows.extend([(a, b)] * count)
    return full_mask_table(np.array(rows, dtype=float))


def brute_force_best_size(cells, target, tol=1e-3):
    """Enumerate all equal-marginal subsets (t, t diagonal; u, u off)."""
    diag_cap = min(cells[0], cells[3])
    off_cap = min(cells[1], cells[2])
    best = 0
    for t in range(diag_cap + 1):
        for u in range(off_cap + 1):
            if t + u == 0:
                continue
            if abs((t - u) / (t + u) - target) <= tol:
                best = max(best, 2 * (t + u))
    return best


class TestSubsampleToCorrelation:
    def test_balanced_table_returns_all_rows(self):
        attrs = attrs_from_cells(25, 25, 25, 25)
        idx = subsample_to_correlation(attrs, 0.0, rng=0)
        np.testing.assert_array_equal(idx, np.arange(100))

    def test_matching_table_returns_all_rows(self):
        # full-table phi is 0.6 already
        attrs = attrs_from_cells(40, 10, 10, 40)
        idx = subsample_to_correlation(attrs, 0.6, rng=0)
        assert len(idx) == 100

    def test_worked_example_forty_rows(self):
        attrs = attrs_from_cells(40, 10, 10, 40)
        idx = subsample_to_correlation(attrs, 0.0, rng=0)
        assert len(idx) == 40
        sub = attrs.s[idx]
        counts = np.bincount(
            2 * (sub[:, 0] > 0).astype(int) + (sub[:, 1] > 0).astype(int), minlength=4
        )
        np.testing.assert_array_equal(counts, [10, 10, 10, 10])

    def test_infeasible_target(self):
        with pytest.raises(Infeasible):
            subsample_to_correlation(attrs_from_cells(0, 5, 5, 0), 1.0, rng=0)

    def test_phi_within_tolerance_and_maximal(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            cells = tuple(int(c) for c in rng.integers(0, 60, size=4))
            target = float(rng.uniform(-1, 1))
            attrs = attrs_from_cells(*cells)
            if attrs.n == 0:
                continue
            expected = brute_force_best_size(cells, target)
            full_ok = abs(phi_coefficient(cells) - target) <= 1e-3
            if expected == 0 and not full_ok:
                with pytest.raises(Infeasible):
                    subsample_to_correlation(attrs, target, rng=0)
                continue
            idx = subsample_to_correlation(attrs, target, rng=0)
            if full_ok:
                assert len(idx) == attrs.n
                continue
            assert len(idx) == expected
            sub = attrs.s[idx]
            kept = np.bincount(
                2 * (sub[:, 0] > 0).astype(int) + (sub[:, 1] > 0).astype(int),
                minlength=4,
            )
            assert abs(phi_coefficient(kept) - target) <= 1e-3

    def test_indices_unique_and_valid(self):
        attrs = attrs_from_cells(30, 12, 9, 28)
        idx = subsample_to_correlation(attrs, 0.2, rng=3)
        assert len(np.unique(idx)) == len(idx)
        assert idx.min() >= 0 and idx.max() < attrs.n

    def test_deterministic_given_seed(self):
        attrs = attrs_from_cells(30, 12, 9, 28)
        a = subsample_to_correlation(attrs, 0.0, rng=5)
        b = subsample_to_correlation(attrs, 0.0, rng=5)
        np.testing.assert_array_equal(a, b)


class TestOcclusionMask:
    def test_level_zero_all_clear(self):
        m = occlusion_mask(16, 16, OcclusionParams(level=0.0), np.random.default_rng(0))
        assert not m.any()

    def test_level_one_all_masked(self):
        m = occlusion_mask(16, 16, OcclusionParams(level=1.0), np.random.default_rng(0))
        assert m.all()

    def test_exact_pixel_budget(self):
        m = occlusion_mask(32, 32, OcclusionParams(level=0.6), np.random.default_rng(1))
        assert m.sum() == round(0.6 * 32 * 32) == 614

    def test_budget_matches_level_across_settings(self):
        rng = np.random.default_rng(2)
        for level in (0.1, 0.25, 0.5, 0.77):
            for h, w in ((10, 10), (32, 32), (17, 23)):
                m = occlusion_mask(h, w, OcclusionParams(level=level), rng)
                assert m.sum() == round(level * h * w), (level, h, w)

    def test_masks_are_contiguous_blobs(self):
        counts = []
        for seed in range(20):
            m = occlusion_mask(
                32, 32, OcclusionParams(level=0.6), np.random.default_rng(seed)
            )
            _, n_blobs = ndimage.label(m)
            counts.append(n_blobs)
        assert np.mean(counts) < 10

    def test_batched_matches_sequence_lengths(self):
        ms = occlusion_masks(
            8, 12, 12, OcclusionParams(level=0.3), np.random.default_rng(3)
        )
        assert ms.shape == (8, 12, 12)
        assert all(m.sum() == round(0.3 * 144) for m in ms)

    def test_deterministic(self):
        p = OcclusionParams(level=0.4)
        a = occlusion_mask(20, 20, p, np.random.default_rng(4))
        b = occlusion_mask(20, 20, p, np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            OcclusionParams(level=1.5)
        with pytest.raises(ValueError):
            OcclusionParams(level=0.5, grid=1)
        with pytest.raises(ValueError):
            OcclusionParams(level=0.5, fill_value=2.0)


class TestIdx:
    def test_image_round_trip_bit_exact(self):
        rng = np.random.default_rng(5)
        imgs = rng.integers(0, 256, size=(2, 28, 28)).astype(np.uint8)
        back = parse_idx(write_idx(imgs))
        assert back.dtype == np.uint8
        np.testing.assert_array_equal(back, imgs)

    def test_label_round_trip(self):
        labels = np.array([3, 8, 8, 3, 1], dtype=np.uint8)
        np.testing.assert_array_equal(parse_idx(write_idx(labels)), labels)

    def test_dims_come_from_header(self):
        imgs = np.arange(3 * 5 * 7, dtype=np.uint8).reshape(3, 5, 7)
        assert parse_idx(write_idx(imgs)).shape == (3, 5, 7)

    def test_bad_magic(self):
        blob = bytes.fromhex("DEADBEEF") + bytes(16)
        with pytest.raises(BadMagic):
            parse_idx(blob)

    def test_truncated_payload(self):
        blob = write_idx(np.zeros((2, 4, 4), dtype=np.uint8))
        with pytest.raises(TruncatedPayload):
            parse_idx(blob[:-1])

    def test_truncated_header(self):
        blob = write_idx(np.zeros((2, 4, 4), dtype=np.uint8))
        with pytest.raises(TruncatedPayload):
            parse_idx(blob[:9])

    def test_file_helpers(self, tmp_path):
        labels = np.array([1, 2, 3], dtype=np.uint8)
        path = tmp_path / "x.idx"
        path.write_bytes(write_idx(labels))
        np.testing.assert_array_equal(read_idx_file(path), labels)
        with pytest.raises(MissingData):
            read_idx_file(tmp_path / "absent.idx")


def synthetic_pools(rng, n3=6, n8=6):
    pool_3 = rng.integers(0, 256, size=(n3, 28, 28)).astype(np.uint8)
    pool_8 = rng.integers(0, 256, size=(n8, 28, 28)).astype(np.uint8)
    return pool_3, pool_8


class TestMakePairBatch:
    def test_rho_one_labels_match(self):
        pool_3, pool_8 = synthetic_pools(np.random.default_rng(6))
        batch = make_pair_batch(
            pool_3, pool_8, 1.0, OcclusionParams(level=0.2), 64, np.random.default_rng(7)
        )
        np.testing.assert_array_equal(batch.left_labels, batch.right_labels)

    def test_match_rate(self):
        pool_3, pool_8 = synthetic_pools(np.random.default_rng(8))
        batch = make_pair_batch(
            pool_3, pool_8, 0.9, OcclusionParams(level=0.0), 10**4,
            np.random.default_rng(9),
        )
        rate = np.mean(batch.left_labels == batch.right_labels)
        assert rate == pytest.approx(0.95, abs=0.01)

    def test_zero_occlusion_equals_resized_digits(self):
        pool_3, pool_8 = synthetic_pools(np.random.default_rng(10), n3=1, n8=1)
        batch = make_pair_batch(
            pool_3, pool_8, 1.0, OcclusionParams(level=0.0), 8,
            np.random.default_rng(11),
        )
        resized = {
            0: resize_bilinear(pool_3[0] / 255.0, 32, 32),
            1: resize_bilinear(pool_8[0] / 255.0, 32, 32),
        }
        for i in range(8):
            np.testing.assert_array_equal(batch.images[i, :, :32], resized[batch.left_labels[i]])
            np.testing.assert_array_equal(batch.images[i, :, 32:], resized[batch.right_labels[i]])

    def test_shapes_and_range(self):
        pool_3, pool_8 = synthetic_pools(np.random.default_rng(12))
        batch = make_pair_batch(
            pool_3, pool_8, 0.0, OcclusionParams(level=0.5), 16,
            np.random.default_rng(13),
        )
        assert batch.images.shape == (16, 32, 64)
        assert batch.images.min() >= 0.0 and batch.images.max() <= 1.0
        assert set(np.unique(batch.left_labels)) <= {0, 1}

    def test_left_half_ignores_right_pool_content(self):
        rng = np.random.default_rng(14)
        pool_3, pool_8 = synthetic_pools(rng)
        pool_8_alt = 255 - pool_8
        params = OcclusionParams(level=0.3)
        a = make_pair_batch(pool_3, pool_8, 0.5, params, 64, np.random.default_rng(15))
        b = make_pair_batch(pool_3, pool_8_alt, 0.5, params, 64, np.random.default_rng(15))
        np.testing.assert_array_equal(a.left_labels, b.left_labels)
        left_is_3 = a.left_labels == 0
        np.testing.assert_array_equal(
            a.images[left_is_3, :, :32], b.images[left_is_3, :, :32]
        )

    def test_empty_pool(self):
        pool_3, pool_8 = synthetic_pools(np.random.default_rng(16))
        with pytest.raises(EmptyPool):
            make_pair_batch(
                pool_3[:0], pool_8, 0.0, OcclusionParams(level=0.1), 4,
                np.random.default_rng(17),
            )

    def test_occluded_pixels_are_gray(self):
        pool_3, pool_8 = synthetic_pools(np.random.default_rng(18), n3=1, n8=1)
        # black digits make the gray fill unambiguous
        pool_3 = np.zeros_like(pool_3)
        pool_8 = np.zeros_like(pool_8)
        batch = make_pair_batch(
            pool_3, pool_8, 1.0, OcclusionParams(level=0.5, fill_value=0.5), 4,
            np.random.default_rng(19),
        )
        for img in batch.images:
            half_budget = round(0.5 * 32 * 32)
            assert (img[:, :32] == 0.5).sum() == half_budget
            assert (img[:, 32:] == 0.5).sum() == half_budget


class TestMaskLabels:
    def test_fraction_one_is_identity(self):
        attrs = sample_correlated_attributes(2, 0.5, 100, np.random.default_rng(20))
        out = mask_labels(attrs, 1.0, np.random.default_rng(21))
        assert out.label_mask.all()

    def test_exact_count_per_attribute(self):
        attrs = sample_correlated_attributes(2, 0.5, 10260, np.random.default_rng(22))
        out = mask_labels(attrs, 0.05, np.random.default_rng(23))
        np.testing.assert_array_equal(out.label_mask.sum(axis=0), [513, 513])

    def test_independent_quarters(self):
        n = 10**5
        attrs = sample_correlated_attributes(2, 0.5, n, np.random.default_rng(24))
        out = mask_labels(attrs, 0.5, np.random.default_rng(25))
        both = np.mean(out.label_mask[:, 0] & out.label_mask[:, 1])
        assert both == pytest.approx(0.25, abs=0.01)

    def test_composes_with_existing_mask(self):
        attrs = sample_correlated_attributes(2, 0.5, 1000, np.random.default_rng(26))
        once = mask_labels(attrs, 0.5, np.random.default_rng(27))
        twice = mask_labels(once, 1.0, np.random.default_rng(28))
        np.testing.assert_array_equal(once.label_mask, twice.label_mask)

    def test_fraction_zero_rejected(self):
        attrs = sample_correlated_attributes(2, 0.5, 10, np.random.default_rng(29))
        with pytest.raises(ValueError):
            mask_labels(attrs, 0.0, np.random.default_rng(30))


class TestMnistLoading:
    def write_cache(self, root, n_train=12, n_test=6):
        rng = np.random.default_rng(31)
        paths = mnist_paths(root)
        paths["train_images"].parent.mkdir(parents=True, exist_ok=True)
        sets = {
            "train": (n_train, "train_images", "train_labels"),
            "test": (n_test, "test_images", "test_labels"),
        }
        arrays = {}
        for _, (n, img_key, lab_key) in sets.items():
            imgs = rng.integers(0, 256, size=(n, 28, 28)).astype(np.uint8)
            labels = rng.choice([3, 8, 1], size=n).astype(np.uint8)
            paths[img_key].write_bytes(write_idx(imgs))
            paths[lab_key].write_bytes(write_idx(labels))
            arrays[img_key], arrays[lab_key] = imgs, labels
        return arrays

    def test_split_sizes_and_content(self, tmp_path):
        arrays = self.write_cache(tmp_path, n_train=12, n_test=6)
        splits = load_mnist_splits(tmp_path)
        # last sixth of train held out for validation
        assert len(splits.train_images) == 10 and len(splits.val_images) == 2
        np.testing.assert_array_equal(splits.train_images, arrays["train_images"][:10])
        np.testing.assert_array_equal(splits.val_images, arrays["train_images"][10:])
        np.testing.assert_array_equal(splits.test_labels, arrays["test_labels"])

    def test_missing_files(self, tmp_path):
        with pytest.raises(MissingData):
            load_mnist_splits(tmp_path)

    def test_digit_pools_filter(self, tmp_path):
        arrays = self.write_cache(tmp_path)
        pools = digit_pools(arrays["train_images"], arrays["train_labels"])
        assert set(pools) == {3, 8}
        for d in (3, 8):
            assert len(pools[d]) == (arrays["train_labels"] == d).sum()


class TestTableTypes:
    def test_shape_agreement_enforced(self):
        with pytest.raises(ValueError):
            AttributeTable(s=np.zeros((3, 2)), label_mask=np.ones((3, 3), dtype=bool))

    def test_pair_batch_rejects_out_of_range_pixels(self):
        with pytest.raises(ValueError):
            DigitPairBatch(
                images=np.full((1, 32, 64), 2.0),
                left_labels=np.array([0]),
                right_labels=np.array([0]),
            )
