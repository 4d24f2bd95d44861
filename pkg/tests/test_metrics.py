import math

import numpy as np
import pytest

from helpers import make_set
from synbandit.images import ImageArray
from synbandit.metrics import (
    DimensionError,
    GaussianStats,
    InsufficientDataError,
    ProbMatrix,
    SSIM_C1,
    SSIM_C2,
    ValidationError,
    aggregate_scores,
    fid,
    fit_gaussian,
    inception_score,
    minmax_normalize,
    pair_nearest_real,
    per_image_fid_scores,
    per_image_is_scores,
    psnr,
    ssim,
)


def img(arr) -> ImageArray:
    return ImageArray.from_array(np.asarray(arr, dtype=np.uint8))


def random_img(rng, h=16, w=16, c=3) -> ImageArray:
    return img(rng.integers(0, 256, size=(h, w, c), dtype=np.uint8))


class TestSsim:
    def test_identity(self):
        rng = np.random.default_rng(0)
        x = random_img(rng)
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = random_img(rng), random_img(rng)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_constant_images_closed_form(self):
        # one 8x8 window, variances and covariance all zero
        a = img(np.full((8, 8), 100))
        b = img(np.full((8, 8), 120))
        expected = ((2 * 100 * 120 + SSIM_C1) * SSIM_C2) / (
            (100**2 + 120**2 + SSIM_C1) * SSIM_C2
        )
        assert ssim(a, b) == pytest.approx(expected, abs=1e-12)

    def test_bounded_on_random_images(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = random_img(rng, 12, 20), random_img(rng, 12, 20)
            assert abs(ssim(a, b)) <= 1.0 + 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ssim(img(np.zeros((4, 4))), img(np.zeros((5, 4))))


class TestPsnr:
    def test_identical_cap(self):
        rng = np.random.default_rng(3)
        x = random_img(rng)
        assert psnr(x, x) == 99.0

    def test_extreme_single_pixel(self):
        assert psnr(img([[0]]), img([[255]])) == pytest.approx(0.0, abs=1e-12)

    def test_brute_force_equality(self):
        rng = np.random.default_rng(4)
        a, b = random_img(rng), random_img(rng)
        diff = a.pixels.astype(float) - b.pixels.astype(float)
        mse = float(np.mean(diff**2))
        assert psnr(a, b) == pytest.approx(10 * math.log10(255**2 / mse), abs=1e-9)

    def test_monotone_in_noise_amplitude(self):
        rng = np.random.default_rng(5)
        base = rng.integers(60, 196, size=(24, 24, 3))
        values = []
        for amp in (4, 16, 48):
            noisy = np.clip(base + rng.integers(-amp, amp + 1, size=base.shape), 0, 255)
            values.append(psnr(img(base), img(noisy)))
        assert values[0] > values[1] > values[2]


class TestInceptionScore:
    def test_uniform_rows_give_one(self):
        p = ProbMatrix(np.full((10, 4), 0.25))
        assert inception_score(p, splits=1) == pytest.approx(1.0, abs=1e-12)

    def test_balanced_one_hot_gives_num_classes(self):
        c = 5
        rows = np.tile(np.eye(c), (4, 1))
        assert inception_score(ProbMatrix(rows), splits=1) == pytest.approx(c, abs=1e-9)

    def test_brute_force_double_loop(self):
        rng = np.random.default_rng(6)
        raw = rng.random((12, 6))
        rows = raw / raw.sum(axis=1, keepdims=True)
        p = ProbMatrix(rows)
        marginal = rows.mean(axis=0)
        total = 0.0
        for i in range(rows.shape[0]):
            for j in range(rows.shape[1]):
                if rows[i, j] > 0:
                    total += rows[i, j] * math.log(rows[i, j] / marginal[j])
        expected = math.exp(total / rows.shape[0])
        assert inception_score(p, splits=1) == pytest.approx(expected, abs=1e-9)

    def test_at_least_one(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            raw = rng.random((9, 3))
            p = ProbMatrix(raw / raw.sum(axis=1, keepdims=True))
            assert inception_score(p, splits=3) >= 1.0 - 1e-12

    def test_unnormalized_rows_rejected(self):
        with pytest.raises(ValidationError):
            ProbMatrix(np.array([[0.5, 0.4]]))

    def test_split_bound(self):
        p = ProbMatrix(np.full((3, 2), 0.5))
        with pytest.raises(ValidationError):
            inception_score(p, splits=4)


def spd(rng, d):
    a = rng.normal(size=(d, d))
    return a @ a.T + d * np.eye(d)


class TestFid:
    def test_identity_zero(self):
        rng = np.random.default_rng(8)
        g = GaussianStats(rng.normal(size=3), spd(rng, 3))
        assert fid(g, g) == pytest.approx(0.0, abs=1e-6)

    def test_one_dimensional_closed_form(self):
        a = GaussianStats(np.array([0.0]), np.array([[1.0]]))
        b = GaussianStats(np.array([1.0]), np.array([[1.0]]))
        assert fid(a, b) == pytest.approx(1.0, abs=1e-9)
        # general 1-D form: (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2
        c = GaussianStats(np.array([2.0]), np.array([[4.0]]))
        assert fid(a, c) == pytest.approx(2.0**2 + (1.0 - 2.0) ** 2, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(9)
        a = GaussianStats(rng.normal(size=3), spd(rng, 3))
        b = GaussianStats(rng.normal(size=3), spd(rng, 3))
        assert fid(a, b) == pytest.approx(fid(b, a), abs=1e-6)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(10)
        a = GaussianStats(rng.normal(size=4), spd(rng, 4))
        b = GaussianStats(rng.normal(size=4), spd(rng, 4))
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))

        def rotate(g):
            cov = q @ g.covariance @ q.T
            return GaussianStats(q @ g.mean, (cov + cov.T) / 2)

        assert fid(rotate(a), rotate(b)) == pytest.approx(fid(a, b), abs=1e-6)

    def test_nonnegative(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            a = GaussianStats(rng.normal(size=2), spd(rng, 2))
            b = GaussianStats(rng.normal(size=2), spd(rng, 2))
            assert fid(a, b) >= 0.0

    def test_dimension_mismatch(self):
        a = GaussianStats(np.zeros(2), np.eye(2))
        b = GaussianStats(np.zeros(3), np.eye(3))
        with pytest.raises(DimensionError):
            fid(a, b)

    def test_non_psd_rejected(self):
        with pytest.raises(ValidationError):
            GaussianStats(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))


class TestFitGaussian:
    def test_two_point_hand_arithmetic(self):
        g = fit_gaussian(np.array([[0.0], [2.0]]))
        assert g.mean[0] == pytest.approx(1.0)
        assert g.covariance[0, 0] == pytest.approx(2.0)

    def test_identical_vectors_zero_covariance(self):
        g = fit_gaussian(np.tile([1.5, -2.0], (5, 1)))
        assert np.allclose(g.covariance, 0.0)

    def test_brute_force_two_pass(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(20, 3))
        g = fit_gaussian(x)
        mean = x.sum(axis=0) / 20
        cov = np.zeros((3, 3))
        for row in x:
            d = (row - mean)[:, None]
            cov += d @ d.T
        cov /= 19
        assert np.allclose(g.mean, mean, atol=1e-9)
        assert np.allclose(g.covariance, cov, atol=1e-9)

    def test_covariance_psd(self):
        rng = np.random.default_rng(13)
        g = fit_gaussian(rng.normal(size=(30, 4)))
        assert np.min(np.linalg.eigvalsh(g.covariance)) >= -1e-9

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            fit_gaussian(np.array([[1.0, 2.0]]))

    def test_rank_deficient_high_dim_covariance_accepted(self):
        # few samples at high dimension and large scale: eigvalsh roundoff
        # exceeds any absolute tolerance, so validation must be relative
        rng = np.random.default_rng(20)
        x = np.abs(rng.normal(size=(8, 512))) * 1000.0
        g = fit_gaussian(x)
        other = fit_gaussian(np.abs(rng.normal(size=(8, 512))) * 1000.0)
        value = fid(g, other)
        assert math.isfinite(value) and value >= 0.0


class TestAggregates:
    def test_single_metric_me_is_normalized_identity(self):
        scores = {"ssim": np.array([0.1, 0.5, 0.9])}
        assert np.allclose(aggregate_scores(scores, "ME"), minmax_normalize(scores["ssim"]))

    def test_two_metric_mx(self):
        out = aggregate_scores({"a": [0.0, 1.0], "b": [1.0, 0.0]}, "MX")
        assert np.allclose(out, [1.0, 1.0])

    def test_md_matches_sort_and_middle(self):
        rng = np.random.default_rng(14)
        per_metric = {f"m{i}": rng.random(10) for i in range(4)}
        got = aggregate_scores(per_metric, "MD")
        normalized = np.stack([minmax_normalize(v) for v in per_metric.values()])
        for j in range(10):
            col = sorted(normalized[:, j])
            mid = (col[1] + col[2]) / 2
            assert got[j] == pytest.approx(mid, abs=1e-12)

    def test_mx_dominates_each_metric(self):
        rng = np.random.default_rng(15)
        per_metric = {f"m{i}": rng.random(8) for i in range(3)}
        got = aggregate_scores(per_metric, "MX")
        for v in per_metric.values():
            assert np.all(got >= minmax_normalize(v) - 1e-12)

    def test_constant_metric_maps_to_half(self):
        out = aggregate_scores({"flat": [2.0, 2.0, 2.0]}, "ME")
        assert np.allclose(out, 0.5)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            aggregate_scores({"a": [1.0], "b": [1.0, 2.0]}, "ME")


class TestPerImageAttribution:
    def test_is_contributions_match_brute_force(self):
        rng = np.random.default_rng(16)
        raw = rng.random((8, 4))
        rows = raw / raw.sum(axis=1, keepdims=True)
        scores = per_image_is_scores(ProbMatrix(rows))
        marginal = rows.mean(axis=0)
        for i in range(8):
            expected = sum(
                rows[i, j] * math.log(rows[i, j] / marginal[j])
                for j in range(4)
                if rows[i, j] > 0
            )
            assert scores[i] == pytest.approx(expected, abs=1e-9)

    def test_fid_deltas_reward_inliers(self):
        rng = np.random.default_rng(17)
        real = rng.normal(size=(40, 2))
        syn = rng.normal(size=(20, 2))
        outlier = np.array([[25.0, -30.0]])
        vectors = np.vstack([syn, outlier])
        scores = per_image_fid_scores(fit_gaussian(real), vectors)
        assert np.argmin(scores) == 20  # removing the outlier helps most
        base = fid(fit_gaussian(real), fit_gaussian(vectors))
        without_last = fid(fit_gaussian(real), fit_gaussian(vectors[:-1]))
        assert scores[-1] == pytest.approx(without_last - base, abs=1e-9)

    def test_pair_nearest_real_prefers_same_class_neighbour(self):
        real = make_set(
            np.array([[0.0, 0.0], [10.0, 10.0], [0.2, 0.2]]),
            [0, 1, 0],
            domain="real",
            prefix="real",
        )
        syn = make_set(np.array([[0.1, 0.1], [9.0, 9.0]]), [0, 1], prefix="syn")
        pairs = pair_nearest_real(syn, real)
        assert pairs["syn0000"] == "real0000"
        assert pairs["syn0001"] == "real0001"
