import numpy as np
import pytest

from decloud.detection import DetectorConfig
from decloud.simulation import (
    CloudSimParams,
    CoverageError,
    composite_clouds,
    detection_scores,
    generate_cloud_alpha,
    rre,
    run_experiment,
    run_method,
    smooth_lowrank_sequence,
)
from decloud.tensor_ops import ImageSequence, ObservationMask, reshape_to_matrix


class TestCloudAlpha:
    def test_zero_coverage_is_zero(self):
        params = CloudSimParams(coverage=0.0, seed=1)
        alpha = generate_cloud_alpha((8, 8, 5), params)
        assert np.array_equal(alpha, np.zeros((8, 8, 5)))

    def test_full_cover_frames_forced(self):
        params = CloudSimParams(coverage=0.3, full_cover_frames=(2,), seed=2)
        alpha = generate_cloud_alpha((16, 16, 5), params)
        assert np.array_equal(alpha[:, :, 2], np.ones((16, 16)))

    def test_deterministic(self):
        params = CloudSimParams(coverage=0.4, full_cover_frames=(0,), seed=3)
        a = generate_cloud_alpha((12, 12, 6), params)
        b = generate_cloud_alpha((12, 12, 6), params)
        assert np.array_equal(a, b)

    def test_coverage_within_tolerance(self):
        params = CloudSimParams(coverage=0.4, seed=4)
        alpha = generate_cloud_alpha((32, 32, 10), params)
        for l in range(10):
            cov = (alpha[:, :, l] > 0.5).mean()
            assert abs(cov - 0.4) <= 0.05

    def test_values_in_unit_interval(self):
        params = CloudSimParams(coverage=0.5, seed=5)
        alpha = generate_cloud_alpha((16, 16, 4), params)
        assert alpha.min() >= 0.0 and alpha.max() <= 1.0

    def test_infeasible_coverage_raises(self):
        # blobs too tiny to ever reach the target within the scale cap
        params = CloudSimParams(coverage=0.5, blob_scale=1e-9, seed=6)
        with pytest.raises(CoverageError):
            generate_cloud_alpha((16, 16, 3), params)

    def test_bad_full_cover_index(self):
        params = CloudSimParams(coverage=0.1, full_cover_frames=(9,), seed=7)
        with pytest.raises(ValueError):
            generate_cloud_alpha((8, 8, 5), params)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            CloudSimParams(coverage=1.5)
        with pytest.raises(ValueError):
            CloudSimParams(n_blobs_per_frame=(0, 3))
        with pytest.raises(ValueError):
            CloudSimParams(cloud_intensity=(0.9, 0.8))


class TestComposite:
    def setup_method(self):
        self.clean = smooth_lowrank_sequence(12, 12, 1, 8, rank=1, seed=8)

    def test_zero_alpha_identity(self):
        alpha = np.zeros((12, 12, 8))
        cloudy, mask = composite_clouds(self.clean, alpha, seed=1)
        assert np.array_equal(cloudy.data, self.clean.data)
        assert mask.observed.all()

    def test_full_alpha_fixed_intensity(self):
        alpha = np.ones((12, 12, 8))
        cloudy, mask = composite_clouds(self.clean, alpha, intensity=(0.9, 0.9), seed=2)
        assert np.allclose(cloudy.data, 0.9)
        assert not mask.observed.any()

    def test_untouched_entries_bit_equal(self):
        rng = np.random.default_rng(9)
        alpha = (rng.uniform(size=(12, 12, 8)) < 0.3) * rng.uniform(0.6, 1.0, size=(12, 12, 8))
        cloudy, _ = composite_clouds(self.clean, alpha, seed=3)
        untouched = alpha == 0.0
        for k in range(1):
            assert np.array_equal(cloudy.data[:, :, k, :][untouched],
                                  self.clean.data[:, :, k, :][untouched])

    def test_mask_matches_alpha_threshold_exactly(self):
        rng = np.random.default_rng(10)
        alpha = rng.uniform(size=(12, 12, 8))
        _, mask = composite_clouds(self.clean, alpha, seed=4)
        assert np.array_equal(mask.observed, alpha <= 0.5)

    def test_deterministic(self):
        alpha = generate_cloud_alpha((12, 12, 8), CloudSimParams(coverage=0.3, seed=5))
        a, _ = composite_clouds(self.clean, alpha, seed=6)
        b, _ = composite_clouds(self.clean, alpha, seed=6)
        assert np.array_equal(a.data, b.data)


class TestRre:
    def test_exact_match_is_zero(self):
        rng = np.random.default_rng(11)
        a = rng.uniform(size=(5, 5))
        assert rre(a, a) == 0.0

    def test_zero_estimate_is_one(self):
        rng = np.random.default_rng(12)
        a = rng.uniform(0.1, 1.0, size=(5, 5))
        assert rre(np.zeros_like(a), a) == pytest.approx(1.0)

    def test_scaling_algebra(self):
        rng = np.random.default_rng(13)
        a = rng.uniform(0.1, 1.0, size=(6, 4))
        for beta in (0.5, 1.5, 2.0):
            assert rre(beta * a, a) == pytest.approx((beta - 1.0) ** 2, rel=1e-12)

    def test_zero_truth_raises(self):
        with pytest.raises(ValueError):
            rre(np.ones((2, 2)), np.zeros((2, 2)))

    def test_accepts_sequences(self):
        seq = smooth_lowrank_sequence(4, 4, 1, 3, rank=1, seed=14)
        assert rre(seq, seq) == 0.0


class TestSmoothLowrank:
    def test_exact_rank(self):
        seq = smooth_lowrank_sequence(16, 16, 1, 20, rank=3, seed=15)
        s = np.linalg.svd(reshape_to_matrix(seq).values, compute_uv=False)
        assert (s > 1e-10 * s[0]).sum() == 3

    def test_range(self):
        seq = smooth_lowrank_sequence(8, 8, 1, 10, rank=2, seed=16, peak=0.5)
        assert seq.data.max() == pytest.approx(0.5)
        assert seq.data.min() > 0.0


class TestDetectionScores:
    def test_perfect(self):
        observed = np.random.default_rng(17).uniform(size=(6, 6, 4)) < 0.5
        mask = ObservationMask(observed)
        p, r = detection_scores(mask, mask)
        assert p == 1.0 and r == 1.0

    def test_counts(self):
        det = ObservationMask(np.array([[[True, True, False, False]]]))
        tru = ObservationMask(np.array([[[True, False, True, False]]]))
        p, r = detection_scores(det, tru)
        assert p == 0.5 and r == 0.5


class TestRunMethod:
    def test_unknown_method(self):
        y = reshape_to_matrix(smooth_lowrank_sequence(4, 4, 1, 3, rank=1, seed=18))
        mask = ObservationMask(np.ones((4, 4, 3), dtype=bool))
        with pytest.raises(ValueError):
            run_method("pca", y, mask, 1.0, 0.0)

    def test_interp_rejects_solver_options(self):
        y = reshape_to_matrix(smooth_lowrank_sequence(4, 4, 1, 3, rank=1, seed=19))
        mask = ObservationMask(np.ones((4, 4, 3), dtype=bool))
        with pytest.raises(ValueError):
            run_method("interp", y, mask, 1.0, 0.0, max_outer=5)


@pytest.fixture(scope="module")
def small_report():
    clean = smooth_lowrank_sequence(16, 16, 1, 24, rank=2, seed=20,
                                    u_range=(0.7, 1.0), profile_amp=0.25,
                                    weights=(1.0, 0.1))
    params = CloudSimParams(coverage=0.35, full_cover_frames=(7, 15), seed=21)
    return run_experiment(clean, params, DetectorConfig(gamma=0.6),
                          methods=("tecromac", "mc")), clean, params


class TestExperiment:
    def test_reproducible_reports(self, small_report):
        report, clean, params = small_report
        again = run_experiment(clean, params, DetectorConfig(gamma=0.6),
                               methods=("tecromac", "mc"))
        assert report.to_keyvalues(include_timings=False) == again.to_keyvalues(
            include_timings=False)
        for name in report.reconstructions:
            assert np.array_equal(report.reconstructions[name].data,
                                  again.reconstructions[name].data)

    def test_fully_covered_frame_tecromac_beats_mc(self, small_report):
        report, clean, params = small_report
        clean_mat = reshape_to_matrix(clean).values
        tec = reshape_to_matrix(report.reconstructions["tecromac"]).values
        mc = reshape_to_matrix(report.reconstructions["mc"]).values
        for l in params.full_cover_frames:
            err_tec = np.linalg.norm(tec[:, l] - clean_mat[:, l])
            err_mc = np.linalg.norm(mc[:, l] - clean_mat[:, l])
            assert err_tec < err_mc

    def test_report_serialization(self, small_report):
        report, _, _ = small_report
        table = report.to_table()
        assert table.startswith("method\trre\tseconds")
        kv = report.to_keyvalues(include_timings=False)
        assert "method.tecromac.rre =" in kv
        assert "seconds" not in kv
        assert "detection.precision =" in kv

    def test_rre_nonnegative(self, small_report):
        report, _, _ = small_report
        assert all(stats["rre"] >= 0.0 for stats in report.methods.values())
