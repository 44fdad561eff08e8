import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decloud.tensor_ops import (
    DataMatrix,
    ImageSequence,
    ObservationMask,
    economy_svd,
    nuclear_norm,
    reshape_to_matrix,
    reshape_to_sequence,
    soft_threshold,
    spectral_norm_est,
    svt,
    temporal_diff,
    temporal_laplacian,
)


def tensor_of(rng, m, n, c, t):
    return ImageSequence(rng.uniform(0.0, 1.0, size=(m, n, c, t)))


class TestReshape:
    def test_singleton(self):
        seq = ImageSequence(np.full((1, 1, 1, 1), 0.5))
        mat = reshape_to_matrix(seq)
        assert mat.values.shape == (1, 1)
        assert mat.values[0, 0] == 0.5

    def test_index_convention(self):
        # m=2, n=1, c=1, t=2 with known entries
        a, b, p, q = 0.1, 0.2, 0.3, 0.4
        data = np.zeros((2, 1, 1, 2))
        data[0, 0, 0, 0] = a
        data[1, 0, 0, 0] = b
        data[0, 0, 0, 1] = p
        data[1, 0, 0, 1] = q
        mat = reshape_to_matrix(ImageSequence(data)).values
        assert np.array_equal(mat, np.array([[a, p], [b, q]]))

    def test_columns_time_major_within_channel(self):
        # column v = l + k*t
        rng = np.random.default_rng(0)
        seq = tensor_of(rng, 2, 2, 2, 3)
        mat = reshape_to_matrix(seq).values
        m, n, c, t = seq.dims
        for i in range(m):
            for j in range(n):
                for k in range(c):
                    for l in range(t):
                        assert mat[i + j * m, l + k * t] == seq.data[i, j, k, l]

    def test_roundtrip_fixed(self):
        rng = np.random.default_rng(1)
        seq = tensor_of(rng, 3, 4, 2, 5)
        back = reshape_to_sequence(reshape_to_matrix(seq))
        assert np.array_equal(back.data, seq.data)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 5),
           st.integers(0, 2**31 - 1))
    def test_roundtrip_property(self, m, n, c, t, seed):
        seq = tensor_of(np.random.default_rng(seed), m, n, c, t)
        back = reshape_to_sequence(reshape_to_matrix(seq))
        assert np.array_equal(back.data, seq.data)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            DataMatrix(np.zeros((4, 3)), (2, 2, 1, 2))


class TestMask:
    def test_to_matrix_broadcast(self):
        observed = np.zeros((2, 2, 3), dtype=bool)
        observed[1, 0, 2] = True
        mat = ObservationMask(observed).to_matrix(channels=2)
        assert mat.shape == (4, 6)
        # row u = 1 + 0*2 = 1; columns l + k*t for l=2, k=0,1
        expected = np.zeros((4, 6), dtype=bool)
        expected[1, 2] = True
        expected[1, 5] = True
        assert np.array_equal(mat, expected)

    def test_count(self):
        observed = np.ones((2, 3, 4), dtype=bool)
        assert ObservationMask(observed).count == 24


class TestTemporalDiff:
    def test_constant_is_zero(self):
        x = np.ones((5, 8))
        assert np.array_equal(temporal_diff(x), np.zeros((5, 8)))

    def test_single_pixel(self):
        d = temporal_diff(np.array([[1.0, 3.0, 6.0]]))
        assert np.array_equal(d, [[0.0, 2.0, 3.0]])
        assert (d ** 2).sum() == 13.0

    def test_norm_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        seq = tensor_of(rng, 6, 1, 2, 4)
        mat = reshape_to_matrix(seq)
        d = temporal_diff(mat)
        # independent quadruple loop
        total = 0.0
        m, n, c, t = seq.dims
        for i in range(m):
            for j in range(n):
                for k in range(c):
                    for l in range(1, t):
                        total += (seq.data[i, j, k, l] - seq.data[i, j, k, l - 1]) ** 2
        assert abs((d ** 2).sum() - total) <= 1e-12 * max(total, 1.0)

    def test_bad_channel_count(self):
        with pytest.raises(ValueError):
            temporal_diff(np.ones((2, 5)), channels=2)


class TestTemporalLaplacian:
    def test_constant_is_zero(self):
        assert np.array_equal(temporal_laplacian(np.ones((4, 6))), np.zeros((4, 6)))

    def test_hand_gradient(self):
        g = temporal_laplacian(np.array([[1.0, 3.0, 6.0]]))
        assert np.allclose(g, [[-2.0, -1.0, 3.0]])

    def test_is_gradient_of_half_diff_norm(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, 6))
        g = temporal_laplacian(x, channels=2)
        h = 1e-6 * max(1.0, np.abs(x).max())
        fd = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp = x.copy(); xp[idx] += h
            xm = x.copy(); xm[idx] -= h
            fp = 0.5 * (temporal_diff(xp, channels=2) ** 2).sum()
            fm = 0.5 * (temporal_diff(xm, channels=2) ** 2).sum()
            fd[idx] = (fp - fm) / (2 * h)
        assert np.linalg.norm(fd - g) <= 1e-6 * max(np.linalg.norm(g), 1.0)

    def test_datamatrix_in_datamatrix_out(self):
        mat = DataMatrix(np.ones((4, 6)), (2, 2, 2, 3))
        out = temporal_laplacian(mat)
        assert isinstance(out, DataMatrix)
        assert out.dims == mat.dims

    def test_gram_spectral_norm_below_four(self):
        # power iteration on the time-difference Gram operator
        for t in range(2, 51):
            rng = np.random.default_rng(t)
            v = rng.standard_normal((1, t))
            v /= np.linalg.norm(v)
            lam = 0.0
            for _ in range(300):
                w = temporal_laplacian(v)
                lam = float(np.abs(w).max())
                nw = np.linalg.norm(w)
                if nw == 0:
                    break
                v = w / nw
            lam = float(np.vdot(v, temporal_laplacian(v)).real)
            assert lam <= 4.0 + 1e-9


class TestSoftThreshold:
    def test_examples(self):
        assert soft_threshold(np.array([1.2]), 0.5)[0] == pytest.approx(0.7)
        assert soft_threshold(np.array([-0.3]), 0.5)[0] == 0.0

    def test_zero_threshold_is_identity(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 3))
        assert np.array_equal(soft_threshold(x, 0.0), x)

    def test_negative_threshold_raises(self):
        with pytest.raises(ValueError):
            soft_threshold(np.ones((2, 2)), -0.1)

    def test_prox_oracle(self):
        # output minimizes lam*|e|_1 + 0.5*|e - x|^2 against random perturbations
        rng = np.random.default_rng(5)
        x = rng.standard_normal((8, 6))
        lam = 0.3
        out = soft_threshold(x, lam)

        def obj(e):
            return lam * np.abs(e).sum() + 0.5 * ((e - x) ** 2).sum()

        best = obj(out)
        for _ in range(1000):
            pert = out + rng.standard_normal(out.shape) * rng.choice([1e-3, 1e-2, 0.1, 1.0])
            assert obj(pert) >= best - 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.0, 2.0))
    def test_nonexpansive(self, seed, lam):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(12)
        b = rng.standard_normal(12)
        da = soft_threshold(a, lam) - soft_threshold(b, lam)
        assert np.linalg.norm(da) <= np.linalg.norm(a - b) + 1e-12


class TestSvt:
    def test_zero_matrix(self):
        assert np.array_equal(svt(np.zeros((3, 4)), 1.0), np.zeros((3, 4)))

    def test_diagonal(self):
        out = svt(np.diag([3.0, 1.0]), 2.0)
        assert np.allclose(out, np.diag([1.0, 0.0]), atol=1e-12)

    def test_negative_eta_raises(self):
        with pytest.raises(ValueError):
            svt(np.ones((2, 2)), -1.0)

    def test_singular_values_soft_thresholded(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            x = rng.standard_normal((8, 6))
            eta = 0.4
            out = svt(x, eta)
            s_in = np.linalg.svd(x, compute_uv=False)
            s_out = np.linalg.svd(out, compute_uv=False)
            assert np.allclose(s_out, np.maximum(s_in - eta, 0.0), atol=1e-10)

    def test_prox_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((6, 4))
        eta = 0.3
        out = svt(x, eta)

        def obj(z):
            return eta * np.linalg.svd(z, compute_uv=False).sum() + 0.5 * ((z - x) ** 2).sum()

        best = obj(out)
        for _ in range(1000):
            pert = out + rng.standard_normal(out.shape) * rng.choice([1e-3, 1e-2, 0.1])
            assert obj(pert) >= best - 1e-10

    def test_nonexpansive(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            a = rng.standard_normal((5, 4))
            b = rng.standard_normal((5, 4))
            eta = rng.uniform(0.0, 2.0)
            d = svt(a, eta) - svt(b, eta)
            assert np.linalg.norm(d) <= np.linalg.norm(a - b) + 1e-10


class TestEconomySvd:
    def test_identity(self):
        u, s, vt = economy_svd(np.eye(3))
        assert np.allclose(s, np.ones(3))

    def test_rank_one(self):
        a = np.array([1.0, 2.0, 2.0])
        b = np.array([3.0, 4.0])
        u, s, vt = economy_svd(np.outer(a, b))
        assert s[0] == pytest.approx(np.linalg.norm(a) * np.linalg.norm(b))
        assert np.allclose(s[1:], 0.0, atol=1e-12)

    def test_tall_gram_path_reconstruction(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((500, 20))
        u, s, vt = economy_svd(x)
        err = np.linalg.norm(x - (u * s) @ vt) / np.linalg.norm(x)
        assert err <= 1e-10
        assert s.shape == (20,)

    def test_wide_gram_path(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((15, 200))
        u, s, vt = economy_svd(x)
        assert u.shape == (15, 15) and vt.shape == (15, 200)
        assert np.linalg.norm(x - (u * s) @ vt) / np.linalg.norm(x) <= 1e-10

    def test_matches_lapack_singular_values(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((300, 12))
        s = economy_svd(x)[1]
        assert np.allclose(s, np.linalg.svd(x, compute_uv=False), atol=1e-10)

    def test_nonfinite_raises(self):
        x = np.ones((4, 4))
        x[0, 0] = np.nan
        with pytest.raises(ValueError):
            economy_svd(x)


class TestNuclearNorm:
    def test_zero(self):
        assert nuclear_norm(np.zeros((3, 5))) == 0.0

    def test_diagonal(self):
        assert nuclear_norm(np.diag([3.0, 1.0])) == pytest.approx(4.0)

    def test_matches_eigendecomposition_oracle(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((7, 5))
        w = np.linalg.eigvalsh(x.T @ x)
        oracle = np.sqrt(np.clip(w, 0, None)).sum()
        assert nuclear_norm(x) == pytest.approx(oracle, rel=1e-10)


class TestSpectralNormEst:
    def test_against_exact(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((60, 20))
        est = spectral_norm_est(x, max_iter=500, tol=1e-13)
        assert est == pytest.approx(np.linalg.norm(x, 2), rel=1e-6)

    def test_zero_matrix(self):
        assert spectral_norm_est(np.zeros((4, 4))) == 0.0


class TestImageSequenceValidation:
    def test_rejects_wrong_ndim(self):
        with pytest.raises(ValueError):
            ImageSequence(np.zeros((2, 2, 2)))

    def test_rejects_nonfinite(self):
        data = np.zeros((1, 1, 1, 2))
        data[0, 0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            ImageSequence(data)
