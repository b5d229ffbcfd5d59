import numpy as np
import pytest

from shapematch.descriptors import FeatureMatrix, wks
from shapematch.errors import RefinementError
from shapematch.losses import (
    LossReport,
    LossWeights,
    RefinePair,
    e_align,
    e_align_gradient,
    e_bij,
    e_bij_gradients,
    e_nce,
    e_orth,
    e_orth_gradient,
    e_total,
    estimate_r,
    fd_gradient,
    refine_features,
)
from shapematch.spectral import SpectralBasis, cotan_laplacian, eigenbasis
from shapematch.synth import bumpy_plane


def frobenius_oracle(M):
    total = 0.0
    for row in M:
        for v in row:
            total += float(v) * float(v)
    return total


def nce_oracle(F, Fh, tau):
    n = F.shape[0]
    total = 0.0
    for i in range(n):
        num = np.exp(np.dot(F[i], Fh[i]) / tau)
        den = sum(np.exp(np.dot(F[i], Fh[j]) / tau) for j in range(n))
        total += -np.log(num / den)
    return total


def toy_basis(n, k, seed=0):
    rng = np.random.default_rng(seed)
    mass = rng.uniform(0.5, 1.5, n)
    m = rng.standard_normal((n, n))
    # mass-orthonormalize a random frame
    q, _ = np.linalg.qr(np.sqrt(mass)[:, None] * m)
    phi = q[:, :k] / np.sqrt(mass)[:, None]
    evals = np.sort(rng.uniform(0, 5, k))
    evals[0] = 0.0
    return SpectralBasis(phi=phi, evals=evals, mass=mass)


class TestWeights:
    def test_defaults(self):
        w = LossWeights()
        assert w.lambda_bij == 1.0
        assert w.lambda_orth == 1.0
        assert w.lambda_align == 1e-3
        assert w.lambda_nce == 10.0
        assert w.tau == 0.07

    def test_validation(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_bij=-1.0)
        with pytest.raises(ValueError):
            LossWeights(tau=0.0)


class TestBijectivity:
    def test_inverse_pair_zero(self):
        rng = np.random.default_rng(0)
        C = rng.standard_normal((4, 4)) + 4.0 * np.eye(4)
        assert e_bij(C, np.linalg.inv(C)) == pytest.approx(0.0, abs=1e-9)

    def test_zero_maps_analytic(self):
        Z = np.zeros((5, 5))
        assert e_bij(Z, Z) == pytest.approx(5.0, abs=1e-15)

    def test_matches_frobenius_oracle(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((3, 3))
        B = rng.standard_normal((3, 3))
        expected = frobenius_oracle(A @ B - np.eye(3))
        assert e_bij(A, B) == pytest.approx(expected, rel=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            e_bij(np.ones((3, 4)), np.ones((3, 4)))


class TestOrthogonality:
    def test_rotation_zero(self):
        theta = np.pi / 6.0
        R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        assert e_orth(R) == pytest.approx(0.0, abs=1e-12)

    def test_scaled_identity_analytic(self):
        assert e_orth(2.0 * np.eye(3)) == pytest.approx(27.0, abs=1e-12)

    def test_matches_oracle(self):
        rng = np.random.default_rng(2)
        C = rng.standard_normal((4, 3))
        expected = frobenius_oracle(C @ C.T - np.eye(4))
        assert e_orth(C) == pytest.approx(expected, rel=1e-14)


class TestAlignment:
    def test_identity_zero(self):
        basis = toy_basis(8, 4, seed=3)
        pi = np.eye(8)
        assert e_align(pi, np.eye(4), basis, basis) == pytest.approx(0.0, abs=1e-18)

    def test_zero_pi_reduces(self):
        basis = toy_basis(8, 4, seed=4)
        C = np.ones((4, 4))
        expected = np.sum((basis.phi @ C) ** 2)
        assert e_align(np.zeros((8, 8)), C, basis, basis) == pytest.approx(expected, rel=1e-12)

    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        bx, by = toy_basis(6, 3, seed=6), toy_basis(7, 3, seed=7)
        C = rng.standard_normal((3, 3))
        pi = rng.uniform(0, 1, (6, 7))
        expected = frobenius_oracle(bx.phi @ C - pi @ by.phi)
        assert e_align(pi, C, bx, by) == pytest.approx(expected, rel=1e-12)


class TestNCE:
    def test_identical_rows_analytic(self):
        n = 6
        F = np.ones((n, 3))
        assert e_nce(F, F, tau=0.07) == pytest.approx(n * np.log(n), rel=1e-12)

    def test_dominant_diagonal_limit(self):
        F = 100.0 * np.eye(4)
        assert e_nce(F, F, tau=0.07) == pytest.approx(0.0, abs=1e-12)

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(8)
        F = rng.standard_normal((3, 2))
        Fh = rng.standard_normal((3, 2))
        assert e_nce(F, Fh, 0.5) == pytest.approx(nce_oracle(F, Fh, 0.5), rel=1e-10)

    def test_nonnegative(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            F = rng.standard_normal((5, 4))
            Fh = rng.standard_normal((5, 4))
            assert e_nce(F, Fh, 0.2) >= 0.0


class TestTotal:
    def make_inputs(self, seed=0):
        rng = np.random.default_rng(seed)
        bx, by = toy_basis(6, 4, seed=seed), toy_basis(5, 4, seed=seed + 1)
        C_xy = rng.standard_normal((4, 4))
        C_yx = rng.standard_normal((4, 4))
        pi = rng.uniform(0, 1, (6, 5))
        F = rng.standard_normal((6, 3))
        Fh = rng.standard_normal((6, 3))
        return C_xy, C_yx, pi, bx, by, [(F, Fh)]

    def test_recomposition_identity(self):
        C_xy, C_yx, pi, bx, by, pairs = self.make_inputs()
        w = LossWeights()
        rep = e_total(C_xy, C_yx, pi, bx, by, pairs, weights=w)
        recomposed = (rep.e_bij * w.lambda_bij + rep.e_orth * w.lambda_orth
                      + w.lambda_align * rep.e_align + w.lambda_nce * rep.e_nce)
        assert abs(rep.e_total - recomposed) < 1e-10

    def test_components_match_individual_calls(self):
        C_xy, C_yx, pi, bx, by, pairs = self.make_inputs(seed=3)
        w = LossWeights()
        rep = e_total(C_xy, C_yx, pi, bx, by, pairs, weights=w)
        assert rep.e_bij == e_bij(C_xy, C_yx)
        assert rep.e_orth == e_orth(C_xy)
        assert rep.e_align == e_align(pi, C_yx, bx, by)
        assert rep.e_nce == e_nce(pairs[0][0], pairs[0][1], w.tau)

    def test_default_weights_echoed(self):
        C_xy, C_yx, pi, bx, by, pairs = self.make_inputs(seed=4)
        rep = e_total(C_xy, C_yx, pi, bx, by, pairs)
        assert rep.weights == LossWeights()

    def test_partial_reduces_bitwise_at_r_equals_k(self):
        C_xy, C_yx, pi, bx, by, pairs = self.make_inputs(seed=5)
        complete = e_total(C_xy, C_yx, pi, bx, by, pairs, partial=False)
        partial = e_total(C_xy, C_yx, pi, bx, by, pairs, partial=True, r=4)
        assert partial.e_bij == complete.e_bij
        assert partial.e_orth == complete.e_orth
        assert partial.e_align == complete.e_align
        assert partial.e_nce == complete.e_nce
        assert partial.e_total == complete.e_total

    def test_partial_needs_r(self):
        C_xy, C_yx, pi, bx, by, pairs = self.make_inputs(seed=6)
        with pytest.raises(ValueError, match="estimate_r"):
            e_total(C_xy, C_yx, pi, bx, by, pairs, partial=True)

    def test_partial_r_changes_value(self):
        C_xy, C_yx, pi, bx, by, pairs = self.make_inputs(seed=7)
        r2 = e_total(C_xy, C_yx, pi, bx, by, pairs, partial=True, r=2)
        r4 = e_total(C_xy, C_yx, pi, bx, by, pairs, partial=True, r=4)
        assert r2.e_bij != r4.e_bij
        assert r2.r == 2


class TestEstimateR:
    def test_equal_areas_full_rank(self):
        assert estimate_r(3.0, 3.0, 50) == 50

    def test_half_area(self):
        assert estimate_r(1.0, 2.0, 50) == 25

    def test_clamped_low(self):
        assert estimate_r(0.001, 1.0, 30) == 1

    def test_clamped_high(self):
        assert estimate_r(5.0, 1.0, 30) == 30

    def test_positive_areas_required(self):
        with pytest.raises(ValueError):
            estimate_r(0.0, 1.0, 10)


class TestFDGradient:
    def test_quadratic(self):
        grad = fd_gradient(lambda p: float(p @ p), np.array([1.0, 2.0]), eps=1e-5)
        np.testing.assert_allclose(grad, [2.0, 4.0], atol=1e-6)

    def test_linear_eps_independent(self):
        a = np.array([3.0, -1.0, 2.0])
        for eps in (1e-4, 1e-5):
            grad = fd_gradient(lambda p: float(a @ p), np.array([0.5, 0.5, 0.5]), eps=eps)
            np.testing.assert_allclose(grad, a, atol=1e-9)

    def test_orth_gradient_matches_analytic(self):
        rng = np.random.default_rng(10)
        for _ in range(5):
            C = rng.standard_normal((3, 3))
            fd = fd_gradient(lambda p: e_orth(p.reshape(3, 3)), C.ravel(), eps=1e-5)
            analytic = e_orth_gradient(C).ravel()
            rel = np.linalg.norm(fd - analytic) / np.linalg.norm(analytic)
            assert rel < 1e-4

    def test_bij_gradients_match_analytic(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            Cxy = rng.standard_normal((3, 3))
            Cyx = rng.standard_normal((3, 3))
            g_xy, g_yx = e_bij_gradients(Cxy, Cyx)
            fd_xy = fd_gradient(lambda p: e_bij(p.reshape(3, 3), Cyx), Cxy.ravel())
            fd_yx = fd_gradient(lambda p: e_bij(Cxy, p.reshape(3, 3)), Cyx.ravel())
            assert np.linalg.norm(fd_xy - g_xy.ravel()) / np.linalg.norm(g_xy) < 1e-4
            assert np.linalg.norm(fd_yx - g_yx.ravel()) / np.linalg.norm(g_yx) < 1e-4

    def test_align_gradient_matches_analytic(self):
        rng = np.random.default_rng(12)
        bx, by = toy_basis(6, 3, seed=13), toy_basis(7, 3, seed=14)
        pi = rng.uniform(0, 1, (6, 7))
        for _ in range(5):
            C = rng.standard_normal((3, 3))
            analytic = e_align_gradient(pi, C, bx, by)
            fd = fd_gradient(lambda p: e_align(pi, p.reshape(3, 3), bx, by), C.ravel())
            assert np.linalg.norm(fd - analytic.ravel()) / np.linalg.norm(analytic) < 1e-4

    def test_nce_richardson_consistency(self):
        # no analytic gradient for the contrastive term: two FD step sizes agree
        rng = np.random.default_rng(15)
        F = rng.standard_normal((4, 3))
        Fh = rng.standard_normal((4, 3))

        def obj(p):
            return e_nce(p.reshape(4, 3), Fh, 0.5)

        g1 = fd_gradient(obj, F.ravel(), eps=1e-4)
        g2 = fd_gradient(obj, F.ravel(), eps=1e-5)
        assert np.linalg.norm(g1 - g2) / np.linalg.norm(g2) < 1e-3


class TestRefine:
    @pytest.fixture(scope="class")
    def pair(self):
        from shapematch.synth import bent_plane_pair

        synth_pair = bent_plane_pair(nx=8, ny=7, bend_angle=0.6, bump_amplitude=0.2, seed=4)
        X, Y = synth_pair.mesh_x, synth_pair.mesh_y
        bx = eigenbasis(cotan_laplacian(X), 10)
        by = eigenbasis(cotan_laplacian(Y), 10)
        return RefinePair(
            shape_x=X, shape_y=Y, basis_x=bx, basis_y=by,
            features_x=wks(bx, 6), features_y=wks(by, 6),
        )

    def test_zero_steps_identity(self, pair):
        result = refine_features(pair, steps=0)
        np.testing.assert_array_equal(result.transform, np.eye(6))
        assert result.features_x is pair.features_x
        assert result.features_y is pair.features_y

    def test_trace_non_increasing(self, pair):
        result = refine_features(pair, steps=4, step_size=1e-3)
        totals = [r.e_total for r in result.trace]
        assert len(totals) >= 1
        assert all(b <= a for a, b in zip(totals, totals[1:]))

    def test_refined_kind_external(self, pair):
        result = refine_features(pair, steps=2, step_size=1e-3)
        assert result.features_x.feature_kind == "external"

    def test_budget_enforced(self, pair):
        wide = FeatureMatrix(values=np.ones((pair.features_x.n, 30)))
        bad = RefinePair(
            shape_x=pair.shape_x, shape_y=pair.shape_y,
            basis_x=pair.basis_x, basis_y=pair.basis_y,
            features_x=wide, features_y=FeatureMatrix(values=np.ones((pair.features_y.n, 30))),
        )
        with pytest.raises(ValueError, match="budget"):
            refine_features(bad, steps=1)

    def test_nonfinite_aborts_with_trace(self, pair):
        bad = RefinePair(
            shape_x=pair.shape_x, shape_y=pair.shape_y,
            basis_x=pair.basis_x, basis_y=pair.basis_y,
            features_x=FeatureMatrix(values=pair.features_x.values * 1e300),
            features_y=FeatureMatrix(values=pair.features_y.values * 1e300),
        )
        with pytest.raises((RefinementError, ValueError)):
            refine_features(bad, steps=1)

    def test_out_dim_projection(self, pair):
        result = refine_features(pair, steps=1, step_size=1e-3, out_dim=3)
        assert result.transform.shape == (6, 3)
        assert result.features_x.c == 3


class TestLossReport:
    def test_fields(self):
        rep = LossReport(e_bij=1.0, e_orth=2.0, e_align=3.0, e_nce=4.0, e_total=46.003)
        assert rep.partial is False
        assert rep.r is None
