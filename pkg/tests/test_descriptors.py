import numpy as np
import pytest

from shapematch.descriptors import (
    FeatureMatrix,
    hks,
    load_external_features,
    save_features,
    standardize_columns,
    wks,
    xyz_features,
)
from shapematch.errors import LoadError
from shapematch.geometry import TriangleMesh
from shapematch.spectral import SpectralBasis, cotan_laplacian, eigenbasis


def toy_basis(evals, phi, mass=None):
    phi = np.asarray(phi, dtype=float)
    if mass is None:
        mass = np.ones(phi.shape[0])
    return SpectralBasis(phi=phi, evals=np.asarray(evals, dtype=float), mass=mass)


def wks_oracle(evals, phi, n_energies):
    """Direct loop evaluation of the band recipe, independent of the vectorized path."""
    evals = np.asarray(evals, dtype=float)
    keep = evals > evals[-1] * 1e-12
    lam = evals[keep]
    phi = np.asarray(phi, dtype=float)[:, keep]
    e_min, e_max = np.log(lam[0]), np.log(lam[-1])
    sigma = 7.0 * (e_max - e_min) / n_energies
    if sigma <= 0:
        sigma = 1.0
    energies = np.linspace(e_min + 2 * sigma, e_max - 2 * sigma, n_energies)
    out = np.zeros((phi.shape[0], n_energies))
    for t, e in enumerate(energies):
        coefs = [np.exp(-((e - np.log(l)) ** 2) / (2 * sigma**2)) for l in lam]
        z = sum(coefs)
        for v in range(phi.shape[0]):
            out[v, t] = sum(c * phi[v, j] ** 2 for j, c in enumerate(coefs)) / z
    return out


class TestHKS:
    def test_positive(self, icosphere3_basis):
        feats = hks(icosphere3_basis, 16)
        assert feats.feature_kind == "hks"
        assert np.all(feats.values > 0)
        assert feats.c == 16

    def test_large_time_column_constant(self, icosphere3_basis):
        feats = hks(icosphere3_basis, 16)
        last = feats.values[:, -1]
        assert last.var() / last.mean() ** 2 < 1e-3

    def test_isometric_copies_identical(self, icosphere3):
        rng = np.random.default_rng(11)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        moved = TriangleMesh(icosphere3.vertices @ q.T + [0.3, 0.0, -1.0], icosphere3.faces)
        f0 = hks(eigenbasis(cotan_laplacian(icosphere3), 20), 12)
        f1 = hks(eigenbasis(cotan_laplacian(moved), 20), 12)
        np.testing.assert_allclose(f1.values, f0.values, atol=1e-8)

    def test_disconnected_rejected(self):
        # two zero modes: evals[1] == 0
        basis = toy_basis([0.0, 0.0, 1.0], np.ones((5, 3)))
        with pytest.raises(ValueError, match="disconnected"):
            hks(basis, 4)

    def test_n_times_validated(self, icosphere3_basis):
        with pytest.raises(ValueError):
            hks(icosphere3_basis, 0)


class TestWKS:
    def test_nonnegative(self, icosphere3_basis):
        feats = wks(icosphere3_basis, 32)
        assert feats.feature_kind == "wks"
        assert np.all(feats.values >= 0)

    def test_matches_bruteforce_oracle_k2(self):
        rng = np.random.default_rng(2)
        phi = rng.standard_normal((6, 2))
        evals = np.array([0.5, 2.0])
        basis = toy_basis(evals, phi)
        expected = wks_oracle(evals, phi, 8)
        got = wks(basis, 8)
        np.testing.assert_allclose(got.values, expected, rtol=1e-12)

    def test_matches_bruteforce_oracle_with_zero_mode(self, icosphere3_basis):
        expected = wks_oracle(icosphere3_basis.evals[:6], icosphere3_basis.phi[:, :6], 10)
        small = toy_basis(icosphere3_basis.evals[:6], icosphere3_basis.phi[:, :6],
                          icosphere3_basis.mass)
        got = wks(small, 10)
        np.testing.assert_allclose(got.values, expected, rtol=1e-10)

    def test_isometric_copies_identical(self, icosphere3):
        rng = np.random.default_rng(12)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        moved = TriangleMesh(icosphere3.vertices @ q.T, icosphere3.faces)
        f0 = wks(eigenbasis(cotan_laplacian(icosphere3), 20), 16)
        f1 = wks(eigenbasis(cotan_laplacian(moved), 20), 16)
        np.testing.assert_allclose(f1.values, f0.values, atol=1e-8)


class TestPermutationInvariance:
    def test_features_permute_with_vertices(self):
        # an asymmetric shape keeps the spectrum simple, so truncation is
        # well-defined and the descriptors are exactly permutation-equivariant
        from shapematch.synth import bumpy_plane

        mesh = bumpy_plane(8, 7, bump_amplitude=0.3, seed=2)
        rng = np.random.default_rng(9)
        perm = rng.permutation(mesh.n_vertices)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        permuted = TriangleMesh(mesh.vertices[perm], inverse[mesh.faces])
        for fn, size in ((hks, 8), (wks, 8)):
            f0 = fn(eigenbasis(cotan_laplacian(mesh), 15), size)
            f1 = fn(eigenbasis(cotan_laplacian(permuted), 15), size)
            np.testing.assert_allclose(f1.values, f0.values[perm], atol=1e-8)

    def test_depends_only_on_basis(self, icosphere3_basis):
        # two calls on the same basis are bitwise equal
        a = wks(icosphere3_basis, 12).values
        b = wks(icosphere3_basis, 12).values
        np.testing.assert_array_equal(a, b)


class TestXYZ:
    def test_tetrahedron_verbatim(self, tetrahedron):
        feats = xyz_features(tetrahedron)
        assert feats.feature_kind == "xyz"
        np.testing.assert_array_equal(feats.values, tetrahedron.vertices)

    def test_translation_shifts_rows(self, tetrahedron):
        moved = TriangleMesh(tetrahedron.vertices + [1.0, 2.0, 3.0], tetrahedron.faces)
        np.testing.assert_allclose(
            xyz_features(moved).values, xyz_features(tetrahedron).values + [1.0, 2.0, 3.0]
        )

    def test_rotation_rotates_rows(self, tetrahedron):
        rng = np.random.default_rng(4)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        moved = TriangleMesh(tetrahedron.vertices @ q.T, tetrahedron.faces)
        np.testing.assert_allclose(
            xyz_features(moved).values, xyz_features(tetrahedron).values @ q.T
        )


class TestExternalFeatures:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        values = rng.standard_normal((4, 16))
        save_features(FeatureMatrix(values=values), tmp_path / "f.txt")
        back = load_external_features(tmp_path / "f.txt", expected_n=4)
        np.testing.assert_array_equal(back.values, values)
        assert back.feature_kind == "external"

    def test_row_count_mismatch(self, tmp_path):
        path = tmp_path / "f.txt"
        path.write_text("1 2\n3 4\n5 6\n")
        with pytest.raises(LoadError, match="3 feature rows"):
            load_external_features(path, expected_n=4)

    def test_nan_token_rejected(self, tmp_path):
        path = tmp_path / "f.txt"
        path.write_text("1 2\n3 nan\n")
        with pytest.raises(LoadError, match="non-finite"):
            load_external_features(path, expected_n=2)

    def test_single_column(self, tmp_path):
        path = tmp_path / "f.txt"
        path.write_text("1\n2\n3\n")
        feats = load_external_features(path, expected_n=3)
        assert feats.values.shape == (3, 1)


class TestFeatureMatrix:
    def test_hks_kind_requires_positive(self):
        with pytest.raises(ValueError, match="positive"):
            FeatureMatrix(values=np.array([[1.0, -1.0]]), feature_kind="hks")

    def test_standardize_columns(self):
        rng = np.random.default_rng(6)
        v = rng.standard_normal((50, 4)) * [1.0, 10.0, 0.1, 5.0] + [3.0, -7.0, 0.0, 100.0]
        z = standardize_columns(v)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-12)

    def test_standardize_constant_column(self):
        v = np.column_stack([np.ones(5), np.arange(5.0)])
        z = standardize_columns(v)
        np.testing.assert_array_equal(z[:, 0], 0.0)
