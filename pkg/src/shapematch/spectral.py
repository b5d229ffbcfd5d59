"""Discrete Laplacians for meshes and clouds, and truncated generalized eigenbases."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh
from scipy.spatial import cKDTree

from .errors import EigensolverError, LoadError
from .geometry import PointCloud, TriangleMesh, face_areas

__all__ = [
    "LaplaceOperator",
    "SpectralBasis",
    "cotan_laplacian",
    "pointcloud_laplacian",
    "eigenbasis",
    "shape_hash",
    "save_basis",
    "load_basis",
]

# n above which eigenbasis switches from a dense to a shift-invert solve
DENSE_LIMIT = 2000


@dataclass
class LaplaceOperator:
    """Stiffness/mass pair of the generalized eigenproblem S phi = lambda M phi.

    stiffness: sparse symmetric positive-semidefinite (n, n), zero row sums.
    mass: positive diagonal stored as an (n,) vector; its total approximates
        the surface area.
    modality: "mesh" (cotangent) or "pointcloud" (kNN heat weights).
    """

    stiffness: sparse.csr_matrix = field(repr=False)
    mass: np.ndarray = field(repr=False)
    modality: str = "mesh"

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=np.float64)
        n = self.stiffness.shape[0]
        if self.stiffness.shape != (n, n) or self.mass.shape != (n,):
            raise ValueError("stiffness must be square and mass its diagonal")
        if np.any(self.mass <= 0):
            raise ValueError("mass entries must be positive")
        if self.modality not in ("mesh", "pointcloud"):
            raise ValueError(f"unknown modality {self.modality!r}")

    @property
    def n(self) -> int:
        return self.stiffness.shape[0]


@dataclass
class SpectralBasis:
    """Truncated basis of Laplacian eigenfunctions.

    phi: (n, k) eigenfunctions, columns M-orthonormal: phi.T @ diag(mass) @ phi = I.
    evals: (k,) ascending nonnegative eigenvalues.
    mass: the (n,) diagonal mass the basis is orthonormal against.
    """

    phi: np.ndarray = field(repr=False)
    evals: np.ndarray
    mass: np.ndarray = field(repr=False)
    k: int = 0

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.evals = np.asarray(self.evals, dtype=np.float64)
        self.mass = np.asarray(self.mass, dtype=np.float64)
        if self.k == 0:
            self.k = self.phi.shape[1]
        if self.phi.shape != (len(self.mass), self.k) or self.evals.shape != (self.k,):
            raise ValueError("inconsistent basis shapes")

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    def project(self, values: np.ndarray) -> np.ndarray:
        """Spectral coefficients via the mass-weighted pseudoinverse phi.T M f."""
        values = np.asarray(values, dtype=np.float64)
        return self.phi.T @ (self.mass[:, None] * values)

    def reconstruct(self, coefficients: np.ndarray) -> np.ndarray:
        """Pointwise values of a function given by spectral coefficients."""
        return self.phi @ np.asarray(coefficients, dtype=np.float64)


def cotan_laplacian(mesh: TriangleMesh) -> LaplaceOperator:
    """Cotangent stiffness with barycentric (area/3) lumped mass.

    Edge weight is cot(angle)/2 summed over the (one or two) incident
    triangles; diagonal entries make every row sum to zero.
    """
    v, f = mesh.vertices, mesh.faces
    if len(f) == 0:
        raise ValueError("cotangent Laplacian needs a mesh with faces")
    areas = face_areas(mesh)
    tiny = np.flatnonzero(areas < 1e-12)
    if tiny.size:
        raise ValueError(f"degenerate face {int(tiny[0])}: area {areas[tiny[0]]:g} < 1e-12")

    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    # angle at corner c is opposite the edge (a, b)
    for c, a, b in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        ea = v[f[:, a]] - v[f[:, c]]
        eb = v[f[:, b]] - v[f[:, c]]
        # cot = cos/sin = (ea . eb) / |ea x eb|, and |ea x eb| = 2 * area
        w = 0.5 * np.einsum("ij,ij->i", ea, eb) / (2.0 * areas)
        i, j = f[:, a], f[:, b]
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-w, -w, w, w]
    S = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    S = (S + S.T) * 0.5  # exact symmetry regardless of summation order

    mass = np.zeros(n)
    third = areas / 3.0
    for c in range(3):
        np.add.at(mass, f[:, c], third)
    if np.any(mass <= 0):
        raise ValueError("isolated vertex with zero barycentric mass")
    return LaplaceOperator(stiffness=S, mass=mass, modality="mesh")


def pointcloud_laplacian(cloud: PointCloud, knn: int) -> LaplaceOperator:
    """Symmetrized kNN graph Laplacian with Gaussian heat weights.

    Weights are exp(-d^2 / (2 sigma_loc^2)) with sigma_loc the mean distance
    to the knn-th neighbour. The stiffness is rescaled so the Dirichlet
    energy of the coordinate functions equals 2x the estimated area (the
    identity satisfied by the smooth Laplace-Beltrami operator), which makes
    the spectrum directly comparable to the cotangent one. Mass entries are
    weight row sums scaled so the total equals the density-estimated area.
    """
    if knn < 3:
        raise ValueError(f"knn must be >= 3, got {knn}")
    pts = cloud.points
    n = cloud.n_points
    if n <= knn:
        raise ValueError(f"need more points ({n}) than knn ({knn})")

    tree = cKDTree(pts)
    dist, idx = tree.query(pts, k=knn + 1)
    dist, idx = dist[:, 1:], idx[:, 1:]  # drop self-match at distance 0
    r_k = dist[:, -1]
    sigma_loc = float(r_k.mean())
    if sigma_loc <= 0:
        raise ValueError("duplicate points collapse the local scale to zero")

    w = np.exp(-(dist**2) / (2.0 * sigma_loc**2))
    rows = np.repeat(np.arange(n), knn)
    W = sparse.coo_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n)).tocsr()
    W = W.maximum(W.T)  # union of neighbourhoods, symmetric weights

    # kNN density estimate: a disc of radius r_k around a point holds knn others
    area_est = float(np.sum(np.pi * r_k**2 / knn))

    deg = np.asarray(W.sum(axis=1)).ravel()
    S_raw = sparse.diags(deg) - W
    coords_energy = float(sum(pts[:, c] @ (S_raw @ pts[:, c]) for c in range(3)))
    if coords_energy <= 0:
        raise ValueError("degenerate point cloud: zero Dirichlet energy")
    S = S_raw * (2.0 * area_est / coords_energy)
    S = ((S + S.T) * 0.5).tocsr()

    mass = deg * (area_est / deg.sum())
    return LaplaceOperator(stiffness=S, mass=mass, modality="pointcloud")


def _fix_signs(phi: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column positive (determinism)."""
    lead = np.abs(phi).argmax(axis=0)
    flip = phi[lead, np.arange(phi.shape[1])] < 0
    phi[:, flip] *= -1.0
    return phi


def eigenbasis(op: LaplaceOperator, k: int) -> SpectralBasis:
    """First k generalized eigenpairs of (stiffness, mass), ascending.

    Dense solve below DENSE_LIMIT vertices, shift-invert Lanczos above;
    both reduce the diagonal-mass pencil to an ordinary symmetric problem.
    """
    n = op.n
    if not (1 <= k < n):
        raise ValueError(f"basis size k={k} must satisfy 1 <= k < n={n}")

    d = 1.0 / np.sqrt(op.mass)
    if n <= DENSE_LIMIT:
        L = op.stiffness.toarray() * d[:, None] * d[None, :]
        L = (L + L.T) * 0.5
        evals, u = eigh(L, subset_by_index=[0, k - 1])
    else:
        D = sparse.diags(d)
        L = (D @ op.stiffness @ D).tocsc()
        scale = float(np.mean(op.stiffness.diagonal() / op.mass))
        try:
            evals, u = eigsh(L, k=k, sigma=-1e-3 * max(scale, 1e-30), which="LM")
        except ArpackNoConvergence as exc:
            raise EigensolverError(
                f"eigensolver did not converge: {len(exc.eigenvalues)}/{k} pairs "
                f"after ARPACK iteration limit"
            ) from exc
        except ArpackError as exc:
            raise EigensolverError(f"eigensolver failed: {exc}") from exc
        order = np.argsort(evals)
        evals, u = evals[order], u[:, order]

    scale_ref = max(abs(evals[-1]), 1.0)
    if evals[0] < -1e-8 * scale_ref:
        raise EigensolverError(
            f"operator not positive semidefinite: smallest eigenvalue {evals[0]:g}"
        )
    evals = np.maximum(evals, 0.0)

    phi = u * d[:, None]
    # re-normalize against the mass inner product; eigh/eigsh already return
    # orthonormal u so this only corrects last-ulp drift
    norms = np.sqrt(np.einsum("ij,i,ij->j", phi, op.mass, phi))
    phi /= norms
    phi = _fix_signs(phi)
    return SpectralBasis(phi=phi, evals=evals, mass=op.mass.copy(), k=k)


# ---------------------------------------------------------------------------
# basis cache file

_MAGIC = b"SMBC"
_VERSION = 1
_MODALITY_CODE = {"mesh": 0, "pointcloud": 1}
_MODALITY_NAME = {v: k for k, v in _MODALITY_CODE.items()}


def shape_hash(shape) -> bytes:
    """SHA-256 over modality tag and raw little-endian geometry bytes."""
    h = hashlib.sha256()
    if isinstance(shape, TriangleMesh):
        h.update(b"mesh")
        h.update(shape.vertices.astype("<f8").tobytes())
        h.update(shape.faces.astype("<i8").tobytes())
    else:
        h.update(b"pointcloud")
        h.update(shape.points.astype("<f8").tobytes())
    return h.digest()


def save_basis(basis: SpectralBasis, shape, path) -> None:
    """Write the binary cache: header (n, k, modality, shape hash), evals, phi, mass."""
    modality = "mesh" if isinstance(shape, TriangleMesh) else "pointcloud"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HBxQQ", _VERSION, _MODALITY_CODE[modality], basis.n, basis.k))
        fh.write(shape_hash(shape))
        fh.write(basis.evals.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.phi).astype("<f8").tobytes())
        fh.write(basis.mass.astype("<f8").tobytes())


def load_basis(path, shape=None) -> SpectralBasis:
    """Read a basis cache; if a shape is given, verify the stored hash matches."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise LoadError(f"{path}: not a basis cache file")
    version, modality_code, n, k = struct.unpack_from("<HBxQQ", data, 4)
    if version != _VERSION:
        raise LoadError(f"{path}: unsupported cache version {version}")
    if modality_code not in _MODALITY_NAME:
        raise LoadError(f"{path}: unknown modality code {modality_code}")
    off = 4 + struct.calcsize("<HBxQQ")
    digest = data[off : off + 32]
    off += 32
    expected = off + 8 * (k + n * k + n)
    if len(data) != expected:
        raise LoadError(f"{path}: truncated cache ({len(data)} bytes, expected {expected})")
    if shape is not None and shape_hash(shape) != digest:
        raise LoadError(f"{path}: cache does not match the given shape")
    evals = np.frombuffer(data, "<f8", count=k, offset=off).copy()
    off += 8 * k
    phi = np.frombuffer(data, "<f8", count=n * k, offset=off).reshape(n, k).copy()
    off += 8 * n * k
    mass = np.frombuffer(data, "<f8", count=n, offset=off).copy()
    return SpectralBasis(phi=phi, evals=evals, mass=mass, k=int(k))
