"""Regularized functional-map solver and conversions to/from point maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LoadError, SolverError
from .spectral import SpectralBasis

__all__ = [
    "FmapProblem",
    "FunctionalMap",
    "PointMap",
    "resolvent_mask",
    "solve_fmap",
    "build_fmap_problem",
    "fmap_to_pointmap",
    "pointmap_to_fmap",
    "save_fmap",
    "load_fmap",
    "save_pointmap",
    "load_pointmap",
]

DEFAULT_LAMBDA_REG = 100.0
DEFAULT_RESOLVENT_GAMMA = 0.5

# relative residual allowed on each row's normal equations before the solve
# is declared ill-conditioned
_RESIDUAL_TOL = 1e-8


@dataclass
class FmapProblem:
    """Spectral least-squares data for one map direction.

    A = phi_x^+ F_x and B = phi_y^+ F_y are the source/target feature
    coefficients (the pseudoinverse is the mass-weighted one), lambda_reg
    weights the mask penalty.
    """

    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    evals_x: np.ndarray = field(repr=False)
    evals_y: np.ndarray = field(repr=False)
    lambda_reg: float = DEFAULT_LAMBDA_REG

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        self.evals_x = np.asarray(self.evals_x, dtype=np.float64)
        self.evals_y = np.asarray(self.evals_y, dtype=np.float64)
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise ValueError("A and B must be 2-d coefficient matrices")
        if self.A.shape[1] != self.B.shape[1]:
            raise ValueError(
                f"feature dimension mismatch: A has {self.A.shape[1]} columns, "
                f"B has {self.B.shape[1]}"
            )
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise ValueError("non-finite spectral coefficients")
        if self.A.shape[0] != len(self.evals_x) or self.B.shape[0] != len(self.evals_y):
            raise ValueError("eigenvalue lists must match coefficient row counts")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")


@dataclass
class FunctionalMap:
    """k_y x k_x matrix C_xy carrying source spectral coefficients to the target."""

    C: np.ndarray = field(repr=False)
    source_id: str = "x"
    target_id: str = "y"

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=np.float64)
        if self.C.ndim != 2:
            raise ValueError("functional map must be a 2-d matrix")
        if not np.all(np.isfinite(self.C)):
            raise ValueError("non-finite functional map entry")


@dataclass
class PointMap:
    """Hard vertex correspondence: assignment[j] is the codomain index of vertex j.

    domain_id / codomain_id label which shape indexes the array and which
    shape the stored indices refer to.
    """

    assignment: np.ndarray
    domain_id: str = "y"
    codomain_id: str = "x"

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.assignment.ndim != 1:
            raise ValueError("assignment must be a 1-d index array")
        if self.assignment.size and self.assignment.min() < 0:
            raise ValueError("negative correspondence index")

    def __len__(self) -> int:
        return len(self.assignment)


def resolvent_mask(evals_x: np.ndarray, evals_y: np.ndarray, gamma: float = DEFAULT_RESOLVENT_GAMMA) -> np.ndarray:
    """Elementwise commutativity penalty from eigenvalue resolvents.

    Both spectra are rescaled by their joint maximum, then
    M_ij = |r(ly_i) - r(lx_j)|^2 with the complex resolvent r(l) = 1/(l + i*gamma).
    Zero exactly where the rescaled eigenvalues coincide.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    lx = np.asarray(evals_x, dtype=np.float64)
    ly = np.asarray(evals_y, dtype=np.float64)
    for ev in (lx, ly):
        if np.any(ev < 0) or np.any(np.diff(ev) < 0):
            raise ValueError("eigenvalues must be nonnegative and ascending")
    scale = max(lx.max(initial=0.0), ly.max(initial=0.0))
    if scale > 0:
        lx, ly = lx / scale, ly / scale
    rx = 1.0 / (lx + 1j * gamma)
    ry = 1.0 / (ly + 1j * gamma)
    diff = ry[:, None] - rx[None, :]
    return (diff.real**2 + diff.imag**2)


def solve_fmap(problem: FmapProblem, mask: np.ndarray,
               source_id: str = "x", target_id: str = "y") -> FunctionalMap:
    """Minimize ||C A - B||_F^2 + lambda * sum_ij C_ij^2 M_ij.

    The mask penalty is elementwise, so the rows of C decouple: row i solves
    (A A^T + lambda * diag(M_i)) c_i = A B_i^T. Each row's normal-equation
    residual is checked; an ill-conditioned system (e.g. lambda = 0 with
    rank-deficient A) raises instead of returning garbage.
    """
    A, B, lam = problem.A, problem.B, problem.lambda_reg
    k_x, k_y = A.shape[0], B.shape[0]
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (k_y, k_x):
        raise ValueError(f"mask shape {mask.shape} does not match ({k_y}, {k_x})")
    if np.any(mask < 0):
        raise ValueError("mask entries must be nonnegative")

    AAt = A @ A.T
    rhs = (A @ B.T).T  # (k_y, k_x): row i is A @ B[i]
    lhs = np.broadcast_to(AAt, (k_y, k_x, k_x)).copy()
    step = np.arange(k_x)
    lhs[:, step, step] += lam * mask
    try:
        C = np.linalg.solve(lhs, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            "singular normal equations; use lambda_reg > 0 with a nonzero mask "
            f"(lambda_reg={lam:g})"
        ) from exc

    residual = np.einsum("rij,rj->ri", lhs, C) - rhs
    rel = np.linalg.norm(residual, axis=1) / np.maximum(np.linalg.norm(rhs, axis=1), 1e-300)
    worst = float(rel.max(initial=0.0))
    if worst > _RESIDUAL_TOL:
        raise SolverError(
            f"ill-conditioned normal equations (relative residual {worst:.2e}); "
            "the descriptors are rank-deficient, use lambda_reg > 0"
        )
    return FunctionalMap(C=C, source_id=source_id, target_id=target_id)


def build_fmap_problem(basis_x: SpectralBasis, basis_y: SpectralBasis,
                       features_x, features_y,
                       lambda_reg: float = DEFAULT_LAMBDA_REG) -> FmapProblem:
    """Project per-vertex features into both bases and bundle the solver data."""
    fx = features_x.values if hasattr(features_x, "values") else np.asarray(features_x)
    fy = features_y.values if hasattr(features_y, "values") else np.asarray(features_y)
    if fx.shape[1] != fy.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: {fx.shape[1]} vs {fy.shape[1]} columns"
        )
    return FmapProblem(
        A=basis_x.project(fx),
        B=basis_y.project(fy),
        evals_x=basis_x.evals,
        evals_y=basis_y.evals,
        lambda_reg=lambda_reg,
    )


def _nearest_rows(queries: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Index of the nearest candidate row per query row; ties take the smallest index."""
    # argmin over an explicit distance matrix keeps tie-breaking deterministic
    out = np.empty(len(queries), dtype=np.int64)
    cand_sq = np.einsum("ij,ij->i", candidates, candidates)
    chunk = max(1, 2**22 // max(len(candidates), 1))
    for start in range(0, len(queries), chunk):
        q = queries[start : start + chunk]
        d2 = cand_sq[None, :] - 2.0 * (q @ candidates.T)
        out[start : start + chunk] = np.argmin(d2, axis=1)
    return out


def fmap_to_pointmap(fmap: FunctionalMap, basis_x: SpectralBasis, basis_y: SpectralBasis) -> PointMap:
    """Recover the point map via nearest-neighbour search on aligned embeddings.

    Target vertex j maps to argmin_i || (phi_y C_xy)_j - (phi_x)_i ||, so the
    returned assignment is indexed by the target shape and stores source indices.
    """
    k_y, k_x = fmap.C.shape
    if k_x > basis_x.k or k_y > basis_y.k:
        raise ValueError(
            f"functional map of shape ({k_y}, {k_x}) exceeds basis sizes "
            f"({basis_y.k}, {basis_x.k})"
        )
    emb_y = basis_y.phi[:, :k_y] @ fmap.C
    emb_x = basis_x.phi[:, :k_x]
    assignment = _nearest_rows(emb_y, emb_x)
    return PointMap(assignment=assignment, domain_id=fmap.target_id, codomain_id=fmap.source_id)


def pointmap_to_fmap(pm: PointMap, basis_x: SpectralBasis, basis_y: SpectralBasis) -> FunctionalMap:
    """Least-squares functional map of a hard correspondence: C = phi_y^+ Pi phi_x.

    pm must map target vertices to source indices (the fmap_to_pointmap output
    convention); Pi phi_x is then the row gather phi_x[assignment].
    """
    if len(pm) != basis_y.n:
        raise ValueError(f"point map covers {len(pm)} vertices, basis_y has {basis_y.n}")
    if pm.assignment.max(initial=0) >= basis_x.n:
        raise ValueError("point map indexes beyond basis_x")
    C = basis_y.project(basis_x.phi[pm.assignment])
    return FunctionalMap(C=C, source_id=pm.codomain_id, target_id=pm.domain_id)


# ---------------------------------------------------------------------------
# serialization


def save_fmap(fmap: FunctionalMap, path) -> None:
    """Text format: 'k_y k_x' header line, then row-major decimal entries."""
    k_y, k_x = fmap.C.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{k_y} {k_x}\n")
        for row in fmap.C:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_fmap(path, source_id: str = "x", target_id: str = "y") -> FunctionalMap:
    path = str(path)
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise LoadError(f"{path}:1: expected 'k_y k_x' header")
        try:
            k_y, k_x = int(header[0]), int(header[1])
        except ValueError as exc:
            raise LoadError(f"{path}:1: bad header: {exc}") from exc
        try:
            C = np.loadtxt(fh, ndmin=2)
        except ValueError as exc:
            raise LoadError(f"{path}: bad matrix body: {exc}") from exc
    if C.shape != (k_y, k_x):
        raise LoadError(f"{path}: body shape {C.shape} does not match header ({k_y}, {k_x})")
    return FunctionalMap(C=C, source_id=source_id, target_id=target_id)


def save_pointmap(pm: PointMap, path) -> None:
    """One codomain index per line, line number = domain vertex."""
    with open(path, "w", encoding="ascii") as fh:
        for i in pm.assignment:
            fh.write(f"{i}\n")


def load_pointmap(path, domain_id: str = "y", codomain_id: str = "x") -> PointMap:
    path = str(path)
    try:
        assignment = np.loadtxt(path, dtype=np.int64, ndmin=1)
    except (ValueError, OSError) as exc:
        raise LoadError(f"{path}: bad point map file: {exc}") from exc
    return PointMap(assignment=assignment, domain_id=domain_id, codomain_id=codomain_id)
