"""Per-vertex feature matrices: HKS, WKS, raw coordinates, external files."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LoadError
from .geometry import PointCloud, TriangleMesh
from .spectral import SpectralBasis

__all__ = [
    "FeatureMatrix",
    "hks",
    "wks",
    "xyz_features",
    "load_external_features",
    "save_features",
]

DEFAULT_HKS_TIMES = 64
DEFAULT_WKS_ENERGIES = 128


@dataclass
class FeatureMatrix:
    """Row-per-vertex feature matrix F in R^{n x c}."""

    values: np.ndarray = field(repr=False)
    feature_kind: str = "external"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("feature values must be an (n, c) matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite feature entry")
        if self.feature_kind not in ("hks", "wks", "xyz", "external"):
            raise ValueError(f"unknown feature kind {self.feature_kind!r}")
        if self.feature_kind == "hks" and np.any(self.values <= 0):
            raise ValueError("hks features must be strictly positive")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def c(self) -> int:
        return self.values.shape[1]


def _check_connected_spectrum(evals: np.ndarray) -> float:
    """Return lambda_2; reject spectra whose second eigenvalue vanishes."""
    if len(evals) < 2:
        raise ValueError("descriptor needs a basis with at least 2 eigenpairs")
    lam2, lam_max = float(evals[1]), float(evals[-1])
    if lam2 <= 0 or lam2 < 1e-10 * lam_max:
        raise ValueError(
            f"second eigenvalue {lam2:g} is numerically zero; "
            "the shape is likely disconnected"
        )
    return lam2


def hks(basis: SpectralBasis, n_times: int = DEFAULT_HKS_TIMES) -> FeatureMatrix:
    """Heat kernel signature.

    Column t holds sum_j exp(-lambda_j * tau_t) * phi_j^2 with tau log-spaced
    over [4 ln10 / lambda_k, 4 ln10 / lambda_2]; the zero mode is included so
    every entry is strictly positive.
    """
    if n_times < 1:
        raise ValueError(f"n_times must be >= 1, got {n_times}")
    lam2 = _check_connected_spectrum(basis.evals)
    t = np.geomspace(4.0 * np.log(10.0) / basis.evals[-1], 4.0 * np.log(10.0) / lam2, n_times)
    decay = np.exp(-np.outer(basis.evals, t))  # (k, T)
    return FeatureMatrix(values=(basis.phi**2) @ decay, feature_kind="hks")


def wks(basis: SpectralBasis, n_energies: int = DEFAULT_WKS_ENERGIES) -> FeatureMatrix:
    """Wave kernel signature with the original band recipe.

    Log-energy grid spans [ln lambda_2, ln lambda_k] shrunk by 2 sigma on each
    side, Gaussian bands of width sigma = 7 * (range / n_energies), and each
    column is divided by its band partition function.
    """
    if n_energies < 1:
        raise ValueError(f"n_energies must be >= 1, got {n_energies}")
    _check_connected_spectrum(basis.evals)
    # numerically-zero modes have no log-energy; drop them from the bands
    positive = basis.evals > basis.evals[-1] * 1e-12
    lam = basis.evals[positive]
    phi2 = basis.phi[:, positive] ** 2

    e_min, e_max = np.log(lam[0]), np.log(lam[-1])
    sigma = 7.0 * (e_max - e_min) / n_energies
    if sigma <= 0:
        sigma = 1.0  # single distinct eigenvalue: bands all sit on it
    energies = np.linspace(e_min + 2.0 * sigma, e_max - 2.0 * sigma, n_energies)

    coef = np.exp(-((energies[None, :] - np.log(lam)[:, None]) ** 2) / (2.0 * sigma**2))  # (k+, E)
    partition = coef.sum(axis=0)
    return FeatureMatrix(values=(phi2 @ coef) / partition[None, :], feature_kind="wks")


def xyz_features(shape) -> FeatureMatrix:
    """Vertex (or point) coordinates as a 3-column feature matrix."""
    coords = shape.vertices if isinstance(shape, TriangleMesh) else shape.points
    return FeatureMatrix(values=coords.copy(), feature_kind="xyz")


def load_external_features(path, expected_n: int) -> FeatureMatrix:
    """Read whitespace-separated decimal rows, one per vertex.

    This is the bridge format for externally computed (e.g. learned) features.
    """
    path = str(path)
    try:
        values = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise LoadError(f"{path}: {exc}") from exc
    except ValueError as exc:
        raise LoadError(f"{path}: unparsable feature row: {exc}") from exc
    if values.shape[0] != expected_n:
        raise LoadError(
            f"{path}: {values.shape[0]} feature rows but the shape has {expected_n} vertices"
        )
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise LoadError(f"{path}: non-finite entry at row {bad[0]}, column {bad[1]}")
    return FeatureMatrix(values=values, feature_kind="external")


def save_features(features: FeatureMatrix, path) -> None:
    """Write the external text format: one whitespace-separated row per vertex."""
    np.savetxt(path, features.values, fmt="%.17g")


def standardize_columns(values: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance columns; constant columns pass through.

    Handcrafted descriptors carry large constant offsets per band that
    dominate raw dot products; standardizing restores the discriminative
    margins the similarity route needs (learned features come out of
    training already scaled that way).
    """
    values = np.asarray(values, dtype=np.float64)
    mu = values.mean(axis=0)
    sd = values.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    return (values - mu) / sd


def compute_descriptor(shape, basis: SpectralBasis | None, kind: str, size: int) -> FeatureMatrix:
    """Dispatch on descriptor kind; hks/wks need the shape's spectral basis."""
    if kind == "xyz":
        return xyz_features(shape)
    if basis is None:
        raise ValueError(f"descriptor {kind!r} needs a spectral basis")
    if kind == "hks":
        return hks(basis, size)
    if kind == "wks":
        return wks(basis, size)
    raise ValueError(f"unknown descriptor kind {kind!r}")
