"""Feature-similarity soft correspondences and their quantization to hard maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .fmap import PointMap

__all__ = [
    "SoftCorrespondence",
    "similarity",
    "sinkhorn",
    "column_softmax",
    "quantize",
]

DEFAULT_SINKHORN_ITERATIONS = 10
DEFAULT_TEMPERATURE = 0.2


@dataclass
class SoftCorrespondence:
    """Nonnegative relaxation Pi_hat of a (partial) permutation matrix.

    pi is (n_x, n_y): rows index the first shape, columns the second.
    After Sinkhorn on square inputs rows and columns are both near-stochastic
    (rows exactly, by the end-on-rows convention); after column softmax each
    column sums to one.
    """

    pi: np.ndarray = field(repr=False)
    normalization: str = "sinkhorn"
    temperature: float = DEFAULT_TEMPERATURE
    iterations: int = DEFAULT_SINKHORN_ITERATIONS
    source_id: str = "x"
    target_id: str = "y"

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        if self.pi.ndim != 2:
            raise ValueError("soft correspondence must be a 2-d matrix")
        if self.normalization not in ("sinkhorn", "column_softmax"):
            raise ValueError(f"unknown normalization {self.normalization!r}")


def _values(features) -> np.ndarray:
    return features.values if hasattr(features, "values") else np.asarray(features, dtype=np.float64)


def similarity(features_x, features_y) -> np.ndarray:
    """Matrix of dot products between feature rows: S_ij = <F_x[i], F_y[j]>."""
    fx, fy = _values(features_x), _values(features_y)
    if fx.ndim != 2 or fy.ndim != 2:
        raise ValueError("features must be 2-d matrices")
    if fx.shape[1] != fy.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: {fx.shape[1]} vs {fy.shape[1]} columns"
        )
    return fx @ fy.T


def _row_normalize(logp: np.ndarray, log_target: float) -> np.ndarray:
    return logp - logsumexp(logp, axis=1, keepdims=True) + log_target


def _col_normalize(logp: np.ndarray, log_target: float) -> np.ndarray:
    return logp - logsumexp(logp, axis=0, keepdims=True) + log_target


def sinkhorn(sim: np.ndarray,
             iterations: int = DEFAULT_SINKHORN_ITERATIONS,
             temperature: float = DEFAULT_TEMPERATURE,
             row_first: bool = True,
             source_id: str = "x", target_id: str = "y") -> SoftCorrespondence:
    """Alternating row/column softmax normalization of exp(sim / temperature).

    Runs entirely in the log domain, so |sim| / temperature up to ~1e4 is
    safe. Each iteration normalizes rows then columns; a final row pass makes
    the row sums exact. Rectangular inputs normalize to uniform marginals
    scaled by min(n_x, n_y) / n on each side, so the total mass is min(n_x, n_y).

    row_first=False flips the within-iteration order (used to verify that
    quantization is insensitive to the starting side).
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2:
        raise ValueError("similarity must be a 2-d matrix")
    if not np.all(np.isfinite(sim)):
        raise ValueError("non-finite similarity entry")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")

    n_x, n_y = sim.shape
    m = min(n_x, n_y)
    log_row = float(np.log(m / n_x))
    log_col = float(np.log(m / n_y))

    logp = sim / temperature
    if row_first:
        for _ in range(iterations):
            logp = _col_normalize(_row_normalize(logp, log_row), log_col)
        logp = _row_normalize(logp, log_row)
    else:
        for _ in range(iterations):
            logp = _row_normalize(_col_normalize(logp, log_col), log_row)
    pi = np.exp(logp)
    if not np.all(np.isfinite(pi)):
        raise ValueError("sinkhorn overflow: similarity input was not finite")
    return SoftCorrespondence(
        pi=pi, normalization="sinkhorn", temperature=temperature,
        iterations=iterations, source_id=source_id, target_id=target_id,
    )


def column_softmax(sim: np.ndarray, temperature: float = DEFAULT_TEMPERATURE,
                   source_id: str = "x", target_id: str = "y") -> SoftCorrespondence:
    """Columnwise softmax of sim / temperature; the partial-matching normalizer."""
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2:
        raise ValueError("similarity must be a 2-d matrix")
    if not np.all(np.isfinite(sim)):
        raise ValueError("non-finite similarity entry")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    logp = sim / temperature
    pi = np.exp(_col_normalize(logp, 0.0))
    return SoftCorrespondence(
        pi=pi, normalization="column_softmax", temperature=temperature,
        iterations=0, source_id=source_id, target_id=target_id,
    )


def quantize(soft: SoftCorrespondence) -> PointMap:
    """Binarize a soft correspondence to a hard map; ties take the smallest index.

    Sinkhorn output quantizes per row (first-shape vertex -> second-shape
    index); column softmax quantizes per column, mapping each partial-shape
    vertex to a complete-shape index.
    """
    if soft.normalization == "sinkhorn":
        assignment = np.argmax(soft.pi, axis=1)
        return PointMap(assignment=assignment, domain_id=soft.source_id, codomain_id=soft.target_id)
    assignment = np.argmax(soft.pi, axis=0)
    return PointMap(assignment=assignment, domain_id=soft.target_id, codomain_id=soft.source_id)
