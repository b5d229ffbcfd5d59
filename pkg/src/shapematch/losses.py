"""Self-supervised objective: map regularizers, spectral alignment, contrastive
term, the weighted total, finite-difference gradients, and a desk-scale
feature-refinement optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .correspondence import DEFAULT_SINKHORN_ITERATIONS, DEFAULT_TEMPERATURE, similarity, sinkhorn
from .descriptors import FeatureMatrix
from .errors import RefinementError
from .fmap import (
    DEFAULT_LAMBDA_REG,
    DEFAULT_RESOLVENT_GAMMA,
    FmapProblem,
    resolvent_mask,
    solve_fmap,
)
from .spectral import SpectralBasis

__all__ = [
    "LossWeights",
    "LossReport",
    "e_bij",
    "e_orth",
    "e_align",
    "e_nce",
    "e_total",
    "estimate_r",
    "fd_gradient",
    "e_bij_gradients",
    "e_orth_gradient",
    "e_align_gradient",
    "RefinePair",
    "RefineResult",
    "refine_features",
]

# largest transform the finite-difference refinement budget allows
FD_PARAM_BUDGET = 512


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total objective and the contrastive scaling factor."""

    lambda_bij: float = 1.0
    lambda_orth: float = 1.0
    lambda_align: float = 1e-3
    lambda_nce: float = 10.0
    tau: float = 0.07

    def __post_init__(self):
        for name in ("lambda_bij", "lambda_orth", "lambda_align", "lambda_nce"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass
class LossReport:
    """One evaluation of the total objective with its components."""

    e_bij: float
    e_orth: float
    e_align: float
    e_nce: float
    e_total: float
    weights: LossWeights = field(default_factory=LossWeights)
    partial: bool = False
    r: int | None = None


def _as_matrix(C) -> np.ndarray:
    C = C.C if hasattr(C, "C") else np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    return C


def _identity_r(k: int, r: int | None) -> np.ndarray:
    """I_r: identity whose diagonal keeps only the first r ones."""
    if r is None:
        r = k
    if not (1 <= r <= k):
        raise ValueError(f"r={r} must lie in [1, {k}]")
    target = np.zeros((k, k))
    target[np.arange(r), np.arange(r)] = 1.0
    return target


def e_bij(C_xy, C_yx, r: int | None = None) -> float:
    """Bijectivity penalty ||C_xy C_yx - I_r||_F^2 (r = k in complete matching)."""
    Cxy, Cyx = _as_matrix(C_xy), _as_matrix(C_yx)
    if Cxy.shape[1] != Cyx.shape[0] or Cxy.shape[0] != Cyx.shape[1]:
        raise ValueError(f"shape mismatch: {Cxy.shape} vs {Cyx.shape}")
    G = Cxy @ Cyx
    diff = G - _identity_r(G.shape[0], r)
    return float(np.sum(diff * diff))


def e_orth(C, r: int | None = None) -> float:
    """Orthogonality penalty ||C C^T - I_r||_F^2, prompting area preservation."""
    C = _as_matrix(C)
    G = C @ C.T
    diff = G - _identity_r(G.shape[0], r)
    return float(np.sum(diff * diff))


def e_align(pi_hat, C_yx, basis_x: SpectralBasis, basis_y: SpectralBasis) -> float:
    """Spectral alignment ||phi_x C_yx - Pi_hat phi_y||_F^2.

    Couples the soft correspondence on the vertex side with the functional
    map on the spectral side.
    """
    pi = pi_hat.pi if hasattr(pi_hat, "pi") else np.asarray(pi_hat, dtype=np.float64)
    Cyx = _as_matrix(C_yx)
    k_x, k_y = Cyx.shape
    if k_x > basis_x.k or k_y > basis_y.k:
        raise ValueError("functional map exceeds basis sizes")
    if pi.shape != (basis_x.n, basis_y.n):
        raise ValueError(
            f"soft correspondence shape {pi.shape} does not match ({basis_x.n}, {basis_y.n})"
        )
    diff = basis_x.phi[:, :k_x] @ Cyx - pi @ basis_y.phi[:, :k_y]
    return float(np.sum(diff * diff))


def e_nce(features, features_hat, tau: float) -> float:
    """Contrastive loss over the identity pairing of two feature sets.

    -sum_i log softmax_i(<F_i, F_hat_j> / tau), evaluated with log-sum-exp;
    every summand is nonnegative.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    F = features.values if hasattr(features, "values") else np.asarray(features, dtype=np.float64)
    Fh = features_hat.values if hasattr(features_hat, "values") else np.asarray(features_hat, dtype=np.float64)
    if F.shape != Fh.shape:
        raise ValueError(f"paired features must match in shape: {F.shape} vs {Fh.shape}")
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(Fh))):
        raise ValueError("non-finite feature entry")
    logits = (F @ Fh.T) / tau
    lse = logsumexp(logits, axis=1)
    return float(np.sum(lse - np.diag(logits)))


def e_total(C_xy, C_yx, pi_hat, basis_x: SpectralBasis, basis_y: SpectralBasis,
            nce_pairs: Sequence[tuple],
            weights: LossWeights | None = None,
            partial: bool = False, r: int | None = None) -> LossReport:
    """Weighted sum of the individual losses.

    In partial mode the identity targets become I_r and the contrastive
    pairs should carry only the complete shape's mesh/cloud pairing (the
    partial shape has no self-pairing with known correspondence). The
    orthogonality penalty follows the partial-form convention and applies
    to C_xy, the complete-to-partial direction.
    """
    weights = weights or LossWeights()
    if partial and r is None:
        raise ValueError("partial mode needs r (see estimate_r)")
    r_used = r if partial else None
    eb = e_bij(C_xy, C_yx, r=r_used)
    eo = e_orth(C_xy, r=r_used)
    ea = e_align(pi_hat, C_yx, basis_x, basis_y)
    en = float(sum(e_nce(F, Fh, weights.tau) for F, Fh in nce_pairs))
    et = (eb * weights.lambda_bij + eo * weights.lambda_orth
          + weights.lambda_align * ea + weights.lambda_nce * en)
    return LossReport(e_bij=eb, e_orth=eo, e_align=ea, e_nce=en, e_total=et,
                      weights=weights, partial=partial, r=r_used)


def estimate_r(area_partial: float, area_complete: float, k: int) -> int:
    """Effective rank of a complete-to-partial map from the surface-area ratio.

    r = clamp(round(k * area_partial / area_complete), 1, k), rounding half up.
    """
    if area_partial <= 0 or area_complete <= 0:
        raise ValueError("areas must be positive")
    if k < 1:
        raise ValueError("k must be >= 1")
    r = int(np.floor(k * area_partial / area_complete + 0.5))
    return max(1, min(k, r))


def fd_gradient(objective: Callable[[np.ndarray], float], params: np.ndarray,
                eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient with per-component step eps * max(1, |p_i|)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = np.array(params, dtype=np.float64).ravel()
    grad = np.empty_like(p)
    for i in range(len(p)):
        orig = p[i]
        h = eps * max(1.0, abs(orig))
        p[i] = orig + h
        f_plus = float(objective(p))
        p[i] = orig - h
        f_minus = float(objective(p))
        p[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


# analytic gradients of the quadratic/quartic terms, used as oracles for the
# finite-difference machinery and vice versa


def e_orth_gradient(C, r: int | None = None) -> np.ndarray:
    """d/dC ||C C^T - I_r||_F^2 = 4 (C C^T - I_r) C."""
    C = _as_matrix(C)
    return 4.0 * (C @ C.T - _identity_r(C.shape[0], r)) @ C


def e_bij_gradients(C_xy, C_yx, r: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ||C_xy C_yx - I_r||_F^2 w.r.t. both factors."""
    Cxy, Cyx = _as_matrix(C_xy), _as_matrix(C_yx)
    G = Cxy @ Cyx - _identity_r(Cxy.shape[0], r)
    return 2.0 * G @ Cyx.T, 2.0 * Cxy.T @ G


def e_align_gradient(pi_hat, C_yx, basis_x: SpectralBasis, basis_y: SpectralBasis) -> np.ndarray:
    """Gradient of the alignment term w.r.t. C_yx: 2 phi_x^T (phi_x C - Pi phi_y)."""
    pi = pi_hat.pi if hasattr(pi_hat, "pi") else np.asarray(pi_hat, dtype=np.float64)
    Cyx = _as_matrix(C_yx)
    k_x, k_y = Cyx.shape
    px = basis_x.phi[:, :k_x]
    return 2.0 * px.T @ (px @ Cyx - pi @ basis_y.phi[:, :k_y])


# ---------------------------------------------------------------------------
# desk-scale feature refinement


@dataclass
class RefinePair:
    """A matching pair bundled for refinement.

    cloud_features_* hold the point-cloud side of the contrastive pairing;
    when omitted the mesh features stand in for them (the zero-noise cloud
    has identical geometry, so its identity pairing is exact).
    """

    shape_x: object
    shape_y: object
    basis_x: SpectralBasis
    basis_y: SpectralBasis
    features_x: FeatureMatrix
    features_y: FeatureMatrix
    cloud_features_x: FeatureMatrix | None = None
    cloud_features_y: FeatureMatrix | None = None


@dataclass
class RefineResult:
    transform: np.ndarray
    features_x: FeatureMatrix
    features_y: FeatureMatrix
    trace: list[LossReport]


def refine_features(pair: RefinePair,
                    weights: LossWeights | None = None,
                    steps: int = 30,
                    step_size: float = 0.1,
                    *,
                    out_dim: int | None = None,
                    lambda_reg: float = DEFAULT_LAMBDA_REG,
                    resolvent_gamma: float = DEFAULT_RESOLVENT_GAMMA,
                    sinkhorn_iterations: int = DEFAULT_SINKHORN_ITERATIONS,
                    sinkhorn_temperature: float = DEFAULT_TEMPERATURE,
                    fd_eps: float = 1e-5,
                    max_backtracks: int = 25) -> RefineResult:
    """Gradient-descend the total loss over a shared linear feature transform.

    The c x c' transform multiplies every feature matrix on the right; all
    gradients flow through the functional-map solver, Sinkhorn, and the loss
    terms by central finite differences. Steps use backtracking Armijo line
    search (factor 0.5, c = 1e-4), so the accepted-loss trace never increases.
    """
    weights = weights or LossWeights()
    if steps < 0:
        raise ValueError("steps must be >= 0")

    Fx = pair.features_x.values
    Fy = pair.features_y.values
    if Fx.shape[1] != Fy.shape[1]:
        raise ValueError("the pair's features must share a common dimension")
    c = Fx.shape[1]
    c_out = out_dim if out_dim is not None else c
    if not (1 <= c_out):
        raise ValueError("out_dim must be >= 1")
    if c * c_out > FD_PARAM_BUDGET:
        raise ValueError(
            f"transform has {c * c_out} parameters, over the finite-difference "
            f"budget of {FD_PARAM_BUDGET}; use fewer descriptor bands or a smaller out_dim"
        )
    Fhx = pair.cloud_features_x.values if pair.cloud_features_x is not None else Fx
    Fhy = pair.cloud_features_y.values if pair.cloud_features_y is not None else Fy
    if Fhx.shape != Fx.shape or Fhy.shape != Fy.shape:
        raise ValueError("cloud features must match the mesh features in shape")

    bx, by = pair.basis_x, pair.basis_y
    # projections are linear, so transformed coefficients are P @ W
    Px, Py = bx.project(Fx), by.project(Fy)
    mask_xy = resolvent_mask(bx.evals, by.evals, resolvent_gamma)
    mask_yx = resolvent_mask(by.evals, bx.evals, resolvent_gamma)

    def evaluate(W: np.ndarray) -> LossReport:
        A, B = Px @ W, Py @ W
        C_xy = solve_fmap(FmapProblem(A=A, B=B, evals_x=bx.evals, evals_y=by.evals,
                                      lambda_reg=lambda_reg), mask_xy)
        C_yx = solve_fmap(FmapProblem(A=B, B=A, evals_x=by.evals, evals_y=bx.evals,
                                      lambda_reg=lambda_reg), mask_yx)
        pi_hat = sinkhorn(similarity(Fhx @ W, Fhy @ W),
                          iterations=sinkhorn_iterations, temperature=sinkhorn_temperature)
        return e_total(C_xy, C_yx, pi_hat, bx, by,
                       nce_pairs=[(Fx @ W, Fhx @ W), (Fy @ W, Fhy @ W)],
                       weights=weights)

    W = np.eye(c, c_out)
    if steps == 0:
        return RefineResult(transform=W, features_x=pair.features_x,
                            features_y=pair.features_y, trace=[])

    trace: list[LossReport] = []

    def objective(flat: np.ndarray) -> float:
        report = evaluate(flat.reshape(c, c_out))
        if not np.isfinite(report.e_total):
            raise RefinementError("non-finite loss during refinement", trace)
        return report.e_total

    report = evaluate(W)
    if not np.isfinite(report.e_total):
        raise RefinementError("non-finite loss at the initial transform", trace)
    trace.append(report)
    current = report.e_total

    for _ in range(steps):
        grad = fd_gradient(objective, W.ravel(), eps=fd_eps)
        g_norm_sq = float(grad @ grad)
        if g_norm_sq == 0.0:
            break
        t = step_size
        accepted = None
        for _ in range(max_backtracks):
            W_trial = W - t * grad.reshape(c, c_out)
            trial = evaluate(W_trial)
            if not np.isfinite(trial.e_total):
                raise RefinementError("non-finite loss during line search", trace)
            if trial.e_total <= current - 1e-4 * t * g_norm_sq:
                accepted = (W_trial, trial)
                break
            t *= 0.5
        if accepted is None:
            break
        W, report = accepted
        current = report.e_total
        trace.append(report)

    refined_x = FeatureMatrix(values=Fx @ W, feature_kind="external")
    refined_y = FeatureMatrix(values=Fy @ W, feature_kind="external")
    return RefineResult(transform=W, features_x=refined_x, features_y=refined_y, trace=trace)
