"""Correspondence quality: normalized geodesic errors, PCK curves, reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fmap import PointMap
from .geometry import TriangleMesh, geodesic_distance_matrix, surface_area

__all__ = [
    "DEFAULT_PCK_THRESHOLDS",
    "MatchReport",
    "geodesic_error",
    "pck_curve",
    "aggregate",
    "build_match_report",
    "write_match_report",
    "write_summary",
]

DEFAULT_PCK_THRESHOLDS = (0.01, 0.02, 0.05, 0.10, 0.15, 0.20, 0.25)


@dataclass
class MatchReport:
    """Per-pair evaluation record.

    errors holds one normalized geodesic error per mapped vertex; entries are
    np.inf where the predicted and ground-truth vertices fall in different
    connected components (those vertices are skipped and counted).
    mean_error and PCK fractions are taken over the scored (finite) vertices.
    """

    pair: tuple[str, str]
    errors: np.ndarray = field(repr=False)
    mean_error: float = 0.0
    pck_samples: list[tuple[float, float]] = field(default_factory=list)
    skipped_count: int = 0


def geodesic_error(pred: PointMap, gt: PointMap, target_mesh: TriangleMesh) -> np.ndarray:
    """Normalized geodesic error of a prediction against ground truth.

    error_j = d_geo(pred[j], gt[j]) / sqrt(surface_area(target_mesh)), where
    both point maps store indices into target_mesh (the shape the
    correspondences land on). Cross-component pairs come back as np.inf.
    """
    if len(pred) != len(gt):
        raise ValueError(f"point maps differ in size: {len(pred)} vs {len(gt)}")
    if pred.domain_id != gt.domain_id or pred.codomain_id != gt.codomain_id:
        raise ValueError(
            f"point maps have different directions: "
            f"{pred.domain_id}->{pred.codomain_id} vs {gt.domain_id}->{gt.codomain_id}"
        )
    n = target_mesh.n_vertices
    if pred.assignment.max(initial=0) >= n or gt.assignment.max(initial=0) >= n:
        raise ValueError("correspondence index beyond the target mesh")

    sources, inverse = np.unique(gt.assignment, return_inverse=True)
    dist = geodesic_distance_matrix(target_mesh, sources)
    raw = dist[inverse, pred.assignment]
    return raw / np.sqrt(surface_area(target_mesh))


def pck_curve(errors: np.ndarray, thresholds) -> list[tuple[float, float]]:
    """Fraction of scored errors at or below each threshold.

    Thresholds must be ascending; the fractions are then nondecreasing.
    """
    thresholds = [float(t) for t in thresholds]
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be ascending")
    errors = np.asarray(errors, dtype=np.float64)
    scored = errors[np.isfinite(errors)]
    if scored.size == 0:
        raise ValueError("no scored vertices to build a PCK curve from")
    return [(t, float(np.mean(scored <= t))) for t in thresholds]


def aggregate(reports) -> float:
    """Mean of per-pair mean errors, scaled by 100 (the table convention)."""
    reports = list(reports)
    if not reports:
        raise ValueError("cannot aggregate an empty report list")
    return float(np.mean([r.mean_error for r in reports]) * 100.0)


def build_match_report(pred: PointMap, gt: PointMap, target_mesh: TriangleMesh,
                       thresholds=DEFAULT_PCK_THRESHOLDS,
                       pair: tuple[str, str] | None = None) -> MatchReport:
    """Evaluate one pair end to end."""
    errors = geodesic_error(pred, gt, target_mesh)
    finite = np.isfinite(errors)
    if not finite.any():
        raise ValueError("every vertex was skipped (cross-component pairs only)")
    if pair is None:
        pair = (pred.domain_id, pred.codomain_id)
    return MatchReport(
        pair=pair,
        errors=errors,
        mean_error=float(errors[finite].mean()),
        pck_samples=pck_curve(errors, thresholds),
        skipped_count=int((~finite).sum()),
    )


def write_match_report(report: MatchReport, path, config_echo: str | None = None) -> None:
    """Structured text: one record per pair, PCK samples as threshold/fraction pairs."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"pair {report.pair[0]} {report.pair[1]}\n")
        fh.write(f"mean_error {report.mean_error:.17g}\n")
        fh.write(f"mean_error_x100 {report.mean_error * 100.0:.17g}\n")
        fh.write(f"scored {int(np.isfinite(report.errors).sum())}\n")
        fh.write(f"skipped {report.skipped_count}\n")
        for t, f in report.pck_samples:
            fh.write(f"pck {t:.17g} {f:.17g}\n")
        if config_echo:
            for line in config_echo.strip().splitlines():
                fh.write(f"config {line}\n")


def write_summary(reports, path, config_echo: str | None = None) -> None:
    """Machine-readable JSON summary across pairs."""
    reports = list(reports)
    payload = {
        "mean_error_x100": aggregate(reports),
        "pairs": [
            {
                "pair": list(r.pair),
                "mean_error": r.mean_error,
                "scored": int(np.isfinite(r.errors).sum()),
                "skipped": r.skipped_count,
                "pck": [[t, f] for t, f in r.pck_samples],
            }
            for r in reports
        ],
    }
    if config_echo is not None:
        payload["config"] = config_echo.strip().splitlines()
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
