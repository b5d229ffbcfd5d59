"""End-to-end commands: match, eval, losses, refine, synth, dump-features."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import correspondence as corr
from . import descriptors as desc
from .config import PipelineConfig, apply_overrides, format_config, load_config
from .errors import ShapeMatchError, UserInputError
from .evaluation import build_match_report, write_match_report, write_summary
from .fmap import (
    PointMap,
    build_fmap_problem,
    fmap_to_pointmap,
    load_pointmap,
    resolvent_mask,
    save_fmap,
    save_pointmap,
    solve_fmap,
)
from .geometry import TriangleMesh, load_shape, mesh_to_point_cloud, save_shape, surface_area
from .losses import RefinePair, e_total, estimate_r, refine_features
from .spectral import cotan_laplacian, eigenbasis, pointcloud_laplacian
from .synth import SYNTH_KINDS, make_pair

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_INTERNAL_ERROR = 2


# ---------------------------------------------------------------------------
# shared pipeline plumbing


def _build_basis(shape, config: PipelineConfig):
    if isinstance(shape, TriangleMesh):
        op = cotan_laplacian(shape)
    else:
        op = pointcloud_laplacian(shape, knn=config.pc_knn)
    return eigenbasis(op, config.k)


def _build_features(shape, config: PipelineConfig, features_path, basis=None):
    """Descriptor per config; external descriptors come from a row-per-vertex file."""
    n = shape.n_vertices if isinstance(shape, TriangleMesh) else shape.n_points
    if config.descriptor == "external":
        if features_path is None:
            raise UserInputError(
                "descriptor=external needs a feature file (--source-features / --target-features)"
            )
        return desc.load_external_features(features_path, expected_n=n)
    if config.descriptor == "xyz":
        return desc.xyz_features(shape)
    if basis is None:
        basis = _build_basis(shape, config)
    return desc.compute_descriptor(shape, basis, config.descriptor, config.descriptor_size)


def _match_with_features(source, target, f_src, f_tgt, config: PipelineConfig,
                         basis_src=None, basis_tgt=None):
    """Modality routing: mesh-mesh via the functional map, otherwise feature similarity.

    Returns (point_map, functional_map_or_None). The point map is indexed by
    target vertices and stores source indices in every route.
    """
    mesh_mesh = isinstance(source, TriangleMesh) and isinstance(target, TriangleMesh)
    if mesh_mesh and not config.partial:
        if basis_src is None:
            basis_src = _build_basis(source, config)
        if basis_tgt is None:
            basis_tgt = _build_basis(target, config)
        problem = build_fmap_problem(basis_src, basis_tgt, f_src, f_tgt, config.lambda_reg)
        mask = resolvent_mask(basis_src.evals, basis_tgt.evals, config.resolvent_gamma)
        fmap = solve_fmap(problem, mask, source_id=source.shape_id, target_id=target.shape_id)
        return fmap_to_pointmap(fmap, basis_src, basis_tgt), fmap

    v_src, v_tgt = f_src.values, f_tgt.values
    if config.standardize_features:
        v_src, v_tgt = desc.standardize_columns(v_src), desc.standardize_columns(v_tgt)
    if config.partial:
        # convention: the source is the complete shape, the target the partial one
        sim = corr.similarity(v_src, v_tgt)
        soft = corr.column_softmax(sim, temperature=config.sinkhorn_temperature,
                                   source_id=source.shape_id, target_id=target.shape_id)
    else:
        sim = corr.similarity(v_tgt, v_src)
        soft = corr.sinkhorn(sim, iterations=config.sinkhorn_iterations,
                             temperature=config.sinkhorn_temperature,
                             source_id=target.shape_id, target_id=source.shape_id)
    return corr.quantize(soft), None


def _write_config(config: PipelineConfig, out_dir: Path) -> str:
    echo = format_config(config)
    (out_dir / "config.txt").write_text(echo, encoding="ascii")
    return echo


def _shape_meta(shape):
    if isinstance(shape, TriangleMesh):
        return {"id": shape.shape_id, "modality": "mesh", "n": shape.n_vertices}
    return {"id": shape.shape_id, "modality": "pointcloud", "n": shape.n_points}


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="ascii")


# ---------------------------------------------------------------------------
# commands


def cmd_match(args, config: PipelineConfig) -> int:
    source = load_shape(args.source)
    target = load_shape(args.target)
    f_src = _build_features(source, config, args.source_features)
    f_tgt = _build_features(target, config, args.target_features)
    pm, fmap = _match_with_features(source, target, f_src, f_tgt, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_pointmap(pm, out / "pointmap.txt")
    if fmap is not None:
        save_fmap(fmap, out / "functional_map.txt")
    _write_config(config, out)
    _write_json({
        "source": _shape_meta(source),
        "target": _shape_meta(target),
        "route": "functional_map" if fmap is not None else "feature_similarity",
        "partial": config.partial,
    }, out / "meta.json")
    return EXIT_OK


def cmd_eval(args, config: PipelineConfig) -> int:
    mesh = load_shape(args.mesh)
    if not isinstance(mesh, TriangleMesh):
        raise UserInputError("evaluation needs a triangle mesh for geodesic distances")
    pred = load_pointmap(args.pred)
    gt = load_pointmap(args.gt)
    report = build_match_report(pred, gt, mesh, thresholds=config.pck_thresholds,
                                pair=(Path(args.pred).stem, Path(args.gt).stem))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = _write_config(config, out)
    write_match_report(report, out / "report.txt", config_echo=echo)
    write_summary([report], out / "summary.json", config_echo=echo)
    return EXIT_OK


def _losses_inputs(args, config: PipelineConfig):
    """Load a pair and assemble everything e_total consumes."""
    source = load_shape(args.source)
    target = load_shape(args.target)
    basis_x = _build_basis(source, config)
    basis_y = _build_basis(target, config)
    f_x = _build_features(source, config, args.source_features, basis=basis_x)
    f_y = _build_features(target, config, args.target_features, basis=basis_y)

    def cloud_features(shape, mesh_features):
        if not isinstance(shape, TriangleMesh):
            return mesh_features  # already a cloud: it is its own pairing partner
        cloud = mesh_to_point_cloud(shape, config.noise_sigma, config.seed)
        if config.descriptor in ("external",):
            return mesh_features  # no recipe to recompute external features on the cloud
        if config.descriptor == "xyz":
            return desc.xyz_features(cloud)
        return desc.compute_descriptor(cloud, _build_basis(cloud, config),
                                       config.descriptor, config.descriptor_size)

    fh_x = cloud_features(source, f_x)
    fh_y = cloud_features(target, f_y)

    problem_xy = build_fmap_problem(basis_x, basis_y, f_x, f_y, config.lambda_reg)
    mask_xy = resolvent_mask(basis_x.evals, basis_y.evals, config.resolvent_gamma)
    C_xy = solve_fmap(problem_xy, mask_xy, source_id=source.shape_id, target_id=target.shape_id)
    problem_yx = build_fmap_problem(basis_y, basis_x, f_y, f_x, config.lambda_reg)
    mask_yx = resolvent_mask(basis_y.evals, basis_x.evals, config.resolvent_gamma)
    C_yx = solve_fmap(problem_yx, mask_yx, source_id=target.shape_id, target_id=source.shape_id)

    vh_x, vh_y = fh_x.values, fh_y.values
    if config.standardize_features:
        vh_x, vh_y = desc.standardize_columns(vh_x), desc.standardize_columns(vh_y)
    sim = corr.similarity(vh_x, vh_y)
    if config.partial:
        if not (isinstance(source, TriangleMesh) and isinstance(target, TriangleMesh)):
            raise UserInputError("partial losses need meshes to estimate the area ratio")
        pi_hat = corr.column_softmax(sim, temperature=config.sinkhorn_temperature)
        r = estimate_r(surface_area(target), surface_area(source), config.k)
        nce_pairs = [(f_x, fh_x)]  # the complete shape's self-pairing only
    else:
        pi_hat = corr.sinkhorn(sim, iterations=config.sinkhorn_iterations,
                               temperature=config.sinkhorn_temperature)
        r = None
        nce_pairs = [(f_x, fh_x), (f_y, fh_y)]
    return C_xy, C_yx, pi_hat, basis_x, basis_y, nce_pairs, r


def cmd_losses(args, config: PipelineConfig) -> int:
    C_xy, C_yx, pi_hat, basis_x, basis_y, nce_pairs, r = _losses_inputs(args, config)
    report = e_total(C_xy, C_yx, pi_hat, basis_x, basis_y, nce_pairs,
                     weights=config.weights, partial=config.partial, r=r)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = _write_config(config, out)
    lines = [
        f"e_bij={report.e_bij:.17g}",
        f"e_orth={report.e_orth:.17g}",
        f"e_align={report.e_align:.17g}",
        f"e_nce={report.e_nce:.17g}",
        f"e_total={report.e_total:.17g}",
        f"partial={'true' if report.partial else 'false'}",
    ]
    if report.r is not None:
        lines.append(f"r={report.r}")
    (out / "losses.txt").write_text("\n".join(lines) + "\n" + echo, encoding="ascii")
    return EXIT_OK


def cmd_refine(args, config: PipelineConfig) -> int:
    source = load_shape(args.source)
    target = load_shape(args.target)
    if not (isinstance(source, TriangleMesh) and isinstance(target, TriangleMesh)):
        raise UserInputError("refinement operates on mesh pairs")
    basis_x = _build_basis(source, config)
    basis_y = _build_basis(target, config)
    f_x = _build_features(source, config, args.source_features, basis=basis_x)
    f_y = _build_features(target, config, args.target_features, basis=basis_y)

    cloud_f_x = cloud_f_y = None
    if config.noise_sigma > 0 and config.descriptor in ("hks", "wks", "xyz"):
        for which, shape in (("x", source), ("y", target)):
            cloud = mesh_to_point_cloud(shape, config.noise_sigma, config.seed)
            if config.descriptor == "xyz":
                feats = desc.xyz_features(cloud)
            else:
                feats = desc.compute_descriptor(cloud, _build_basis(cloud, config),
                                                config.descriptor, config.descriptor_size)
            if which == "x":
                cloud_f_x = feats
            else:
                cloud_f_y = feats

    pair = RefinePair(shape_x=source, shape_y=target, basis_x=basis_x, basis_y=basis_y,
                      features_x=f_x, features_y=f_y,
                      cloud_features_x=cloud_f_x, cloud_features_y=cloud_f_y)
    result = refine_features(
        pair, weights=config.weights, steps=config.refine_steps,
        step_size=config.refine_step_size, lambda_reg=config.lambda_reg,
        resolvent_gamma=config.resolvent_gamma,
        sinkhorn_iterations=config.sinkhorn_iterations,
        sinkhorn_temperature=config.sinkhorn_temperature,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = _write_config(config, out)
    desc.save_features(result.features_x, out / "refined_source_features.txt")
    desc.save_features(result.features_y, out / "refined_target_features.txt")
    with open(out / "trace.txt", "w", encoding="ascii") as fh:
        for step, rec in enumerate(result.trace):
            fh.write(f"{step} {rec.e_bij:.17g} {rec.e_orth:.17g} {rec.e_align:.17g} "
                     f"{rec.e_nce:.17g} {rec.e_total:.17g}\n")

    if args.gt is not None:
        gt = load_pointmap(args.gt, domain_id=target.shape_id, codomain_id=source.shape_id)
        reports = {}
        for tag, feats in (("before", (f_x, f_y)),
                           ("after", (result.features_x, result.features_y))):
            pm, _ = _match_with_features(source, target, feats[0], feats[1], config,
                                         basis_src=basis_x, basis_tgt=basis_y)
            pm = PointMap(assignment=pm.assignment, domain_id=gt.domain_id,
                          codomain_id=gt.codomain_id)
            report = build_match_report(pm, gt, source, thresholds=config.pck_thresholds,
                                        pair=(source.shape_id, target.shape_id))
            write_match_report(report, out / f"report_{tag}.txt", config_echo=echo)
            reports[tag] = report
        _write_json({
            "mean_error_before": reports["before"].mean_error,
            "mean_error_after": reports["after"].mean_error,
            "steps_accepted": max(len(result.trace) - 1, 0),
        }, out / "refine_summary.json")
    return EXIT_OK


def cmd_synth(args, config: PipelineConfig) -> int:
    params = {}
    for name in ("subdivisions", "radius", "bump_amplitude", "deform_amplitude",
                 "nx", "ny", "bend_angle", "cut_fraction", "permute", "rotate"):
        value = getattr(args, name, None)
        if value is not None:
            params[name] = value
    pair = make_pair(args.kind, seed=args.synth_seed, **params)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_shape(pair.mesh_x, out / "source.off")
    save_shape(pair.mesh_y, out / "target.off")
    save_pointmap(pair.ground_truth, out / "gt.txt")
    meta = {
        "kind": pair.kind,
        "seed": args.synth_seed,
        "params": {k: v for k, v in sorted(params.items())},
        "source": _shape_meta(pair.mesh_x),
        "target": _shape_meta(pair.mesh_y),
    }
    if pair.area_ratio is not None:
        meta["area_ratio"] = pair.area_ratio
    _write_json(meta, out / "meta.json")
    return EXIT_OK


def cmd_dump_features(args, config: PipelineConfig) -> int:
    shape = load_shape(args.shape)
    features = _build_features(shape, config, args.features)
    out = Path(args.out)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    desc.save_features(features, out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


_CONFIG_FLAG_TYPES = {
    "k": int, "lambda_reg": float, "resolvent_gamma": float,
    "sinkhorn_iterations": int, "sinkhorn_temperature": float,
    "lambda_bij": float, "lambda_orth": float, "lambda_align": float,
    "lambda_nce": float, "tau": float, "descriptor": str, "descriptor_size": int,
    "noise_sigma": float, "seed": int, "pc_knn": int,
    "refine_steps": int, "refine_step_size": float,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("configuration overrides")
    group.add_argument("--config", metavar="FILE", help="key=value configuration file")
    for name, typ in _CONFIG_FLAG_TYPES.items():
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)
    group.add_argument("--partial", dest="partial", action=argparse.BooleanOptionalAction,
                       default=None, help="partial matching (source complete, target partial)")
    group.add_argument("--pck-thresholds", dest="pck_thresholds", default=None,
                       type=lambda s: tuple(float(t) for t in s.split(",")))


def _add_feature_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--source-features", metavar="FILE", default=None,
                        help="external feature file for the source shape")
    parser.add_argument("--target-features", metavar="FILE", default=None,
                        help="external feature file for the target shape")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapematch",
        description="Spectral non-rigid shape correspondence toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="compute a correspondence between two shapes")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--out", required=True)
    _add_feature_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="score a predicted map against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("mesh", help="mesh the correspondence indices refer to")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("losses", help="evaluate the self-supervised objective on a pair")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--out", required=True)
    _add_feature_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_losses)

    p = sub.add_parser("refine", help="optimize a linear feature transform on a pair")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--gt", default=None, help="ground-truth map for before/after reports")
    p.add_argument("--out", required=True)
    _add_feature_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("synth", help="generate a synthetic pair with ground truth")
    p.add_argument("kind", choices=sorted(SYNTH_KINDS))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", dest="synth_seed", type=int, default=0)
    p.add_argument("--subdivisions", type=int, default=None)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--bump-amplitude", dest="bump_amplitude", type=float, default=None)
    p.add_argument("--deform-amplitude", dest="deform_amplitude", type=float, default=None)
    p.add_argument("--nx", type=int, default=None)
    p.add_argument("--ny", type=int, default=None)
    p.add_argument("--bend-angle", dest="bend_angle", type=float, default=None)
    p.add_argument("--cut-fraction", dest="cut_fraction", type=float, default=None)
    p.add_argument("--permute", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--rotate", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dump-features", help="write a shape's descriptor matrix as text")
    p.add_argument("shape")
    p.add_argument("--out", required=True)
    p.add_argument("--features", metavar="FILE", default=None,
                   help="external feature file to validate and re-emit")
    _add_config_flags(p)
    p.set_defaults(func=cmd_dump_features)

    return parser


def _effective_config(args) -> PipelineConfig:
    config = PipelineConfig()
    if getattr(args, "config", None):
        config = load_config(args.config, base=config)
    overrides = {name: getattr(args, name) for name in _CONFIG_FLAG_TYPES if hasattr(args, name)}
    for name in ("partial", "pck_thresholds"):
        if hasattr(args, name):
            overrides[name] = getattr(args, name)
    return apply_overrides(config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.func is cmd_synth:
            config = PipelineConfig()
        else:
            config = _effective_config(args)
        return args.func(args, config)
    except (UserInputError, ValueError, OSError) as exc:
        print(f"shapematch: error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except ShapeMatchError as exc:
        print(f"shapematch: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL_ERROR
    except Exception as exc:  # pragma: no cover - defensive
        print(f"shapematch: unexpected error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
