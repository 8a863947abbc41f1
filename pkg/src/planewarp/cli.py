"""Command-line front end: stitch, eval, features, fixture."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .config import RunConfig
from .errors import StitchError
from .estimator import PlanarStitcher
from .features import detect_line_segments, load_matches, match_set_to_json
from .geometry import mesh_from_json, mesh_to_json
from .lineops import ConnectionParams, connect_segments
from .metrics import compute_report, make_mesh_warp
from .planes import PlanePolicy
from .synthetic import gen_plane_scene, moderate_homography
from .validation import load_image, save_image


def _config_options(f):
    """Flags mirroring RunConfig; None means "not set" for precedence."""
    options = [
        click.option("--grid-size", type=float, default=None, help="Mesh cell size in px."),
        click.option("--lambda-sd", type=float, default=None),
        click.option("--lambda-sa", type=float, default=None),
        click.option("--lambda-p", type=float, default=None),
        click.option("--lambda-l", type=float, default=None),
        click.option("--lambda-gh", type=float, default=None),
        click.option("--lambda-ov", type=float, default=None),
        click.option("--lambda-nv", type=float, default=None),
        click.option("--lambda-ll", type=float, default=None),
        click.option("--lambda-gl", type=float, default=None),
        click.option("--slope-tol", type=float, default=None,
                     help="Segment connection direction tolerance (radians)."),
        click.option("--dist-tol", type=float, default=None,
                     help="Segment connection endpoint gap tolerance (px)."),
        click.option("--seed", type=int, default=None, help="RANSAC RNG seed."),
        click.option("--pyramid-scale", type=float, default=None),
        click.option("--max-points", type=int, default=None),
        click.option("--line-grad-threshold", type=float, default=None),
        click.option("--max-stars-per-point", type=int, default=None),
        click.option("--min-leg-length", type=float, default=None),
        click.option("--sample-spacing", type=float, default=None),
        click.option("--extension-padding", type=float, default=None),
        click.option("--global-line-ratio", type=float, default=None),
        click.option("--ransac-threshold", type=float, default=None),
        click.option("--ransac-confidence", type=float, default=None),
        click.option("--prewarp-normals", is_flag=True, default=None),
        click.option("--d-dir-raw", is_flag=True, default=None,
                     help="Skip unit normalization in the direction metric."),
    ]
    for opt in reversed(options):
        f = opt(f)
    return f


def _build_config(config_path, kwargs) -> RunConfig:
    flags = {k: kwargs.pop(k) for k in list(kwargs)
             if k in RunConfig.field_names()}
    return RunConfig.from_sources(config_path, **flags)


def _fail(exc: Exception, json_errors: bool, stage: str = "unknown") -> None:
    if isinstance(exc, StitchError):
        payload = exc.to_dict()
    else:
        payload = {"stage": stage, "code": "error", "message": str(exc)}
    if json_errors:
        click.echo(json.dumps(payload), err=True)
    else:
        click.echo(f"error [{payload['stage']}/{payload['code']}]: {payload['message']}",
                   err=True)
    sys.exit(1)


def _dump_json(path, data) -> None:
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")


@click.group()
def main():
    """Two-image mesh-warp stitching with planar feature constraints."""


@main.command()
@click.argument("target", type=click.Path(exists=True, dir_okay=False))
@click.argument("reference", type=click.Path(exists=True, dir_okay=False))
@click.option("--matches", "matches_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Precomputed matches JSON instead of built-in detection.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON config file mirroring RunConfig.")
@click.option("--out", type=click.Path(dir_okay=False), default="stitched.png",
              show_default=True, help="Stitched output PNG.")
@click.option("--mesh", "mesh_path", type=click.Path(dir_okay=False), default=None,
              help="Deformed mesh JSON (default: <out>.mesh.json).")
@click.option("--report", "report_path", type=click.Path(dir_okay=False),
              default="report.json", show_default=True)
@click.option("--mask", "mask_path", type=click.Path(dir_okay=False), default=None,
              help="Also write the warped-coverage mask as a PNG.")
@click.option("--dump-system", type=click.Path(dir_okay=False), default=None,
              help="Write the sparse system (A, b) as triplet text.")
@click.option("--json-errors", is_flag=True, default=False)
@_config_options
def stitch(target, reference, matches_path, config_path, out, mesh_path,
           report_path, mask_path, dump_system, json_errors, **kwargs):
    """Stitch TARGET onto REFERENCE."""
    try:
        cfg = _build_config(config_path, kwargs)
        img_t = load_image(target)
        img_r = load_image(reference)
        match_set = None
        if matches_path is not None:
            match_set = load_matches(matches_path,
                                     target_size=(img_t.shape[1], img_t.shape[0]),
                                     reference_size=(img_r.shape[1], img_r.shape[0]))
        est = PlanarStitcher(**cfg.estimator_kwargs())
        est.fit(img_t, img_r, matches=match_set)
        stitched = est.stitch()
    except StitchError as exc:
        _fail(exc, json_errors)
    except OSError as exc:
        _fail(exc, json_errors, stage="io")

    save_image(out, stitched)
    if mask_path is not None:
        save_image(mask_path, est.warped_mask_.astype(np.uint8) * 255)
    mesh_path = mesh_path or str(Path(out).with_suffix("")) + ".mesh.json"
    _dump_json(mesh_path, mesh_to_json(est.mesh_, est.vertices_))
    matches_out = str(Path(out).with_suffix("")) + ".matches.json"
    _dump_json(matches_out, match_set_to_json(est.match_set_))
    _dump_json(report_path, {
        "metrics": est.report_.to_dict(),
        "diagnostics": {
            "fold_count": est.fold_count_,
            "n_point_matches": len(est.match_set_.points),
            "n_extended": est.n_extended_,
            "n_line_matches": len(est.match_set_.lines),
            "canvas": [est.canvas_.width, est.canvas_.height],
            "offset": list(est.canvas_.offset),
            "homography_normalization": est.homography_.normalization,
        },
    })
    if dump_system is not None:
        from .energy import dump_system as _dump
        _dump(est.assembly_, dump_system)
    click.echo(f"stitched -> {out}; mesh -> {mesh_path}; report -> {report_path}")


@main.command("eval")
@click.argument("mesh", type=click.Path(exists=True, dir_okay=False))
@click.argument("matches", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--report", "report_path", type=click.Path(dir_okay=False),
              default="report.json", show_default=True)
@click.option("--json-errors", is_flag=True, default=False)
@_config_options
def eval_cmd(mesh, matches, config_path, report_path, json_errors, **kwargs):
    """Recompute metrics from a saved mesh and matches, without stitching."""
    try:
        cfg = _build_config(config_path, kwargs)
        with open(mesh) as f:
            mesh_grid, vertices = mesh_from_json(json.load(f))
        ms = load_matches(matches)
        warp = make_mesh_warp(mesh_grid, vertices)
        spacing = cfg.sample_spacing if cfg.sample_spacing is not None else cfg.grid_size
        min_leg = cfg.min_leg_length if cfg.min_leg_length is not None else cfg.grid_size
        policy = PlanePolicy(max_stars_per_point=cfg.max_stars_per_point,
                             min_leg_length=min_leg, sample_spacing=spacing)
        report = compute_report(ms.points, ms.lines, warp, policy,
                                d_dir_raw=cfg.d_dir_raw)
    except StitchError as exc:
        _fail(exc, json_errors)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(exc, json_errors, stage="io")
    _dump_json(report_path, {"metrics": report.to_dict()})
    click.echo(f"report -> {report_path}")


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.argument("image2", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--matches", "matches_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--out", type=click.Path(dir_okay=False), default="features.json",
              show_default=True)
@click.option("--json-errors", is_flag=True, default=False)
@_config_options
def features(image, image2, matches_path, config_path, out, json_errors, **kwargs):
    """Dump detected segments, groups, extended points, and plane stars."""
    try:
        cfg = _build_config(config_path, kwargs)
        img = load_image(image)
        detector = PlanarStitcher(**cfg.estimator_kwargs())._detector_config()
        dist_tol = cfg.dist_tol if cfg.dist_tol is not None else 0.5 * cfg.grid_size
        conn = ConnectionParams(slope_tol_k=cfg.slope_tol, dist_tol_dth=dist_tol)

        segments = detect_line_segments(img, detector)
        result = {
            "segments": [[s.start.x, s.start.y, s.end.x, s.end.y] for s in segments],
            "groups": [],
            "merged": [],
        }
        if segments:
            groups = connect_segments(segments, conn)
            result["groups"] = groups.groups
            result["merged"] = [[s.start.x, s.start.y, s.end.x, s.end.y]
                                for s in groups.merged()]

        if image2 is not None:
            img2 = load_image(image2)
            est = PlanarStitcher(**cfg.estimator_kwargs())
            match_set = None
            if matches_path is not None:
                match_set = load_matches(matches_path,
                                         target_size=(img.shape[1], img.shape[0]),
                                         reference_size=(img2.shape[1], img2.shape[0]))
            est.fit(img, img2, matches=match_set)
            result["line_matches"] = match_set_to_json(est.match_set_)["lines"]
            result["extended_points"] = [[m.p.x, m.p.y, m.q.x, m.q.y]
                                         for m in est.match_set_.points
                                         if m.origin == "extended"]
            result["stars"] = [{
                "apex": [s.apex.x, s.apex.y],
                "base": [s.base.start.x, s.base.start.y, s.base.end.x, s.base.end.y],
            } for s in est.stars_]
            result["sampled_lines"] = [{
                "source": [sl.source.start.x, sl.source.start.y,
                           sl.source.end.x, sl.source.end.y],
                "samples": sl.samples.tolist(),
                "normal": sl.normal.tolist(),
            } for sl in est.constraint_lines_]
    except StitchError as exc:
        _fail(exc, json_errors)
    except OSError as exc:
        _fail(exc, json_errors, stage="io")
    _dump_json(out, result)
    click.echo(f"features -> {out}")


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--width", type=int, default=400, show_default=True)
@click.option("--height", type=int, default=300, show_default=True)
@click.option("--identity", is_flag=True, default=False,
              help="Generate an identical pair instead of a warped one.")
@click.option("--out-dir", type=click.Path(file_okay=False), default="fixture",
              show_default=True)
def fixture(seed, width, height, identity, out_dir):
    """Write a synthetic scene: target/reference PNGs plus exact matches."""
    from .geometry import Homography

    H = Homography.identity() if identity else moderate_homography(seed, (width, height))
    scene = gen_plane_scene(seed, (width, height), H)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_image(out / "target.png", scene.target)
    save_image(out / "reference.png", scene.reference)
    _dump_json(out / "matches.json", match_set_to_json(scene.matches))
    _dump_json(out / "homography.json", {"matrix": scene.homography.matrix.tolist()})
    click.echo(f"fixture -> {out}/")


if __name__ == "__main__":
    main()
