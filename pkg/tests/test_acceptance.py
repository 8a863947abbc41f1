"""Acceptance suite: every numbered criterion at its stated tolerance."""

import json
import math
import time

import numpy as np
import pytest
from click.testing import CliRunner

from planewarp.cli import main as cli_main
from planewarp.config import RunConfig
from planewarp.energy import (
    EnergyWeights,
    assemble,
    build_distortion,
    build_line_alignment,
    build_line_preservation,
    build_planar_angle,
    build_planar_distance,
    build_point_alignment,
    solve,
)
from planewarp.estimator import PlanarStitcher
from planewarp.features import DetectorConfig, LineMatch, PointMatch
from planewarp.geometry import Homography, LineSegment, Point2, build_mesh
from planewarp.lineops import ConnectionParams, connect_segments, extend_point_matches, filter_extended
from planewarp.metrics import IndirectPair, d_dir, d_dis
from planewarp.planes import sample_line
from planewarp.synthetic import gen_broken_line_set, gen_plane_scene, gen_texture_image, moderate_homography


def seg(x1, y1, x2, y2):
    return LineSegment(Point2(x1, y1), Point2(x2, y2))


@pytest.mark.acceptance("1 identity pipeline")
def test_c1_identity_pipeline():
    img = gen_texture_image(11, (800, 600))
    t0 = time.time()
    est = PlanarStitcher().fit(img, img)
    stitched = est.stitch()
    elapsed = time.time() - t0
    assert elapsed <= 10.0, f"runtime {elapsed:.2f}s exceeds 10s"
    assert est.report_.rmse <= 1e-6
    assert est.report_.d_dis <= 1e-6
    assert est.report_.d_dir <= 1e-6
    assert stitched.shape == img.shape
    # Identical inputs blend to the input everywhere, up to 8-bit rounding.
    assert np.abs(stitched.astype(int) - img.astype(int)).max() <= 1


@pytest.mark.acceptance("2 homography oracle")
def test_c2_homography_oracle():
    for scene_seed in (2025, 7, 13):
        H = moderate_homography(scene_seed, (400, 300))
        scene = gen_plane_scene(scene_seed, (400, 300), H)
        est = PlanarStitcher()  # reference defaults: 40 px grid, default weights
        assert est.grid_size == 40.0
        est.fit(scene.target, scene.reference, matches=scene.matches)
        assert est.report_.rmse <= 0.5, f"seed {scene_seed}: rmse {est.report_.rmse}"
        line_block = [b for b in est.assembly_.blocks if b.label == "line_alignment"][0]
        max_resid = np.abs(line_block.residuals(est.vertices_)).max()
        assert max_resid <= 0.1, f"seed {scene_seed}: line residual {max_resid}"


@pytest.mark.acceptance("3 solver oracle")
def test_c3_solver_oracle():
    for case_seed in range(10):
        rng = np.random.default_rng(case_seed)
        rows_c = int(rng.integers(1, 6))
        cols_c = int(rng.integers(1, 6))
        mesh = build_mesh(cols_c * 40, rows_c * 40, 40)
        v0 = mesh.original_vertices()
        mask = rng.random((mesh.rows, mesh.cols)) < 0.5
        mask[:, 0] = True  # keep one overlap column so rows stay coupled

        n_pts = int(rng.integers(3, 9))
        pts = [PointMatch(Point2(*p), Point2(*(p + rng.normal(0, 2, 2))))
               for p in rng.uniform(2, [mesh.width - 2, mesh.height - 2], (n_pts, 2))]
        blocks = [build_point_alignment(pts, mesh)]
        blocks.extend(build_distortion(mesh, mask, v0))

        lines = []
        for _ in range(int(rng.integers(1, 4))):
            a = rng.uniform(2, [mesh.width - 2, mesh.height - 2], 2)
            b = rng.uniform(2, [mesh.width - 2, mesh.height - 2], 2)
            if np.linalg.norm(a - b) < 15:
                continue
            lines.append(sample_line(seg(*a, *b), 25.0, mesh))
        weights_kwargs = {}
        if lines:
            if rng.random() < 0.7:
                blocks.append(build_planar_distance(lines, mesh))
            if rng.random() < 0.7:
                blocks.append(build_planar_angle(lines, mesh))
            if rng.random() < 0.5:
                ll, gl = build_line_preservation(lines[:1], lines[1:], mesh)
                blocks.extend([ll, gl])
            if rng.random() < 0.5:
                lm = [LineMatch(sl.source, sl.source) for sl in lines]
                blocks.append(build_line_alignment(lm, mesh, 25.0))
        for name in ("lambda_sd", "lambda_sa", "lambda_ll", "lambda_gl", "lambda_l"):
            weights_kwargs[name] = float(rng.uniform(0.5, 20.0))
        weights = EnergyWeights(**weights_kwargs)

        asm = assemble(blocks, weights, mesh, v0)
        v = solve(asm)
        A = asm.matrix
        b = asm.rhs
        ata = (A.T @ A).toarray()
        atb = A.T @ b
        dense = np.linalg.solve(ata, atb)
        rel = np.linalg.norm(v - dense) / np.linalg.norm(dense)
        assert rel <= 1e-6, f"case {case_seed}: relative error {rel}"
        grad = A.T @ (A @ v - b)
        assert np.linalg.norm(grad) <= 1e-8 * np.linalg.norm(atb), f"case {case_seed}"


@pytest.mark.acceptance("4 segment connection suite")
def test_c4_algorithm1_suite():
    params = ConnectionParams(slope_tol_k=0.05, dist_tol_dth=5.0)
    for case_seed in range(100):
        n_lines = 1 + case_seed % 5
        gap = 1.0 + (case_seed % 7) * 0.5  # 1.0 .. 4.0, always < d_th
        segments, truth = gen_broken_line_set(case_seed, n_lines, gap)
        result = connect_segments(segments, params)
        recovered = {frozenset(g) for g in result.groups}
        assert recovered == {frozenset(g) for g in truth}, f"case {case_seed}"
        merged = result.merged()
        again = connect_segments(merged, params)
        assert all(len(g) == 1 for g in again.groups), f"case {case_seed} not idempotent"


@pytest.mark.acceptance("5 extension equivariance and filtering")
def test_c5_extension_equivariance():
    H0 = Homography([[1.01, 0.015, 14], [-0.012, 0.99, -7], [2e-5, -3e-5, 1]])
    rng = np.random.default_rng(17)
    clean = []
    for k in range(10):
        theta = k * math.pi / 10.0
        center = rng.uniform(60, 140, 2)
        d = np.array([math.cos(theta), math.sin(theta)])
        l = LineSegment(Point2(*(center - 70 * d)), Point2(*(center + 70 * d)))
        clean.append(LineMatch(l, H0.apply_segment(l)))
    bounds = ((200, 200), (200, 200))

    extended = extend_point_matches(clean, *bounds, padding=40.0)
    assert extended
    for m in extended:
        assert H0.apply(m.p).dist(m.q) <= 1e-6

    # Corrupt 20% of the lines: shift their reference side far off.
    corrupted = list(clean)
    bad_idx = [1, 6]
    for idx in bad_idx:
        lm = corrupted[idx]
        n = lm.l_ref.normal() * 30.0
        moved = LineSegment(Point2(lm.l_ref.start.x + n[0], lm.l_ref.start.y + n[1]),
                            Point2(lm.l_ref.end.x + n[0], lm.l_ref.end.y + n[1]))
        corrupted[idx] = LineMatch(lm.l, moved)

    all_ext = extend_point_matches(corrupted, *bounds, padding=40.0)
    clean_pts = extend_point_matches([m for i, m in enumerate(corrupted) if i not in bad_idx],
                                     *bounds, padding=40.0)

    def in_clean(m):
        return any(m.p.dist(c.p) <= 1e-6 and m.q.dist(c.q) <= 1e-6 for c in clean_pts)

    # Fixture sanity: every corrupted-pair intersection violates the gate.
    for m in all_ext:
        if not in_clean(m):
            assert H0.apply(m.p).dist(m.q) > 3.0

    kept = filter_extended(all_ext, H0, threshold=3.0)
    assert kept
    for m in kept:
        assert in_clean(m), "a corrupted-pair intersection survived filtering"


@pytest.mark.acceptance("6 metric invariances")
def test_c6_metric_invariances():
    # Hand-computed values, exact.
    ratio_pair = IndirectPair(seg(0, 0, 2, 0), seg(0, 0, 0, 1),
                              seg(0, 0, 2, 0), seg(0, 0, 0, 2))
    assert d_dis([ratio_pair]) == 1.0
    angle_pair = IndirectPair(seg(0, 0, 1, 0), seg(0, 0, 0, 1),
                              seg(0, 0, 1, 0), seg(0, 0, 2, 0))
    assert d_dir([angle_pair]) == 1.0

    rng = np.random.default_rng(3)
    base = []
    for _ in range(10):
        apex = rng.uniform(0, 40, 2)
        b0 = rng.uniform(50, 90, 2)
        b1 = rng.uniform(100, 150, 2)
        warped = rng.uniform(0, 150, (3, 2))
        base.append(IndirectPair(
            LineSegment(Point2(*apex), Point2(*b0)),
            LineSegment(Point2(*apex), Point2(*b1)),
            LineSegment(Point2(*warped[0]), Point2(*warped[1])),
            LineSegment(Point2(*warped[0]), Point2(*warped[2]))))

    def remap(pairs, f):
        out = []
        for p in pairs:
            out.append(IndirectPair(p.l1, p.l2,
                                    LineSegment(f(p.l1_hat.start), f(p.l1_hat.end)),
                                    LineSegment(f(p.l2_hat.start), f(p.l2_hat.end))))
        return out

    theta, s, t = 0.9, 1.8, np.array([12.0, -7.0])
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    similarity = remap(base, lambda p: Point2(*(s * (R @ p.as_array()) + t)))
    assert abs(d_dis(similarity) - d_dis(base)) <= 1e-9

    rotation = remap(base, lambda p: Point2(*(R @ p.as_array() + t)))
    # sqrt amplifies radicand round-off (~1e-16) to ~1e-8.
    assert abs(d_dir(rotation) - d_dir(base)) <= 1e-7


@pytest.mark.acceptance("7 reference defaults")
def test_c7_reference_defaults():
    cfg = RunConfig()
    assert (cfg.lambda_sd, cfg.lambda_sa, cfg.lambda_l, cfg.lambda_gh, cfg.lambda_ov,
            cfg.lambda_nv, cfg.lambda_ll, cfg.lambda_gl) == (5, 10, 5, 50, 50, 100, 30, 70)
    assert cfg.grid_size == 40
    assert cfg.pyramid_scale == 1.5
    assert cfg.global_line_ratio == 2 / 3
    w = EnergyWeights()
    assert (w.lambda_sd, w.lambda_sa, w.lambda_l, w.lambda_gh, w.lambda_ov,
            w.lambda_nv, w.lambda_ll, w.lambda_gl) == (5, 10, 5, 50, 50, 100, 30, 70)
    est = PlanarStitcher()
    for name in RunConfig.field_names():
        assert getattr(est, name) == getattr(cfg, name), name
    assert DetectorConfig().pyramid_scale == 1.5


@pytest.mark.acceptance("8 energy term zeros")
def test_c8_energy_term_zeros():
    mesh = build_mesh(210, 170, 40)
    v0 = mesh.original_vertices()
    rng = np.random.default_rng(5)
    lines = []
    while len(lines) < 6:
        a = rng.uniform(5, [205, 165], 2)
        b = rng.uniform(5, [205, 165], 2)
        if np.linalg.norm(a - b) < 25:
            continue
        lines.append(sample_line(seg(*a, *b), 35.0, mesh))

    H0 = Homography([[1.03, 0.01, -20], [0.005, 0.99, 4], [4e-5, -2e-5, 1]])
    prewarp = H0.apply_xy(v0.reshape(-1, 2)).ravel()
    mask = np.zeros((mesh.rows, mesh.cols), dtype=bool)
    mask[:, :3] = True

    pts = [PointMatch(Point2(*p), Point2(*p))
           for p in rng.uniform(5, [205, 165], (5, 2))]
    lms = [LineMatch(sl.source, sl.source) for sl in lines[:3]]

    gh, ov, nv = build_distortion(mesh, mask, prewarp)
    gh0, ov0, nv0 = build_distortion(mesh, mask, v0)
    ll, gl = build_line_preservation(lines[:3], lines[3:], mesh)
    at_identity = {
        "planar_distance": build_planar_distance(lines, mesh),
        "planar_angle": build_planar_angle(lines, mesh),
        "point_alignment": build_point_alignment(pts, mesh),
        "line_alignment": build_line_alignment(lms, mesh, 35.0),
        "grid_horizontal(identity prewarp)": gh0,
        "overlap_vertical(identity prewarp)": ov0,
        "nonoverlap_vertical": nv0,
        "local_line": ll,
        "global_line": gl,
    }
    for name, block in at_identity.items():
        assert np.abs(block.residuals(v0)).max() <= 1e-9, name
    # Pre-warp-referenced versions vanish at the pre-warp configuration.
    assert np.abs(gh.residuals(prewarp)).max() <= 1e-9
    assert np.abs(ov.residuals(prewarp)).max() <= 1e-9

    sd = at_identity["planar_distance"]
    for _ in range(10):
        A = np.eye(2) + 0.4 * rng.normal(size=(2, 2))
        t = rng.uniform(-60, 60, 2)
        v = (v0.reshape(-1, 2) @ A.T + t).ravel()
        assert np.abs(sd.residuals(v)).max() <= 1e-9


@pytest.mark.acceptance("9 determinism")
def test_c9_determinism(tmp_path):
    runner = CliRunner()
    fixture_dir = tmp_path / "scene"
    result = runner.invoke(cli_main, ["fixture", "--seed", "21", "--width", "320",
                                      "--height", "240", "--out-dir", str(fixture_dir)])
    assert result.exit_code == 0, result.output
    outputs = []
    for k in range(2):
        run_dir = tmp_path / f"run{k}"
        run_dir.mkdir()
        result = runner.invoke(cli_main, [
            "stitch", str(fixture_dir / "target.png"), str(fixture_dir / "reference.png"),
            "--matches", str(fixture_dir / "matches.json"),
            "--out", str(run_dir / "st.png"), "--report", str(run_dir / "rep.json"),
        ])
        assert result.exit_code == 0, result.output
        outputs.append(run_dir)
    a, b = outputs
    assert (a / "st.mesh.json").read_bytes() == (b / "st.mesh.json").read_bytes()
    assert (a / "rep.json").read_bytes() == (b / "rep.json").read_bytes()
    assert (a / "st.png").read_bytes() == (b / "st.png").read_bytes()
