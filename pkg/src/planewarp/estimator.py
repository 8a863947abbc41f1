"""Scikit-learn style estimator running the full stitching pipeline.

``fit`` consumes a target/reference image pair (detecting features, or
ingesting a prepared MatchSet), solves the mesh deformation, and exposes
the solved state as trailing-underscore attributes; ``transform`` maps
target-image points through the solved warp and ``stitch`` renders the
composite.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .compose import blend, compute_canvas, place_reference, warp_image
from .energy import (
    EnergyWeights,
    assemble,
    build_distortion,
    build_line_alignment,
    build_line_preservation,
    build_planar_angle,
    build_planar_distance,
    build_point_alignment,
    classify_preservation_lines,
    compute_overlap_mask,
    solve,
)
from .errors import InsufficientFeaturesError, InvalidArgumentError
from .features import (
    DetectorConfig,
    MatchSet,
    dedup_point_matches,
    detect_and_match_points,
    detect_line_segments,
    estimate_homography,
    match_lines,
)
from .geometry import anchors_for_points, apply_anchors_xy, build_mesh, clip_to_rect
from .lineops import ConnectionParams, connect_segments, extend_point_matches, filter_extended
from .metrics import compute_report, make_mesh_warp
from .planes import PlanePolicy, SampledLine, build_plane_stars, collect_constraint_lines, sample_line
from .validation import check_image, check_points, to_grayscale


class PlanarStitcher(BaseEstimator):
    """Two-image mesh-warp stitcher with planar feature constraints.

    Parameters default to the reference configuration: a 40 px grid,
    detector pyramid scale 1.5, energy weights (5, 10, 5, 50, 50, 100,
    30, 70), and a global-line length threshold of 2/3 of the mean
    detected length.
    """

    def __init__(self, grid_size=40.0, pyramid_scale=1.5, max_points=800,
                 line_grad_threshold=8.0, lambda_sd=5.0, lambda_sa=10.0,
                 lambda_p=1.0, lambda_l=5.0, lambda_gh=50.0, lambda_ov=50.0,
                 lambda_nv=100.0, lambda_ll=30.0, lambda_gl=70.0,
                 slope_tol=0.05, dist_tol=None, max_stars_per_point=3,
                 min_leg_length=None, sample_spacing=None,
                 extension_padding=None, global_line_ratio=2.0 / 3.0,
                 ransac_threshold=3.0, ransac_confidence=0.995, seed=42,
                 prewarp_normals=False, d_dir_raw=False):
        self.grid_size = grid_size
        self.pyramid_scale = pyramid_scale
        self.max_points = max_points
        self.line_grad_threshold = line_grad_threshold
        self.lambda_sd = lambda_sd
        self.lambda_sa = lambda_sa
        self.lambda_p = lambda_p
        self.lambda_l = lambda_l
        self.lambda_gh = lambda_gh
        self.lambda_ov = lambda_ov
        self.lambda_nv = lambda_nv
        self.lambda_ll = lambda_ll
        self.lambda_gl = lambda_gl
        self.slope_tol = slope_tol
        self.dist_tol = dist_tol
        self.max_stars_per_point = max_stars_per_point
        self.min_leg_length = min_leg_length
        self.sample_spacing = sample_spacing
        self.extension_padding = extension_padding
        self.global_line_ratio = global_line_ratio
        self.ransac_threshold = ransac_threshold
        self.ransac_confidence = ransac_confidence
        self.seed = seed
        self.prewarp_normals = prewarp_normals
        self.d_dir_raw = d_dir_raw

    def _detector_config(self) -> DetectorConfig:
        return DetectorConfig(pyramid_scale=self.pyramid_scale,
                              max_points=self.max_points,
                              line_grad_threshold=self.line_grad_threshold)

    def _energy_weights(self) -> EnergyWeights:
        return EnergyWeights(lambda_sd=self.lambda_sd, lambda_sa=self.lambda_sa,
                             lambda_p=self.lambda_p, lambda_l=self.lambda_l,
                             lambda_gh=self.lambda_gh, lambda_ov=self.lambda_ov,
                             lambda_nv=self.lambda_nv, lambda_ll=self.lambda_ll,
                             lambda_gl=self.lambda_gl)

    def fit(self, target, reference, matches: MatchSet | None = None):
        """Estimate the mesh deformation aligning target onto reference.

        With matches=None the built-in detectors produce the MatchSet;
        otherwise detection is skipped and the supplied matches are used.
        """
        target = check_image(target)
        reference = check_image(reference)
        th, tw = to_grayscale(target).shape
        rh, rw = to_grayscale(reference).shape

        dist_tol = self.dist_tol if self.dist_tol is not None else 0.5 * self.grid_size
        min_leg = self.min_leg_length if self.min_leg_length is not None else self.grid_size
        spacing = self.sample_spacing if self.sample_spacing is not None else self.grid_size
        padding = self.extension_padding if self.extension_padding is not None else self.grid_size

        if matches is None:
            cfg = self._detector_config()
            point_matches = detect_and_match_points(target, reference, cfg)
            conn = ConnectionParams(slope_tol_k=self.slope_tol, dist_tol_dth=dist_tol)
            segs_t = detect_line_segments(target, cfg)
            segs_r = detect_line_segments(reference, cfg)
            merged_t = connect_segments(segs_t, conn).merged() if segs_t else []
            merged_r = connect_segments(segs_r, conn).merged() if segs_r else []
            # Merged spans are endpoint projections; keep them inside the image.
            merged_t = [s for s in (clip_to_rect(m, 0, 0, tw - 1, th - 1) for m in merged_t)
                        if s is not None]
            merged_r = [s for s in (clip_to_rect(m, 0, 0, rw - 1, rh - 1) for m in merged_r)
                        if s is not None]
            H0 = estimate_homography(point_matches, seed=self.seed,
                                     inlier_threshold=self.ransac_threshold,
                                     confidence=self.ransac_confidence)
            line_matches = match_lines(merged_t, merged_r, H0)
            detected_segments = merged_t
        else:
            point_matches = list(matches.points)
            line_matches = list(matches.lines)
            H0 = estimate_homography(point_matches, seed=self.seed,
                                     inlier_threshold=self.ransac_threshold,
                                     confidence=self.ransac_confidence)
            detected_segments = [lm.l for lm in line_matches]

        extended = extend_point_matches(line_matches, (tw, th), (rw, rh), padding)
        extended = filter_extended(extended, H0, threshold=self.ransac_threshold)
        all_points = dedup_point_matches(point_matches + extended)

        mesh = build_mesh(tw, th, self.grid_size)
        v0 = mesh.original_vertices()
        prewarp = H0.apply_xy(v0.reshape(-1, 2)).ravel()
        overlap_mask = compute_overlap_mask(mesh, H0, (rw, rh))

        policy = PlanePolicy(max_stars_per_point=self.max_stars_per_point,
                             min_leg_length=min_leg, sample_spacing=spacing)
        in_mesh = [m for m in all_points if mesh.contains(m.p)]
        target_lines = [lm.l for lm in line_matches]
        stars = build_plane_stars(in_mesh, line_matches, policy)
        constraint_lines = collect_constraint_lines(stars, target_lines, mesh, spacing)

        local_segs, global_segs = classify_preservation_lines(
            detected_segments, target_lines, mesh, overlap_mask, self.global_line_ratio)
        local_sampled = [sample_line(s, spacing, mesh) for s in local_segs]
        global_sampled = [sample_line(s, spacing, mesh) for s in global_segs]
        if self.prewarp_normals:
            constraint_lines = [_remap_normal(sl, H0) for sl in constraint_lines]
            local_sampled = [_remap_normal(sl, H0) for sl in local_sampled]
            global_sampled = [_remap_normal(sl, H0) for sl in global_sampled]

        point_block = build_point_alignment(all_points, mesh)
        if point_block.n_rows == 0:
            raise InsufficientFeaturesError("no point matches usable for alignment")
        gh, ov, nv = build_distortion(mesh, overlap_mask, prewarp)
        ll, gl = build_line_preservation(local_sampled, global_sampled, mesh)
        blocks = [
            build_planar_distance(constraint_lines, mesh),
            build_planar_angle(constraint_lines, mesh),
            point_block,
            build_line_alignment(line_matches, mesh, spacing),
            gh, ov, nv, ll, gl,
        ]
        assembly = assemble(blocks, self._energy_weights(), mesh, prewarp)
        vertices = solve(assembly)

        warp = make_mesh_warp(mesh, vertices)
        report = compute_report(all_points, line_matches, warp, policy,
                                d_dir_raw=self.d_dir_raw)

        self.target_image_ = target
        self.reference_image_ = reference
        self.target_size_ = (tw, th)
        self.reference_size_ = (rw, rh)
        self.mesh_ = mesh
        self.homography_ = H0
        self.prewarp_ = prewarp
        self.overlap_mask_ = overlap_mask
        self.match_set_ = MatchSet(points=all_points, lines=line_matches)
        self.n_extended_ = sum(1 for m in all_points if m.origin == "extended")
        self.detected_segments_ = detected_segments
        self.stars_ = stars
        self.constraint_lines_ = constraint_lines
        self.assembly_ = assembly
        self.vertices_ = vertices
        self.report_ = report
        return self

    def transform(self, points) -> np.ndarray:
        """Map (N, 2) target-image points through the solved warp."""
        check_is_fitted(self, "vertices_")
        pts = check_points(points)
        _, idx, w = anchors_for_points(self.mesh_, pts)
        return apply_anchors_xy(idx, w, self.vertices_)

    def stitch(self) -> np.ndarray:
        """Render the composite (cached along with canvas, masks, fold count)."""
        check_is_fitted(self, "vertices_")
        canvas = compute_canvas(self.reference_size_, self.vertices_)
        warped, warped_mask, folds = warp_image(self.target_image_, self.mesh_,
                                                self.vertices_, canvas)
        ref_layer, ref_mask = place_reference(self.reference_image_, canvas)
        if warped.ndim != ref_layer.ndim:
            raise InvalidArgumentError("target and reference channel counts differ")
        stitched = blend(warped, warped_mask, ref_layer, ref_mask, canvas)
        self.canvas_ = canvas
        self.fold_count_ = folds
        self.warped_mask_ = warped_mask
        self.stitched_ = stitched
        return stitched

    def evaluate(self):
        check_is_fitted(self, "report_")
        return self.report_


def _remap_normal(sl: SampledLine, H0) -> SampledLine:
    """Replace the stored normal with the pre-warp-mapped line's normal."""
    mapped = H0.apply_segment(sl.source)
    return SampledLine(source=sl.source, samples=sl.samples, normal=mapped.normal(),
                       anchor_idx=sl.anchor_idx, anchor_w=sl.anchor_w)
