"""Stitching quality metrics over indirect feature-line pairs.

For every (feature point, feature line) pairing, the legs joining the
point to the line's endpoints form an indirect pair; d_dis measures the
root-mean-square change of leg-length ratios across the warp and d_dir
the change of the enclosed angle's squared sine. Point RMSE is measured
in the reference frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import OutOfBoundsError, UndefinedMetricError
from .geometry import LineSegment, MeshGrid, Point2, anchors_for_points, apply_anchors_xy
from .planes import PlanePolicy, iter_star_candidates

DEGENERATE_LENGTH = 1e-9


def make_mesh_warp(mesh: MeshGrid, vertices: np.ndarray) -> Callable[[Point2], Point2]:
    """The solved deformation as a point mapping (sigma with the solved V)."""
    v = np.asarray(vertices, dtype=float)

    def warp(p: Point2) -> Point2:
        _, idx, w = anchors_for_points(mesh, np.array([[p.x, p.y]]))
        out = apply_anchors_xy(idx, w, v)
        return Point2(float(out[0, 0]), float(out[0, 1]))

    return warp


@dataclass(frozen=True)
class IndirectPair:
    l1: LineSegment  # point -> line start, before the warp
    l2: LineSegment  # point -> line end, before the warp
    l1_hat: LineSegment
    l2_hat: LineSegment


@dataclass
class MetricReport:
    rmse: float
    d_dis: float
    d_dir: float
    K: int
    excluded_degenerate: int
    skipped_matches: int = 0
    d_dir_raw: bool = False
    per_pair: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "d_dis": self.d_dis,
            "d_dir": self.d_dir,
            "K": self.K,
            "excluded_degenerate": self.excluded_degenerate,
            "skipped_matches": self.skipped_matches,
            "d_dir_raw": self.d_dir_raw,
            "per_pair": self.per_pair,
        }


def build_indirect_pairs(points, lines, warp: Callable[[Point2], Point2],
                         policy: PlanePolicy | None = None) -> tuple[list[IndirectPair], int]:
    """Indirect pairs from the plane-star pairings, plus the excluded count.

    Candidates rejected by the star gates (point on line, short legs) and
    pairs whose warped legs collapse below 1e-9 are excluded and counted.
    """
    policy = policy or PlanePolicy()
    pairs: list[IndirectPair] = []
    excluded = 0
    for _, _, star in iter_star_candidates(points, lines, policy):
        if star is None:
            excluded += 1
            continue
        try:
            apex_hat = warp(star.apex)
            start_hat = warp(star.base.start)
            end_hat = warp(star.base.end)
        except OutOfBoundsError:
            excluded += 1
            continue
        if (apex_hat.dist(start_hat) <= DEGENERATE_LENGTH
                or apex_hat.dist(end_hat) <= DEGENERATE_LENGTH):
            excluded += 1
            continue
        pairs.append(IndirectPair(
            l1=star.leg_a, l2=star.leg_b,
            l1_hat=LineSegment(apex_hat, start_hat),
            l2_hat=LineSegment(apex_hat, end_hat)))
    return pairs, excluded


def d_dis(pairs: list[IndirectPair]) -> float:
    """Root-mean-square change of the leg length ratio across the warp."""
    if not pairs:
        raise UndefinedMetricError("d_dis needs at least one indirect pair")
    total = 0.0
    for p in pairs:
        before = p.l1.length() / p.l2.length()
        after = p.l1_hat.length() / p.l2_hat.length()
        total += abs(before - after) ** 2
    return math.sqrt(total / len(pairs))


def _cross_sq(a: LineSegment, b: LineSegment, normalize: bool) -> float:
    u = a.end.as_array() - a.start.as_array()
    v = b.end.as_array() - b.start.as_array()
    if normalize:
        u = u / np.linalg.norm(u)
        v = v / np.linalg.norm(v)
    return float(u[0] * v[1] - u[1] * v[0]) ** 2


def d_dir(pairs: list[IndirectPair], normalize: bool = True) -> float:
    """Root-mean-square change of the enclosed angle's squared sine.

    Leg vectors are unit-normalized by default so the score is purely
    angular; each summand is taken in absolute value so the radicand
    stays nonnegative.
    """
    if not pairs:
        raise UndefinedMetricError("d_dir needs at least one indirect pair")
    total = 0.0
    for p in pairs:
        before = _cross_sq(p.l1, p.l2, normalize)
        after = _cross_sq(p.l1_hat, p.l2_hat, normalize)
        total += abs(before - after)
    return math.sqrt(total / len(pairs))


def rmse(point_matches, warp: Callable[[Point2], Point2]) -> float:
    """Root-mean-square distance between warped target points and their
    reference positions. Matches the warp cannot map are skipped."""
    total = 0.0
    n = 0
    for m in point_matches:
        try:
            mapped = warp(m.p)
        except OutOfBoundsError:
            continue
        total += mapped.dist(m.q) ** 2
        n += 1
    if n == 0:
        raise UndefinedMetricError("rmse needs at least one warpable match")
    return math.sqrt(total / n)


def compute_report(point_matches, line_matches, warp: Callable[[Point2], Point2],
                   policy: PlanePolicy | None = None,
                   d_dir_raw: bool = False) -> MetricReport:
    """Full metric report over a feature set and a solved warp."""
    pairs, excluded = build_indirect_pairs(point_matches, line_matches, warp, policy)
    skipped = 0
    for m in point_matches:
        try:
            warp(m.p)
        except OutOfBoundsError:
            skipped += 1
    value_rmse = rmse(point_matches, warp)
    if pairs:
        value_dis = d_dis(pairs)
        value_dir = d_dir(pairs, normalize=not d_dir_raw)
    else:
        value_dis = 0.0
        value_dir = 0.0
    per_pair = []
    for p in pairs:
        per_pair.append({
            "apex": [p.l1.start.x, p.l1.start.y],
            "base": [p.l1.end.x, p.l1.end.y, p.l2.end.x, p.l2.end.y],
            "ratio_before": p.l1.length() / p.l2.length(),
            "ratio_after": p.l1_hat.length() / p.l2_hat.length(),
            "sin_sq_before": _cross_sq(p.l1, p.l2, not d_dir_raw),
            "sin_sq_after": _cross_sq(p.l1_hat, p.l2_hat, not d_dir_raw),
        })
    return MetricReport(rmse=value_rmse, d_dis=value_dis, d_dir=value_dir,
                        K=len(pairs), excluded_degenerate=excluded,
                        skipped_matches=skipped, d_dir_raw=d_dir_raw,
                        per_pair=per_pair)
