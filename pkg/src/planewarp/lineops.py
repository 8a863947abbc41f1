"""Segment connection and matched-line-intersection point extension.

Fragmented detections of one salient line are regrouped by a greedy
assignment over endpoint gaps and direction agreement, then repaired by
group-merge passes until a full pass changes nothing. New point matches
are generated by intersecting matched line pairs in both images and kept
only when consistent with the pre-warp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NoIntersectionError
from .features import PointMatch, dedup_point_matches
from .geometry import Homography, LineSegment, Point2, angle_diff, intersect_lines


@dataclass(frozen=True)
class ConnectionParams:
    slope_tol_k: float = 0.05  # radians of direction-angle difference
    dist_tol_dth: float = 20.0  # pixels

    def __post_init__(self):
        if self.slope_tol_k <= 0 or self.dist_tol_dth <= 0:
            raise InvalidArgumentError("connection tolerances must be positive")


@dataclass
class LineGroupSet:
    """A partition of the input segments into line-support groups."""

    segments: list[LineSegment]
    groups: list[list[int]] = field(default_factory=list)

    def merged(self) -> list[LineSegment]:
        return [merge_group([self.segments[i] for i in g]) for g in self.groups]

    def group_of(self, index: int) -> int:
        for gi, g in enumerate(self.groups):
            if index in g:
                return gi
        raise InvalidArgumentError(f"segment {index} not in any group")


def _endpoint_gap(a: LineSegment, b: LineSegment) -> float:
    """Minimum of the four endpoint-to-endpoint distances."""
    return min(a.start.dist(b.start), a.start.dist(b.end),
               a.end.dist(b.start), a.end.dist(b.end))


def merge_group(group: list[LineSegment]) -> LineSegment:
    """Total-least-squares line through all member endpoints.

    The returned segment spans the extreme projections of the endpoints
    onto the fitted line, oriented like the first member.
    """
    if not group:
        raise InvalidArgumentError("cannot merge an empty group")
    if len(group) == 1:
        return group[0]
    pts = np.array([[p.x, p.y] for seg in group for p in (seg.start, seg.end)])
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    d = vt[0]
    if float(np.dot(d, group[0].direction())) < 0:
        d = -d
    t = centered @ d
    p0 = centroid + t.min() * d
    p1 = centroid + t.max() * d
    return LineSegment(Point2(*p0), Point2(*p1))


def _accepts(members: list[LineSegment], candidate_members: list[LineSegment],
             params: ConnectionParams) -> bool:
    """Can candidate_members join members?

    Requires an endpoint gap below d_th between the sets, direction
    agreement below k across all pairs, and the jointly merged line to
    stay within k of every member.
    """
    gap = min(_endpoint_gap(a, b) for a in members for b in candidate_members)
    if gap >= params.dist_tol_dth:
        return False
    for a in members:
        for b in candidate_members:
            if angle_diff(a.angle(), b.angle()) >= params.slope_tol_k:
                return False
    merged = merge_group(members + candidate_members)
    return all(angle_diff(merged.angle(), s.angle()) < params.slope_tol_k
               for s in members + candidate_members)


def connect_segments(segments: list[LineSegment], params: ConnectionParams | None = None) -> LineGroupSet:
    """Partition segments into line-support groups.

    First pass: each segment joins the first existing group that accepts
    it, otherwise seeds a new group. Later passes merge whole groups until
    a full pass makes no assignment, repairing visit-order sensitivity.
    """
    if not segments:
        raise InvalidArgumentError("connect_segments requires at least one segment")
    params = params or ConnectionParams()

    groups: list[list[int]] = []
    for i, seg in enumerate(segments):
        placed = False
        for g in groups:
            if _accepts([segments[j] for j in g], [seg], params):
                g.append(i)
                placed = True
                break
        if not placed:
            groups.append([i])

    changed = True
    while changed:
        changed = False
        gi = 0
        while gi < len(groups):
            gj = gi + 1
            while gj < len(groups):
                a = [segments[k] for k in groups[gi]]
                b = [segments[k] for k in groups[gj]]
                if _accepts(a, b, params):
                    groups[gi].extend(groups[gj])
                    del groups[gj]
                    changed = True
                else:
                    gj += 1
            gi += 1

    assigned = sorted(i for g in groups for i in g)
    assert assigned == list(range(len(segments))), "groups must partition the input"
    return LineGroupSet(segments=list(segments), groups=groups)


def extend_point_matches(line_matches, target_size, reference_size,
                         padding: float) -> list[PointMatch]:
    """New point matches from intersections of matched line pairs.

    For every unordered pair of line matches, the two target lines and the
    two reference lines are intersected; a match is emitted when both
    intersections exist and fall inside their image bounds padded by
    ``padding`` px. Pairs enclosing less than 10 degrees are skipped as
    ill-conditioned. Results are deduplicated (1 px radius).
    """
    min_angle = math.radians(10.0)
    tw, th = target_size
    rw, rh = reference_size
    out: list[PointMatch] = []
    n = len(line_matches)
    for i in range(n):
        for j in range(i + 1, n):
            mi, mj = line_matches[i], line_matches[j]
            if angle_diff(mi.l.angle(), mj.l.angle()) < min_angle:
                continue
            try:
                p = intersect_lines(mi.l, mj.l)
                q = intersect_lines(mi.l_ref, mj.l_ref)
            except NoIntersectionError:
                continue
            if not (-padding <= p.x <= tw + padding and -padding <= p.y <= th + padding):
                continue
            if not (-padding <= q.x <= rw + padding and -padding <= q.y <= rh + padding):
                continue
            out.append(PointMatch(p, q, origin="extended"))
    return dedup_point_matches(out)


def filter_extended(extended, H0: Homography, threshold: float = 3.0) -> list[PointMatch]:
    """Consensus filter against the pre-warp: keep |H0 p - q| <= threshold."""
    kept = []
    for m in extended:
        try:
            mapped = H0.apply(m.p)
        except Exception:
            continue
        if mapped.dist(m.q) <= threshold:
            kept.append(m)
    return kept
