"""Plane stars (point + line constructions) and constraint-line sampling.

A plane star couples a feature point P with a feature line AB: the legs
PA and PB are indirect lines whose lengths and directions, once
constrained, pin down the implied plane. All constraint lines are split
into uniformly spaced samples carrying bilinear anchors so the energy
terms stay linear in the vertex vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError
from .geometry import LineSegment, MeshGrid, Point2, anchors_for_points

MIN_APEX_DISTANCE = 2.0  # px from apex to the base's infinite line


@dataclass(frozen=True)
class PlaneStar:
    apex: Point2
    base: LineSegment

    def __post_init__(self):
        if self.base.distance_to_point(self.apex) < MIN_APEX_DISTANCE:
            raise InvalidArgumentError("star apex lies on the base line")

    @property
    def leg_a(self) -> LineSegment:
        return LineSegment(self.apex, self.base.start)

    @property
    def leg_b(self) -> LineSegment:
        return LineSegment(self.apex, self.base.end)

    def legs(self) -> tuple[LineSegment, LineSegment]:
        return self.leg_a, self.leg_b


@dataclass(frozen=True)
class SampledLine:
    """A segment split into M >= 3 equally spaced samples with anchors.

    ``normal`` is the source direction rotated +90 degrees; ``anchor_idx``
    and ``anchor_w`` hold the per-sample corner vertex indices/weights.
    """

    source: LineSegment
    samples: np.ndarray  # (M, 2)
    normal: np.ndarray  # (2,)
    anchor_idx: np.ndarray  # (M, 4) int
    anchor_w: np.ndarray  # (M, 4)

    @property
    def m(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class PlanePolicy:
    max_stars_per_point: int = 3
    min_leg_length: float = 40.0  # defaults to the grid cell size
    sample_spacing: float = 40.0

    def __post_init__(self):
        if self.max_stars_per_point <= 0 or self.min_leg_length <= 0 or self.sample_spacing <= 0:
            raise InvalidArgumentError("plane policy values must be positive")


def iter_star_candidates(points, lines, policy: PlanePolicy) -> Iterator[tuple[int, int, PlaneStar | None]]:
    """Walk each point's nearest candidate lines, yielding stars or rejects.

    Yields (point_index, line_index, star) with star=None for candidates
    rejected by the degeneracy gates; at most max_stars_per_point stars per
    point. Output order is (point index, candidate rank), deterministic.
    """
    for pi, pm in enumerate(points):
        P = pm.p
        ranked = sorted(range(len(lines)),
                        key=lambda li: (lines[li].l.distance_to_segment_point(P), li))
        emitted = 0
        for li in ranked:
            if emitted >= policy.max_stars_per_point:
                break
            AB = lines[li].l
            if AB.distance_to_point(P) < MIN_APEX_DISTANCE:
                yield pi, li, None
                continue
            if P.dist(AB.start) < policy.min_leg_length or P.dist(AB.end) < policy.min_leg_length:
                yield pi, li, None
                continue
            emitted += 1
            yield pi, li, PlaneStar(apex=P, base=AB)


def build_plane_stars(points, lines, policy: PlanePolicy | None = None) -> list[PlaneStar]:
    """Stars for each matched point over its nearest non-degenerate lines."""
    policy = policy or PlanePolicy()
    return [star for _, _, star in iter_star_candidates(points, lines, policy)
            if star is not None]


def sample_line(seg: LineSegment, spacing: float, mesh: MeshGrid) -> SampledLine:
    """Uniform M-point sampling with M = ceil(len/spacing) + 1, at least 3."""
    if spacing <= 0:
        raise InvalidArgumentError("sample spacing must be positive")
    m = max(int(math.ceil(seg.length() / spacing)) + 1, 3)
    t = np.linspace(0.0, 1.0, m)
    start = seg.start.as_array()
    end = seg.end.as_array()
    samples = start[None, :] + t[:, None] * (end - start)[None, :]
    _, idx, w = anchors_for_points(mesh, samples)
    return SampledLine(source=seg, samples=samples, normal=seg.normal(),
                       anchor_idx=idx, anchor_w=w)


def _same_segment(a: LineSegment, b: LineSegment, radius: float = 1.0) -> bool:
    fwd = a.start.dist(b.start) <= radius and a.end.dist(b.end) <= radius
    rev = a.start.dist(b.end) <= radius and a.end.dist(b.start) <= radius
    return fwd or rev


def dedup_segments(segments: list[LineSegment], radius: float = 1.0) -> list[LineSegment]:
    """Drop segments duplicating an earlier one (endpoints within radius).

    Candidate pairs come from a KD-tree over orientation-canonicalized
    endpoint 4-vectors; the exact endpoint test decides.
    """
    if len(segments) < 2:
        return list(segments)
    canon = np.empty((len(segments), 4))
    for k, s in enumerate(segments):
        a = (s.start.x, s.start.y)
        b = (s.end.x, s.end.y)
        canon[k] = a + b if a <= b else b + a
    tree = cKDTree(canon)
    pairs = tree.query_pairs(r=math.sqrt(2.0) * radius, output_type="ndarray")
    dropped = np.zeros(len(segments), dtype=bool)
    if pairs.size:
        lo = pairs.min(axis=1)
        hi = pairs.max(axis=1)
        order = np.lexsort((lo, hi))
        for i, j in zip(lo[order], hi[order]):
            if dropped[i] or dropped[j]:
                continue
            if _same_segment(segments[i], segments[j], radius):
                dropped[j] = True
    return [s for k, s in enumerate(segments) if not dropped[k]]


def collect_constraint_lines(stars, feature_lines, mesh: MeshGrid,
                             spacing: float) -> list[SampledLine]:
    """Sampled union of star legs, star bases, and feature lines, deduplicated."""
    segments: list[LineSegment] = []
    for star in stars:
        segments.extend((star.leg_a, star.leg_b, star.base))
    segments.extend(feature_lines)
    return [sample_line(seg, spacing, mesh) for seg in dedup_segments(segments)]
