"""Deterministic ground-truth scene generators for tests and demos.

Scenes are pure functions of (seed, params): the texture is evaluated
analytically at mapped coordinates, so the target/reference pair satisfies
``target(p) = texture(H p)`` exactly and every emitted match is exact by
construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .features import LineMatch, MatchSet, PointMatch
from .geometry import Homography, LineSegment, Point2, clip_to_rect

CHECKER_CELL = 48.0
MIN_LINE_MATCH_LEN = 30.0


@dataclass
class SyntheticScene:
    target: np.ndarray
    reference: np.ndarray
    homography: Homography  # maps target coords to reference coords
    matches: MatchSet
    seed: int


def _bars(size) -> list[tuple[str, float, float]]:
    """Dark bars drawn over the checkerboard, in reference coordinates."""
    w, h = size
    return [
        ("h", 0.25 * h, 12.0),
        ("h", 0.70 * h, 12.0),
        ("v", 0.60 * w, 12.0),
        ("d", 0.10 * w, 10.0),  # band around x - y = c
    ]


def _texture_values(xy: np.ndarray, seed: int, size) -> np.ndarray:
    """Checkerboard with per-cell pseudo-random shades plus dark bars."""
    x, y = xy[:, 0], xy[:, 1]
    cx = np.floor(x / CHECKER_CELL).astype(np.int64)
    cy = np.floor(y / CHECKER_CELL).astype(np.int64)
    hval = cx * 73856093 + cy * 19349663 + np.int64(seed + 1) * 83492791
    hval = (hval * 2654435761) & 0x7FFFFFFF
    vals = (70 + hval % 131).astype(np.float64)

    for kind, pos, width in _bars(size):
        if kind == "h":
            inside = (y >= pos) & (y <= pos + width)
        elif kind == "v":
            inside = (x >= pos) & (x <= pos + width)
        else:
            inside = np.abs(x - y - pos) <= width / 2.0
        vals[inside] = 25.0
    return vals


def _render(seed: int, size, mapping=None) -> np.ndarray:
    """Render a size-(w, h) image; mapping sends pixel coords to texture coords."""
    w, h = size
    ys, xs = np.mgrid[0:h, 0:w]
    xy = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)
    if mapping is not None:
        xy = mapping(xy)
    vals = _texture_values(xy, seed, size)
    return np.clip(vals, 0, 255).astype(np.uint8).reshape(h, w)


def gen_texture_image(seed: int, size) -> np.ndarray:
    """The reference-frame texture alone (used for identity tests)."""
    return _render(seed, size)


def _reference_edge_lines(size) -> list[LineSegment]:
    """The bar-boundary lines, clipped to an inner margin of the reference."""
    w, h = size
    rect = (0.05 * w, 0.05 * h, 0.95 * w, 0.95 * h)
    candidates = []
    for kind, pos, width in _bars(size):
        for offset in (0.0, width) if kind != "d" else (-width / 2.0, width / 2.0):
            if kind == "h":
                raw = LineSegment(Point2(-10.0, pos + offset), Point2(w + 10.0, pos + offset))
            elif kind == "v":
                raw = LineSegment(Point2(pos + offset, -10.0), Point2(pos + offset, h + 10.0))
            else:
                c = pos + offset
                raw = LineSegment(Point2(c - 10.0, -10.0), Point2(c + h + 10.0, h + 10.0))
            clipped = clip_to_rect(raw, *rect)
            if clipped is not None:
                candidates.append(clipped)
    return candidates


def gen_plane_scene(seed: int, size, H: Homography) -> SyntheticScene:
    """Textured plane imaged twice: reference directly, target through H.

    H maps target coordinates to reference coordinates. Emits at least 30
    exact point matches and 6 exact line matches or raises
    InvalidArgumentError for too-extreme mappings.
    """
    w, h = size
    if w <= 0 or h <= 0:
        raise InvalidArgumentError("scene size must be positive")
    corners = np.array([[0, 0], [w, 0], [0, h], [w, h]], dtype=float)
    hom = np.hstack([corners, np.ones((4, 1))]) @ H.matrix.T
    if np.any(np.abs(hom[:, 2]) < 1e-9):
        raise InvalidArgumentError("degenerate homography: image corner maps to infinity")

    reference = _render(seed, size)
    target = _render(seed, size, mapping=H.apply_xy)

    margin = 4.0
    xs = np.linspace(margin, w - margin, 10)
    ys = np.linspace(margin, h - margin, 10)
    points = []
    for py in ys:
        for px in xs:
            q = H.apply(Point2(px, py))
            if margin <= q.x <= w - margin and margin <= q.y <= h - margin:
                points.append(PointMatch(Point2(px, py), q))
    if len(points) < 30:
        raise InvalidArgumentError(f"homography leaves too little overlap ({len(points)} matches)")

    Hinv = H.inverse()
    lines = []
    for ref_seg in _reference_edge_lines(size):
        back = LineSegment(Hinv.apply(ref_seg.start), Hinv.apply(ref_seg.end))
        l = clip_to_rect(back, 1.0, 1.0, w - 1.0, h - 1.0)
        if l is None or l.length() < MIN_LINE_MATCH_LEN:
            continue
        l_ref = LineSegment(H.apply(l.start), H.apply(l.end))
        lines.append(LineMatch(l, l_ref))
    if len(lines) < 6:
        raise InvalidArgumentError(f"homography leaves too few line matches ({len(lines)})")

    return SyntheticScene(target=target, reference=reference, homography=H,
                          matches=MatchSet(points=points, lines=lines), seed=seed)


def moderate_homography(seed: int, size) -> Homography:
    """A seeded random perspective map: translation-dominant, with small
    scale/rotation and a mild projective component.

    Kept gentle on directions (rotations well under a degree): the
    deformation energy preserves original line directions, so strongly
    rotating ground truth is out of model for the default weights.
    """
    w, h = size
    rng = np.random.default_rng(seed)
    angle = rng.uniform(-1e-4, 1e-4)
    scale = 1.0 + rng.uniform(-5e-3, 5e-3)
    tx = rng.uniform(-0.20, -0.10) * w
    ty = rng.uniform(-0.02, 0.02) * h
    ca, sa = math.cos(angle), math.sin(angle)
    m = np.array([
        [scale * ca, -scale * sa, tx],
        [scale * sa, scale * ca, ty],
        [rng.uniform(-1, 1) * 5e-4 / w, rng.uniform(-1, 1) * 5e-4 / h, 1.0],
    ])
    return Homography(m)


def gen_broken_line_set(seed: int, n_lines: int, gap: float):
    """Collinear fragments of n_lines distinct lines with known grouping.

    Consecutive fragments of a line are separated by exactly ``gap`` px
    along the line; distinct lines get well-separated directions so only
    same-line fragments are mergeable. Returns (segments, groups) where
    groups lists fragment indices per original line, and the segment order
    is a seeded shuffle.
    """
    if n_lines < 1:
        raise InvalidArgumentError("need at least one line")
    rng = np.random.default_rng(seed)
    base = rng.uniform(0, math.pi)
    sep = math.pi / n_lines
    all_segments: list[LineSegment] = []
    labels: list[int] = []
    for i in range(n_lines):
        theta = (base + i * sep + rng.uniform(-0.2, 0.2) * sep) % math.pi
        d = np.array([math.cos(theta), math.sin(theta)])
        center = np.array([rng.uniform(0, 2000), rng.uniform(0, 2000)])
        n_frag = int(rng.integers(2, 5))
        frag_lens = rng.uniform(20, 60, size=n_frag)
        total = frag_lens.sum() + gap * (n_frag - 1)
        t = -total / 2.0
        for flen in frag_lens:
            p0 = center + t * d
            p1 = center + (t + flen) * d
            all_segments.append(LineSegment(Point2(*p0), Point2(*p1)))
            labels.append(i)
            t += flen + gap

    order = rng.permutation(len(all_segments))
    segments = [all_segments[j] for j in order]
    groups: list[list[int]] = [[] for _ in range(n_lines)]
    for new_idx, old_idx in enumerate(order):
        groups[labels[old_idx]].append(new_idx)
    return segments, groups
