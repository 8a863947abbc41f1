"""Feature detection, matching, ingestion, and pre-warp estimation.

The built-in detectors are deliberately simple (Harris-style corners on an
intensity pyramid, gradient-orientation region growing for segments) so the
pipeline is self-contained; any external detector can feed the same
``MatchSet`` through :func:`load_matches`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    EstimationFailureError,
    IngestionError,
    InsufficientFeaturesError,
    InvalidArgumentError,
)
from .geometry import Homography, LineSegment, Point2, angle_diff, clip_to_rect
from .validation import to_grayscale

PATCH_RADIUS = 7  # descriptor patch is (2r+1) x (2r+1)
RATIO_TEST = 0.8
MIN_PYRAMID_DIM = 96


@dataclass(frozen=True)
class PointMatch:
    """A matched point: p in the target image, q in the reference image."""

    p: Point2
    q: Point2
    origin: str = "detected"  # "detected" or "extended"


@dataclass(frozen=True)
class LineMatch:
    """A matched segment pair (target l, reference l_ref)."""

    l: LineSegment
    l_ref: LineSegment


@dataclass
class MatchSet:
    points: list[PointMatch] = field(default_factory=list)
    lines: list[LineMatch] = field(default_factory=list)


@dataclass(frozen=True)
class DetectorConfig:
    pyramid_scale: float = 1.5
    max_points: int = 800
    line_grad_threshold: float = 8.0

    def __post_init__(self):
        if self.pyramid_scale <= 1.0:
            raise InvalidArgumentError("pyramid_scale must be > 1")


def dedup_point_matches(matches, radius: float = 1.0) -> list[PointMatch]:
    """Drop matches whose (p, q) pair duplicates an earlier one within radius px."""
    kept: list[PointMatch] = []
    for m in matches:
        dup = any(m.p.dist(k.p) <= radius and m.q.dist(k.q) <= radius for k in kept)
        if not dup:
            kept.append(m)
    return kept


def _harris_response(gray: np.ndarray) -> np.ndarray:
    g = ndimage.gaussian_filter(gray, 1.0)
    gx = ndimage.sobel(g, axis=1) / 8.0
    gy = ndimage.sobel(g, axis=0) / 8.0
    ixx = ndimage.gaussian_filter(gx * gx, 1.5)
    iyy = ndimage.gaussian_filter(gy * gy, 1.5)
    ixy = ndimage.gaussian_filter(gx * gy, 1.5)
    return ixx * iyy - ixy * ixy - 0.06 * (ixx + iyy) ** 2


def _subpixel(response: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Quadratic peak refinement, one axis at a time."""

    def _offset(prev, nxt):
        denom = prev - 2.0 * response[ys, xs] + nxt
        ok = denom < -1e-12
        off = np.zeros_like(denom)
        np.divide(0.5 * (prev - nxt), denom, out=off, where=ok)
        return np.clip(np.where(ok, off, 0.0), -0.5, 0.5)

    dx = _offset(response[ys, xs - 1], response[ys, xs + 1])
    dy = _offset(response[ys - 1, xs], response[ys + 1, xs])
    return np.stack([xs + dx, ys + dy], axis=1)


def _harris_keypoints(gray: np.ndarray, max_points: int, response=None) -> np.ndarray:
    """Corner locations (N, 2) as (x, y), strongest first."""
    if response is None:
        response = _harris_response(gray)
    peak = response == ndimage.maximum_filter(response, size=3)
    margin = PATCH_RADIUS + 1
    peak[:margin, :] = peak[-margin:, :] = False
    peak[:, :margin] = peak[:, -margin:] = False
    if response.max() <= 0:
        return np.empty((0, 2))
    peak &= response > 0.01 * response.max()

    ys, xs = np.nonzero(peak)
    order = np.argsort(-response[ys, xs], kind="stable")[:max_points]
    return _subpixel(response, ys[order], xs[order])


def _snap_to_response(pts: np.ndarray, response: np.ndarray) -> np.ndarray:
    """Re-localize coarse-level keypoints on the full-resolution response."""
    h, w = response.shape
    snapped = np.empty_like(pts)
    for k, (x, y) in enumerate(pts):
        xi = int(np.clip(round(x), 3, w - 4))
        yi = int(np.clip(round(y), 3, h - 4))
        window = response[yi - 2:yi + 3, xi - 2:xi + 3]
        dy, dx = np.unravel_index(int(np.argmax(window)), window.shape)
        ys = np.array([yi + dy - 2])
        xs = np.array([xi + dx - 2])
        snapped[k] = _subpixel(response, ys, xs)[0]
    return snapped


def _patch_descriptors(gray: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean, unit-norm intensity patches at integer keypoints."""
    r = PATCH_RADIUS
    descs, kept = [], []
    for p in pts:
        x, y = int(round(p[0])), int(round(p[1]))
        patch = gray[y - r:y + r + 1, x - r:x + r + 1].ravel().astype(float)
        patch = patch - patch.mean()
        norm = np.linalg.norm(patch)
        if norm < 1e-9:
            continue
        descs.append(patch / norm)
        kept.append(p)
    if not descs:
        return np.empty((0, (2 * r + 1) ** 2)), np.empty((0, 2))
    return np.array(descs), np.array(kept, dtype=float)


def _pyramid(gray: np.ndarray, scale: float) -> list[tuple[np.ndarray, float]]:
    """List of (image, level_scale) pairs, level_scale maps level coords to full-res."""
    levels = [(gray, 1.0)]
    s = scale
    while min(gray.shape) / s >= MIN_PYRAMID_DIM:
        smoothed = ndimage.gaussian_filter(gray, 0.6 * s)
        level = ndimage.zoom(smoothed, 1.0 / s, order=1, grid_mode=True, mode="nearest")
        levels.append((level, s))
        s *= scale
    return levels


def _detect_multiscale(gray: np.ndarray, cfg: DetectorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Keypoints at full resolution plus their descriptors, across the pyramid.

    Descriptors are sampled at their own level; positions from coarse
    levels are re-localized against the full-resolution corner response.
    """
    response0 = _harris_response(gray)
    all_desc, all_pts = [], []
    for level, level_scale in _pyramid(gray, cfg.pyramid_scale):
        pts = _harris_keypoints(level, cfg.max_points,
                                response=response0 if level_scale == 1.0 else None)
        if pts.shape[0] == 0:
            continue
        desc, kept = _patch_descriptors(level, pts)
        if desc.shape[0] == 0:
            continue
        if level_scale != 1.0:
            kept = _snap_to_response(kept * level_scale, response0)
        if all_pts:
            # Finer levels win: drop coarse keypoints that landed on an
            # already-kept position.
            existing = np.vstack(all_pts)
            d = np.linalg.norm(kept[:, None, :] - existing[None, :, :], axis=2)
            fresh = d.min(axis=1) > 1.0
            kept, desc = kept[fresh], desc[fresh]
            if kept.shape[0] == 0:
                continue
        all_desc.append(desc)
        all_pts.append(kept)
    if not all_desc:
        return np.empty((0, 1)), np.empty((0, 2))
    return np.vstack(all_desc), np.vstack(all_pts)


def detect_and_match_points(img_a, img_b, cfg: DetectorConfig | None = None) -> list[PointMatch]:
    """Mutual-nearest-neighbor corner matches between a target/reference pair.

    Raises InsufficientFeaturesError when fewer than 4 matches survive the
    ratio test.
    """
    cfg = cfg or DetectorConfig()
    gray_a, gray_b = to_grayscale(img_a), to_grayscale(img_b)
    desc_a, pts_a = _detect_multiscale(gray_a, cfg)
    desc_b, pts_b = _detect_multiscale(gray_b, cfg)
    if pts_a.shape[0] < 4 or pts_b.shape[0] < 4:
        raise InsufficientFeaturesError(
            f"too few corners detected ({pts_a.shape[0]} target, {pts_b.shape[0]} reference)")

    # Unit-norm descriptors: squared distance is 2 - 2 * similarity.
    sim = desc_a @ desc_b.T
    d2 = np.maximum(2.0 - 2.0 * sim, 0.0)
    nn_ab = np.argmin(d2, axis=1)
    nn_ba = np.argmin(d2, axis=0)

    # Two smallest distances per row/column for a symmetric ratio test.
    row12 = np.sqrt(np.partition(d2, 1, axis=1)[:, :2])
    col12 = np.sqrt(np.partition(d2, 1, axis=0)[:2, :])

    matches = []
    for i, j in enumerate(nn_ab):
        if nn_ba[j] != i:
            continue
        if row12[i, 0] < RATIO_TEST * row12[i, 1] and col12[0, j] < RATIO_TEST * col12[1, j]:
            matches.append(PointMatch(Point2(*pts_a[i]), Point2(*pts_b[j])))
    matches = dedup_point_matches(matches)
    if len(matches) < 4:
        raise InsufficientFeaturesError(f"only {len(matches)} point matches found")
    return matches


def detect_line_segments(img, cfg: DetectorConfig | None = None) -> list[LineSegment]:
    """Segments from gradient-orientation region growing (22.5 deg tolerance).

    Each grown region is fitted with a least-squares line; segments shorter
    than 10 px are discarded. The result may be empty.
    """
    cfg = cfg or DetectorConfig()
    gray = to_grayscale(img)
    h, w = gray.shape
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    # Edge direction is perpendicular to the gradient; fold into [0, pi).
    theta = (np.arctan2(gy, gx) + math.pi / 2.0) % math.pi

    cand = (mag >= cfg.line_grad_threshold).ravel()
    if not cand.any():
        return []
    theta_flat = theta.ravel()
    mag_flat = mag.ravel()

    idx = np.nonzero(cand)[0]
    order = idx[np.argsort(-mag_flat[idx], kind="stable")]
    used = np.zeros(h * w, dtype=bool)
    offsets = (-w - 1, -w, -w + 1, -1, 1, w - 1, w, w + 1)
    tol = math.radians(22.5)
    n_px = h * w

    segments = []
    for seed in order:
        if used[seed]:
            continue
        used[seed] = True
        members = [seed]
        # Track the circular mean of 2*theta to average directions mod pi.
        sx, sy = math.cos(2 * theta_flat[seed]), math.sin(2 * theta_flat[seed])
        stack = [seed]
        while stack:
            px = stack.pop()
            px_col = px % w
            mean_angle = (math.atan2(sy, sx) / 2.0) % math.pi
            for off in offsets:
                q = px + off
                if q < 0 or q >= n_px or abs(q % w - px_col) > 1:
                    continue
                if used[q] or not cand[q]:
                    continue
                if angle_diff(theta_flat[q], mean_angle) <= tol:
                    used[q] = True
                    members.append(q)
                    stack.append(q)
                    sx += math.cos(2 * theta_flat[q])
                    sy += math.sin(2 * theta_flat[q])
        if len(members) < 2:
            continue
        seg = _fit_segment(np.asarray(members), w)
        if seg is None:
            continue
        # Endpoint projections can poke sub-pixel past the image border.
        seg = clip_to_rect(seg, 0.0, 0.0, w - 1.0, h - 1.0)
        if seg is not None and seg.length() >= 10.0:
            segments.append(seg)
    return segments


def _fit_segment(members: np.ndarray, img_w: int) -> LineSegment | None:
    """Total-least-squares segment through a pixel region."""
    xs = (members % img_w).astype(float)
    ys = (members // img_w).astype(float)
    pts = np.stack([xs, ys], axis=1)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered
    evals, evecs = np.linalg.eigh(cov)
    d = evecs[:, np.argmax(evals)]
    t = centered @ d
    span = t.max() - t.min()
    if span < 1e-9:
        return None
    p0 = centroid + t.min() * d
    p1 = centroid + t.max() * d
    return LineSegment(Point2(*p0), Point2(*p1))


def match_lines(lines_a, lines_b, H0: Homography) -> list[LineMatch]:
    """Pair target lines with reference lines through the pre-warp.

    A target line maps its endpoints through H0 and takes the reference
    candidate minimizing the worse endpoint-to-infinite-line distance;
    accepted when that distance is below 3 px and directions differ by
    less than 5 degrees.
    """
    max_dist = 3.0
    max_angle = math.radians(5.0)
    matches = []
    for la in lines_a:
        try:
            mapped = H0.apply_segment(la)
        except Exception:
            continue
        best, best_d = None, math.inf
        for lb in lines_b:
            if angle_diff(mapped.angle(), lb.angle()) >= max_angle:
                continue
            d = max(lb.distance_to_point(mapped.start), lb.distance_to_point(mapped.end))
            if d < best_d:
                best, best_d = lb, d
        if best is not None and best_d <= max_dist:
            matches.append(LineMatch(la, best))
    return matches


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalization: centroid at origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    if d < 1e-12:
        raise EstimationFailureError("coincident points")
    s = math.sqrt(2.0) / d
    T = np.array([[s, 0, -s * centroid[0]], [0, s, -s * centroid[1]], [0, 0, 1]])
    ones = np.ones((pts.shape[0], 1))
    normed = (np.hstack([pts, ones]) @ T.T)[:, :2]
    return normed, T


def _dlt(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Direct linear transform on normalized correspondences p -> q."""
    pn, Tp = _normalize_points(p)
    qn, Tq = _normalize_points(q)
    n = p.shape[0]
    A = np.zeros((2 * n, 9))
    for k in range(n):
        x, y = pn[k]
        u, v = qn[k]
        A[2 * k] = [-x, -y, -1, 0, 0, 0, u * x, u * y, u]
        A[2 * k + 1] = [0, 0, 0, -x, -y, -1, v * x, v * y, v]
    _, s, vt = np.linalg.svd(A)
    if s[-2] < 1e-10 * max(s[0], 1e-300):
        raise EstimationFailureError("degenerate configuration (rank-deficient DLT)")
    Hn = vt[-1].reshape(3, 3)
    return np.linalg.inv(Tq) @ Hn @ Tp


def _collinear(pts: np.ndarray, tol: float = 1e-8) -> bool:
    centered = pts - pts.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return s[1] <= tol * max(s[0], 1e-300)


def estimate_homography(matches, seed: int = 42, inlier_threshold: float = 3.0,
                        confidence: float = 0.995, max_iters: int = 2000,
                        return_inliers: bool = False):
    """RANSAC + normalized DLT pre-warp from point matches.

    Deterministic for a fixed seed; the model is refit on all inliers.
    """
    p = np.array([[m.p.x, m.p.y] for m in matches], dtype=float)
    q = np.array([[m.q.x, m.q.y] for m in matches], dtype=float)
    n = p.shape[0]
    if n < 4:
        raise EstimationFailureError(f"need at least 4 matches, got {n}")
    if _collinear(p) or _collinear(q):
        raise EstimationFailureError("all points are collinear")

    rng = np.random.default_rng(seed)
    best_mask, best_count, best_err = None, -1, math.inf
    needed = max_iters
    it = 0
    while it < min(needed, max_iters):
        it += 1
        sample = rng.choice(n, size=4, replace=False)
        if _collinear(p[sample], tol=1e-6) or _collinear(q[sample], tol=1e-6):
            continue
        try:
            H = _dlt(p[sample], q[sample])
        except EstimationFailureError:
            continue
        mapped = _project(H, p)
        if mapped is None:
            continue
        err = np.linalg.norm(mapped - q, axis=1)
        mask = err <= inlier_threshold
        count = int(mask.sum())
        sq = float((err[mask] ** 2).sum())
        if count > best_count or (count == best_count and sq < best_err):
            best_mask, best_count, best_err = mask, count, sq
            ratio = count / n
            if ratio > 0:
                denom = math.log(max(1.0 - ratio ** 4, 1e-12))
                needed = min(max_iters, int(math.ceil(math.log(1.0 - confidence) / denom)) if denom < 0 else max_iters)
    if best_mask is None or best_count < 4:
        raise EstimationFailureError("RANSAC found no valid model")

    H = _dlt(p[best_mask], q[best_mask])
    result = Homography(H)
    if return_inliers:
        return result, best_mask
    return result


def _project(H: np.ndarray, pts: np.ndarray):
    v = np.hstack([pts, np.ones((pts.shape[0], 1))]) @ H.T
    w = v[:, 2]
    if np.any(np.abs(w) < 1e-12):
        return None
    return v[:, :2] / w[:, None]


def _as_floats(row, n: int, index: int, kind: str) -> list[float]:
    if not isinstance(row, (list, tuple)) or len(row) != n:
        raise IngestionError(f"{kind}[{index}]: expected {n} numbers, got {row!r}")
    try:
        vals = [float(v) for v in row]
    except (TypeError, ValueError):
        raise IngestionError(f"{kind}[{index}]: non-numeric entry in {row!r}")
    if not all(math.isfinite(v) for v in vals):
        raise IngestionError(f"{kind}[{index}]: non-finite entry")
    return vals


def _check_bounds(x: float, y: float, size, index: int, kind: str, which: str) -> None:
    if size is None:
        return
    w, h = size
    if not (0 <= x <= w and 0 <= y <= h):
        raise IngestionError(
            f"{kind}[{index}]: {which} point ({x}, {y}) outside bounds {w}x{h}")


def load_matches(path, target_size=None, reference_size=None) -> MatchSet:
    """Read a matches JSON file.

    Format: {"points": [[px,py,qx,qy], ...],
             "lines": [[lx1,ly1,lx2,ly2, rx1,ry1,rx2,ry2], ...]}.
    Bounds are validated when image sizes (w, h) are supplied.
    """
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    if not isinstance(data, dict):
        raise IngestionError(f"{path}: top level must be an object")

    points = []
    for i, row in enumerate(data.get("points", [])):
        px, py, qx, qy = _as_floats(row, 4, i, "points")
        _check_bounds(px, py, target_size, i, "points", "target")
        _check_bounds(qx, qy, reference_size, i, "points", "reference")
        points.append(PointMatch(Point2(px, py), Point2(qx, qy)))

    lines = []
    for i, row in enumerate(data.get("lines", [])):
        v = _as_floats(row, 8, i, "lines")
        try:
            l = LineSegment(Point2(v[0], v[1]), Point2(v[2], v[3]))
            l_ref = LineSegment(Point2(v[4], v[5]), Point2(v[6], v[7]))
        except InvalidArgumentError as exc:
            raise IngestionError(f"lines[{i}]: {exc}")
        for (x, y), size, which in [((v[0], v[1]), target_size, "target"),
                                    ((v[2], v[3]), target_size, "target"),
                                    ((v[4], v[5]), reference_size, "reference"),
                                    ((v[6], v[7]), reference_size, "reference")]:
            _check_bounds(x, y, size, i, "lines", which)
        lines.append(LineMatch(l, l_ref))

    return MatchSet(points=dedup_point_matches(points), lines=lines)


def match_set_to_json(ms: MatchSet) -> dict:
    return {
        "points": [[m.p.x, m.p.y, m.q.x, m.q.y] for m in ms.points],
        "lines": [[lm.l.start.x, lm.l.start.y, lm.l.end.x, lm.l.end.y,
                   lm.l_ref.start.x, lm.l_ref.start.y, lm.l_ref.end.x, lm.l_ref.end.y]
                  for lm in ms.lines],
    }
