"""Rendering the deformed target onto a shared canvas with the reference.

The warp inverts each deformed cell's bilinear map per canvas pixel
(Newton iteration) and samples the source bilinearly; the overlap is
feathered with distance-to-boundary weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError
from .geometry import MeshGrid

NEWTON_TOL = 1e-6
NEWTON_MAX_ITERS = 25


@dataclass(frozen=True)
class Canvas:
    """Shared output frame; offset maps reference coords to canvas coords."""

    width: int
    height: int
    offset: tuple[int, int]


@dataclass
class WarpField:
    """Per-cell original and deformed corner quads (TL, TR, BL, BR)."""

    original: np.ndarray  # (rows, cols, 4, 2)
    deformed: np.ndarray  # (rows, cols, 4, 2)
    folded: np.ndarray  # (rows, cols) bool

    @property
    def fold_count(self) -> int:
        return int(self.folded.sum())


def compute_canvas(reference_size, vertices: np.ndarray) -> Canvas:
    """Bounding box of the reference rectangle and all deformed vertices."""
    vertices = np.asarray(vertices, dtype=float)
    if not np.all(np.isfinite(vertices)):
        raise InvalidArgumentError("non-finite vertex coordinates")
    w, h = reference_size
    xs = vertices[0::2]
    ys = vertices[1::2]
    # The 1e-6 slack absorbs solver round-off at integer boundaries.
    min_x = math.floor(min(0.0, xs.min()) + 1e-6)
    min_y = math.floor(min(0.0, ys.min()) + 1e-6)
    max_x = math.ceil(max(float(w), xs.max()) - 1e-6)
    max_y = math.ceil(max(float(h), ys.max()) - 1e-6)
    return Canvas(width=max_x - min_x, height=max_y - min_y, offset=(-min_x, -min_y))


def build_warp_field(mesh: MeshGrid, vertices: np.ndarray) -> WarpField:
    """Cell quads before/after deformation, with fold-over flags.

    A cell is folded when its deformed quad is non-convex or flips
    orientation (the bilinear map is then not invertible on the cell).
    """
    pos = np.asarray(vertices, dtype=float).reshape(-1, 2)
    orig = mesh.original_vertices().reshape(-1, 2)
    original = np.empty((mesh.rows, mesh.cols, 4, 2))
    deformed = np.empty((mesh.rows, mesh.cols, 4, 2))
    folded = np.zeros((mesh.rows, mesh.cols), dtype=bool)
    for r in range(mesh.rows):
        for c in range(mesh.cols):
            ids = [mesh.vertex_index(r, c), mesh.vertex_index(r, c + 1),
                   mesh.vertex_index(r + 1, c), mesh.vertex_index(r + 1, c + 1)]
            original[r, c] = orig[ids]
            deformed[r, c] = pos[ids]
            tl, tr, bl, br = pos[ids]
            ring = [tl, tr, br, bl]
            crosses = []
            for k in range(4):
                e1 = ring[(k + 1) % 4] - ring[k]
                e2 = ring[(k + 2) % 4] - ring[(k + 1) % 4]
                crosses.append(e1[0] * e2[1] - e1[1] * e2[0])
            if not all(c > 0 for c in crosses):
                folded[r, c] = True
    return WarpField(original=original, deformed=deformed, folded=folded)


def _invert_bilinear(quad: np.ndarray, pts: np.ndarray):
    """Newton inversion of the cell bilinear map for (N, 2) points."""
    p00, p10, p01, p11 = quad
    a = p10 - p00
    b = p01 - p00
    d = p11 - p10 - p01 + p00
    n = pts.shape[0]
    u = np.full(n, 0.5)
    v = np.full(n, 0.5)
    for _ in range(NEWTON_MAX_ITERS):
        pos = p00 + np.outer(u, a) + np.outer(v, b) + np.outer(u * v, d)
        r = pts - pos
        if np.abs(r).max() < NEWTON_TOL:
            break
        j11 = a[0] + v * d[0]
        j12 = b[0] + u * d[0]
        j21 = a[1] + v * d[1]
        j22 = b[1] + u * d[1]
        det = j11 * j22 - j12 * j21
        det = np.where(np.abs(det) < 1e-12, np.copysign(1e-12, det), det)
        u = u + (j22 * r[:, 0] - j12 * r[:, 1]) / det
        v = v + (-j21 * r[:, 0] + j11 * r[:, 1]) / det
    pos = p00 + np.outer(u, a) + np.outer(v, b) + np.outer(u * v, d)
    residual = np.linalg.norm(pts - pos, axis=1)
    return u, v, residual


def _bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample image values at float (x, y) coordinates, edge-clamped."""
    h, w = img.shape[:2]
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    # Snap round-off-level fractions so integer-coordinate samples stay exact.
    x = np.where(np.abs(x - np.rint(x)) < 1e-9, np.rint(x), x)
    y = np.where(np.abs(y - np.rint(y)) < 1e-9, np.rint(y), y)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if img.ndim == 3:
        fx = fx[:, None]
        fy = fy[:, None]
    v00 = img[y0, x0].astype(float)
    v10 = img[y0, x1].astype(float)
    v01 = img[y1, x0].astype(float)
    v11 = img[y1, x1].astype(float)
    top = v00 * (1 - fx) + v10 * fx
    bot = v01 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bot * fy


def warp_image(target, mesh: MeshGrid, vertices: np.ndarray, canvas: Canvas):
    """Render the deformed target into the canvas.

    Returns (image float array, coverage mask, fold count). Pixels under
    folded quads are resolved from the nearest painted pixel.
    """
    target = np.asarray(target)
    field = build_warp_field(mesh, vertices)
    ox, oy = canvas.offset
    shape = (canvas.height, canvas.width) + target.shape[2:]
    out = np.zeros(shape, dtype=float)
    mask = np.zeros((canvas.height, canvas.width), dtype=bool)

    eps = 1e-7
    fold_boxes = []
    for r in range(mesh.rows):
        for c in range(mesh.cols):
            quad = field.deformed[r, c] + np.array([ox, oy], dtype=float)
            x_lo = max(int(math.floor(quad[:, 0].min())), 0)
            x_hi = min(int(math.ceil(quad[:, 0].max())), canvas.width - 1)
            y_lo = max(int(math.floor(quad[:, 1].min())), 0)
            y_hi = min(int(math.ceil(quad[:, 1].max())), canvas.height - 1)
            if x_hi < x_lo or y_hi < y_lo:
                continue
            if field.folded[r, c]:
                fold_boxes.append((x_lo, x_hi, y_lo, y_hi))
                continue
            gx, gy = np.meshgrid(np.arange(x_lo, x_hi + 1), np.arange(y_lo, y_hi + 1))
            pts = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(float)
            u, v, residual = _invert_bilinear(quad, pts)
            inside = ((u >= -eps) & (u <= 1 + eps) & (v >= -eps) & (v <= 1 + eps)
                      & (residual < 1e-3))
            if not inside.any():
                continue
            oq = field.original[r, c]
            src_x = oq[0, 0] + u[inside] * (oq[1, 0] - oq[0, 0])
            src_y = oq[0, 1] + v[inside] * (oq[2, 1] - oq[0, 1])
            vals = _bilinear_sample(target, src_x, src_y)
            py = pts[inside, 1].astype(int)
            px = pts[inside, 0].astype(int)
            out[py, px] = vals
            mask[py, px] = True

    if fold_boxes and mask.any():
        # Resolve pixels under folded quads from the nearest painted pixel.
        _, (iy, ix) = ndimage.distance_transform_edt(~mask, return_indices=True)
        for x_lo, x_hi, y_lo, y_hi in fold_boxes:
            sub = np.s_[y_lo:y_hi + 1, x_lo:x_hi + 1]
            hole = ~mask[sub]
            out[sub][hole] = out[iy[sub][hole], ix[sub][hole]]
            mask[sub] = True

    return out, mask, field.fold_count


def place_reference(reference, canvas: Canvas):
    """Reference image and mask positioned on the canvas."""
    reference = np.asarray(reference)
    ox, oy = canvas.offset
    shape = (canvas.height, canvas.width) + reference.shape[2:]
    out = np.zeros(shape, dtype=float)
    mask = np.zeros((canvas.height, canvas.width), dtype=bool)
    h, w = reference.shape[:2]
    out[oy:oy + h, ox:ox + w] = reference
    mask[oy:oy + h, ox:ox + w] = True
    return out, mask


def blend_weights(mask_a: np.ndarray, mask_b: np.ndarray):
    """Feather weights in the overlap: distance-to-boundary, normalized."""
    da = ndimage.distance_transform_edt(mask_a)
    db = ndimage.distance_transform_edt(mask_b)
    overlap = mask_a & mask_b
    wa = np.zeros(mask_a.shape)
    wb = np.zeros(mask_b.shape)
    total = np.where(overlap, da + db, 1.0)
    wa[overlap] = (da / total)[overlap]
    wb[overlap] = (db / total)[overlap]
    wa[mask_a & ~mask_b] = 1.0
    wb[mask_b & ~mask_a] = 1.0
    return wa, wb


def blend(warped, warped_mask, reference, reference_mask, canvas: Canvas) -> np.ndarray:
    """Feather-blend the two canvas-aligned layers into an 8-bit image."""
    if warped.shape[:2] != (canvas.height, canvas.width):
        raise InvalidArgumentError("warped layer does not match the canvas")
    if reference.shape[:2] != (canvas.height, canvas.width):
        raise InvalidArgumentError("reference layer does not match the canvas")
    wa, wb = blend_weights(warped_mask, reference_mask)
    if warped.ndim == 3:
        wa = wa[:, :, None]
        wb = wb[:, :, None]
    out = warped * wa + reference * wb
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
