"""2-D geometry primitives, the deformation mesh, and bilinear anchors.

The mesh warp is parameterized by a flat vertex vector ``V`` of length 2n
ordered ``[x_1, y_1, ..., x_n, y_n]`` with vertices enumerated row-major:
``flat_index(r, c) = r * (cols + 1) + c``. Any image point is expressed as
a fixed bilinear combination of its cell's four corner vertices (an
"anchor"), which keeps every downstream energy term linear in ``V``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateMappingError,
    InvalidArgumentError,
    NoIntersectionError,
    OutOfBoundsError,
)


@dataclass(frozen=True)
class Point2:
    """A 2-D point in pixel coordinates."""

    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def dist(self, other: "Point2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class LineSegment:
    """An oriented segment with positive length.

    Slope comparisons use direction angles folded into [0, pi) so vertical
    segments behave like any other orientation.
    """

    start: Point2
    end: Point2

    def __post_init__(self):
        if self.length() <= 0.0:
            raise InvalidArgumentError("line segment has zero length")

    def length(self) -> float:
        return self.start.dist(self.end)

    def direction(self) -> np.ndarray:
        """Unit vector from start to end."""
        d = self.end.as_array() - self.start.as_array()
        return d / np.linalg.norm(d)

    def angle(self) -> float:
        """Direction angle in [0, pi)."""
        d = self.end.as_array() - self.start.as_array()
        return math.atan2(d[1], d[0]) % math.pi

    def normal(self) -> np.ndarray:
        """Unit normal: the direction rotated by +90 degrees."""
        dx, dy = self.direction()
        return np.array([-dy, dx])

    def midpoint(self) -> Point2:
        return Point2((self.start.x + self.end.x) / 2.0, (self.start.y + self.end.y) / 2.0)

    def implicit(self) -> tuple[float, float, float]:
        """Coefficients (a, b, c) of a*x + b*y + c = 0 with a^2 + b^2 = 1."""
        a = self.start.y - self.end.y
        b = self.end.x - self.start.x
        c = self.start.x * self.end.y - self.end.x * self.start.y
        norm = math.hypot(a, b)
        return a / norm, b / norm, c / norm

    def distance_to_point(self, p: Point2) -> float:
        """Distance from p to the infinite line through the segment."""
        a, b, c = self.implicit()
        return abs(a * p.x + b * p.y + c)

    def distance_to_segment_point(self, p: Point2) -> float:
        """Distance from p to the closest point on the (finite) segment."""
        s = self.start.as_array()
        d = self.end.as_array() - s
        t = float(np.dot(p.as_array() - s, d) / np.dot(d, d))
        t = min(1.0, max(0.0, t))
        closest = s + t * d
        return float(np.linalg.norm(p.as_array() - closest))


def angle_diff(a: float, b: float) -> float:
    """Wraparound distance between two direction angles, in [0, pi/2]."""
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


class Homography:
    """Invertible 3x3 projective mapping between image planes.

    The matrix is normalized so the bottom-right entry is 1 when it is not
    near zero, otherwise to unit Frobenius norm; ``normalization`` records
    which was applied.
    """

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.shape != (3, 3):
            raise InvalidArgumentError("homography must be 3x3")
        if not np.all(np.isfinite(m)):
            raise InvalidArgumentError("homography has non-finite entries")
        if abs(np.linalg.det(m)) < 1e-12 * max(np.linalg.norm(m) ** 3, 1e-30):
            raise InvalidArgumentError("homography is singular")
        if abs(m[2, 2]) > 1e-8 * np.linalg.norm(m):
            m = m / m[2, 2]
            self.normalization = "bottom-right"
        else:
            m = m / np.linalg.norm(m)
            self.normalization = "frobenius"
        self.matrix = m

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def apply(self, p: Point2) -> Point2:
        """Map a point; raises if it lands at infinity."""
        v = self.matrix @ np.array([p.x, p.y, 1.0])
        if abs(v[2]) < 1e-12:
            raise DegenerateMappingError(f"point ({p.x}, {p.y}) maps to infinity")
        return Point2(v[0] / v[2], v[1] / v[2])

    def apply_xy(self, xy: np.ndarray) -> np.ndarray:
        """Map an (N, 2) array of points. Raises on any point at infinity."""
        xy = np.asarray(xy, dtype=float)
        ones = np.ones((xy.shape[0], 1))
        v = np.hstack([xy, ones]) @ self.matrix.T
        w = v[:, 2]
        if np.any(np.abs(w) < 1e-12):
            raise DegenerateMappingError("some points map to infinity")
        return v[:, :2] / w[:, None]

    def apply_segment(self, seg: LineSegment) -> LineSegment:
        return LineSegment(self.apply(seg.start), self.apply(seg.end))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)


def clip_to_rect(seg: LineSegment, xmin: float, ymin: float, xmax: float,
                 ymax: float) -> LineSegment | None:
    """Liang-Barsky clip of a segment to an axis-aligned rectangle.

    Returns None when the segment misses the rectangle or degenerates.
    """
    p0 = seg.start.as_array()
    d = seg.end.as_array() - p0
    t0, t1 = 0.0, 1.0
    for p, q in [(-d[0], p0[0] - xmin), (d[0], xmax - p0[0]),
                 (-d[1], p0[1] - ymin), (d[1], ymax - p0[1])]:
        if abs(p) < 1e-12:
            if q < 0:
                return None
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return None
    a, b = p0 + t0 * d, p0 + t1 * d
    if math.hypot(b[0] - a[0], b[1] - a[1]) <= 1e-9:
        return None
    return LineSegment(Point2(*a), Point2(*b))


def intersect_lines(l1: LineSegment, l2: LineSegment) -> Point2:
    """Intersection of the infinite lines through two segments.

    The result may lie outside either segment. Near-parallel inputs
    (|sin of the enclosed angle| <= 1e-9) raise NoIntersectionError.
    """
    d1, d2 = l1.direction(), l2.direction()
    sin_angle = abs(d1[0] * d2[1] - d1[1] * d2[0])
    if sin_angle <= 1e-9:
        raise NoIntersectionError("segments are parallel or near-parallel")
    h1 = np.cross(np.array([l1.start.x, l1.start.y, 1.0]), np.array([l1.end.x, l1.end.y, 1.0]))
    h2 = np.cross(np.array([l2.start.x, l2.start.y, 1.0]), np.array([l2.end.x, l2.end.y, 1.0]))
    p = np.cross(h1, h2)
    return Point2(p[0] / p[2], p[1] / p[2])


def apply_homography(H: Homography, p: Point2) -> Point2:
    return H.apply(p)


@dataclass(frozen=True)
class MeshGrid:
    """Regular grid over the target image.

    rows/cols count cells; the grid has (rows+1) x (cols+1) vertices. The
    last row/column of cells is clamped (not stretched) when the image
    size is not a multiple of the cell size, so the grid covers the image
    exactly.
    """

    rows: int
    cols: int
    cell_w: float
    cell_h: float
    width: float
    height: float
    origin: Point2 = field(default_factory=lambda: Point2(0.0, 0.0))

    @property
    def n_vertices(self) -> int:
        return (self.rows + 1) * (self.cols + 1)

    def vertex_index(self, r: int, c: int) -> int:
        return r * (self.cols + 1) + c

    def vertex_x(self, c: int) -> float:
        return self.origin.x + min(c * self.cell_w, self.width)

    def vertex_y(self, r: int) -> float:
        return self.origin.y + min(r * self.cell_h, self.height)

    def vertex_position(self, r: int, c: int) -> Point2:
        return Point2(self.vertex_x(c), self.vertex_y(r))

    def original_vertices(self) -> np.ndarray:
        """Flat vertex vector [x_1, y_1, ...] of the undeformed grid."""
        xs = np.array([self.vertex_x(c) for c in range(self.cols + 1)])
        ys = np.array([self.vertex_y(r) for r in range(self.rows + 1)])
        v = np.empty(2 * self.n_vertices)
        gx, gy = np.meshgrid(xs, ys)
        v[0::2] = gx.ravel()
        v[1::2] = gy.ravel()
        return v

    def contains(self, p: Point2) -> bool:
        return (
            self.origin.x <= p.x <= self.origin.x + self.width
            and self.origin.y <= p.y <= self.origin.y + self.height
        )


def build_mesh(image_w: float, image_h: float, cell_size: float) -> MeshGrid:
    """Grid covering an image_w x image_h image with square cells.

    rows = ceil(image_h / cell_size) and cols = ceil(image_w / cell_size);
    the trailing row/column is smaller when the division is not exact.
    """
    if image_w <= 0 or image_h <= 0 or cell_size <= 0:
        raise InvalidArgumentError("image dimensions and cell size must be positive")
    rows = int(math.ceil(image_h / cell_size))
    cols = int(math.ceil(image_w / cell_size))
    return MeshGrid(rows=rows, cols=cols, cell_w=float(cell_size), cell_h=float(cell_size),
                    width=float(image_w), height=float(image_h))


@dataclass(frozen=True)
class BilinearAnchor:
    """A point expressed as bilinear weights over one cell's corners.

    ``weights`` are ordered (TL, TR, BL, BR); they are nonnegative, sum to
    1 and reproduce the original point exactly on the undeformed mesh.
    ``vertex_indices`` are the corners' flat vertex indices.
    """

    cell: tuple[int, int]
    weights: tuple[float, float, float, float]
    vertex_indices: tuple[int, int, int, int]

    def apply(self, vertices: np.ndarray) -> Point2:
        return apply_anchor(self, vertices)


def anchors_for_points(mesh: MeshGrid, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized anchor computation for an (N, 2) array of points.

    Returns (cells (N,2) int, vertex_indices (N,4) int, weights (N,4)).
    Raises OutOfBoundsError if any point falls outside the mesh.
    """
    xy = np.asarray(xy, dtype=float)
    x = xy[:, 0] - mesh.origin.x
    y = xy[:, 1] - mesh.origin.y
    eps = 1e-9
    if np.any(x < -eps) or np.any(x > mesh.width + eps) or np.any(y < -eps) or np.any(y > mesh.height + eps):
        raise OutOfBoundsError("point outside mesh bounds")
    x = np.clip(x, 0.0, mesh.width)
    y = np.clip(y, 0.0, mesh.height)

    c = np.minimum((x // mesh.cell_w).astype(int), mesh.cols - 1)
    r = np.minimum((y // mesh.cell_h).astype(int), mesh.rows - 1)

    x_left = c * mesh.cell_w
    x_right = np.minimum((c + 1) * mesh.cell_w, mesh.width)
    y_top = r * mesh.cell_h
    y_bot = np.minimum((r + 1) * mesh.cell_h, mesh.height)
    u = (x - x_left) / (x_right - x_left)
    v = (y - y_top) / (y_bot - y_top)

    w = np.stack([(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v], axis=1)
    tl = r * (mesh.cols + 1) + c
    idx = np.stack([tl, tl + 1, tl + mesh.cols + 1, tl + mesh.cols + 2], axis=1)
    cells = np.stack([r, c], axis=1)
    return cells, idx, w


def bilinear_anchor(mesh: MeshGrid, p: Point2) -> BilinearAnchor:
    """Anchor of a single point; p must lie inside the mesh (boundary inclusive)."""
    cells, idx, w = anchors_for_points(mesh, np.array([[p.x, p.y]]))
    return BilinearAnchor(cell=(int(cells[0, 0]), int(cells[0, 1])),
                          weights=tuple(float(t) for t in w[0]),
                          vertex_indices=tuple(int(t) for t in idx[0]))


def apply_anchor(anchor: BilinearAnchor, vertices: np.ndarray) -> Point2:
    """Weighted sum of the four corner vertex positions; linear in the vector."""
    vertices = np.asarray(vertices, dtype=float)
    if max(anchor.vertex_indices) * 2 + 1 >= vertices.shape[0]:
        raise InvalidArgumentError("anchor does not belong to this mesh vector")
    x = sum(w * vertices[2 * i] for w, i in zip(anchor.weights, anchor.vertex_indices))
    y = sum(w * vertices[2 * i + 1] for w, i in zip(anchor.weights, anchor.vertex_indices))
    return Point2(x, y)


def apply_anchors_xy(idx: np.ndarray, w: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Vectorized apply: (N,4) indices and weights against a flat vertex vector."""
    vx = vertices[2 * idx]
    vy = vertices[2 * idx + 1]
    return np.stack([(w * vx).sum(axis=1), (w * vy).sum(axis=1)], axis=1)


def mesh_to_json(mesh: MeshGrid, vertices: np.ndarray) -> dict:
    """JSON-serializable mesh with (possibly deformed) vertex positions."""
    return {
        "rows": mesh.rows,
        "cols": mesh.cols,
        "cell_w": mesh.cell_w,
        "cell_h": mesh.cell_h,
        "width": mesh.width,
        "height": mesh.height,
        "origin": [mesh.origin.x, mesh.origin.y],
        "vertices": [float(v) for v in np.asarray(vertices, dtype=float)],
    }


def mesh_from_json(data: dict) -> tuple[MeshGrid, np.ndarray]:
    try:
        origin = data.get("origin", [0.0, 0.0])
        mesh = MeshGrid(rows=int(data["rows"]), cols=int(data["cols"]),
                        cell_w=float(data["cell_w"]), cell_h=float(data["cell_h"]),
                        width=float(data["width"]), height=float(data["height"]),
                        origin=Point2(float(origin[0]), float(origin[1])))
        vertices = np.asarray(data["vertices"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"malformed mesh JSON: {exc}") from exc
    if vertices.shape[0] != 2 * mesh.n_vertices:
        raise InvalidArgumentError(
            f"mesh JSON has {vertices.shape[0]} coordinates, expected {2 * mesh.n_vertices}")
    return mesh, vertices
