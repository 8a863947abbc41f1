"""Quadratic energy terms over the deformed vertex vector, and the solver.

Every term is a block of sparse linear residual rows r = W v - b over the
2n unknowns; the total energy is the weighted sum of squared blocks. Term
weights are applied as sqrt(lambda) row scalings so the solver sees one
uniform least-squares problem, minimized through the normal equations
with a sparse LU factorization (conjugate-gradient fallback for very
large systems).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import InvalidArgumentError, OutOfBoundsError, SolverFailureError
from .geometry import Homography, MeshGrid, anchors_for_points
from .planes import SampledLine, sample_line

FIRST_ORDER_TOL = 1e-8


@dataclass(frozen=True)
class EnergyWeights:
    """Term weights; defaults follow the reference configuration."""

    lambda_sd: float = 5.0
    lambda_sa: float = 10.0
    lambda_p: float = 1.0
    lambda_l: float = 5.0
    lambda_gh: float = 50.0
    lambda_ov: float = 50.0
    lambda_nv: float = 100.0
    lambda_ll: float = 30.0
    lambda_gl: float = 70.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise InvalidArgumentError(f"{name} must be nonnegative")

    def for_label(self, label: str) -> float:
        return {
            "planar_distance": self.lambda_sd,
            "planar_angle": self.lambda_sa,
            "point_alignment": self.lambda_p,
            "line_alignment": self.lambda_l,
            "grid_horizontal": self.lambda_gh,
            "overlap_vertical": self.lambda_ov,
            "nonoverlap_vertical": self.lambda_nv,
            "local_line": self.lambda_ll,
            "global_line": self.lambda_gl,
        }[label]


@dataclass
class LinearResidualBlock:
    """Residual rows W v - rhs for one energy term (unweighted)."""

    rows: sparse.csr_matrix
    rhs: np.ndarray
    label: str
    skipped: int = 0  # inputs dropped (outside mesh / degenerate)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    def residuals(self, v: np.ndarray) -> np.ndarray:
        return self.rows @ v - self.rhs

    def energy(self, v: np.ndarray) -> float:
        r = self.residuals(v)
        return float(r @ r)


class _RowBuilder:
    """Accumulates sparse residual rows as COO triplets."""

    def __init__(self, n_unknowns: int):
        self.n_unknowns = n_unknowns
        self.data: list[float] = []
        self.ri: list[int] = []
        self.ci: list[int] = []
        self.rhs: list[float] = []

    def add_row(self, cols_vals: list[tuple[int, float]], rhs: float = 0.0) -> None:
        r = len(self.rhs)
        for c, v in cols_vals:
            self.data.append(v)
            self.ri.append(r)
            self.ci.append(c)
        self.rhs.append(rhs)

    def build(self, label: str, skipped: int = 0) -> LinearResidualBlock:
        m = len(self.rhs)
        coo = sparse.coo_matrix((self.data, (self.ri, self.ci)),
                                shape=(m, self.n_unknowns))
        csr = coo.tocsr()
        csr.sum_duplicates()
        rhs = np.asarray(self.rhs, dtype=float)
        # Rows whose coefficients cancelled identically are vacuous
        # (e.g. axis-aligned samples inside one cell); drop them.
        absmax = np.zeros(m)
        if csr.nnz:
            absrows = abs(csr)
            absmax = np.asarray(absrows.max(axis=1).todense()).ravel()
        keep = absmax > 1e-12
        if not keep.all():
            if np.any(np.abs(rhs[~keep]) > 1e-9):
                raise InvalidArgumentError(f"{label}: zero row with nonzero rhs")
            csr = csr[keep]
            rhs = rhs[keep]
        return LinearResidualBlock(rows=csr, rhs=rhs, label=label, skipped=skipped)


def _anchor_cols(idx_row: np.ndarray, w_row: np.ndarray, axis: int,
                 scale: float = 1.0) -> list[tuple[int, float]]:
    return [(2 * int(i) + axis, scale * float(w)) for i, w in zip(idx_row, w_row)]


def build_planar_distance(sampled_lines: list[SampledLine], mesh: MeshGrid) -> LinearResidualBlock:
    """Second differences of deformed sample positions along each line.

    Zero for every configuration that maps each line affinely, so it
    penalizes loss of equal spacing and collinearity jointly.
    """
    rb = _RowBuilder(2 * mesh.n_vertices)
    for sl in sampled_lines:
        for j in range(sl.m - 2):
            for axis in (0, 1):
                cols = (_anchor_cols(sl.anchor_idx[j], sl.anchor_w[j], axis)
                        + _anchor_cols(sl.anchor_idx[j + 2], sl.anchor_w[j + 2], axis)
                        + _anchor_cols(sl.anchor_idx[j + 1], sl.anchor_w[j + 1], axis, -2.0))
                rb.add_row(cols)
    return rb.build("planar_distance")


def build_planar_angle(sampled_lines: list[SampledLine], mesh: MeshGrid) -> LinearResidualBlock:
    """Deformed sub-segments stay perpendicular to the original unit normal."""
    rb = _RowBuilder(2 * mesh.n_vertices)
    for sl in sampled_lines:
        nx, ny = float(sl.normal[0]), float(sl.normal[1])
        for j in range(sl.m - 1):
            cols = (_anchor_cols(sl.anchor_idx[j + 1], sl.anchor_w[j + 1], 0, nx)
                    + _anchor_cols(sl.anchor_idx[j], sl.anchor_w[j], 0, -nx)
                    + _anchor_cols(sl.anchor_idx[j + 1], sl.anchor_w[j + 1], 1, ny)
                    + _anchor_cols(sl.anchor_idx[j], sl.anchor_w[j], 1, -ny))
            rb.add_row(cols)
    return rb.build("planar_angle")


def build_point_alignment(point_matches, mesh: MeshGrid) -> LinearResidualBlock:
    """sigma(p) - q per match; q is fixed in the right-hand side.

    Matches outside the mesh (possible for extended points in the padded
    border) are skipped and counted.
    """
    rb = _RowBuilder(2 * mesh.n_vertices)
    skipped = 0
    for m in point_matches:
        try:
            _, idx, w = anchors_for_points(mesh, np.array([[m.p.x, m.p.y]]))
        except OutOfBoundsError:
            skipped += 1
            continue
        rb.add_row(_anchor_cols(idx[0], w[0], 0), rhs=m.q.x)
        rb.add_row(_anchor_cols(idx[0], w[0], 1), rhs=m.q.y)
    return rb.build("point_alignment", skipped=skipped)


def build_line_alignment(line_matches, mesh: MeshGrid, spacing: float) -> LinearResidualBlock:
    """Signed distance of deformed target-line samples to the reference line."""
    rb = _RowBuilder(2 * mesh.n_vertices)
    skipped = 0
    for lm in line_matches:
        try:
            a, b, c = lm.l_ref.implicit()
            sl = sample_line(lm.l, spacing, mesh)
        except (InvalidArgumentError, OutOfBoundsError):
            skipped += 1
            continue
        for j in range(sl.m):
            cols = (_anchor_cols(sl.anchor_idx[j], sl.anchor_w[j], 0, a)
                    + _anchor_cols(sl.anchor_idx[j], sl.anchor_w[j], 1, b))
            rb.add_row(cols, rhs=-c)
    return rb.build("line_alignment", skipped=skipped)


def compute_overlap_mask(mesh: MeshGrid, H0: Homography, reference_size) -> np.ndarray:
    """Cells whose pre-warped center falls inside the reference frame."""
    w, h = reference_size
    centers = []
    for r in range(mesh.rows):
        for c in range(mesh.cols):
            cx = 0.5 * (mesh.vertex_x(c) + mesh.vertex_x(c + 1))
            cy = 0.5 * (mesh.vertex_y(r) + mesh.vertex_y(r + 1))
            centers.append([cx, cy])
    mapped = H0.apply_xy(np.asarray(centers))
    inside = ((mapped[:, 0] >= 0) & (mapped[:, 0] <= w)
              & (mapped[:, 1] >= 0) & (mapped[:, 1] <= h))
    return inside.reshape(mesh.rows, mesh.cols)


def build_distortion(mesh: MeshGrid, overlap_mask: np.ndarray,
                     prewarp: np.ndarray) -> tuple[LinearResidualBlock, LinearResidualBlock, LinearResidualBlock]:
    """Grid-line terms: horizontal edges follow the pre-warp everywhere;
    vertical edges follow the pre-warp in the overlap and stay upright
    (equal x) outside it.

    The horizontal term keeps the full edge vector (both coordinates):
    with y alone, x would be unconstrained across columns wherever no
    data term reaches, losing the positive definiteness the distortion
    terms are meant to guarantee.
    """
    if overlap_mask.shape != (mesh.rows, mesh.cols):
        raise InvalidArgumentError("overlap mask shape does not match the mesh")
    n2 = 2 * mesh.n_vertices
    gh, ov, nv = _RowBuilder(n2), _RowBuilder(n2), _RowBuilder(n2)

    for r in range(mesh.rows + 1):
        for c in range(mesh.cols):
            left = mesh.vertex_index(r, c)
            right = mesh.vertex_index(r, c + 1)
            dx = prewarp[2 * right] - prewarp[2 * left]
            dy = prewarp[2 * right + 1] - prewarp[2 * left + 1]
            gh.add_row([(2 * right, 1.0), (2 * left, -1.0)], rhs=dx)
            gh.add_row([(2 * right + 1, 1.0), (2 * left + 1, -1.0)], rhs=dy)

    for r in range(mesh.rows):
        for c in range(mesh.cols + 1):
            top = mesh.vertex_index(r, c)
            bot = mesh.vertex_index(r + 1, c)
            adjacent = []
            if c > 0:
                adjacent.append(overlap_mask[r, c - 1])
            if c < mesh.cols:
                adjacent.append(overlap_mask[r, c])
            if any(adjacent):
                dx = prewarp[2 * bot] - prewarp[2 * top]
                dy = prewarp[2 * bot + 1] - prewarp[2 * top + 1]
                ov.add_row([(2 * bot, 1.0), (2 * top, -1.0)], rhs=dx)
                ov.add_row([(2 * bot + 1, 1.0), (2 * top + 1, -1.0)], rhs=dy)
            else:
                nv.add_row([(2 * bot, 1.0), (2 * top, -1.0)], rhs=0.0)

    return (gh.build("grid_horizontal"), ov.build("overlap_vertical"),
            nv.build("nonoverlap_vertical"))


def build_line_preservation(local_lines: list[SampledLine], global_lines: list[SampledLine],
                            mesh: MeshGrid) -> tuple[LinearResidualBlock, LinearResidualBlock]:
    """Collinearity with the original direction: every sample stays on the
    line through the first sample with the original normal."""

    def _build(lines: list[SampledLine], label: str) -> LinearResidualBlock:
        rb = _RowBuilder(2 * mesh.n_vertices)
        for sl in lines:
            nx, ny = float(sl.normal[0]), float(sl.normal[1])
            for j in range(1, sl.m):
                cols = (_anchor_cols(sl.anchor_idx[j], sl.anchor_w[j], 0, nx)
                        + _anchor_cols(sl.anchor_idx[0], sl.anchor_w[0], 0, -nx)
                        + _anchor_cols(sl.anchor_idx[j], sl.anchor_w[j], 1, ny)
                        + _anchor_cols(sl.anchor_idx[0], sl.anchor_w[0], 1, -ny))
                rb.add_row(cols)
        return rb.build(label)

    return _build(local_lines, "local_line"), _build(global_lines, "global_line")


def _segment_overlap_status(seg, mesh: MeshGrid, overlap_mask: np.ndarray,
                            probes: int = 8) -> tuple[bool, bool]:
    """(fully inside overlap, spans overlap and non-overlap)."""
    t = np.linspace(0.0, 1.0, probes)
    start = seg.start.as_array()
    end = seg.end.as_array()
    pts = start[None, :] + t[:, None] * (end - start)[None, :]
    statuses = []
    for x, y in pts:
        c = min(int((x - mesh.origin.x) // mesh.cell_w), mesh.cols - 1)
        r = min(int((y - mesh.origin.y) // mesh.cell_h), mesh.rows - 1)
        if 0 <= r < mesh.rows and 0 <= c < mesh.cols:
            statuses.append(bool(overlap_mask[r, c]))
    if not statuses:
        return False, False
    return all(statuses), any(statuses) and not all(statuses)


def classify_preservation_lines(detected_segments, matched_target_segments,
                                mesh: MeshGrid, overlap_mask: np.ndarray,
                                length_ratio: float = 2.0 / 3.0):
    """Split lines for the preservation terms.

    Global lines: detected segments at least length_ratio of the mean
    detected length, or spanning overlap and non-overlap cells. Local
    lines: matched target segments inside the overlap.
    """
    global_segments = []
    if detected_segments:
        mean_len = float(np.mean([s.length() for s in detected_segments]))
        for seg in detected_segments:
            inside, spans = _segment_overlap_status(seg, mesh, overlap_mask)
            if seg.length() >= length_ratio * mean_len or spans:
                global_segments.append(seg)
    local_segments = []
    for seg in matched_target_segments:
        inside, _ = _segment_overlap_status(seg, mesh, overlap_mask)
        if inside:
            local_segments.append(seg)
    return local_segments, global_segments


@dataclass
class EnergyAssembly:
    """Weighted concatenation of residual blocks into one sparse system."""

    blocks: list[LinearResidualBlock]
    weights: EnergyWeights
    mesh: MeshGrid
    prewarp: np.ndarray
    matrix: sparse.csr_matrix = field(repr=False, default=None)
    rhs: np.ndarray = field(repr=False, default=None)

    def total_energy(self, v: np.ndarray) -> float:
        r = self.matrix @ v - self.rhs
        return float(r @ r)


def assemble(blocks, weights: EnergyWeights, mesh: MeshGrid,
             prewarp: np.ndarray) -> EnergyAssembly:
    """Scale each block by sqrt(lambda) and stack; zero-weight and empty
    blocks are dropped."""
    kept, mats, rhss = [], [], []
    for block in blocks:
        lam = weights.for_label(block.label)
        if lam == 0.0 or block.n_rows == 0:
            continue
        kept.append(block)
        s = math.sqrt(lam)
        mats.append(block.rows * s)
        rhss.append(block.rhs * s)
    if not kept:
        raise InvalidArgumentError("no active energy blocks to assemble")
    A = sparse.vstack(mats, format="csr")
    b = np.concatenate(rhss)
    return EnergyAssembly(blocks=kept, weights=weights, mesh=mesh, prewarp=prewarp,
                          matrix=A, rhs=b)


def solve(assembly: EnergyAssembly, max_direct_unknowns: int = 200_000) -> np.ndarray:
    """Minimize |A v - b|^2 through the normal equations.

    Deterministic; verifies the first-order condition
    |A^T (A v - b)| <= 1e-8 |A^T b| and raises SolverFailureError naming
    unconstrained vertices when the system is singular.
    """
    A, b = assembly.matrix, assembly.rhs
    n_unknowns = A.shape[1]
    col_nnz = A.getnnz(axis=0)
    if np.any(col_nnz == 0):
        bad = sorted({int(c) // 2 for c in np.nonzero(col_nnz == 0)[0]})
        raise SolverFailureError(f"unconstrained vertices: {bad[:20]}"
                                 + ("..." if len(bad) > 20 else ""))

    ata = (A.T @ A).tocsc()
    atb = A.T @ b
    scale = max(float(np.linalg.norm(atb)), 1e-300)

    def _first_order_ok(v):
        return np.all(np.isfinite(v)) and np.linalg.norm(atb - ata @ v) <= FIRST_ORDER_TOL * scale

    lu = None
    v = None
    if n_unknowns <= max_direct_unknowns:
        try:
            lu = splinalg.splu(ata)
            v = lu.solve(atb)
            # One refinement step if the optimality residual is loose.
            if not _first_order_ok(v):
                v = v + lu.solve(atb - ata @ v)
        except RuntimeError:
            v = None
    else:
        v, info = splinalg.cg(ata, atb, rtol=1e-10, atol=0.0,
                              maxiter=10 * n_unknowns)
        if info != 0:
            v = None

    if v is None or not _first_order_ok(v):
        # Rank-deficient but column-covered systems (every minimizer is
        # valid): LSQR from zero converges to the minimum-norm solution,
        # matching a dense pseudo-inverse oracle.
        v = splinalg.lsqr(A, b, atol=1e-14, btol=1e-14, iter_lim=50 * n_unknowns)[0]

    if not _first_order_ok(v):
        res = float(np.linalg.norm(atb - ata @ v))
        raise SolverFailureError(
            f"normal-equation residual {res:.3e} exceeds tolerance "
            f"(singular or ill-conditioned system)")
    return v


def dump_system(assembly: EnergyAssembly, path) -> None:
    """Write (A, b) as 'row col value' triplets plus a rhs section."""
    A = assembly.matrix.tocoo()
    with open(path, "w") as f:
        f.write(f"# {A.shape[0]} rows, {A.shape[1]} cols, {A.nnz} nonzeros\n")
        for r, c, v in zip(A.row, A.col, A.data):
            f.write(f"{r} {c} {v!r}\n")
        f.write("# rhs\n")
        for r, v in enumerate(assembly.rhs):
            f.write(f"{r} {v!r}\n")
