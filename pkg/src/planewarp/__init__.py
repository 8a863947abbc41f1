"""planewarp: two-image mesh-warp stitching with planar feature constraints."""

from .config import RunConfig
from .errors import StitchError
from .estimator import PlanarStitcher
from .features import DetectorConfig, LineMatch, MatchSet, PointMatch, load_matches
from .geometry import Homography, LineSegment, MeshGrid, Point2, build_mesh
from .metrics import MetricReport, compute_report
from .synthetic import gen_broken_line_set, gen_plane_scene, moderate_homography

__version__ = "0.1.0"

__all__ = [
    "DetectorConfig",
    "Homography",
    "LineMatch",
    "LineSegment",
    "MatchSet",
    "MeshGrid",
    "MetricReport",
    "PlanarStitcher",
    "Point2",
    "PointMatch",
    "RunConfig",
    "StitchError",
    "build_mesh",
    "compute_report",
    "gen_broken_line_set",
    "gen_plane_scene",
    "load_matches",
    "moderate_homography",
    "__version__",
]
