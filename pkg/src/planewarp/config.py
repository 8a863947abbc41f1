"""Run configuration: all tunables in one place with their defaults.

Precedence when building from sources is flag > config file > default.
Fields defaulting to None derive from grid_size at fit time (dist_tol is
half a cell; leg length, sample spacing and extension padding are one
cell).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

from .errors import IngestionError


@dataclass
class RunConfig:
    grid_size: float = 40.0
    pyramid_scale: float = 1.5
    max_points: int = 800
    line_grad_threshold: float = 8.0
    lambda_sd: float = 5.0
    lambda_sa: float = 10.0
    lambda_p: float = 1.0
    lambda_l: float = 5.0
    lambda_gh: float = 50.0
    lambda_ov: float = 50.0
    lambda_nv: float = 100.0
    lambda_ll: float = 30.0
    lambda_gl: float = 70.0
    slope_tol: float = 0.05
    dist_tol: float | None = None
    max_stars_per_point: int = 3
    min_leg_length: float | None = None
    sample_spacing: float | None = None
    extension_padding: float | None = None
    global_line_ratio: float = 2.0 / 3.0
    ransac_threshold: float = 3.0
    ransac_confidence: float = 0.995
    seed: int = 42
    prewarp_normals: bool = False
    d_dir_raw: bool = False

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_sources(cls, config_path=None, **flags) -> "RunConfig":
        """Defaults, overlaid by a JSON config file, overlaid by set flags."""
        values: dict = {}
        if config_path is not None:
            try:
                with open(config_path) as f:
                    data = json.load(f)
            except OSError as exc:
                raise IngestionError(f"cannot read config {config_path}: {exc}")
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{config_path}: invalid JSON at line {exc.lineno}: {exc.msg}")
            if not isinstance(data, dict):
                raise IngestionError(f"{config_path}: config must be a JSON object")
            unknown = set(data) - set(cls.field_names())
            if unknown:
                raise IngestionError(f"{config_path}: unknown config keys {sorted(unknown)}")
            values.update(data)
        for name, value in flags.items():
            if name not in cls.field_names():
                raise IngestionError(f"unknown config field {name!r}")
            if value is not None:
                values[name] = value
        return cls(**values)

    def estimator_kwargs(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
