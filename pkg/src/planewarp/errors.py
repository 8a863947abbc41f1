"""Exception types shared across the stitching pipeline.

Every error carries a short machine-readable ``code`` and the pipeline
``stage`` it occurred in, so the CLI can emit structured diagnostics.
"""

from __future__ import annotations


class StitchError(Exception):
    """Base class for all pipeline errors."""

    code = "error"
    stage = "unknown"

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage

    def to_dict(self) -> dict:
        return {"stage": self.stage, "code": self.code, "message": str(self)}


class InvalidArgumentError(StitchError):
    code = "invalid-argument"


class OutOfBoundsError(StitchError):
    code = "out-of-bounds"
    stage = "core-geometry"


class NoIntersectionError(StitchError):
    code = "no-intersection"
    stage = "core-geometry"


class DegenerateMappingError(StitchError):
    code = "degenerate-mapping"
    stage = "core-geometry"


class InsufficientFeaturesError(StitchError):
    code = "insufficient-features"
    stage = "feature-pipeline"


class EstimationFailureError(StitchError):
    code = "estimation-failure"
    stage = "feature-pipeline"


class IngestionError(StitchError):
    code = "ingestion-error"
    stage = "feature-pipeline"


class SolverFailureError(StitchError):
    code = "solver-failure"
    stage = "energy"


class UndefinedMetricError(StitchError):
    code = "undefined-metric"
    stage = "metrics"
