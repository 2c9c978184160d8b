"""Generalized quantum theories with a prescribed quantum potential (1-D)."""

from qpot.fieldgrid import ComplexField, Field, PhysParams, SpaceTimeGrid
from qpot.madelung import PipelineConfig, PipelineResult, run_pipeline

__all__ = [
    "ComplexField",
    "Field",
    "PhysParams",
    "SpaceTimeGrid",
    "PipelineConfig",
    "PipelineResult",
    "run_pipeline",
]

__version__ = "0.1.0"
