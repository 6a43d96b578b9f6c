"""Streaming allocation engines and evaluation tools for online fair
division of public goods under total-value predictions."""

from .model import (
    Allocation,
    CertifiedInfeasibilityError,
    ConfigurationError,
    DegeneratePredictionError,
    DimensionError,
    Instance,
    PredictionSet,
    RoundBatch,
    SolverConvergenceError,
    StreamHeader,
    ValueStream,
    feasibility,
    harmonic,
    load_instance,
    ratio,
    save_instance,
    utilities,
)

__all__ = [
    "Allocation",
    "CertifiedInfeasibilityError",
    "ConfigurationError",
    "DegeneratePredictionError",
    "DimensionError",
    "Instance",
    "PredictionSet",
    "RoundBatch",
    "SolverConvergenceError",
    "StreamHeader",
    "ValueStream",
    "feasibility",
    "harmonic",
    "load_instance",
    "ratio",
    "save_instance",
    "utilities",
]
