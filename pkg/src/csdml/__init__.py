"""Cosilico CSDML - off-grid DOA estimation by sparse recovery plus DML Newton refinement."""

from csdml.estimator import CSDMLEstimator, CSDMLResult, csdml
from csdml.models import ArrayGeometry, NewtonConfig, SourceScenario

__version__ = "0.1.0"
__all__ = [
    "ArrayGeometry",
    "CSDMLEstimator",
    "CSDMLResult",
    "NewtonConfig",
    "SourceScenario",
    "csdml",
]
