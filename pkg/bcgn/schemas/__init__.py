"""
Pydantic schemas for configuration and reports.
"""

from .config_schemas import (
    ArchConfig,
    LatentKind,
    Objective,
    ObjectiveVariant,
    RunConfig,
    TrainConfig,
)
from .report_schemas import (
    CheckResult,
    DiversifyReport,
    EvalReport,
    ExperimentReport,
    GradcheckReport,
    IterationMetrics,
    OracleReport,
)

__all__ = [
    "ArchConfig",
    "CheckResult",
    "DiversifyReport",
    "EvalReport",
    "ExperimentReport",
    "GradcheckReport",
    "IterationMetrics",
    "LatentKind",
    "Objective",
    "ObjectiveVariant",
    "OracleReport",
    "RunConfig",
    "TrainConfig",
]
