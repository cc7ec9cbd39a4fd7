"""
Machine-readable reports emitted by the CLI commands.
"""

from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class CheckResult(BaseModel):
    """Outcome of one oracle or gradient check."""

    name: str = Field(..., description="Check identifier")
    passed: bool
    observed: float = Field(..., description="Observed extremum or error")
    bound: Optional[float] = Field(None, description="Theoretical bound or tolerance target")
    tolerance: Optional[float] = None
    gamma: Optional[float] = None
    detail: Optional[str] = None


class OracleReport(BaseModel):
    """Pass/fail per theory check with observed extrema."""

    seed: int
    trials: int
    gammas: List[float]
    checks: List[CheckResult] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


class GradcheckReport(BaseModel):
    """Per-case maximum relative finite-difference error."""

    seed: int
    seeds: int
    dtype: str
    tolerance: float
    checks: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


class IterationMetrics(BaseModel):
    """One JSON-lines record per training iteration."""

    iteration: int
    epoch: int
    g_loss: float
    dA_loss: float
    dB_loss: float
    recon_l1: float
    lr: float


class EvalReport(BaseModel):
    """Metric values computed on translated and reconstructed images."""

    checkpoint: str
    items: int
    metrics: Dict[str, float] = Field(default_factory=dict)


class DiversifyReport(BaseModel):
    """Outputs written by diversified generation and their pairwise distances."""

    checkpoint: str
    output: str
    k: int
    latent_seed: int
    direction: str
    diversity: List[List[float]] = Field(
        ..., description="Mean absolute difference between outputs i and j"
    )


class ExperimentReport(BaseModel):
    """
    Per-seed outcomes of a multi-seed training experiment.

    The experiment passes when at least ``required_wins`` seed checks pass
    and every aggregate check passes.
    """

    experiment: str
    iterations: int
    seeds: List[int]
    required_wins: int = Field(..., description="Seed checks that must pass")
    seed_checks: List[CheckResult] = Field(default_factory=list)
    aggregate_checks: List[CheckResult] = Field(default_factory=list)
    values: Dict[str, List[float]] = Field(
        default_factory=dict, description="Per-seed metric values, in seed order"
    )

    @property
    def wins(self) -> int:
        return sum(check.passed for check in self.seed_checks)

    @property
    def checks(self) -> List[CheckResult]:
        return self.seed_checks + self.aggregate_checks

    @property
    def passed(self) -> bool:
        return self.wins >= self.required_wins and all(c.passed for c in self.aggregate_checks)
