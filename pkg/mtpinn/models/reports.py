from datetime import datetime, timezone
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, model_validator


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class TerminalStats(BaseModel):
    """Summary of |X_T| across evaluation rollouts"""

    mean: float = Field(..., ge=0)
    std: float = Field(..., ge=0)
    p95: float = Field(..., ge=0, description="Nearest-rank 95th percentile")
    pass_rate: float = Field(..., ge=0, le=1, description="Pr(|X_T| <= epsilon)")
    epsilon: float = Field(..., gt=0)
    n: int = Field(..., ge=1)

    def row(self) -> str:
        return (
            f"|X_T| mean={self.mean:.3f} std={self.std:.3f} "
            f"p95={self.p95:.3f} p_eps={self.pass_rate:.3f} (eps={self.epsilon:g}, n={self.n})"
        )


class ErrorMetrics(BaseModel):
    mae: float = Field(..., ge=0)
    max_ae: float = Field(..., ge=0)
    mre: float = Field(..., ge=0)
    rmse: float = Field(..., ge=0)

    @model_validator(mode="after")
    def _ordering(self):
        if self.max_ae < self.mae:
            raise ValueError("MaxAE must dominate MAE")
        return self


class SurfaceErrorReport(BaseModel):
    """Domain-wide value-function error on a (t, X) grid at fixed S"""

    original: ErrorMetrics
    asinh: ErrorMetrics
    grid_t: int
    grid_x: int
    fixed_s: float
    lambda_: float
    mre_floor: float = Field(1e-8, description="Floor on |Gamma_exact| in the MRE denominator")


class WindowResult(BaseModel):
    window_id: str
    policy: str
    lambda_: Optional[float] = None
    exposure: float = Field(..., ge=0)
    cost_bps: float
    terminal_residual: float = 0.0
    violation: bool = False


class PolicyAggregate(BaseModel):
    policy: str
    lambda_: Optional[float] = None
    mean_exposure: float
    exposure_std: float
    mean_cost_bps: float
    cost_std_bps: float
    n_windows: int
    violations: int = 0


class ExecutionReport(BaseModel):
    """Per-window exposure and cost plus per-policy aggregates"""

    windows: List[WindowResult]
    aggregates: List[PolicyAggregate]
    sigma_estimate: Optional[float] = None
    notes: List[str] = Field(default_factory=list)


class OutputFile(BaseModel):
    path: str
    sha256: str


class RunManifest(BaseModel):
    """Record of one CLI command: inputs, config hash and every file written"""

    command: str
    config_path: Optional[str] = None
    seed: int
    output_dir: str
    config_hash: str
    started_at: datetime = Field(default_factory=_utcnow)
    finished_at: Optional[datetime] = None
    outputs: List[OutputFile] = Field(default_factory=list)


class ErrorResponse(BaseModel):
    error: str = Field(..., description="Error message")
    error_code: str = Field(..., description="Error code")
    command: Optional[str] = Field(None, description="CLI command that failed")
    key: Optional[str] = Field(None, description="Configuration key at fault, if any")
    timestamp: datetime = Field(default_factory=_utcnow, description="Error timestamp")
