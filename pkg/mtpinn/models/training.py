import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from mtpinn.models.hjb import HJBConfig

PresetName = Literal["vanilla", "pinn_curr", "mtpinn"]

# Loss-term names, in the fixed reduction order used everywhere
LOSS_TERMS = ("pde", "traj", "ic", "sym", "zero_term", "term_penalty")

DEFAULT_INITIAL_WEIGHTS = {
    "pde": 1.0,
    "traj": 1.0,
    "ic": 0.1,
    "sym": 0.5,
    "zero_term": 0.5,
    "term_penalty": 1.0,
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSection(_Section):
    """Network shape, optimizer and baseline penalty settings"""

    widths: List[int] = Field(..., description="Hidden widths of the MT-PINN network")
    baseline_widths: Optional[List[int]] = Field(None, description="Hidden widths of the baseline PINNs (defaults to widths)")
    learning_rate: float = Field(5e-4, gt=0)
    betas: Tuple[float, float] = Field((0.9, 0.999))
    eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    scale_inputs: bool = Field(False, description="Affinely map each input to [-1, 1] over its domain")
    terminal_penalty: float = Field(100.0, gt=0, description="Penalty strength c of the baseline terminal loss")

    @field_validator("widths", "baseline_widths")
    @classmethod
    def _check_widths(cls, value: Optional[List[int]]) -> Optional[List[int]]:
        if value is None:
            return value
        if not value or any(w <= 0 for w in value):
            raise ValueError("widths must be a nonempty list of positive integers")
        return value

    def widths_for(self, preset: str) -> List[int]:
        if preset == "mtpinn" or self.baseline_widths is None:
            return list(self.widths)
        return list(self.baseline_widths)


class SamplerSection(_Section):
    """Collocation counts and the multi-trajectory batch"""

    n_pde: int = Field(..., gt=0)
    n_ic: int = Field(..., gt=0)
    n_term: int = Field(..., gt=0)
    n_zero_term: int = Field(..., gt=0)
    n_x: int = Field(..., ge=1)
    n_s: int = Field(..., ge=1)
    horizon_fractions: List[float] = Field(...)
    n_dt: int = Field(..., ge=1)
    resample_every_epoch: bool = Field(False)

    @field_validator("horizon_fractions")
    @classmethod
    def _check_fractions(cls, value: List[float]) -> List[float]:
        if not value or any(not (0 < f <= 1) for f in value):
            raise ValueError("horizon fractions must lie in (0, 1]")
        return value


class DWAConfig(_Section):
    """Hyperparameters of the DWA-style loss-weight rebalancing"""

    every: int = Field(1000, ge=1, description="Epochs between weight updates")
    beta: float = Field(0.95, ge=0, lt=1, description="EMA smoothing factor")
    alpha: float = Field(0.3, ge=0, description="Update strength")
    w_min: float = Field(0.1, gt=0)
    w_max: float = Field(2.0, gt=0)
    freeze_tol: float = Field(1e-4, ge=0)
    freeze_patience: int = Field(3, ge=1)
    initial_weights: Dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_INITIAL_WEIGHTS))

    @model_validator(mode="after")
    def _check_bounds(self):
        if not self.w_min <= 1.0 <= self.w_max:
            raise ValueError("weight clip range must contain 1 for mean-one normalization")
        unknown = set(self.initial_weights) - set(LOSS_TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms in initial_weights: {sorted(unknown)}")
        return self


class CurriculumSchedule(_Section):
    """Lambda curriculum: phase A at lambda=0, then stages at alpha * lambda_star"""

    preset: PresetName = Field("mtpinn")
    lambda_star: float = Field(0.0, ge=0)
    fractions: List[float] = Field([0.25, 0.5, 0.75, 0.9, 1.0])
    phase_a_epochs: int = Field(..., ge=0)
    epochs_per_stage: int = Field(..., ge=0)

    @field_validator("fractions")
    @classmethod
    def _check_fractions(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("fractions must be nonempty")
        if any(b <= a for a, b in zip(value, value[1:])) or value[0] <= 0:
            raise ValueError("fractions must be positive and strictly increasing")
        if value[-1] != 1.0:
            raise ValueError("the last curriculum fraction must be 1.0")
        return value

    def stage_lambdas(self) -> List[float]:
        return [alpha * self.lambda_star for alpha in self.fractions]

    @property
    def total_epochs(self) -> int:
        if self.lambda_star == 0.0:
            return self.phase_a_epochs
        return self.phase_a_epochs + len(self.fractions) * self.epochs_per_stage


class EvalSection(_Section):
    n_paths: int = Field(200, ge=2)
    path_seed_base: int = Field(0, ge=0)
    x0: float = Field(10.0)
    s0: float = Field(55.0, gt=0)
    n_steps: int = Field(200, ge=1)
    epsilon: float = Field(0.05, gt=0)
    grid_t: int = Field(50, ge=2)
    grid_x: int = Field(50, ge=2)
    fixed_s: float = Field(55.0, gt=0)
    clamp: bool = Field(False, description="Apply the no-short / stop-at-zero clamps in evaluation rollouts")


class BacktestSection(_Section):
    n_days: int = Field(7, ge=1)
    start_date: str = Field("2025-02-10")
    interval_seconds: int = Field(5, ge=1)
    open_price_range: Tuple[float, float] = Field((595.0, 615.0))
    epsilon: float = Field(0.005, gt=0)
    timezone: str = Field("America/New_York")
    session_open: str = Field("09:30")
    session_close: str = Field("16:00")
    windows: List[Tuple[str, str]] = Field([("09:45", "11:45"), ("11:45", "13:45"), ("13:45", "15:45")])
    trading_day_hours: float = Field(6.5, gt=0)
    max_gap_factor: float = Field(10.0, gt=1)


class RunConfig(_Section):
    """A complete, validated run configuration"""

    model: ModelSection
    hjb: HJBConfig
    sampler: SamplerSection
    dwa: DWAConfig = Field(default_factory=DWAConfig)
    curriculum: CurriculumSchedule
    eval: EvalSection = Field(default_factory=EvalSection)
    backtest: BacktestSection = Field(default_factory=BacktestSection)

    @model_validator(mode="after")
    def _lambda_lives_in_curriculum(self):
        if self.hjb.lambda_ != 0.0:
            raise ValueError("set the target risk aversion with curriculum.lambda_star, not hjb.lambda")
        return self

    def target_hjb(self) -> HJBConfig:
        return self.hjb.with_lambda(self.curriculum.lambda_star)


class TrajectorySpec(BaseModel):
    """Initial-state lattice, horizon set and Euler step count of the trajectory loss"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    x0_grid: List[float]
    s0_grid: List[float] = Field(default_factory=list)
    horizons: List[float]
    n_dt: int = Field(..., ge=1)

    @field_validator("x0_grid")
    @classmethod
    def _nonempty(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("x0_grid must be nonempty")
        return value

    @field_validator("horizons")
    @classmethod
    def _sorted(cls, value: List[float]) -> List[float]:
        if not value or any(h <= 0 for h in value):
            raise ValueError("horizons must be positive")
        if any(b < a for a, b in zip(value, value[1:])):
            raise ValueError("horizons must be sorted ascending")
        return value

    @property
    def n_paths(self) -> int:
        """P = n_X * max(n_S, 1)"""
        return len(self.x0_grid) * max(len(self.s0_grid), 1)

    def initial_states(self) -> Tuple[List[float], Optional[List[float]]]:
        """Flattened (X0, S0) lattice, X outer and S inner; S0 is None when the grid is empty"""
        if not self.s0_grid:
            return list(self.x0_grid), None
        xs, ss = [], []
        for x in self.x0_grid:
            for s in self.s0_grid:
                xs.append(x)
                ss.append(s)
        return xs, ss


@dataclass
class LossVector:
    """Raw loss values of one evaluation; inactive terms stay None"""

    pde: Optional[float] = None
    traj: Optional[float] = None
    ic: Optional[float] = None
    sym: Optional[float] = None
    zero_term: Optional[float] = None
    term_penalty: Optional[float] = None

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in LOSS_TERMS if getattr(self, name) is not None}

    @classmethod
    def from_dict(cls, values: Dict[str, float]) -> "LossVector":
        return cls(**{name: float(v) for name, v in values.items()})

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_dict().values())


@dataclass
class WeightState:
    """Adaptive loss weights for the active terms of one training stage"""

    weights: Dict[str, float]
    ema: Dict[str, float] = field(default_factory=dict)
    initial: Dict[str, float] = field(default_factory=dict)
    frozen: Dict[str, bool] = field(default_factory=dict)
    below_tol: Dict[str, int] = field(default_factory=dict)
    updates: int = 0

    @classmethod
    def start(cls, terms, initial_weights: Dict[str, float]) -> "WeightState":
        terms = [t for t in LOSS_TERMS if t in set(terms)]
        return cls(
            weights={t: float(initial_weights.get(t, 1.0)) for t in terms},
            ema={t: 1.0 for t in terms},
            frozen={t: False for t in terms},
            below_tol={t: 0 for t in terms},
        )

    @property
    def terms(self) -> List[str]:
        return list(self.weights)

    @property
    def active(self) -> List[str]:
        return [t for t in self.weights if not self.frozen.get(t, False)]
