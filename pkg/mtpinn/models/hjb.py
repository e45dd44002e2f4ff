import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from mtpinn.utils.error_handlers import DomainError
from mtpinn.utils.io import EXACT_FLOAT_FORMAT, write_csv

# Consumers clamp time-to-maturity to TAU_MIN_FRACTION * horizon_T
TAU_MIN_FRACTION = 1e-6

PATH_COLUMNS = ["time", "price"]


class HJBConfig(BaseModel):
    """Market and model constants of the Gatheral-Schied execution problem"""

    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    kappa: float = Field(..., gt=0, description="Permanent-impact strength (1/time)")
    sigma: float = Field(..., ge=0, description="GBM volatility (1/sqrt(time))")
    lambda_: float = Field(0.0, ge=0, alias="lambda", description="Risk-aversion weight")
    horizon_T: float = Field(..., gt=0, description="Execution horizon")
    x_range: Tuple[float, float] = Field(..., description="Inventory interval")
    s_range: Tuple[float, float] = Field(..., description="Price interval")

    @field_validator("x_range", "s_range")
    @classmethod
    def _check_interval(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValueError(f"interval must satisfy lo <= hi, got {value}")
        return value

    @property
    def tau_min(self) -> float:
        return TAU_MIN_FRACTION * self.horizon_T

    @property
    def risk_neutral(self) -> bool:
        return self.lambda_ == 0.0

    @property
    def input_dim(self) -> int:
        """Network input dimensionality for this regime: (tau, X) or (tau, X, S)"""
        return 2 if self.risk_neutral else 3

    def with_lambda(self, lambda_: float) -> "HJBConfig":
        return self.model_copy(update={"lambda_": float(lambda_)})

    def same_market(self, other: "HJBConfig") -> bool:
        """True when both configs agree on everything except lambda"""
        return self.model_dump(exclude={"lambda_"}) == other.model_dump(exclude={"lambda_"})


@dataclass(frozen=True)
class StatePoint:
    """One state (tau, X, S); S is ignored in the risk-neutral regime"""

    tau: float
    x: float
    s: float = 1.0

    def __post_init__(self):
        if not self.tau >= 0:
            raise DomainError(f"time-to-maturity must be >= 0, got {self.tau}")


@dataclass(frozen=True, eq=False)
class PricePath:
    """Unaffected price sampled on a monotone time grid starting at 0"""

    times: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        prices = np.asarray(self.prices, dtype=np.float64)
        if times.ndim != 1 or times.shape != prices.shape:
            raise DomainError(f"times and prices must be 1-D of equal length, got {times.shape} and {prices.shape}")
        if times.size < 2:
            raise DomainError("a price path needs at least two grid points")
        if times[0] != 0.0:
            raise DomainError(f"price path must start at time 0, got {times[0]}")
        if not np.all(np.diff(times) > 0):
            raise DomainError("price path times must be strictly increasing")
        if not np.all(np.isfinite(prices)) or not np.all(prices > 0):
            raise DomainError("price path prices must be finite and strictly positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "prices", prices)

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"time": self.times, "price": self.prices})

    def to_csv(self, path: Union[str, Path]) -> Path:
        """Write ``time,price`` rows that read back bit for bit"""
        return write_csv(path, self.to_frame(), float_format=EXACT_FLOAT_FORMAT)

    @classmethod
    def from_csv(cls, source: Union[str, Path, io.TextIOBase]) -> "PricePath":
        frame = pd.read_csv(source, float_precision="round_trip")
        if list(frame.columns) != PATH_COLUMNS:
            raise DomainError(f"price path CSV must have header 'time,price', got {list(frame.columns)}")
        return cls(frame["time"].to_numpy(dtype=np.float64), frame["price"].to_numpy(dtype=np.float64))
