from dataclasses import dataclass
from datetime import date, datetime

import numpy as np

from mtpinn.utils.error_handlers import DomainError


@dataclass(frozen=True, eq=False)
class WindowRecord:
    """One intraday execution window resampled to a uniform grid"""

    window_id: str
    trading_date: date
    start: datetime
    end: datetime
    interval_seconds: int
    times: np.ndarray        # elapsed time in trading-day units, times[0] == 0
    prices: np.ndarray       # mid-prices on the grid
    horizon_days: float      # normalized horizon Delta T_W

    def __post_init__(self):
        if self.prices.shape != self.times.shape or self.prices.size < 2:
            raise DomainError(f"window {self.window_id}: need at least two aligned grid points")
        if not np.all(self.prices > 0):
            raise DomainError(f"window {self.window_id}: prices must be positive")

    @property
    def n_steps(self) -> int:
        return int(self.prices.size - 1)
