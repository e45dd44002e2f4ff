import io
import logging
from datetime import datetime, time as dt_time
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from dateutil.parser import isoparse

from mtpinn.models.hjb import HJBConfig
from mtpinn.models.market import WindowRecord
from mtpinn.models.training import BacktestSection
from mtpinn.oracle.closed_form import simulate_gbm
from mtpinn.utils.error_handlers import DataGapError, DomainError, diagnostics
from mtpinn.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

TIMESTAMP_COLUMNS = ("timestamp_iso8601", "timestamp")
PRICE_COLUMN = "mid_price"

# Two returns are the least a sample std can use
MIN_VOLATILITY_PRICES = 3


def _clock(value: str) -> dt_time:
    return datetime.strptime(value, "%H:%M").time()


def _at(day, clock: dt_time, tz: str) -> pd.Timestamp:
    return pd.Timestamp(datetime.combine(day, clock)).tz_localize(tz)


def read_feed(source: Union[str, Path, io.TextIOBase], tz: str) -> pd.Series:
    """
    Read a ``timestamp_iso8601,mid_price`` CSV into a tz-aware price series

    Naive timestamps are taken to be in the session timezone.
    """
    frame = pd.read_csv(source)
    column = next((c for c in TIMESTAMP_COLUMNS if c in frame.columns), None)
    if column is None or PRICE_COLUMN not in frame.columns:
        raise DomainError(f"feed must have columns timestamp_iso8601,mid_price, got {list(frame.columns)}")

    stamps = []
    for raw in frame[column].astype(str):
        parsed = pd.Timestamp(isoparse(raw.strip()))
        stamps.append(parsed.tz_localize(tz) if parsed.tzinfo is None else parsed.tz_convert(tz))

    prices = pd.Series(frame[PRICE_COLUMN].astype(float).to_numpy(), index=pd.DatetimeIndex(stamps))
    if not np.all(np.isfinite(prices.to_numpy())) or (prices <= 0).any():
        raise DomainError("feed prices must be finite and strictly positive")
    return prices


def _window_id(day, start: str) -> str:
    return f"{day.isoformat()}_{start.replace(':', '')}"


def ingest_and_window(source: Union[str, Path, io.TextIOBase],
                      section: BacktestSection) -> Tuple[List[WindowRecord], List[str]]:
    """
    Split a mid-price feed into fixed intraday windows on a uniform grid

    Each window is resampled by last-observation-carried-forward. Windows
    without any observation are skipped with a warning. A gap wider than
    ``max_gap_factor`` intervals inside a window drops every window of that
    day, also with a warning.

    Args:
        source: CSV path or text stream
        section: Session, window and interval settings

    Returns:
        (windows in chronological order, warnings)

    Raises:
        DataGapError: When gaps leave no window, naming the date and window of the last one
    """
    prices = read_feed(source, section.timezone)
    interval = pd.Timedelta(seconds=section.interval_seconds)
    max_gap = interval * section.max_gap_factor
    day_seconds = section.trading_day_hours * 3600.0

    windows: List[WindowRecord] = []
    warnings: List[str] = []
    last_gap: Optional[DataGapError] = None

    for day, day_prices in prices.groupby(prices.index.date, sort=True):
        if not day_prices.index.is_monotonic_increasing or day_prices.index.has_duplicates:
            raise DomainError(f"timestamps on {day} must be strictly increasing")

        day_windows: List[WindowRecord] = []
        for start, end in section.windows:
            window_name = f"{start}-{end}"
            start_ts = _at(day, _clock(start), section.timezone)
            end_ts = _at(day, _clock(end), section.timezone)
            inside = day_prices[(day_prices.index >= start_ts) & (day_prices.index <= end_ts)]
            if inside.empty:
                message = f"No observations in window {window_name} on {day}; window skipped"
                logger.warning(message)
                warnings.append(message)
                diagnostics.record("MISSING_WINDOW", message, {"date": str(day), "window": window_name})
                continue

            boundaries = pd.DatetimeIndex([start_ts]).append(inside.index).append(pd.DatetimeIndex([end_ts]))
            widest = boundaries.to_series().diff().max()
            if widest > max_gap:
                message = (f"Gap of {widest.total_seconds():.0f}s on {day} in window {window_name} "
                           f"exceeds {max_gap.total_seconds():.0f}s; day rejected")
                logger.warning(message)
                warnings.append(message)
                diagnostics.record("DATA_GAP", message, {"date": str(day), "window": window_name})
                last_gap = DataGapError(message, trading_date=str(day), window=window_name)
                day_windows = []
                break

            grid = pd.date_range(start_ts, end_ts, freq=interval)
            history = day_prices[day_prices.index <= end_ts]
            resampled = history.reindex(history.index.union(grid)).ffill().bfill().reindex(grid)

            n_steps = len(grid) - 1
            times = np.arange(n_steps + 1) * (section.interval_seconds / day_seconds)
            day_windows.append(WindowRecord(
                window_id=_window_id(day, start),
                trading_date=day,
                start=start_ts.to_pydatetime(),
                end=end_ts.to_pydatetime(),
                interval_seconds=section.interval_seconds,
                times=times,
                prices=resampled.to_numpy(dtype=np.float64),
                horizon_days=float(times[-1]),
            ))
        windows.extend(day_windows)

    if not windows and last_gap is not None:
        raise last_gap
    logger.info(f"Ingested feed - Windows: {len(windows)} - Skipped: {len(warnings)}")
    return windows, warnings


def estimate_volatility(windows: List[WindowRecord]) -> float:
    """
    Realized volatility in trading-day units, averaged over windows

    Per window: sample std of log-returns times sqrt(N), divided by
    sqrt(window horizon), so GBM with volatility sigma recovers sigma.
    Windows with fewer than three prices have no sample dispersion and are
    skipped with a warning.
    """
    if not windows:
        raise DomainError("volatility estimation needs at least one window")
    estimates = []
    for window in windows:
        if window.prices.size < MIN_VOLATILITY_PRICES:
            message = (f"Window {window.window_id} has {window.prices.size} prices; "
                       f"skipped in volatility estimate")
            logger.warning(message)
            diagnostics.record("SHORT_WINDOW", message, {"window": window.window_id})
            continue
        returns = np.diff(np.log(window.prices))
        dispersion = float(np.std(returns, ddof=1))
        estimates.append(dispersion * np.sqrt(returns.size) / np.sqrt(window.horizon_days))
    if not estimates:
        raise DomainError(f"volatility estimation needs a window with at least {MIN_VOLATILITY_PRICES} prices")
    sigma = float(np.mean(estimates))
    logger.info(f"Estimated volatility - Windows: {len(estimates)} - Sigma (per trading day): {sigma:.6g}")
    return sigma


def simulate_feed(section: BacktestSection, hjb: HJBConfig, seed: int) -> pd.DataFrame:
    """
    Synthetic mid-price feed: driftless GBM over the full session of each business day

    Volatility comes from ``hjb.sigma`` in trading-day units; each day opens at
    a uniform draw from ``open_price_range``.
    """
    days = pd.bdate_range(section.start_date, periods=section.n_days)
    open_rng = np.random.default_rng(derive_seed(seed, "feed", "open"))
    opens = open_rng.uniform(section.open_price_range[0], section.open_price_range[1], size=len(days))

    session_open, session_close = _clock(section.session_open), _clock(section.session_close)
    frames = []
    for index, (day, s0) in enumerate(zip(days, opens)):
        start = _at(day.date(), session_open, section.timezone)
        end = _at(day.date(), session_close, section.timezone)
        n_steps = int((end - start).total_seconds()) // section.interval_seconds
        horizon = n_steps * section.interval_seconds / (section.trading_day_hours * 3600.0)
        path = simulate_gbm(float(s0), hjb, n_steps, derive_seed(seed, "feed", index), horizon=horizon)
        stamps = [start + pd.Timedelta(seconds=k * section.interval_seconds) for k in range(n_steps + 1)]
        frames.append(pd.DataFrame({
            "timestamp_iso8601": [stamp.isoformat() for stamp in stamps],
            "mid_price": path.prices,
        }))

    feed = pd.concat(frames, ignore_index=True)
    logger.info(f"Simulated feed - Days: {len(days)} - Rows: {len(feed)} - Sigma: {hjb.sigma:g}")
    return feed
