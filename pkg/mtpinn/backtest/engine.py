import asyncio
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch

from mtpinn.models.hjb import HJBConfig
from mtpinn.models.market import WindowRecord
from mtpinn.models.reports import ExecutionReport, PolicyAggregate, WindowResult
from mtpinn.utils.error_handlers import DomainError, diagnostics

logger = logging.getLogger(__name__)

DTYPE = torch.float64
BPS = 1e4

# Windows and the trained horizon must agree to this relative tolerance
HORIZON_RTOL = 1e-6

VOLATILITY_NOTE = (
    "sigma estimate: per-window sample std of log-returns scaled by sqrt(N) "
    "and divided by sqrt(window horizon in trading days), averaged over windows"
)


@dataclass
class Policy:
    """A liquidation policy: TWAP, or the feedback control of a value field"""

    name: str
    lambda_: Optional[float] = None
    field: Optional[object] = None
    hjb: Optional[HJBConfig] = None

    @classmethod
    def twap(cls) -> "Policy":
        return cls(name="twap")

    @classmethod
    def mtpinn(cls, field, hjb: HJBConfig) -> "Policy":
        return cls(name="mtpinn", lambda_=hjb.lambda_, field=field, hjb=hjb)

    @property
    def label(self) -> str:
        return self.name if self.lambda_ is None else f"{self.name}[lambda={self.lambda_:g}]"


def twap_schedule(x0: float, n_steps: int) -> np.ndarray:
    """Equal slices; the last one absorbs rounding so the slices sum to x0"""
    if n_steps < 1:
        raise DomainError(f"n_steps must be >= 1, got {n_steps}")
    slices = np.full(n_steps, x0 / n_steps)
    slices[-1] = x0 - math.fsum(slices[:-1])
    return slices


def _field_trades(policy: Policy, window: WindowRecord, epsilon: float):
    """Normalized MT-PINN trades: clamped to [0, chi_k], no trading after zero"""
    hjb = policy.hjb
    if not math.isclose(window.horizon_days, hjb.horizon_T, rel_tol=HORIZON_RTOL):
        raise DomainError(
            f"window {window.window_id} spans {window.horizon_days:.6g} trading days but "
            f"{policy.label} was trained for horizon_T={hjb.horizon_T:.6g}"
        )
    n = window.n_steps
    dt = window.horizon_days / n
    inventory = np.empty(n + 1)
    trades = np.zeros(n + 1)
    chi = 1.0

    with torch.no_grad():
        for k in range(n):
            inventory[k] = chi
            if chi <= 0.0:
                continue
            tau = max(window.horizon_days - window.times[k], hjb.tau_min)
            price = [float(window.prices[k])] if policy.field.input_dim == 3 else None
            ev = policy.field.field([tau], [chi], price, second_order=False)
            rate = 0.5 * float(ev.d_x[0])
            trade = min(max(rate * dt, 0.0), chi)
            trades[k] = trade
            chi = chi - trade
            if chi <= 0.0:
                chi = 0.0

    residual = chi
    violation = residual >= 2.0 * epsilon
    trades[n] = residual
    inventory[n] = 0.0
    return inventory, trades, residual, violation


def run_window(policy: Policy, window: WindowRecord, epsilon: float) -> WindowResult:
    """
    Exposure and implementation shortfall of one policy on one window

    Inventory is normalized to chi_0 = 1. Trade k executes at S_k. Any
    residual after the last step is liquidated at S_N; a residual of at
    least 2 epsilon is flagged as a violation.

    Returns:
        WindowResult with exposure = mean_k chi_k^2 over k < N and cost in bps
    """
    n = window.n_steps
    if policy.name == "twap":
        trades = np.append(twap_schedule(1.0, n), 0.0)
        inventory = np.concatenate(([1.0], 1.0 - np.cumsum(trades[:-1])))
        inventory[-1] = 0.0
        residual, violation = 0.0, False
    elif policy.name == "mtpinn":
        inventory, trades, residual, violation = _field_trades(policy, window, epsilon)
    else:
        raise DomainError(f"unknown policy '{policy.name}'")

    s0 = float(window.prices[0])
    exposure = float(np.mean(inventory[:n] ** 2))
    proceeds = math.fsum(float(q) * float(s) for q, s in zip(trades, window.prices))
    cost = (s0 - proceeds) / s0 * BPS

    if violation:
        message = f"Terminal residual {residual:.4g} in window {window.window_id} for {policy.label}"
        logger.warning(message)
        diagnostics.record("TERMINAL_VIOLATION", message, {"window": window.window_id, "policy": policy.label})

    return WindowResult(
        window_id=window.window_id,
        policy=policy.name,
        lambda_=policy.lambda_,
        exposure=exposure,
        cost_bps=cost,
        terminal_residual=residual,
        violation=violation,
    )


def run_policy(policy: Policy, windows: Sequence[WindowRecord], epsilon: float) -> List[WindowResult]:
    results = [run_window(policy, window, epsilon) for window in windows]
    logger.info(f"Policy finished - {policy.label} - Windows: {len(results)}")
    return results


def aggregate(policy: Policy, results: Sequence[WindowResult]) -> PolicyAggregate:
    exposures = np.array([r.exposure for r in results])
    costs = np.array([r.cost_bps for r in results])
    return PolicyAggregate(
        policy=policy.name,
        lambda_=policy.lambda_,
        mean_exposure=float(exposures.mean()),
        exposure_std=float(exposures.std()),
        mean_cost_bps=float(costs.mean()),
        cost_std_bps=float(costs.std()),
        n_windows=len(results),
        violations=sum(1 for r in results if r.violation),
    )


async def run_backtest(policies: Sequence[Policy], windows: Sequence[WindowRecord], epsilon: float,
                       threads: int = 1, sigma_estimate: Optional[float] = None) -> ExecutionReport:
    """
    Run every policy over every window

    Policies run concurrently in worker threads, at most ``threads`` at a
    time; results are reduced in window order, then policy order.

    Args:
        policies: TWAP and/or field policies
        windows: Execution windows
        epsilon: Terminal-residual tolerance
        threads: Maximum concurrent policies
        sigma_estimate: Realized volatility recorded in the report

    Returns:
        ExecutionReport
    """
    if not windows:
        raise DomainError("backtest needs at least one window")
    logger.info(f"Running backtest - Policies: {len(policies)} - Windows: {len(windows)} - Threads: {threads}")
    semaphore = asyncio.Semaphore(max(1, threads))

    async def run_one(policy: Policy) -> List[WindowResult]:
        async with semaphore:
            return await asyncio.to_thread(run_policy, policy, windows, epsilon)

    per_policy = await asyncio.gather(*[run_one(policy) for policy in policies])

    rows = [per_policy[p][w] for w in range(len(windows)) for p in range(len(policies))]
    aggregates = [aggregate(policy, results) for policy, results in zip(policies, per_policy)]
    notes = [VOLATILITY_NOTE] if sigma_estimate is not None else []
    return ExecutionReport(windows=rows, aggregates=aggregates, sigma_estimate=sigma_estimate, notes=notes)
