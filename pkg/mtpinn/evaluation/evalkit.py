import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from mtpinn.models.hjb import HJBConfig, PricePath
from mtpinn.models.reports import ErrorMetrics, SurfaceErrorReport, TerminalStats
from mtpinn.models.training import EvalSection
from mtpinn.network.exact_field import ExactField
from mtpinn.oracle.closed_form import optimal_inventory_path, simulate_gbm_paths, value_field_arrays
from mtpinn.utils.error_handlers import DomainError

logger = logging.getLogger(__name__)

DTYPE = torch.float64
MRE_FLOOR = 1e-8


@dataclass
class RolloutResult:
    """One policy rollout along a price path; every series has n_steps + 1 entries"""

    times: np.ndarray
    inventory: np.ndarray
    rate: np.ndarray
    value: np.ndarray
    prices: np.ndarray

    @property
    def terminal(self) -> float:
        return float(self.inventory[-1])


@dataclass
class RolloutBatch:
    """Rollouts of many paths sharing one time grid; arrays are (n_paths, n_steps + 1)"""

    times: np.ndarray
    inventory: np.ndarray
    rate: np.ndarray
    value: np.ndarray
    prices: np.ndarray

    def __len__(self) -> int:
        return int(self.inventory.shape[0])

    @property
    def terminals(self) -> np.ndarray:
        return self.inventory[:, -1]

    def path(self, index: int) -> RolloutResult:
        return RolloutResult(self.times, self.inventory[index], self.rate[index],
                             self.value[index], self.prices[index])


def _check_grid(paths: Sequence[PricePath], cfg: HJBConfig) -> np.ndarray:
    if not paths:
        raise DomainError("at least one price path is required")
    times = paths[0].times
    for path in paths[1:]:
        if path.times.shape != times.shape or not np.array_equal(path.times, times):
            raise DomainError("all price paths must share one time grid")
    if not math.isclose(times[-1], cfg.horizon_T, rel_tol=1e-12, abs_tol=1e-12):
        raise DomainError(f"price paths must cover [0, {cfg.horizon_T}], end at {times[-1]}")
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise DomainError("policy rollouts need a uniform time grid")
    return times


def rollout_paths(field, paths: Sequence[PricePath], x0: float, cfg: HJBConfig,
                  clamp_at_zero: bool = False, no_short: bool = False) -> RolloutBatch:
    """
    Euler rollout of the feedback control v = Gamma_X / 2 along realized prices

    Uses the same step arithmetic as the training rollout: dt = T / n and
    tau_k = max(T - k dt, tau_min). With ``no_short`` inventory is floored
    at zero; with ``clamp_at_zero`` trading stops once inventory reaches zero.

    Args:
        field: Value field
        paths: Price paths on a common uniform grid over [0, T]
        x0: Initial inventory of every path
        cfg: Market constants
        clamp_at_zero: Stop trading after the first zero crossing
        no_short: Never let inventory go below zero

    Returns:
        RolloutBatch
    """
    times = _check_grid(paths, cfg)
    n_steps = len(times) - 1
    n_paths = len(paths)
    prices = np.stack([path.prices for path in paths])

    horizon = torch.full((n_paths,), float(times[-1]), dtype=DTYPE)
    dt = horizon / n_steps
    x = torch.full((n_paths,), float(x0), dtype=DTYPE)
    price_tensor = torch.from_numpy(prices).to(DTYPE)
    trading = torch.ones(n_paths, dtype=torch.bool)

    inventory = np.empty((n_paths, n_steps + 1))
    rates = np.empty((n_paths, n_steps + 1))
    values = np.empty((n_paths, n_steps + 1))

    with torch.no_grad():
        for k in range(n_steps + 1):
            tau = torch.clamp(horizon - k * dt, min=cfg.tau_min)
            s = price_tensor[:, k] if field.input_dim == 3 else None
            ev = field.field(tau, x, s, second_order=False)
            rate = 0.5 * ev.d_x
            if clamp_at_zero:
                rate = torch.where(trading, rate, torch.zeros_like(rate))
            inventory[:, k] = x.numpy()
            rates[:, k] = rate.numpy()
            values[:, k] = ev.gamma.numpy()
            if k == n_steps:
                break
            x = x - rate * dt
            if no_short:
                x = torch.clamp(x, min=0.0)
            if clamp_at_zero:
                trading = trading & (x > 0.0)

    return RolloutBatch(times=times.copy(), inventory=inventory, rate=rates, value=values, prices=prices)


def rollout_policy(field, path: PricePath, x0: float, cfg: HJBConfig,
                   clamp_at_zero: bool = False, no_short: bool = False) -> RolloutResult:
    return rollout_paths(field, [path], x0, cfg, clamp_at_zero=clamp_at_zero, no_short=no_short).path(0)


def nearest_rank(values: np.ndarray, q: float) -> float:
    ordered = np.sort(values)
    rank = max(int(math.ceil(q * len(ordered))), 1)
    return float(ordered[rank - 1])


def terminal_stats(terminals: Sequence[float], epsilon: float) -> TerminalStats:
    """Mean, unbiased std, nearest-rank p95 and pass rate of |X_T|"""
    values = np.abs(np.asarray(terminals, dtype=np.float64))
    if values.size == 0:
        raise DomainError("terminal_stats needs at least one terminal inventory")
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return TerminalStats(
        mean=float(np.mean(values)),
        std=std,
        p95=nearest_rank(values, 0.95),
        pass_rate=float(np.mean(values <= epsilon)),
        epsilon=epsilon,
        n=int(values.size),
    )


def evaluation_paths(cfg: HJBConfig, section: EvalSection) -> List[PricePath]:
    return simulate_gbm_paths(section.s0, cfg, section.n_steps, section.n_paths, seed_base=section.path_seed_base)


def evaluate_terminal(field, cfg: HJBConfig, section: EvalSection) -> Tuple[TerminalStats, RolloutBatch]:
    """Roll the policy out over the seeded evaluation paths and summarize |X_T|"""
    paths = evaluation_paths(cfg, section)
    batch = rollout_paths(field, paths, section.x0, cfg, clamp_at_zero=section.clamp, no_short=section.clamp)
    stats = terminal_stats(batch.terminals, section.epsilon)
    logger.info(f"Terminal inventory - Lambda: {cfg.lambda_:g} - {stats.row()}")
    return stats, batch


def _metrics(pred: np.ndarray, exact: np.ndarray, floor: float) -> ErrorMetrics:
    err = np.abs(pred - exact)
    return ErrorMetrics(
        mae=float(np.mean(err)),
        max_ae=float(np.max(err)),
        mre=float(np.mean(err / np.maximum(np.abs(exact), floor))),
        rmse=float(np.sqrt(np.mean(err * err))),
    )


def surface_errors(field, cfg: HJBConfig, n_t: int, n_x: int, fixed_s: float,
                   mre_floor: float = MRE_FLOOR) -> Tuple[SurfaceErrorReport, pd.DataFrame]:
    """
    Value-function error against the closed form on a (t, X) grid at fixed S

    Returns:
        (report with original- and arcsinh-space metrics, long-form frame t,x,err,asinh_err)
    """
    if n_t < 2 or n_x < 2:
        raise DomainError("surface grids need at least two points per axis")
    t_grid = np.linspace(0.0, cfg.horizon_T, n_t)
    x_grid = np.linspace(cfg.x_range[0], cfg.x_range[1], n_x)
    t_mesh, x_mesh = np.meshgrid(t_grid, x_grid, indexing="ij")
    tau = np.maximum(cfg.horizon_T - t_mesh, cfg.tau_min).ravel()
    x = x_mesh.ravel()
    s = np.full_like(x, fixed_s)

    exact = value_field_arrays(tau, x, s, cfg)["gamma"]
    with torch.no_grad():
        price = torch.from_numpy(s) if field.input_dim == 3 else None
        pred = field.value(torch.from_numpy(tau), torch.from_numpy(x), price).numpy()

    report = SurfaceErrorReport(
        original=_metrics(pred, exact, mre_floor),
        asinh=_metrics(np.arcsinh(pred), np.arcsinh(exact), mre_floor),
        grid_t=n_t,
        grid_x=n_x,
        fixed_s=fixed_s,
        lambda_=cfg.lambda_,
        mre_floor=mre_floor,
    )
    err = np.abs(pred - exact)
    frame = pd.DataFrame({"t": t_mesh.ravel(), "x": x, "err": err, "asinh_err": np.arcsinh(err)})
    logger.info(
        f"Surface errors - Lambda: {cfg.lambda_:g} - MAE: {report.original.mae:.4g} - "
        f"MaxAE: {report.original.max_ae:.4g} - asinh MAE: {report.asinh.mae:.4g}"
    )
    return report, frame


def path_error_curves(field, paths: Sequence[PricePath], x0: float, cfg: HJBConfig) -> pd.DataFrame:
    """
    Per-time mean and std (across paths) of |Gamma - Gamma_hat|, |x - x_hat|, |v - v_hat|

    The reference is the closed-form feedback control rolled out with the
    same Euler grid, so an exact field gives identically zero curves. The
    continuous closed-form inventory is reported alongside as x_analytic.
    Curves cover the steps k = 0 .. n - 1.
    """
    if len(paths) < 2:
        raise DomainError("path_error_curves needs at least two paths for a standard deviation")
    learned = rollout_paths(field, paths, x0, cfg)
    reference = rollout_paths(ExactField(cfg), paths, x0, cfg)
    analytic = np.stack([optimal_inventory_path(path, x0, cfg) for path in paths])

    n = learned.inventory.shape[1] - 1
    gamma_err = np.abs(reference.value[:, :n] - learned.value[:, :n])
    x_err = np.abs(reference.inventory[:, :n] - learned.inventory[:, :n])
    v_err = np.abs(reference.rate[:, :n] - learned.rate[:, :n])

    return pd.DataFrame({
        "t": learned.times[:n],
        "gamma_err_mean": gamma_err.mean(axis=0),
        "gamma_err_std": gamma_err.std(axis=0, ddof=1),
        "x_err_mean": x_err.mean(axis=0),
        "x_err_std": x_err.std(axis=0, ddof=1),
        "v_err_mean": v_err.mean(axis=0),
        "v_err_std": v_err.std(axis=0, ddof=1),
        "x_analytic_mean": analytic[:, :n].mean(axis=0),
    })
