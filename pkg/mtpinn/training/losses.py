import logging
from typing import Dict, List, Optional, Sequence

import torch

from mtpinn.models.hjb import HJBConfig
from mtpinn.models.training import LOSS_TERMS, TrajectorySpec
from mtpinn.training.sampler import CollocationBatch
from mtpinn.utils.error_handlers import DomainError, RolloutDivergedError, diagnostics

logger = logging.getLogger(__name__)

DTYPE = torch.float64

# Loss terms evaluated by each preset; zero_term only joins when lambda > 0
PRESET_TERMS = {
    "mtpinn": ("pde", "traj", "ic", "sym", "zero_term"),
    "pinn_curr": ("pde", "ic", "sym", "term_penalty"),
    "vanilla": ("pde", "ic", "sym", "term_penalty"),
}


def active_terms(preset: str, lambda_: float) -> List[str]:
    if preset not in PRESET_TERMS:
        raise DomainError(f"unknown preset '{preset}'")
    return [t for t in PRESET_TERMS[preset] if t != "zero_term" or lambda_ > 0.0]


def _price(field, s: Optional[torch.Tensor]) -> Optional[torch.Tensor]:
    """Only 3-input fields read S"""
    return s if field.input_dim == 3 else None


def _require_price_input(field, cfg: HJBConfig):
    if not cfg.risk_neutral and field.input_dim != 3:
        raise DomainError(f"lambda={cfg.lambda_} needs a 3-input field, got {field.input_dim} inputs")


def psi(x_terminal: torch.Tensor) -> torch.Tensor:
    """Composite terminal penalty: |x| inside [-1, 1], x^2 outside"""
    magnitude = torch.abs(x_terminal)
    return torch.where(magnitude <= 1.0, magnitude, x_terminal * x_terminal)


def rollout_inventory(field, x0, s0, horizon, n_dt: int, cfg: HJBConfig) -> torch.Tensor:
    """
    Forward-Euler inventory rollout under the feedback control v = Gamma_X / 2

    Batched over rows: each row has its own initial inventory, price and
    horizon. S stays at its initial value; tau is clamped to tau_min.

    Args:
        field: Value field
        x0: Initial inventories
        s0: Initial prices (None for 2-input fields)
        horizon: Horizon per row (or one horizon for all rows)
        n_dt: Euler steps per horizon
        cfg: Market constants

    Returns:
        Terminal inventories, differentiable in the field parameters

    Raises:
        RolloutDivergedError: On the first non-finite inventory
    """
    if n_dt < 1:
        raise DomainError(f"n_dt must be >= 1, got {n_dt}")
    x = torch.as_tensor(x0, dtype=DTYPE).reshape(-1)
    horizon = torch.as_tensor(horizon, dtype=DTYPE).reshape(-1).expand_as(x)
    if bool((horizon <= 0).any()) or bool((horizon > cfg.horizon_T * (1 + 1e-12)).any()):
        raise DomainError(f"rollout horizons must lie in (0, {cfg.horizon_T}]")
    s = None
    if field.input_dim == 3:
        if s0 is None:
            raise DomainError("a 3-input field rollout needs initial prices")
        s = torch.as_tensor(s0, dtype=DTYPE).reshape(-1).expand_as(x)

    dt = horizon / n_dt
    for k in range(n_dt):
        tau = torch.clamp(horizon - k * dt, min=cfg.tau_min)
        rate = 0.5 * field.field(tau, x, s, second_order=False).d_x
        x = x - rate * dt
        if not bool(torch.isfinite(x).all()):
            raise RolloutDivergedError(k, float(horizon.max()))
    return x


def traj_loss(field, spec: TrajectorySpec, cfg: HJBConfig) -> torch.Tensor:
    """
    Mean composite penalty of terminal inventory over every (initial state, horizon) pair

    A diverged rollout yields +inf and a diagnostic record rather than an exception.
    """
    xs, ss = spec.initial_states()
    n_h = len(spec.horizons)
    # Row order: initial state outer, horizon inner
    x0 = torch.tensor(xs, dtype=DTYPE).repeat_interleave(n_h)
    horizons = torch.tensor(spec.horizons, dtype=DTYPE).repeat(len(xs))
    s0 = None
    if field.input_dim == 3:
        if ss is None:
            raise DomainError("trajectory spec has no S0 lattice for a 3-input field")
        s0 = torch.tensor(ss, dtype=DTYPE).repeat_interleave(n_h)

    try:
        terminal = rollout_inventory(field, x0, s0, horizons, spec.n_dt, cfg)
    except RolloutDivergedError as exc:
        logger.warning(f"Trajectory rollout diverged - Step: {exc.step} - Lambda: {cfg.lambda_}")
        diagnostics.record(exc.error_code, str(exc), {"step": exc.step, "lambda": cfg.lambda_})
        return torch.tensor(float("inf"), dtype=DTYPE)
    return psi(terminal).mean()


def hjb_residual(field, tau, x, s, cfg: HJBConfig) -> torch.Tensor:
    """Pointwise HJB residual of a field in the regime selected by cfg.lambda_"""
    _require_price_input(field, cfg)
    x = torch.as_tensor(x, dtype=DTYPE)
    if cfg.risk_neutral:
        ev = field.field(tau, x, _price(field, s), second_order=False)
        return ev.d_tau - cfg.kappa ** 2 * x * x + 0.25 * ev.d_x * ev.d_x
    s = torch.as_tensor(s, dtype=DTYPE)
    ev = field.field(tau, x, s, second_order=True)
    return (ev.d_tau - 0.5 * cfg.sigma ** 2 * s * s * ev.d_ss
            - cfg.kappa ** 2 * x * x - cfg.lambda_ * s * x + 0.25 * ev.d_x * ev.d_x)


def pde_loss(field, tau, x, s, cfg: HJBConfig) -> torch.Tensor:
    residual = hjb_residual(field, tau, x, s, cfg)
    return (residual * residual).mean()


def ic_loss(field, tau, s, cfg: HJBConfig) -> torch.Tensor:
    """Internal condition at X = 0: equality for lambda = 0, one-sided Gamma <= 0 otherwise"""
    tau = torch.as_tensor(tau, dtype=DTYPE)
    gamma = field.value(tau, torch.zeros_like(tau), _price(field, s))
    if cfg.risk_neutral:
        return (gamma * gamma).mean()
    return torch.relu(gamma).pow(2).mean()


def sym_loss(field, tau, x, s, cfg: HJBConfig) -> torch.Tensor:
    s = _price(field, s)
    x = torch.as_tensor(x, dtype=DTYPE)
    flipped_s = None if s is None else -torch.as_tensor(s, dtype=DTYPE)
    gap = field.value(tau, x, s) - field.value(tau, -x, flipped_s)
    return (gap * gap).mean()


def zero_term_loss(field, s, cfg: HJBConfig) -> torch.Tensor:
    """Gamma(0, 0, S) = 0; only defined in the risk-averse regime"""
    if cfg.risk_neutral:
        raise DomainError("zero_term loss is only active when lambda > 0")
    s = torch.as_tensor(s, dtype=DTYPE)
    zeros = torch.zeros_like(s)
    gamma = field.value(zeros, zeros, _price(field, s))
    return (gamma * gamma).mean()


def terminal_penalty_loss(field, x, s, c: float, cfg: HJBConfig) -> torch.Tensor:
    """Baseline terminal condition Gamma(0, X[, S]) = c X^2"""
    if not c > 0:
        raise DomainError(f"terminal penalty strength must be positive, got {c}")
    x = torch.as_tensor(x, dtype=DTYPE)
    gap = field.value(torch.zeros_like(x), x, _price(field, s)) - c * x * x
    return (gap * gap).mean()


def compute_losses(field, terms: Sequence[str], batch: CollocationBatch, spec: TrajectorySpec,
                   cfg: HJBConfig, terminal_penalty: float = 100.0) -> Dict[str, torch.Tensor]:
    """
    Evaluate the requested loss terms, in canonical order

    Args:
        field: Value field
        terms: Active term names
        batch: Collocation points
        spec: Trajectory lattice (used by traj only)
        cfg: Market constants, including the stage lambda
        terminal_penalty: Strength c of the baseline terminal loss

    Returns:
        Ordered mapping term -> scalar tensor
    """
    _require_price_input(field, cfg)
    builders = {
        "pde": lambda: pde_loss(field, batch.pde_tau, batch.pde_x, batch.pde_s, cfg),
        "traj": lambda: traj_loss(field, spec, cfg),
        "ic": lambda: ic_loss(field, batch.ic_tau, batch.ic_s, cfg),
        "sym": lambda: sym_loss(field, batch.pde_tau, batch.pde_x, batch.pde_s, cfg),
        "zero_term": lambda: zero_term_loss(field, batch.zero_term_s, cfg),
        "term_penalty": lambda: terminal_penalty_loss(field, batch.term_x, batch.term_s, terminal_penalty, cfg),
    }
    unknown = set(terms) - set(LOSS_TERMS)
    if unknown:
        raise DomainError(f"unknown loss terms: {sorted(unknown)}")
    return {name: builders[name]() for name in LOSS_TERMS if name in set(terms)}
