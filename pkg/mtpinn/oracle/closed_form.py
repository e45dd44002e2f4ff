import logging
import math
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from mtpinn.cache.oracle_cache import oracle_cache
from mtpinn.models.hjb import HJBConfig, PricePath, StatePoint
from mtpinn.utils.error_handlers import DomainError, QuadratureError

logger = logging.getLogger(__name__)

QUADRATURE_TOL = 1e-10
MAX_INTERVALS = 2 ** 16
MIN_DEPTH = 3


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = QUADRATURE_TOL,
                     max_intervals: int = MAX_INTERVALS) -> float:
    """
    Integrate ``f`` over [a, b] with adaptive Simpson and Richardson correction

    Subdivision is depth-first on an explicit stack, left before right, so the
    accepted panels are always summed in the same order.

    Args:
        f: Scalar integrand
        a, b: Integration bounds
        tol: Absolute error target over the whole interval
        max_intervals: Cap on the number of panels

    Returns:
        The integral

    Raises:
        QuadratureError: If the panel cap is reached before convergence
    """
    if a == b:
        return 0.0

    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    accepted: List[float] = []
    intervals = 1

    while stack:
        lo, hi, flo, fmid, fhi, estimate, local_tol, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left_mid = 0.5 * (lo + mid)
        right_mid = 0.5 * (mid + hi)
        f_left_mid = f(left_mid)
        f_right_mid = f(right_mid)
        left = (mid - lo) / 6.0 * (flo + 4.0 * f_left_mid + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * f_right_mid + fhi)
        delta = left + right - estimate

        if depth >= MIN_DEPTH and abs(delta) <= 15.0 * local_tol:
            accepted.append(left + right + delta / 15.0)
            continue

        intervals += 1
        if intervals > max_intervals:
            raise QuadratureError(
                f"Adaptive Simpson exceeded {max_intervals} intervals on [{a:g}, {b:g}] at tolerance {tol:g}"
            )
        # Right pushed first so the left half is refined first
        stack.append((mid, hi, fmid, f_right_mid, fhi, right, 0.5 * local_tol, depth + 1))
        stack.append((lo, mid, flo, f_left_mid, fmid, left, 0.5 * local_tol, depth + 1))

    return math.fsum(accepted)


def tanh2_integral(tau: float, kappa: float, sigma: float) -> float:
    """I(tau) = int_0^tau tanh^2(u kappa / 2) exp(-sigma^2 u) du, memoized per (tau, kappa, sigma)"""
    half_kappa = 0.5 * kappa
    sigma2 = sigma * sigma

    def integrand(u: float) -> float:
        return math.tanh(u * half_kappa) ** 2 * math.exp(-sigma2 * u)

    return oracle_cache.get_or_compute(tau, kappa, sigma, lambda: adaptive_simpson(integrand, 0.0, tau))


def _integral_array(tau: np.ndarray, cfg: HJBConfig) -> np.ndarray:
    flat = tau.ravel()
    unique, inverse = np.unique(flat, return_inverse=True)
    values = np.array([tanh2_integral(float(t), cfg.kappa, cfg.sigma) for t in unique], dtype=np.float64)
    return values[inverse].reshape(tau.shape)


def value_field_arrays(tau, x, s, cfg: HJBConfig) -> Dict[str, np.ndarray]:
    """
    Closed-form value and its derivatives on arrays of states

    Args:
        tau: Time-to-maturity, strictly positive
        x: Inventory
        s: Price (ignored when lambda = 0)
        cfg: Market constants

    Returns:
        Dict with gamma, d_tau, d_x, d_s, d_ss, broadcast to a common shape
    """
    tau, x, s = np.broadcast_arrays(
        np.asarray(tau, dtype=np.float64),
        np.asarray(x, dtype=np.float64),
        np.asarray(s, dtype=np.float64),
    )
    if np.any(~(tau > 0)):
        raise DomainError("closed-form value requires tau > 0 (singular terminal condition)")

    kappa, sigma, lam = cfg.kappa, cfg.sigma, cfg.lambda_
    coth = 1.0 / np.tanh(kappa * tau)
    csch2 = 1.0 / np.sinh(kappa * tau) ** 2

    gamma = kappa * x ** 2 * coth
    d_tau = -kappa ** 2 * x ** 2 * csch2
    d_x = 2.0 * kappa * x * coth
    d_s = np.zeros_like(tau)
    d_ss = np.zeros_like(tau)

    if lam > 0.0:
        half = 0.5 * kappa * tau
        tanh_half = np.tanh(half)
        sech2_half = 1.0 / np.cosh(half) ** 2
        growth = np.exp(sigma ** 2 * tau)
        integral = _integral_array(tau, cfg)
        quad_coef = lam ** 2 / (4.0 * kappa ** 2)

        gamma = gamma + lam * x * s / kappa * tanh_half - quad_coef * s ** 2 * growth * integral
        d_tau = (d_tau + 0.5 * lam * x * s * sech2_half
                 - quad_coef * s ** 2 * (sigma ** 2 * growth * integral + tanh_half ** 2))
        d_x = d_x + lam * s / kappa * tanh_half
        d_s = lam * x / kappa * tanh_half - 2.0 * quad_coef * s * growth * integral
        d_ss = -2.0 * quad_coef * growth * integral

    return {"gamma": gamma, "d_tau": d_tau, "d_x": d_x, "d_s": d_s, "d_ss": d_ss}


def value_exact(p: StatePoint, cfg: HJBConfig) -> float:
    """Closed-form value function at one state; rejects tau <= 0"""
    if not p.tau > 0:
        raise DomainError(f"value_exact requires tau > 0, got {p.tau}")
    return float(value_field_arrays(p.tau, p.x, p.s, cfg)["gamma"])


def value_derivatives_exact(p: StatePoint, cfg: HJBConfig) -> Tuple[float, float, float]:
    """Analytic (Gamma_tau, Gamma_X, Gamma_SS) of the closed form"""
    if not p.tau > 0:
        raise DomainError(f"value_derivatives_exact requires tau > 0, got {p.tau}")
    field = value_field_arrays(p.tau, p.x, p.s, cfg)
    return float(field["d_tau"]), float(field["d_x"]), float(field["d_ss"])


def optimal_rate(t: float, x: float, s: float, cfg: HJBConfig) -> float:
    """Optimal feedback trading rate at calendar time t"""
    tau = cfg.horizon_T - t
    if not tau > 0:
        raise DomainError(f"optimal_rate requires t < T, got t={t}, T={cfg.horizon_T}")
    rate = x * cfg.kappa / math.tanh(cfg.kappa * tau)
    if cfg.lambda_ > 0.0:
        rate += cfg.lambda_ * s / (2.0 * cfg.kappa) * math.tanh(0.5 * cfg.kappa * tau)
    return rate


def optimal_inventory_path(path: PricePath, x0: float, cfg: HJBConfig) -> np.ndarray:
    """
    Closed-form optimal inventory along a price path

    The price integral is a cumulative trapezoid on the supplied grid.

    Args:
        path: Price path covering [0, T]
        x0: Initial inventory
        cfg: Market constants

    Returns:
        Inventory at every grid time of the path
    """
    times, prices = path.times, path.prices
    if not math.isclose(path.horizon, cfg.horizon_T, rel_tol=1e-12, abs_tol=1e-12):
        raise DomainError(f"price path must end at T={cfg.horizon_T}, ends at {path.horizon}")

    kappa, horizon = cfg.kappa, cfg.horizon_T
    remaining = horizon - times
    remaining[-1] = 0.0

    bracket = np.full_like(times, x0 / math.sinh(horizon * kappa))
    if cfg.lambda_ > 0.0:
        integrand = prices / (1.0 + np.cosh(remaining * kappa))
        steps = 0.5 * (integrand[1:] + integrand[:-1]) * np.diff(times)
        cumulative = np.concatenate(([0.0], np.cumsum(steps)))
        bracket = bracket - cfg.lambda_ / (2.0 * kappa) * cumulative

    inventory = np.sinh(remaining * kappa) * bracket
    inventory[0] = x0
    return inventory


def hjb_residual_exact(p: StatePoint, derivs: Tuple[float, float, Optional[float]], cfg: HJBConfig) -> float:
    """HJB residual for supplied derivatives (Gamma_tau, Gamma_X, Gamma_SS)"""
    d_tau, d_x, d_ss = derivs
    residual = d_tau - cfg.kappa ** 2 * p.x ** 2 + 0.25 * d_x ** 2
    if cfg.lambda_ > 0.0:
        residual += -0.5 * cfg.sigma ** 2 * p.s ** 2 * d_ss - cfg.lambda_ * p.s * p.x
    return residual


def simulate_gbm(s0: float, cfg: HJBConfig, n_steps: int, seed: int,
                 horizon: Optional[float] = None) -> PricePath:
    """
    Driftless GBM on a uniform grid over [0, horizon] (defaults to T)

    Uses the exact log-Euler update with a generator owned by this call.
    """
    if not s0 > 0:
        raise DomainError(f"initial price must be positive, got {s0}")
    if n_steps < 1:
        raise DomainError(f"n_steps must be >= 1, got {n_steps}")

    horizon = cfg.horizon_T if horizon is None else horizon
    times = np.linspace(0.0, horizon, n_steps + 1)
    dt = horizon / n_steps
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n_steps)
    increments = -0.5 * cfg.sigma ** 2 * dt + cfg.sigma * math.sqrt(dt) * z
    log_path = np.concatenate(([0.0], np.cumsum(increments)))
    return PricePath(times, s0 * np.exp(log_path))


def simulate_gbm_paths(s0: float, cfg: HJBConfig, n_steps: int, n_paths: int,
                       seed_base: int = 0) -> List[PricePath]:
    """Independent paths with seeds seed_base .. seed_base + n_paths - 1"""
    logger.debug(f"Simulating {n_paths} GBM paths - S0: {s0} - Steps: {n_steps} - Seed base: {seed_base}")
    return [simulate_gbm(s0, cfg, n_steps, seed_base + i) for i in range(n_paths)]
