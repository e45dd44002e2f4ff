import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch

from mtpinn.models.hjb import HJBConfig
from mtpinn.models.training import SamplerSection, TrajectorySpec
from mtpinn.utils.error_handlers import DomainError
from mtpinn.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

DTYPE = torch.float64


@dataclass
class CollocationBatch:
    """Uniform collocation points of every loss term; S is drawn even when lambda = 0"""

    pde_tau: torch.Tensor
    pde_x: torch.Tensor
    pde_s: torch.Tensor
    ic_tau: torch.Tensor
    ic_s: torch.Tensor
    term_x: torch.Tensor
    term_s: torch.Tensor
    zero_term_s: torch.Tensor

    @property
    def counts(self) -> Tuple[int, int, int, int]:
        return (len(self.pde_tau), len(self.ic_tau), len(self.term_x), len(self.zero_term_s))


def _uniform(generator: torch.Generator, n: int, bounds: Tuple[float, float]) -> torch.Tensor:
    lo, hi = bounds
    draw = torch.rand(n, generator=generator, dtype=DTYPE)
    return lo + (hi - lo) * draw


def sample_batch(cfg: HJBConfig, counts: SamplerSection, seed: int) -> CollocationBatch:
    """
    Draw i.i.d. uniform collocation points over each domain box

    Args:
        cfg: Domains and horizon (tau is drawn in [tau_min, T])
        counts: Number of points per loss term
        seed: Seed of the batch

    Returns:
        CollocationBatch
    """
    for name in ("n_pde", "n_ic", "n_term", "n_zero_term"):
        if getattr(counts, name) <= 0:
            raise DomainError(f"{name} must be positive")

    generator = torch.Generator().manual_seed(int(seed))
    tau_bounds = (cfg.tau_min, cfg.horizon_T)

    batch = CollocationBatch(
        pde_tau=_uniform(generator, counts.n_pde, tau_bounds),
        pde_x=_uniform(generator, counts.n_pde, cfg.x_range),
        pde_s=_uniform(generator, counts.n_pde, cfg.s_range),
        ic_tau=_uniform(generator, counts.n_ic, tau_bounds),
        ic_s=_uniform(generator, counts.n_ic, cfg.s_range),
        term_x=_uniform(generator, counts.n_term, cfg.x_range),
        term_s=_uniform(generator, counts.n_term, cfg.s_range),
        zero_term_s=_uniform(generator, counts.n_zero_term, cfg.s_range),
    )
    logger.debug(f"Sampled collocation batch - Counts: {batch.counts} - Seed: {seed}")
    return batch


def batch_for_epoch(cfg: HJBConfig, counts: SamplerSection, seed: int, epoch: int) -> CollocationBatch:
    """Per-epoch batch when resampling is enabled"""
    return sample_batch(cfg, counts, derive_seed(seed, "collocation", epoch))


def lattice(bounds: Tuple[float, float], n: int) -> List[float]:
    """Even lattice including both endpoints; a single point sits at the midpoint"""
    if n < 1:
        raise DomainError(f"lattice needs at least one point, got {n}")
    lo, hi = bounds
    if n == 1:
        return [0.5 * (lo + hi)]
    return [float(v) for v in np.linspace(lo, hi, n)]


def make_trajectory_spec(cfg: HJBConfig, n_x: int, n_s: int,
                         horizon_fractions: Sequence[float], n_dt: int) -> TrajectorySpec:
    """Initial-state lattice and horizon set of the trajectory loss (no S lattice when lambda = 0)"""
    if n_x < 1:
        raise DomainError(f"n_x must be >= 1, got {n_x}")
    s0_grid = [] if cfg.risk_neutral else lattice(cfg.s_range, n_s)
    horizons = sorted(float(f) * cfg.horizon_T for f in horizon_fractions)
    return TrajectorySpec(x0_grid=lattice(cfg.x_range, n_x), s0_grid=s0_grid, horizons=horizons, n_dt=n_dt)
