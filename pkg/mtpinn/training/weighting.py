import copy
import logging
import math
from typing import Dict, List, Mapping

from mtpinn.models.training import DWAConfig, WeightState

logger = logging.getLogger(__name__)

# Floor for loss ratios entering logarithms and divisions
_TINY = 1e-300


def geometric_mean(values: List[float]) -> float:
    return math.exp(math.fsum(math.log(max(v, _TINY)) for v in values) / len(values))


def propose_weights(weights: Mapping[str, float], ratios: Mapping[str, float], alpha: float) -> Dict[str, float]:
    """Inverse power-law proposal w * r^alpha"""
    return {name: weights[name] * max(ratios[name], _TINY) ** alpha for name in ratios}


def clip_weights(weights: Mapping[str, float], cfg: DWAConfig) -> Dict[str, float]:
    return {name: min(max(w, cfg.w_min), cfg.w_max) for name, w in weights.items()}


def project_mean_one(weights: Mapping[str, float], cfg: DWAConfig) -> Dict[str, float]:
    """
    Rescale to mean one while staying inside [w_min, w_max]

    Weights that hit a bound are pinned there and the rest are rescaled
    again; with w_min <= 1 <= w_max this terminates with an exact mean of one.
    """
    result = dict(weights)
    n = len(result)
    pinned: Dict[str, float] = {}
    for _ in range(n + 1):
        free = [name for name in result if name not in pinned]
        if not free:
            break
        target = n - math.fsum(pinned.values())
        current = math.fsum(result[name] for name in free)
        scale = target / current
        newly_pinned = False
        for name in free:
            value = result[name] * scale
            if value > cfg.w_max:
                pinned[name] = cfg.w_max
                newly_pinned = True
            elif value < cfg.w_min:
                pinned[name] = cfg.w_min
                newly_pinned = True
            result[name] = value
        if not newly_pinned:
            break
        for name, value in pinned.items():
            result[name] = value
    return {name: result[name] for name in weights}


def observe_initial(ws: WeightState, losses: Mapping[str, float]) -> WeightState:
    """Record the first observed loss per term of a stage as its reference scale"""
    for name in ws.terms:
        if name not in ws.initial and name in losses:
            ws.initial[name] = max(float(losses[name]), _TINY)
    return ws


def dwa_update(ws: WeightState, losses: Mapping[str, float], cfg: DWAConfig) -> WeightState:
    """
    One scheduled rebalancing of the loss weights

    EMA of each active term's loss relative to its initial scale, centering by
    the geometric mean over active terms, proposal w * r^alpha, clipping,
    and mean-one projection over the active terms. Terms whose EMA stays
    below the freeze tolerance for ``freeze_patience`` consecutive updates
    are frozen after the projection, at the weight this update gave them.

    Args:
        ws: Current weight state (not modified)
        losses: Raw loss per term at this epoch
        cfg: DWA hyperparameters

    Returns:
        The updated weight state
    """
    state = copy.deepcopy(ws)
    active = state.active
    if not active:
        logger.debug("DWA update skipped - all terms frozen")
        return state

    observe_initial(state, losses)
    for name in active:
        relative = float(losses[name]) / state.initial[name]
        state.ema[name] = cfg.beta * state.ema[name] + (1.0 - cfg.beta) * relative

    state.updates += 1
    centre = geometric_mean([state.ema[name] for name in active])
    ratios = {name: state.ema[name] / centre for name in active}
    proposals = clip_weights(propose_weights(state.weights, ratios, cfg.alpha), cfg)
    state.weights.update(project_mean_one(proposals, cfg))

    # A term reaching its patience here is frozen at the weight it was just given
    for name in active:
        if state.ema[name] < cfg.freeze_tol:
            state.below_tol[name] += 1
        else:
            state.below_tol[name] = 0
        if state.below_tol[name] >= cfg.freeze_patience:
            state.frozen[name] = True
            logger.info(f"DWA froze loss term - Term: {name} - Weight: {state.weights[name]:.4g}")

    logger.info(
        f"DWA update {state.updates} - "
        + ", ".join(f"{name}={state.weights[name]:.4g}" for name in state.terms)
    )
    return state
