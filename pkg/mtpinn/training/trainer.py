import logging
import time
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Dict, List, Optional

import pandas as pd

from mtpinn.models.hjb import HJBConfig
from mtpinn.models.training import LossVector, RunConfig, WeightState
from mtpinn.network.diffnet import InputScaling, ValueNetwork, grad_of_loss, init_params, warm_start_1d_to_2d
from mtpinn.training.losses import active_terms, compute_losses
from mtpinn.training.optimizer import AdamW, adamw_step
from mtpinn.training.sampler import CollocationBatch, batch_for_epoch, make_trajectory_spec, sample_batch
from mtpinn.training.weighting import dwa_update, observe_initial
from mtpinn.utils.error_handlers import NonFiniteLossError, diagnostics
from mtpinn.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "term", "raw_loss", "weight", "total"]


@dataclass
class StageResult:
    """Outcome of one training stage at a fixed lambda"""

    name: str
    lambda_: float
    field: ValueNetwork
    history: List[Dict[str, float]] = dataclass_field(default_factory=list)
    epochs_run: int = 0
    weights: Optional[WeightState] = None
    first_losses: Optional[LossVector] = None
    final_losses: Optional[LossVector] = None
    diverged: Optional[str] = None
    resumed: bool = False

    @property
    def first_total(self) -> Optional[float]:
        return self.history[0]["total"] if self.history else None

    @property
    def final_total(self) -> Optional[float]:
        return self.history[-1]["total"] if self.history else None


@dataclass
class CurriculumResult:
    field: ValueNetwork
    hjb: HJBConfig
    stages: List[StageResult]

    @property
    def diverged_stages(self) -> List[str]:
        return [stage.name for stage in self.stages if stage.diverged]

    def history_frame(self) -> pd.DataFrame:
        rows = [row for stage in self.stages for row in stage.history]
        return pd.DataFrame(rows, columns=HISTORY_COLUMNS)


StageCallback = Callable[[StageResult, HJBConfig], None]
ResumeLoader = Callable[[str], Optional[ValueNetwork]]


def train_stage(preset: str, net: ValueNetwork, hjb: HJBConfig, run: RunConfig, epochs: int, seed: int,
                batch: Optional[CollocationBatch] = None, name: str = "stage",
                epoch_offset: int = 0) -> StageResult:
    """
    Full-batch training of one stage at a fixed lambda

    Every epoch evaluates the weighted composite loss over the active terms,
    records each term, its weight and the total, and takes one AdamW step.
    Weights are rebalanced every ``dwa.every`` epochs. A non-finite loss
    stops the stage and leaves the last finite parameters in place.

    Args:
        preset: "vanilla", "pinn_curr" or "mtpinn"
        net: Network trained in place
        hjb: Market constants with the stage lambda
        run: Run configuration (optimizer, sampler, DWA, penalty)
        epochs: Number of epochs
        seed: Run seed
        batch: Static collocation batch (sampled from the seed when omitted)
        name: Stage name used in logs
        epoch_offset: Global epoch number of this stage's first epoch

    Returns:
        StageResult
    """
    terms = active_terms(preset, hjb.lambda_)
    result = StageResult(name=name, lambda_=hjb.lambda_, field=net)
    if epochs <= 0:
        return result

    sampler = run.sampler
    if batch is None:
        batch = sample_batch(hjb, sampler, derive_seed(seed, "collocation"))
    spec = make_trajectory_spec(hjb, sampler.n_x, sampler.n_s, sampler.horizon_fractions, sampler.n_dt)
    opt = AdamW.from_config(net.parameters(), run.model)
    ws = WeightState.start(terms, run.dwa.initial_weights)
    started = time.perf_counter()

    logger.info(
        f"Stage started - {name} - Preset: {preset} - Lambda: {hjb.lambda_:g} - "
        f"Epochs: {epochs} - Terms: {','.join(terms)} - Paths: {spec.n_paths}x{len(spec.horizons)}"
    )

    for epoch in range(epochs):
        global_epoch = epoch_offset + epoch
        if sampler.resample_every_epoch and epoch > 0:
            batch = batch_for_epoch(hjb, sampler, seed, global_epoch)

        def loss_fn(field):
            return compute_losses(field, terms, batch, spec, hjb, run.model.terminal_penalty)

        try:
            total, values, grads = grad_of_loss(net, loss_fn, ws.weights)
        except NonFiniteLossError as exc:
            result.diverged = f"{exc} at epoch {global_epoch}"
            logger.warning(f"Stage diverged - {name} - Epoch: {global_epoch} - Term: {exc.term}")
            diagnostics.record(exc.error_code, str(exc), {"stage": name, "epoch": global_epoch})
            break

        if epoch == 0:
            observe_initial(ws, values)
            result.first_losses = LossVector.from_dict(values)
        for term in ws.terms:
            result.history.append({
                "epoch": global_epoch,
                "term": term,
                "raw_loss": values[term],
                "weight": ws.weights[term],
                "total": total,
            })
        result.final_losses = LossVector.from_dict(values)
        logger.debug(f"Epoch {global_epoch} - {name} - Total: {total:.6g}")

        if epoch > 0 and epoch % run.dwa.every == 0:
            ws = dwa_update(ws, values, run.dwa)

        adamw_step(net, grads, opt)
        result.epochs_run = epoch + 1
        if not opt.moments_finite():
            result.diverged = f"non-finite optimizer moments at epoch {global_epoch}"
            logger.warning(f"Stage diverged - {name} - Epoch: {global_epoch} - Optimizer moments")
            break

    result.weights = ws
    elapsed = time.perf_counter() - started
    logger.info(
        f"Stage completed - {name} - Epochs: {result.epochs_run} - "
        f"Final total: {result.final_total if result.final_total is not None else float('nan'):.6g} - "
        f"Duration: {elapsed:.1f}s"
    )
    return result


def stage_names(run: RunConfig) -> List[str]:
    """Stage names in execution order for the configured preset"""
    curriculum = run.curriculum
    if curriculum.preset == "vanilla":
        return ["direct"]
    if curriculum.lambda_star == 0.0:
        return ["phase_a"]
    return ["phase_a"] + [f"stage_{k + 1}" for k in range(len(curriculum.fractions))]


def run_curriculum(run: RunConfig, seed: int, on_stage: Optional[StageCallback] = None,
                   resume: Optional[ResumeLoader] = None) -> CurriculumResult:
    """
    Train a preset through its lambda schedule

    Curriculum presets train phase A at lambda = 0 on (tau, X), lift the
    network to (tau, X, S) and train each stage at alpha * lambda_star,
    warm-starting from the previous stage. The vanilla preset trains the
    target lambda directly for the same epoch budget.

    Args:
        run: Run configuration
        seed: Run seed
        on_stage: Called after each stage (checkpointing)
        resume: Returns a saved network for a completed stage, or None

    Returns:
        CurriculumResult with the final network and every stage
    """
    curriculum = run.curriculum
    preset = curriculum.preset
    target = run.target_hjb()
    widths = run.model.widths_for(preset)
    batch = sample_batch(target, run.sampler, derive_seed(seed, "collocation"))
    stages: List[StageResult] = []
    epoch_offset = 0

    def scaling_for(input_dim: int) -> Optional[InputScaling]:
        return InputScaling.from_config(target, input_dim) if run.model.scale_inputs else None

    def run_one(name: str, net: ValueNetwork, hjb: HJBConfig, epochs: int) -> ValueNetwork:
        nonlocal epoch_offset
        restored = resume(name) if resume is not None else None
        if restored is not None:
            logger.info(f"Stage resumed from checkpoint - {name}")
            stage = StageResult(name=name, lambda_=hjb.lambda_, field=restored, epochs_run=epochs, resumed=True)
        else:
            stage = train_stage(preset, net, hjb, run, epochs, seed, batch=batch, name=name,
                                epoch_offset=epoch_offset)
            if on_stage is not None:
                on_stage(stage, hjb)
        epoch_offset += epochs
        stages.append(stage)
        return stage.field

    if preset == "vanilla":
        net = init_params(target.input_dim, widths, derive_seed(seed, "init"), scaling_for(target.input_dim))
        net = run_one("direct", net, target, curriculum.total_epochs)
        return CurriculumResult(field=net, hjb=target, stages=stages)

    risk_neutral = run.hjb.with_lambda(0.0)
    net = init_params(2, widths, derive_seed(seed, "init"), scaling_for(2))
    net = run_one("phase_a", net, risk_neutral, curriculum.phase_a_epochs)
    if curriculum.lambda_star == 0.0:
        return CurriculumResult(field=net, hjb=risk_neutral, stages=stages)

    net = warm_start_1d_to_2d(net, target.s_range)
    for k, stage_lambda in enumerate(curriculum.stage_lambdas()):
        net = run_one(f"stage_{k + 1}", net, target.with_lambda(stage_lambda), curriculum.epochs_per_stage)

    if stages and any(stage.diverged for stage in stages):
        logger.warning(f"Curriculum finished with diverged stages: {', '.join(s.name for s in stages if s.diverged)}")
    return CurriculumResult(field=net, hjb=target, stages=stages)
