import asyncio
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import pandas as pd

from mtpinn.backtest.feed import estimate_volatility, ingest_and_window, simulate_feed
from mtpinn.models.reports import ExecutionReport, OutputFile, RunManifest
from mtpinn.models.training import RunConfig
from mtpinn.training.config import config_hash, describe_plan, load_run_config
from mtpinn.utils.error_handlers import CheckpointError, ConfigError
from mtpinn.utils.io import file_sha256, write_csv, write_json
from mtpinn.utils.lazy_imports import (
    get_backtest_engine,
    get_checkpoint_io,
    get_evalkit,
    get_torch,
    get_trainer,
)
from mtpinn.utils.logging_config import CommandLogger

logger = logging.getLogger(__name__)

SYNTHETIC_SOURCE = "synthetic"
BACKTEST_PRESETS = {"desk": "spy_desk", "paper": "spy_paper"}

PathLike = Union[str, Path]


class OutputRecorder:
    """Writes command outputs under one directory and remembers each file for the manifest"""

    def __init__(self, out_dir: PathLike):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._written: Dict[str, Path] = {}

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def csv(self, name: str, frame: pd.DataFrame) -> Path:
        return self.add(write_csv(self.path(name), frame))

    def json(self, name: str, payload: Any) -> Path:
        return self.add(write_json(self.path(name), payload))

    def add(self, path: Path) -> Path:
        self._written[path.relative_to(self.out_dir).as_posix()] = path
        return path

    def manifest(self, command: str, config: RunConfig, config_path: Optional[PathLike], seed: int,
                 started_at: datetime) -> RunManifest:
        outputs = [OutputFile(path=name, sha256=file_sha256(path)) for name, path in sorted(self._written.items())]
        manifest = RunManifest(
            command=command,
            config_path=str(config_path) if config_path is not None else None,
            seed=seed,
            output_dir=str(self.out_dir),
            config_hash=config_hash(config),
            started_at=started_at,
            finished_at=datetime.now(timezone.utc),
            outputs=outputs,
        )
        write_json(self.path("manifest.json"), manifest.model_dump(mode="json"))
        logger.info(f"Manifest written - Command: {command} - Outputs: {len(outputs)}")
        return manifest


def _set_threads(threads: int):
    if threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {threads}", key="threads")
    get_torch().set_num_threads(threads)


def _config_payload(config: RunConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json", by_alias=True)


def cmd_train(config_path: Optional[PathLike], seed: int, out_dir: PathLike, preset: Optional[str] = None,
              lambda_star: Optional[float] = None, scale: str = "desk", threads: int = 1,
              resume: bool = False) -> RunManifest:
    """
    Train a preset through its curriculum and write the final checkpoint

    Every finished stage is checkpointed under ``stages/<name>.json``; with
    ``resume`` a stage whose checkpoint already exists for the same market
    is loaded instead of retrained.

    Outputs:
        checkpoint.json, history.csv (epoch, term, raw_loss, weight, total),
        stages.csv, config.json, manifest.json
    """
    started_at = datetime.now(timezone.utc)
    overrides = {"curriculum.preset": preset, "curriculum.lambda_star": lambda_star}
    with CommandLogger("train", config=config_path or scale, seed=seed, out=out_dir):
        config = load_run_config(config_path, scale=scale, overrides=overrides)
        print(describe_plan(config))
        _set_threads(threads)

        trainer = get_trainer()
        checkpoint_io = get_checkpoint_io()
        recorder = OutputRecorder(out_dir)
        target = config.target_hjb()
        preset_name = config.curriculum.preset

        def stage_file(name: str) -> Path:
            return recorder.path(f"stages/{name}.json")

        def on_stage(stage, hjb):
            recorder.add(checkpoint_io.save_checkpoint(
                stage_file(stage.name), stage.field, hjb, preset=preset_name, stage=stage.name,
                epochs=stage.epochs_run,
            ))

        def load_stage(name: str):
            path = stage_file(name)
            if not resume or not path.exists():
                return None
            field, manifest = checkpoint_io.load_checkpoint(path)
            if manifest.stage != name or manifest.preset != preset_name or not manifest.hjb.same_market(target):
                raise CheckpointError(f"stage checkpoint {path} was written by a different run")
            recorder.add(path)
            return field

        result = trainer.run_curriculum(config, seed, on_stage=on_stage, resume=load_stage)

        last = result.stages[-1]
        total_epochs = sum(stage.epochs_run for stage in result.stages)
        recorder.add(checkpoint_io.save_checkpoint(
            recorder.path("checkpoint.json"), result.field, result.hjb, preset=preset_name,
            stage=last.name, epochs=total_epochs,
        ))
        recorder.csv("history.csv", result.history_frame())
        recorder.csv("stages.csv", pd.DataFrame([
            {
                "stage": stage.name,
                "lambda": stage.lambda_,
                "epochs_run": stage.epochs_run,
                "first_total": stage.first_total,
                "final_total": stage.final_total,
                "resumed": stage.resumed,
                "diverged": stage.diverged or "",
            }
            for stage in result.stages
        ]))
        recorder.json("config.json", _config_payload(config))

        if result.diverged_stages:
            logger.warning(f"Training finished with diverged stages: {', '.join(result.diverged_stages)}")
        return recorder.manifest("train", config, config_path, seed, started_at)


def cmd_eval(checkpoint_path: PathLike, config_path: Optional[PathLike], seed: int, out_dir: PathLike,
             scale: str = "desk", threads: int = 1) -> RunManifest:
    """
    Evaluate a checkpoint against the closed form

    The evaluation paths use seeds ``eval.path_seed_base + seed + i`` so
    every checkpoint evaluated with one config and seed sees the same paths.

    Outputs:
        terminal_stats.csv, terminals.csv, surface_errors.csv,
        surface_grid.csv, path_errors.csv, manifest.json
    """
    started_at = datetime.now(timezone.utc)
    with CommandLogger("eval", checkpoint=checkpoint_path, seed=seed, out=out_dir):
        config = load_run_config(config_path, scale=scale)
        _set_threads(threads)
        evalkit = get_evalkit()
        field, manifest = get_checkpoint_io().load_checkpoint(checkpoint_path)
        cfg = manifest.hjb
        if not cfg.same_market(config.hjb):
            raise CheckpointError(f"checkpoint {checkpoint_path} was trained on a different market than the config")

        section = config.eval.model_copy(update={"path_seed_base": config.eval.path_seed_base + seed})
        recorder = OutputRecorder(out_dir)

        stats, batch = evalkit.evaluate_terminal(field, cfg, section)
        print(stats.row())
        recorder.csv("terminal_stats.csv", pd.DataFrame([{
            "preset": manifest.preset or manifest.kind,
            "lambda": cfg.lambda_,
            **stats.model_dump(),
        }]))
        recorder.csv("terminals.csv", pd.DataFrame({
            "path": range(len(batch)),
            "seed": [section.path_seed_base + i for i in range(len(batch))],
            "x_T": batch.terminals,
        }))

        report, grid = evalkit.surface_errors(field, cfg, section.grid_t, section.grid_x, section.fixed_s)
        recorder.csv("surface_errors.csv", pd.DataFrame([
            {"space": space, "lambda": cfg.lambda_, "fixed_s": section.fixed_s, **metrics.model_dump()}
            for space, metrics in (("original", report.original), ("asinh", report.asinh))
        ]))
        recorder.csv("surface_grid.csv", grid)

        paths = evalkit.evaluation_paths(cfg, section)
        recorder.csv("path_errors.csv", evalkit.path_error_curves(field, paths, section.x0, cfg))

        return recorder.manifest("eval", config, config_path, seed, started_at)


def _report_frames(report: ExecutionReport):
    windows = pd.DataFrame([
        {
            "window_id": row.window_id,
            "policy": row.policy,
            "lambda": row.lambda_,
            "exposure": row.exposure,
            "cost_bps": row.cost_bps,
            "terminal_residual": row.terminal_residual,
            "violation": row.violation,
        }
        for row in report.windows
    ])
    aggregates = pd.DataFrame([
        {
            "policy": agg.policy,
            "lambda": agg.lambda_,
            "mean_exposure": agg.mean_exposure,
            "exposure_std": agg.exposure_std,
            "mean_cost_bps": agg.mean_cost_bps,
            "cost_std_bps": agg.cost_std_bps,
            "n_windows": agg.n_windows,
            "violations": agg.violations,
        }
        for agg in report.aggregates
    ])
    return windows, aggregates


def cmd_backtest(checkpoint_paths: Sequence[PathLike], data_source: str, config_path: Optional[PathLike],
                 seed: int, out_dir: PathLike, scale: str = "desk", threads: int = 1) -> RunManifest:
    """
    Backtest TWAP and one MT-PINN policy per checkpoint over intraday windows

    ``data_source`` is a ``timestamp_iso8601,mid_price`` CSV path, or
    ``synthetic`` to generate the feed from the config and seed first.

    Outputs:
        backtest_windows.csv (window_id, policy, lambda, exposure, cost_bps, ...),
        backtest_aggregate.csv, backtest_aggregate.json, feed.csv (synthetic only),
        manifest.json
    """
    started_at = datetime.now(timezone.utc)
    with CommandLogger("backtest", checkpoints=len(checkpoint_paths), data=data_source, seed=seed, out=out_dir):
        if config_path is None:
            if scale not in BACKTEST_PRESETS:
                raise ConfigError(f"Unknown scale '{scale}'", key="scale")
            config_path = BACKTEST_PRESETS[scale]
        config = load_run_config(config_path, scale=scale)
        _set_threads(threads)

        engine = get_backtest_engine()
        checkpoint_io = get_checkpoint_io()
        recorder = OutputRecorder(out_dir)

        policies = [engine.Policy.twap()]
        loaded = [checkpoint_io.load_checkpoint(path) for path in checkpoint_paths]
        loaded.sort(key=lambda item: item[1].hjb.lambda_)
        for field, manifest in loaded:
            if not manifest.hjb.same_market(loaded[0][1].hjb):
                raise CheckpointError("all backtest checkpoints must share one market configuration")
            policies.append(engine.Policy.mtpinn(field, manifest.hjb))
        market = loaded[0][1].hjb if loaded else config.hjb

        if data_source == SYNTHETIC_SOURCE:
            feed = simulate_feed(config.backtest, market, seed)
            source = recorder.csv("feed.csv", feed)
        else:
            source = Path(data_source)

        windows, warnings = ingest_and_window(source, config.backtest)
        sigma = estimate_volatility(windows)
        report = asyncio.run(engine.run_backtest(policies, windows, config.backtest.epsilon,
                                                 threads=threads, sigma_estimate=sigma))
        report.notes.extend(warnings)

        window_frame, aggregate_frame = _report_frames(report)
        recorder.csv("backtest_windows.csv", window_frame)
        recorder.csv("backtest_aggregate.csv", aggregate_frame)
        recorder.json("backtest_aggregate.json", {
            "aggregates": [agg.model_dump(mode="json") for agg in report.aggregates],
            "sigma_estimate": report.sigma_estimate,
            "n_windows": len(windows),
            "notes": report.notes,
        })
        print(aggregate_frame.to_string(index=False))
        return recorder.manifest("backtest", config, config_path, seed, started_at)


def cmd_simulate_feed(config_path: Optional[PathLike], seed: int, out_dir: PathLike,
                      scale: str = "desk") -> RunManifest:
    """Write a synthetic ``timestamp_iso8601,mid_price`` feed for the backtest market"""
    started_at = datetime.now(timezone.utc)
    with CommandLogger("simulate-feed", config=config_path or scale, seed=seed, out=out_dir):
        if config_path is None:
            if scale not in BACKTEST_PRESETS:
                raise ConfigError(f"Unknown scale '{scale}'", key="scale")
            config_path = BACKTEST_PRESETS[scale]
        config = load_run_config(config_path, scale=scale)

        recorder = OutputRecorder(out_dir)
        recorder.csv("feed.csv", simulate_feed(config.backtest, config.hjb, seed))
        return recorder.manifest("simulate-feed", config, config_path, seed, started_at)

