import hashlib
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import ValidationError

from mtpinn.models.training import RunConfig
from mtpinn.utils.error_handlers import ConfigError, describe_validation_error

logger = logging.getLogger(__name__)

PRESET_PACKAGE = "mtpinn.presets"
SCALE_PRESETS = {"desk": "synthetic_desk", "paper": "synthetic_paper"}


def available_presets() -> List[str]:
    return sorted(
        entry.name[:-len(".toml")]
        for entry in resources.files(PRESET_PACKAGE).iterdir()
        if entry.name.endswith(".toml")
    )


def _read_source(source: Union[str, Path]) -> Dict[str, Any]:
    path = Path(source)
    try:
        if path.suffix == ".toml" or path.exists():
            with open(path, "rb") as handle:
                return tomllib.load(handle)
        if str(source) in available_presets():
            with resources.files(PRESET_PACKAGE).joinpath(f"{source}.toml").open("rb") as handle:
                return tomllib.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"Config file not found: {source}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"Config file {source} is not valid TOML: {exc}") from exc
    raise ConfigError(f"Unknown config '{source}'; shipped presets: {', '.join(available_presets())}")


def parse_run_config(raw: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Validate a raw config mapping, applying dotted-key overrides first

    Raises:
        ConfigError: Naming the first missing or invalid key
    """
    data = json.loads(json.dumps(raw))
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        data.setdefault(section, {})[key] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise describe_validation_error(exc) from exc


def load_run_config(source: Optional[Union[str, Path]] = None, scale: str = "desk",
                    overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Load a run config from a TOML path or a shipped preset name

    Args:
        source: Path or preset name; when omitted the synthetic preset of ``scale`` is used
        scale: "desk" or "paper"
        overrides: Dotted keys such as ``curriculum.lambda_star``

    Returns:
        Validated RunConfig
    """
    if source is None:
        if scale not in SCALE_PRESETS:
            raise ConfigError(f"Unknown scale '{scale}'", key="scale")
        source = SCALE_PRESETS[scale]
    config = parse_run_config(_read_source(source), overrides)
    logger.info(
        f"Loaded config - Source: {source} - Preset: {config.curriculum.preset} - "
        f"Lambda*: {config.curriculum.lambda_star} - Hash: {config_hash(config)[:12]}"
    )
    return config


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the canonical (sorted-key) JSON of a resolved config"""
    canonical = json.dumps(config.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def describe_plan(config: RunConfig) -> str:
    """One-paragraph summary of the training budget of a config"""
    sampler, curriculum = config.sampler, config.curriculum
    collocation = sampler.n_pde
    n_paths = sampler.n_x * (1 if curriculum.lambda_star == 0 else sampler.n_s)
    full_budget = curriculum.phase_a_epochs + len(curriculum.fractions) * curriculum.epochs_per_stage
    return (
        f"preset={curriculum.preset} lambda*={curriculum.lambda_star:g} "
        f"collocation={collocation} ic={sampler.n_ic} term={sampler.n_term} zero_term={sampler.n_zero_term} "
        f"trajectories={n_paths}x{len(sampler.horizon_fractions)} n_dt={sampler.n_dt} "
        f"epochs={curriculum.total_epochs} curriculum_epochs={full_budget} (phase A {curriculum.phase_a_epochs} + "
        f"{len(curriculum.fractions)} x {curriculum.epochs_per_stage}) "
        f"widths={config.model.widths_for(curriculum.preset)}"
    )
