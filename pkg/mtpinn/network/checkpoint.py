import json
import logging
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import torch
from pydantic import BaseModel, Field, ValidationError

from mtpinn.models.hjb import HJBConfig
from mtpinn.network.diffnet import DTYPE, InputScaling, ValueNetwork
from mtpinn.network.exact_field import ExactField
from mtpinn.utils.error_handlers import CheckpointError
from mtpinn.utils.io import write_json

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "MTPINN-CKPT-1"


class LayerWeights(BaseModel):
    weight: List[List[float]] = Field(..., description="Row-major out x in matrix")
    bias: List[float]


class ScalingSpec(BaseModel):
    centers: List[float]
    half_widths: List[float]


class CheckpointManifest(BaseModel):
    """On-disk description of a trained (or closed-form) value field"""

    format: Literal["MTPINN-CKPT-1"] = CHECKPOINT_FORMAT
    kind: Literal["mlp", "closed_form"] = "mlp"
    input_dim: int
    widths: List[int] = Field(default_factory=list)
    layers: List[LayerWeights] = Field(default_factory=list)
    scaling: Optional[ScalingSpec] = None
    hjb: HJBConfig
    preset: Optional[str] = None
    stage: Optional[str] = None
    epochs: int = 0


def manifest_for(field, hjb: HJBConfig, preset: Optional[str] = None,
                 stage: Optional[str] = None, epochs: int = 0) -> CheckpointManifest:
    if isinstance(field, ExactField):
        return CheckpointManifest(kind="closed_form", input_dim=field.input_dim, hjb=hjb,
                                  preset=preset, stage=stage, epochs=epochs)
    if not isinstance(field, ValueNetwork):
        raise CheckpointError(f"cannot checkpoint a field of type {type(field).__name__}")

    layers = [
        LayerWeights(weight=layer.weight.detach().tolist(), bias=layer.bias.detach().tolist())
        for layer in field.layers
    ]
    scaling = None
    if field.scaling is not None:
        scaling = ScalingSpec(centers=list(field.scaling.centers), half_widths=list(field.scaling.half_widths))
    return CheckpointManifest(kind="mlp", input_dim=field.input_dim, widths=field.widths, layers=layers,
                              scaling=scaling, hjb=hjb, preset=preset, stage=stage, epochs=epochs)


def save_checkpoint(path: Union[str, Path], field, hjb: HJBConfig, preset: Optional[str] = None,
                    stage: Optional[str] = None, epochs: int = 0) -> Path:
    """Write a field atomically as a JSON checkpoint"""
    manifest = manifest_for(field, hjb, preset=preset, stage=stage, epochs=epochs)
    written = write_json(path, manifest.model_dump(mode="json", by_alias=True))
    logger.info(f"Checkpoint written - Path: {written} - Kind: {manifest.kind} - Stage: {stage or 'final'}")
    return written


def field_from_manifest(manifest: CheckpointManifest):
    if manifest.kind == "closed_form":
        if manifest.input_dim != manifest.hjb.input_dim:
            raise CheckpointError(
                f"closed-form checkpoint declares {manifest.input_dim} inputs for lambda={manifest.hjb.lambda_}"
            )
        return ExactField(manifest.hjb)

    scaling = None
    if manifest.scaling is not None:
        scaling = InputScaling(tuple(manifest.scaling.centers), tuple(manifest.scaling.half_widths))
    try:
        net = ValueNetwork(manifest.input_dim, manifest.widths, scaling=scaling)
    except ValueError as exc:
        raise CheckpointError(f"invalid network shape in checkpoint: {exc}") from exc

    if len(manifest.layers) != len(net.layers):
        raise CheckpointError(f"checkpoint has {len(manifest.layers)} layers, widths imply {len(net.layers)}")

    with torch.no_grad():
        for index, (stored, layer) in enumerate(zip(manifest.layers, net.layers)):
            weight = torch.tensor(stored.weight, dtype=DTYPE)
            bias = torch.tensor(stored.bias, dtype=DTYPE)
            if weight.shape != layer.weight.shape or bias.shape != layer.bias.shape:
                raise CheckpointError(
                    f"layer {index}: stored shape {tuple(weight.shape)} does not match {tuple(layer.weight.shape)}"
                )
            if not (torch.isfinite(weight).all() and torch.isfinite(bias).all()):
                raise CheckpointError(f"layer {index}: non-finite parameters")
            layer.weight.copy_(weight)
            layer.bias.copy_(bias)
    return net


def load_checkpoint(path: Union[str, Path]) -> Tuple[object, CheckpointManifest]:
    """
    Read a checkpoint

    Returns:
        (value field, manifest)

    Raises:
        CheckpointError: Missing file, wrong header or inconsistent shapes
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {path}") from exc

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an {CHECKPOINT_FORMAT} checkpoint")
    try:
        manifest = CheckpointManifest.model_validate(payload)
    except ValidationError as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc.errors()[0]['msg']}") from exc

    logger.debug(f"Checkpoint loaded - Path: {path} - Kind: {manifest.kind} - Inputs: {manifest.input_dim}")
    return field_from_manifest(manifest), manifest
