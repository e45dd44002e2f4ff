"""
Lazy imports so that light commands (feed simulation) never pay for torch
"""
import importlib
from typing import Any, Dict, Optional
import logging

logger = logging.getLogger(__name__)

# Cache for already imported modules
_import_cache: Dict[str, Any] = {}


def lazy_import(module_name: str, attribute: Optional[str] = None):
    """Import a module (or one of its attributes) only when first needed"""
    cache_key = f"{module_name}.{attribute}" if attribute else module_name

    if cache_key in _import_cache:
        return _import_cache[cache_key]

    try:
        module = importlib.import_module(module_name)
        result = getattr(module, attribute) if attribute else module
        _import_cache[cache_key] = result
        logger.debug(f"Lazy imported: {cache_key}")
        return result
    except ImportError as e:
        logger.error(f"Failed to import {cache_key}: {e}")
        raise


def get_torch():
    """Get torch only when needed"""
    return lazy_import('torch')


def get_trainer():
    """Training stack (pulls in torch)"""
    return lazy_import('mtpinn.training.trainer')


def get_evalkit():
    """Evaluation stack (pulls in torch)"""
    return lazy_import('mtpinn.evaluation.evalkit')


def get_backtest_engine():
    """Backtest engine (pulls in torch for network policies)"""
    return lazy_import('mtpinn.backtest.engine')


def get_checkpoint_io():
    """Checkpoint reader/writer (pulls in torch)"""
    return lazy_import('mtpinn.network.checkpoint')
