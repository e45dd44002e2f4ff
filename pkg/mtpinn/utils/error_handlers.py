import logging
import sys
import threading
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

logger = logging.getLogger('mtpinn.errors')


class MTPinnError(Exception):
    """Base exception for solver errors"""
    error_code = "MTPINN_ERROR"
    exit_code = 2


class DomainError(MTPinnError, ValueError):
    """Raised when an operation is called outside its precondition"""
    error_code = "DOMAIN_ERROR"


class ConfigError(MTPinnError):
    """Raised when a run configuration is missing a key or is invalid"""
    error_code = "CONFIG_ERROR"

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class CheckpointError(MTPinnError):
    """Raised when a checkpoint cannot be read or does not match its config"""
    error_code = "CHECKPOINT_ERROR"


class DataGapError(MTPinnError):
    """Raised when a price feed has a gap wider than the allowed tolerance"""
    error_code = "DATA_GAP"

    def __init__(self, message: str, trading_date: Optional[str] = None, window: Optional[str] = None):
        super().__init__(message)
        self.trading_date = trading_date
        self.window = window


class QuadratureError(MTPinnError):
    """Raised when adaptive quadrature exhausts its interval budget"""
    error_code = "QUADRATURE_ERROR"
    exit_code = 3


class NonFiniteLossError(MTPinnError):
    """Raised when a loss term or its gradient stops being finite"""
    error_code = "NON_FINITE_LOSS"
    exit_code = 3

    def __init__(self, term: str, detail: str = "non-finite value"):
        super().__init__(f"Loss term '{term}': {detail}")
        self.term = term


class RolloutDivergedError(MTPinnError):
    """Raised when an Euler rollout produces a non-finite inventory"""
    error_code = "ROLLOUT_DIVERGED"
    exit_code = 3

    def __init__(self, step: int, horizon: float):
        super().__init__(f"Rollout diverged at Euler step {step} (horizon {horizon:g})")
        self.step = step
        self.horizon = horizon


def describe_validation_error(exc: ValidationError, prefix: str = "") -> ConfigError:
    """Turn a pydantic validation error into a ConfigError naming the first bad key"""
    error_details = []
    first_key = None
    for error in exc.errors():
        field = ".".join(str(loc) for loc in error['loc'])
        if prefix:
            field = f"{prefix}.{field}" if field else prefix
        if first_key is None:
            first_key = field
        if error['type'] == 'missing':
            error_details.append(f"missing key '{field}'")
        else:
            error_details.append(f"{field}: {error['msg']}")
    return ConfigError(f"Invalid configuration: {'; '.join(error_details)}", key=first_key)


def handle_command_exception(exc: BaseException, command: str) -> int:
    """
    Log an exception raised by a CLI command and report it on stderr

    Args:
        exc: The exception that escaped the command
        command: Name of the command

    Returns:
        Process exit code
    """
    # Imported here to keep this module importable before the models package
    from mtpinn.models.reports import ErrorResponse

    if isinstance(exc, MTPinnError):
        logger.warning(
            f"Command error - Command: {command} - "
            f"Code: {exc.error_code} - "
            f"Message: {exc}"
        )
        error_response = ErrorResponse(
            error=str(exc),
            error_code=exc.error_code,
            command=command,
            key=getattr(exc, 'key', None),
        )
        exit_code = exc.exit_code
    else:
        logger.error(
            f"Unexpected Error - Command: {command} - "
            f"Type: {type(exc).__name__} - "
            f"Message: {str(exc)}",
            exc_info=exc
        )
        error_response = ErrorResponse(
            error="Internal error",
            error_code="INTERNAL_ERROR",
            command=command,
        )
        exit_code = 1

    diagnostics.record(error_response.error_code, error_response.error, {'command': command})
    print(error_response.model_dump_json(), file=sys.stderr)
    return exit_code


class DiagnosticsTracker:
    """Track numerical and data diagnostics raised during a run"""

    def __init__(self):
        self.counts: Dict[str, int] = {}
        self.recent: List[Dict[str, Any]] = []
        self.max_recent = 100
        # Backtest workers record from asyncio.to_thread
        self._lock = threading.Lock()

    def record(self, code: str, message: str, context: Optional[Dict[str, Any]] = None):
        """Record a diagnostic occurrence"""
        entry = {
            'timestamp': datetime.now(timezone.utc).isoformat(),
            'code': code,
            'message': message,
            'context': context or {}
        }
        with self._lock:
            self.counts[code] = self.counts.get(code, 0) + 1
            self.recent.append(entry)
            if len(self.recent) > self.max_recent:
                self.recent = self.recent[-self.max_recent:]

    def get_stats(self) -> Dict[str, Any]:
        """Get diagnostic statistics"""
        with self._lock:
            return {
                'total': sum(self.counts.values()),
                'counts_by_code': dict(self.counts),
                'recent': self.recent[-10:]
            }

    def reset(self):
        with self._lock:
            self.counts.clear()
            self.recent.clear()


# Global diagnostics tracker instance
diagnostics = DiagnosticsTracker()
