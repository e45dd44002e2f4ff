import logging
import logging.config
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'

# Libraries that stay at WARNING whatever the solver's level
QUIET_LOGGERS = ('torch', 'asyncio')


def _handlers(log_level: str, log_file: Optional[str]) -> Dict[str, Dict[str, Any]]:
    handlers = {
        # stdout carries the command's own tables
        'console': {
            'class': 'logging.StreamHandler',
            'level': log_level,
            'formatter': 'detailed',
            'stream': sys.stderr,
        }
    }
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers['file'] = {
            'class': 'logging.handlers.RotatingFileHandler',
            'level': log_level,
            'formatter': 'detailed',
            'filename': log_file,
            'maxBytes': 10485760,  # 10MB
            'backupCount': 5,
            'encoding': 'utf-8',
        }
    return handlers


def setup_logging(log_level: str = "INFO", log_file: Optional[str] = None):
    """
    Configure logging for the solver and its commands

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Optional rotating log file
    """
    log_level = log_level.upper()
    handlers = _handlers(log_level, log_file)
    names: List[str] = list(handlers)

    loggers = {
        '': {'level': log_level, 'handlers': names, 'propagate': False},
        'mtpinn': {'level': log_level, 'handlers': names, 'propagate': False},
    }
    for name in QUIET_LOGGERS:
        loggers[name] = {'level': 'WARNING', 'handlers': names, 'propagate': False}

    logging.config.dictConfig({
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {'detailed': {'format': LOG_FORMAT, 'datefmt': LOG_DATEFMT}},
        'handlers': handlers,
        'loggers': loggers,
    })

    logging.getLogger('mtpinn.logging').info(
        f"Logging configured - Level: {log_level} - File: {log_file or 'None'}"
    )


class CommandLogger:
    """Context manager that logs the lifecycle of one CLI command"""

    def __init__(self, command: str, **details):
        self.command = command
        self.details = details
        self.logger = logging.getLogger('mtpinn.commands')
        self._start = 0.0

    def __enter__(self):
        self._start = time.perf_counter()
        detail_str = ", ".join(f"{k}={v}" for k, v in self.details.items())
        self.logger.info(f"Command started - {self.command} - Args: {detail_str or 'none'}")
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self._start
        if exc is None:
            self.logger.info(f"Command completed - {self.command} - Duration: {elapsed:.2f}s")
        else:
            self.logger.error(f"Command failed - {self.command} - Error: {exc} - Duration: {elapsed:.2f}s")
        return False
