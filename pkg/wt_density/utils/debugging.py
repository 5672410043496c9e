"""
Debugging utilities for the spectral density toolkit.
"""

import os
import sys
import logging
from typing import Optional
from datetime import datetime

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger("wt_density")

_configured = False
_error_log_file: Optional[str] = None


def setup_logging(level: Optional[str] = None, log_dir: Optional[str] = None) -> logging.Logger:
    """
    Set up logging for the application.

    The first call attaches a stderr handler; later calls only adjust the
    level and, when a log directory is given, add the file handlers once.

    Args:
        level: Logging level name. Defaults to WT_LOG_LEVEL or INFO.
        log_dir: Directory for debug.log and the error log. Defaults to
            WT_LOG_DIR; no files are written when neither is set.

    Returns:
        logging.Logger: The package logger.
    """
    global _configured, _error_log_file

    level_name = (level or os.environ.get("WT_LOG_LEVEL") or "INFO").upper()
    logger.setLevel(getattr(logging, level_name, logging.INFO))

    if not _configured:
        stream_handler = logging.StreamHandler(sys.stderr)
        stream_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(stream_handler)
        logger.propagate = False
        _configured = True

    log_dir = log_dir or os.environ.get("WT_LOG_DIR")
    if log_dir and _error_log_file is None:
        os.makedirs(log_dir, exist_ok=True)

        debug_handler = logging.FileHandler(os.path.join(log_dir, "debug.log"))
        debug_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(debug_handler)

        # Errors also go to their own file
        _error_log_file = os.path.join(log_dir, f"error_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log")
        error_handler = logging.FileHandler(_error_log_file)
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(error_handler)

    return logger


def log_error(error_message: str, exc_info=None) -> Optional[str]:
    """
    Log an error message to both the main log and the dedicated error log.

    Args:
        error_message: The error message to log
        exc_info: Exception information (from an except block) if available

    Returns:
        Optional[str]: Path of the error log file, if file logging is active.
    """
    if exc_info:
        logger.error(f"ERROR: {error_message}", exc_info=exc_info)
    else:
        logger.error(f"ERROR: {error_message}")

    return _error_log_file
