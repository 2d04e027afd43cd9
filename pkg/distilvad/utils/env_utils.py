"""
Environment utilities for the DistilVAD toolkit.
"""
import os
import logging

from dotenv import load_dotenv

# Configure logger
logger = logging.getLogger(__name__)

_PRECISIONS = ("float32", "float64")


def load_environment():
    """
    Load environment variables from .env file.

    Returns:
        bool: True if environment loaded successfully, False otherwise.
    """
    try:
        load_dotenv()
        logger.debug("Environment variables loaded successfully")
        return True
    except Exception as e:
        logger.error(f"Failed to load environment variables: {e}")
        return False


def _env_flag(name, default):
    return os.getenv(name, default).lower() in ("true", "1", "t", "yes")


def is_debug_mode():
    """
    Checks if the toolkit is running in debug mode.

    Returns:
        bool: True if in debug mode, False otherwise
    """
    return _env_flag("DEBUG", "False")


def get_log_level():
    """
    Gets the configured log level from environment.

    Returns:
        int: Logging level constant
    """
    log_level = os.getenv("LOG_LEVEL", "INFO").upper()

    levels = {
        "DEBUG": logging.DEBUG,
        "INFO": logging.INFO,
        "WARNING": logging.WARNING,
        "ERROR": logging.ERROR,
        "CRITICAL": logging.CRITICAL
    }

    return levels.get(log_level, logging.INFO)


def get_precision():
    """
    Gets the default floating point precision for tensors.

    Returns:
        str: "float32" or "float64"
    """
    precision = os.getenv("DISTILVAD_PRECISION", "float32").lower()
    if precision not in _PRECISIONS:
        logger.warning(f"Unknown DISTILVAD_PRECISION '{precision}', using float32")
        return "float32"
    return precision


def get_num_workers():
    """
    Gets the worker count used for clip generation and teacher targets.

    Returns:
        int: Number of workers (at least 1)
    """
    raw = os.getenv("DISTILVAD_WORKERS")
    if raw is None:
        return max(1, os.cpu_count() or 1)
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"Invalid DISTILVAD_WORKERS '{raw}', using 1")
        return 1


def show_progress():
    """
    Checks whether tqdm progress bars should be displayed.

    Returns:
        bool: True unless DISTILVAD_PROGRESS is set to a false value
    """
    return _env_flag("DISTILVAD_PROGRESS", "True")


def get_run_dir():
    """
    Gets the run directory the dashboard reads reports from.

    Returns:
        str: Path of the run directory
    """
    return os.getenv("DISTILVAD_RUN_DIR", os.path.join("runs", "default"))
