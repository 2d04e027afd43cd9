"""
Logging utilities for the DistilVAD toolkit.

Every module logs through ``logging.getLogger(__name__)`` below the
``distilvad`` logger; the CLI and the dashboard configure that logger once.
"""
import logging
import os
import sys
from datetime import datetime
from logging.handlers import RotatingFileHandler

from distilvad.utils.env_utils import get_log_level, is_debug_mode

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s"
MAX_LOG_BYTES = 10 * 1024 * 1024
LOG_BACKUPS = 5

# PIL logs every decoded chunk at DEBUG
QUIET_LOGGERS = ("PIL",)


def setup_logging(app_name="distilvad", logs_dir=None, command=None):
    """
    Configure the package logger: stdout always, plus a rotating file unless
    DEBUG is set.

    Args:
        app_name (str): Name of the logger to configure
        logs_dir (str, optional): Directory of the log files, defaults to ./logs;
            the CLI points it at ``<run_dir>/logs``
        command (str, optional): CLI subcommand, included in the file name

    Returns:
        Logger: Configured logger instance
    """
    log_level = get_log_level()
    logger = logging.getLogger(app_name)
    logger.setLevel(log_level)

    for handler in logger.handlers:
        handler.close()
    logger.handlers = []

    formatter = logging.Formatter(LOG_FORMAT)
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if not is_debug_mode():
        logs_dir = logs_dir or os.path.join(os.getcwd(), "logs")
        os.makedirs(logs_dir, exist_ok=True)
        stamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        stem = "_".join(part for part in (app_name, command, stamp) if part)
        file_handler = RotatingFileHandler(os.path.join(logs_dir, f"{stem}.log"),
                                           maxBytes=MAX_LOG_BYTES, backupCount=LOG_BACKUPS)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(max(log_level, logging.WARNING))

    logger.debug(f"Logger configured with level: {logging.getLevelName(log_level)}")
    return logger


def get_logger(module_name):
    """Logger below the package logger, for scripts outside the package (app, pages, CLI)."""
    return logging.getLogger(f"distilvad.{module_name}")
