import logging

import pytest

from distilvad.utils.env_utils import (
    get_log_level,
    get_num_workers,
    get_precision,
    is_debug_mode,
    show_progress,
)
from distilvad.utils.log_utils import setup_logging


@pytest.mark.parametrize("value,expected", [("true", True), ("1", True), ("no", False)])
def test_debug_flag(monkeypatch, value, expected):
    monkeypatch.setenv("DEBUG", value)
    assert is_debug_mode() is expected


def test_unknown_values_fall_back(monkeypatch):
    monkeypatch.setenv("LOG_LEVEL", "chatty")
    monkeypatch.setenv("DISTILVAD_PRECISION", "float16")
    monkeypatch.setenv("DISTILVAD_WORKERS", "many")
    assert get_log_level() == logging.INFO
    assert get_precision() == "float32"
    assert get_num_workers() == 1


def test_workers_and_progress(monkeypatch):
    monkeypatch.setenv("DISTILVAD_WORKERS", "0")
    assert get_num_workers() == 1
    monkeypatch.delenv("DISTILVAD_WORKERS")
    assert get_num_workers() >= 1
    assert show_progress() is False


def test_file_handler_outside_debug_mode(monkeypatch, tmp_path):
    monkeypatch.setenv("DEBUG", "false")
    logger = setup_logging("distilvad-test", logs_dir=str(tmp_path / "logs"), command="gen")
    try:
        assert len(logger.handlers) == 2
        assert list((tmp_path / "logs").glob("distilvad-test_gen_*.log"))
        monkeypatch.setenv("DEBUG", "true")
        assert len(setup_logging("distilvad-test").handlers) == 1
    finally:
        for handler in logger.handlers:
            handler.close()
        logger.handlers = []
