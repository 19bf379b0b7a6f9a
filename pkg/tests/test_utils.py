"""
File used in the testing of the functions that are in the utils folder
"""

import json
import sys
import logging
from pathlib import Path
import pytest
from pytest import MonkeyPatch

sys.path.append(str(Path(__file__).resolve().parent.parent))

# pylint: disable=wrong-import-position
from utils.logging_config import setup_logging
from utils.load_config import config_path, load_config


def test_load_config_reads_env_path(tmp_path: Path, monkeypatch: MonkeyPatch) -> None:
    """
    Tests that FLOWLENS_CONFIG points the loader at another file

    Args:
        tmp_path (Path): temporary directory
        monkeypatch (MonkeyPatch): environment patcher

    Returns:
        None
    """
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"logging_level": "debug", "experiment": {"svg": True}}),
                    encoding="utf-8")
    monkeypatch.setenv("FLOWLENS_CONFIG", str(path))
    monkeypatch.delenv("FLOWLENS_LOG_LEVEL", raising=False)

    assert config_path() == str(path.resolve())
    config = load_config()
    assert config["logging_level"] == "debug"
    assert config["experiment"]["svg"] is True

def test_load_config_missing_file(tmp_path: Path, caplog: pytest.LogCaptureFixture) -> None:
    """
    Tests that a missing file is logged and yields an
    empty dictionary

    Args:
        tmp_path (Path): temporary directory
        caplog (LogCaptureFixture): object that
            captures the logged information

    Returns:
        None
    """
    with caplog.at_level(logging.WARNING):
        config = load_config(str(tmp_path / "absent.json"))

    assert config == {} or set(config) == {"logging_level"}
    assert "Config file not found" in caplog.text

def test_load_config_invalid_json(tmp_path: Path,
                                  monkeypatch: MonkeyPatch,
                                  caplog: pytest.LogCaptureFixture) -> None:
    """
    Tests that invalid JSON is logged as an error and
    yields an empty dictionary

    Args:
        tmp_path (Path): temporary directory
        monkeypatch (MonkeyPatch): environment patcher
        caplog (LogCaptureFixture): object that
            captures the logged information

    Returns:
        None
    """
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    monkeypatch.delenv("FLOWLENS_LOG_LEVEL", raising=False)

    with caplog.at_level(logging.ERROR):
        config = load_config(str(path))

    assert config == {}
    assert "Invalid JSON" in caplog.text

def test_load_config_log_level_override(tmp_path: Path, monkeypatch: MonkeyPatch) -> None:
    """
    Tests that FLOWLENS_LOG_LEVEL wins over the file

    Args:
        tmp_path (Path): temporary directory
        monkeypatch (MonkeyPatch): environment patcher

    Returns:
        None
    """
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"logging_level": "info"}), encoding="utf-8")
    monkeypatch.setenv("FLOWLENS_LOG_LEVEL", "ERROR")

    assert load_config(str(path))["logging_level"] == "error"

def test_default_config_is_valid() -> None:
    """
    Tests that the shipped configuration parses and
    names a known logging level

    Args:
        None

    Returns:
        None
    """
    shipped = Path(__file__).resolve().parent.parent / "flowlens" / "config.json"
    config = load_config(str(shipped))

    assert config["logging_level"] in ("debug", "info", "warning", "error")
    assert "experiment" in config

def test_setup_logging_invalid_level() -> None:
    """
    Tests what happens when the passed value is not
    a key for the dictionary that converts the given
    string into a logging.level

    Args:
        None

    Returns:
        None
    """
    with pytest.raises(KeyError):
        setup_logging(level_str="nonexistent_level")

def test_setup_logging_valid_level(caplog: pytest.LogCaptureFixture) -> None:
    """
    Args:
        caplog (LogCaptureFixture): object that
            captures the logged information

    Returns:
        None
    """
    setup_logging("debug")

    with caplog.at_level(logging.DEBUG):
        logging.debug("debug message")

    assert "debug message" in caplog.text
    assert caplog.records[0].levelno == logging.DEBUG

def test_setup_logging_quiets_plotting() -> None:
    """
    Tests that matplotlib is capped at WARNING

    Args:
        None

    Returns:
        None
    """
    setup_logging("debug", force=True)

    assert logging.getLogger("matplotlib").level == logging.WARNING
