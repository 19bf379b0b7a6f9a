"""
Wrapper to safely get the FlowLens configuration file, handling the
errors gracefully
"""

import os
import json
import logging
from typing import Optional
from dotenv import load_dotenv

DEFAULT_CONFIG = os.path.join(os.path.dirname(__file__), '..', 'flowlens', 'config.json')


def config_path() -> str:
    """
    Path of the configuration file: FLOWLENS_CONFIG from the
    environment or a .env file, else flowlens/config.json

    Args:
        None

    Returns:
        (str): absolute path
    """
    load_dotenv()
    return os.path.abspath(os.getenv("FLOWLENS_CONFIG") or DEFAULT_CONFIG)


def load_config(path: Optional[str] = None) -> dict:
    """
    Loads the JSON configuration. A missing file or invalid JSON is
    logged and yields an empty dictionary. FLOWLENS_LOG_LEVEL
    overrides the `logging_level` entry

    Args:
        path (Optional[str]): explicit file, else `config_path()`

    Returns:
        (dict): JSON file converted to a dictionary
    """
    resolved = path or config_path()
    try:
        with open(resolved, "r", encoding="utf-8") as f:
            config = json.load(f)
    except FileNotFoundError:
        logging.warning("Config file not found. Using defaults.")
        config = {}
    except json.JSONDecodeError as e:
        logging.error("Invalid JSON in config file: %s", e)
        config = {}
    level = os.getenv("FLOWLENS_LOG_LEVEL")
    if level:
        config["logging_level"] = level.lower()
    return config
