"""
Config files and environment for the command line.

A config file is a JSON object whose keys are long option names with dashes
replaced by underscores, e.g. {"k_max": 5, "restarts": 20}. Values given on
the command line win over the file, the file wins over built-in defaults.
"""
from pathlib import Path
from typing import Iterable, Optional, Union

import json
import logging
import os

from nmsym.rng import ConfigurationError

logger = logging.getLogger(__name__)

MAX_WORKERS_ENV = "NMSYM_MAX_WORKERS"


def load_config(path: Union[str, Path], allowed_keys: Optional[Iterable[str]] = None) -> dict:
    """
    Read a JSON config file.

    Args:
        path (str or Path): The file.
        allowed_keys (iterable, optional): Option names the caller understands.

    Raises:
        ConfigurationError: If the file is unreadable, not a JSON object or
            holds an unknown key.
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            config = json.load(f)
    except OSError as e:
        raise ConfigurationError(f"Cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Config file {path} is not valid JSON: {e}") from e

    if not isinstance(config, dict):
        raise ConfigurationError(f"Config file {path} must hold a JSON object")
    config = {key.replace("-", "_"): value for key, value in config.items()}
    if allowed_keys is not None:
        unknown = sorted(set(config) - set(allowed_keys))
        if unknown:
            raise ConfigurationError(f"Unknown key(s) in {path}: {', '.join(unknown)}")
    logger.debug(f"Loaded config {path}: {config}")
    return config


def resolve_workers(requested: int, environ=None) -> int:
    """
    Number of worker processes, capped by NMSYM_MAX_WORKERS when set.

    Raises:
        ConfigurationError: If the request or the cap is not a positive integer.
    """
    environ = os.environ if environ is None else environ
    if requested < 1:
        raise ConfigurationError(f"workers must be at least 1, got {requested}")
    cap = environ.get(MAX_WORKERS_ENV)
    if cap is None or cap == "":
        return requested
    try:
        cap = int(cap)
    except ValueError:
        raise ConfigurationError(f"{MAX_WORKERS_ENV} must be an integer, got '{cap}'") from None
    if cap < 1:
        raise ConfigurationError(f"{MAX_WORKERS_ENV} must be at least 1, got {cap}")
    if requested > cap:
        logger.info(f"workers capped from {requested} to {cap} by {MAX_WORKERS_ENV}")
    return min(requested, cap)
