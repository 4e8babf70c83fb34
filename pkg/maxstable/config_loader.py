"""Configuration loader for YAML and JSON documents."""
from pathlib import Path
from typing import Any, Dict

import yaml

from .errors import ConfigError


def load_document(path: str) -> Dict[str, Any]:
    """Load a YAML or JSON file and return its contents as a dict.

    JSON is read through the YAML parser (YAML is a superset).
    Raises FileNotFoundError if the file does not exist and ConfigError on parse errors.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    with p.open("r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Could not parse {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Top level of {path} must be a mapping, got {type(data).__name__}")
    return data
