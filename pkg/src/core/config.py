import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from src.core.exceptions import ConfigError
from src.core.schemas import RunConfig

# Initialize logger
logger = logging.getLogger(__name__)

SEED_ENV = "MTTA_SEED"


def load_config(config_path: str = "config.yaml") -> Dict[str, Any]:
    """
    Loads a YAML (or JSON) configuration file.

    Args:
        config_path (str): Path to the config file, relative to the working directory or
            to the project root.

    Returns:
        Dict[str, Any]: The raw configuration dictionary.

    Raises:
        ConfigError: If the file is missing, unparsable or not a mapping.
    """
    # Look in the current working directory first, then next to the project root
    path = Path(config_path)

    if not path.exists():
        base_dir = Path(__file__).resolve().parent.parent.parent
        path = base_dir / config_path

    if not path.exists():
        logger.critical(f"Configuration file not found at: {path.absolute()}")
        raise ConfigError(f"Config file '{config_path}' is missing.")

    try:
        with open(path, "r", encoding="utf-8") as file:
            config = yaml.safe_load(file)
    except yaml.YAMLError as e:
        logger.critical(f"Error parsing YAML configuration: {e}")
        raise ConfigError(f"Config file '{config_path}' is not valid YAML: {e}") from e

    if config is None:
        config = {}
    if not isinstance(config, dict):
        raise ConfigError(f"Config file '{config_path}' must hold a mapping, got {type(config).__name__}")

    logger.info(f"Configuration loaded successfully from {path}")
    return config


def apply_override(raw: Dict[str, Any], assignment: str) -> None:
    """
    Applies one `section.key=value` assignment in place. The value is parsed as YAML, so
    `3`, `0.1`, `null`, `true` and `[1, 2]` keep their types.

    Raises:
        ConfigError: On a malformed assignment or a path through a non-mapping value.
    """
    key, sep, text = assignment.partition("=")
    parts = key.strip().split(".")
    if not sep or not all(parts):
        raise ConfigError(f"Override '{assignment}' is not of the form section.key=value")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"Override '{assignment}' has an unparsable value: {e}") from e

    _assign(raw, parts, value, assignment)


def _assign(raw: Dict[str, Any], parts: Sequence[str], value: Any, label: str) -> None:
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"Override '{label}': '{part}' is not a section")
    node[parts[-1]] = value


def resolve_seed(flag_seed: Optional[int], file_seed: Optional[int]) -> int:
    """--seed flag, then runtime.seed, then MTTA_SEED (a .env file counts), then 0."""
    if flag_seed is not None:
        return flag_seed
    if file_seed is not None:
        return file_seed

    load_dotenv()
    env_seed = os.getenv(SEED_ENV)
    if env_seed is None or not env_seed.strip():
        return 0
    try:
        seed = int(env_seed)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}='{env_seed}' is not an integer") from None
    if seed < 0:
        raise ConfigError(f"{SEED_ENV} must be non-negative, got {seed}")
    return seed


def resolve_run_config(raw: Dict[str, Any], overrides: Sequence[str] = (), seed: Optional[int] = None,
                       values: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Merges overrides into the raw config, validates it and pins every seed.

    `overrides` are `section.key=value` strings (--set); `values` maps dotted keys to
    already-typed values from dedicated CLI flags and is applied last.

    Null component seeds (model, train, synth) inherit the resolved run seed, so the
    returned config fully determines the run.

    Raises:
        ConfigError: If the merged configuration does not validate.
    """
    merged = copy.deepcopy(raw)
    for assignment in overrides:
        apply_override(merged, assignment)
    for key, value in (values or {}).items():
        _assign(merged, key.split("."), value, key)

    try:
        config = RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e.errors(include_url=False)}") from e

    run_seed = resolve_seed(seed, config.runtime.seed)
    config.runtime.seed = run_seed
    for section in (config.model, config.train, config.synth):
        if section.seed is None:
            section.seed = run_seed
    logger.debug(f"Resolved run seed {run_seed}")
    return config


def dump_run_config(config: RunConfig, path: Path) -> Path:
    """Persists the resolved config as JSON; `load_config` reads it back."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.model_dump_json(indent=2), encoding="utf-8")
    return path
