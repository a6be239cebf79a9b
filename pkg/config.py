"""
Runtime settings and pipeline configuration.

Settings come from the environment (prefix PAGESEG_) or a .env file; the
pipeline itself is described by one YAML file plus command-line overrides.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from errors import ConfigurationError
from models import BranchArchitecture
from schemas import PipelineConfig

load_dotenv()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="PAGESEG_", env_file=".env", extra="ignore")

    dataset_root: Optional[str] = None
    output_dir: Optional[str] = None
    workers: int = 1
    log_level: str = "INFO"
    device: str = "cpu"


def get_settings() -> Settings:
    return Settings()


def configure_logging(level: Union[str, int] = "INFO"):
    if isinstance(level, str):
        numeric = logging.getLevelName(level.upper())
        if not isinstance(numeric, int):
            raise ConfigurationError(f"Unknown log level '{level}'")
        level = numeric
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def dotted_overrides(pairs: Dict[str, Any]) -> Dict[str, Any]:
    """{'training.max_epochs': 3} -> {'training': {'max_epochs': 3}}; None values are skipped"""
    nested: Dict[str, Any] = {}
    for dotted, value in pairs.items():
        if value is None:
            continue
        node = nested
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return nested


def load_pipeline_config(path: Optional[Union[str, Path]] = None,
                         overrides: Optional[Dict[str, Any]] = None,
                         settings: Optional[Settings] = None) -> PipelineConfig:
    """
    YAML file (optional) < settings from the environment < explicit overrides.
    Missing sections take their defaults.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Config file {path} does not exist")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Config file {path} is not valid YAML: {e}") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"Config file {path} must contain a mapping")

    settings = settings or get_settings()
    env = {"dataset_root": settings.dataset_root, "output_dir": settings.output_dir}
    if settings.workers != 1:
        env["workers"] = settings.workers
    data = _merge(data, dotted_overrides(env))
    data = _merge(data, dotted_overrides(overrides or {}))

    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid pipeline config: {e}") from e


ARCHITECTURES = ("alexnet_like", "miniature")


def build_architecture(name: str, patch_size: int) -> BranchArchitecture:
    if name == "alexnet_like":
        return BranchArchitecture.alexnet_like(input_size=patch_size)
    if name == "miniature":
        return BranchArchitecture.miniature(input_size=patch_size, embedding_dim=16)
    raise ConfigurationError(f"Unknown architecture '{name}' (choose from {', '.join(ARCHITECTURES)})")
