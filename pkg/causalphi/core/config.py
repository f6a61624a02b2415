"""Paths, runtime settings and experiment config file loading."""

from __future__ import annotations

from pathlib import Path
from typing import Any

import yaml
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from causalphi.core.errors import ConfigError

# Project paths
PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent
CONFIG_DIR = PROJECT_ROOT / "config"

_REPO_CONFIG = CONFIG_DIR / "sweep.conf"
_REPO_EXAMPLE = CONFIG_DIR / "sweep.conf.example"

# Keys whose values are comma-separated lists in the flat format
_LIST_KEYS = {"measures", "w_sizes", "beta_grid"}
_MATRIX_KEYS = {"V", "U"}


class Settings(BaseSettings):
    """Runtime settings read from ``PHI_*`` environment variables."""

    model_config = SettingsConfigDict(env_prefix="PHI_", extra="ignore")

    config: Path | None = None
    workers: int = 1
    log_level: str = "INFO"
    output_dir: Path = Path("output")


def default_config_file(settings: Settings | None = None) -> Path:
    """Resolve the experiment config file.

    Resolution order:
      1. PHI_CONFIG env var
      2. <repo>/config/sweep.conf
      3. <repo>/config/sweep.conf.example
    """
    settings = settings or Settings()
    if settings.config is not None:
        return settings.config
    return _REPO_CONFIG if _REPO_CONFIG.exists() else _REPO_EXAMPLE


def _parse_row(line: str) -> list[float]:
    return [float(tok) for tok in line.replace(";", ",").split(",") if tok.strip()]


def parse_flat_config(text: str) -> dict[str, Any]:
    """Parse the flat ``key = value`` format with ``V:``/``U:`` matrix blocks."""
    raw: dict[str, Any] = {}
    block: str | None = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            block = None
            continue
        head = line.split(":", 1)[0].strip()
        if ":" in line and "=" not in line and head in _MATRIX_KEYS:
            block = head
            rest = line.split(":", 1)[1].strip()
            raw[block] = []
            if rest:
                raw[block].append(_parse_row(rest))
            continue
        if "=" in line:
            block = None
            key, value = (part.strip() for part in line.split("=", 1))
            if key in _LIST_KEYS:
                raw[key] = [tok.strip() for tok in value.split(",") if tok.strip()]
            else:
                raw[key] = value
            continue
        if block is None:
            raise ConfigError(f"line {lineno}: expected 'key = value' or a matrix row under V:/U:")
        try:
            raw[block].append(_parse_row(line))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad matrix row {line!r}") from exc
    # U is a vector; accept it written as one row
    if "U" in raw:
        rows = raw["U"]
        raw["U"] = [v for row in rows for v in row]
    return raw


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Read a flat or YAML experiment config into a plain dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return data
    return parse_flat_config(text)


def load_experiment_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None):
    """Load, apply CLI overrides and validate an experiment config."""
    from causalphi.models.schemas import ExperimentConfig

    raw = read_config_file(path or default_config_file())
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
