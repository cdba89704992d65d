"""
Local config module.
- Loads environment variables from a .env file (project root or semfm/) via python-dotenv.
- Exposes convenience helpers and common settings.
- Reads experiment config files (JSON / TOML / YAML) as flat key-value documents.
"""
from __future__ import annotations
import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

from errors import InputError


def load_env(explicit_path: Optional[str | os.PathLike] = None, override: bool = False) -> None:
    """
    Load environment variables from a .env file if present.
    Search order:
      1) explicit_path if provided
      2) project_root/.env (where project_root is semfm/..)
      3) semfm/.env
    If override=False, will not overwrite variables already in os.environ.
    """
    candidate_paths: list[Path] = []

    if explicit_path:
        candidate_paths.append(Path(explicit_path))
    # this file is semfm/config.py -> project root is parent of semfm
    package_dir = Path(__file__).resolve().parent
    project_root = package_dir.parent
    candidate_paths.append(project_root / ".env")
    candidate_paths.append(package_dir / ".env")

    env_path = next((p for p in candidate_paths if p.is_file()), None)
    if not env_path:
        return
    try:
        load_dotenv(env_path, override=override)
    except Exception:
        # Fail silently; config should be non-fatal.
        pass


# Load .env once on import (non-fatal if missing)
load_env()


def get(key: str, default: Optional[str] = None) -> Optional[str]:
    """Get an environment-based setting with an optional default."""
    return os.environ.get(key, default)


def _get_int(key: str, default: int) -> int:
    try:
        return int(get(key, str(default)) or default)
    except ValueError:
        return default


# Common settings
OUTPUT_DIR: str = get("SEMFM_OUTPUT_DIR", "./output") or "./output"
CACHE_DIR: str = get("SEMFM_CACHE_DIR", os.path.join(OUTPUT_DIR, "cache")) or os.path.join(OUTPUT_DIR, "cache")
LOG_LEVEL: str = (get("SEMFM_LOG_LEVEL", "INFO") or "INFO").upper()
ACTIVITY_LOG: str = get("SEMFM_ACTIVITY_LOG", os.path.join(OUTPUT_DIR, "activity.log.jsonl")) or os.path.join(OUTPUT_DIR, "activity.log.jsonl")
WORKERS: int = max(1, _get_int("SEMFM_WORKERS", 1))
DENSE_EIG_LIMIT: int = max(1, _get_int("SEMFM_DENSE_EIG_LIMIT", 500))


def load_config_file(path: str | os.PathLike) -> Dict[str, Any]:
    """
    Read a flat key-value experiment config. The format follows the suffix:
    .json, .toml, .yaml / .yml. Nested tables are rejected so that every key maps
    onto one RunConfig field.
    """
    p = Path(path)
    if not p.is_file():
        raise InputError(f"Config file not found: {p}")
    suffix = p.suffix.lower()
    try:
        if suffix == ".json":
            data = json.loads(p.read_text(encoding="utf-8"))
        elif suffix == ".toml":
            data = tomllib.loads(p.read_text(encoding="utf-8"))
        elif suffix in (".yaml", ".yml"):
            data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        else:
            raise InputError(f"Unsupported config format '{suffix}' for {p} (use .json, .toml or .yaml)")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, yaml.YAMLError) as e:
        raise InputError(f"Malformed config file {p}: {e}") from e

    if not isinstance(data, dict):
        raise InputError(f"Config file {p} must hold a key-value document")
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise InputError(f"Config file {p} must be flat; nested keys: {', '.join(nested)}")
    return data
