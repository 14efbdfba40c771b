"""Configuration loading and provenance helpers."""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def load_toml(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def parse_toml(text: str) -> dict:
    return tomllib.loads(text)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a configuration mapping."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def provenance(config: dict) -> dict:
    from . import __version__

    return {"config_sha256": config_hash(config), "version": __version__}
