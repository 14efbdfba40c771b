"""Run configuration: one TOML document per scientific run.

Layout::

    [circuit]     ej, ec, ng, charge_cutoff, levels (measured-levels CSV)
    [resonator]   omega_r, g, fock_cutoff            (optional)
    [drive]       omega_d, xi2, ng_samples, j, initial, duration_ns, samples
    [registry]    path
    [output]      dir
    [thresholds]  classification and attribution thresholds
    [[transition]] two-mode transitions: name, initial, final, n, bare

Grids are either a list, a scalar, or ``{start, stop, count}``. Only the
output directory may be overridden from the environment
(``DUSTSCOPE_OUTPUT_DIR``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .circuit import CircuitSpec, ResonatorSpec
from .io import load_toml

OUTPUT_ENV = "DUSTSCOPE_OUTPUT_DIR"
_SECTIONS = {"circuit", "resonator", "drive", "registry", "output", "thresholds", "transition"}


class ConfigError(ValueError):
    """Invalid configuration; ``keys`` names the offending entries."""

    def __init__(self, message: str, keys: list[str] | None = None):
        self.keys = list(keys or [])
        super().__init__(message + (f" [keys: {', '.join(self.keys)}]" if self.keys else ""))


def parse_grid(value, key: str) -> np.ndarray:
    """Grid from a scalar, a list, or a ``{start, stop, count}`` table."""
    if isinstance(value, dict):
        missing = [k for k in ("start", "stop", "count") if k not in value]
        if missing:
            raise ConfigError("incomplete grid table", [f"{key}.{k}" for k in missing])
        count = value["count"]
        if not isinstance(count, int) or count < 1:
            raise ConfigError("grid count must be a positive integer", [f"{key}.count"])
        if count > 1 and not value["stop"] > value["start"]:
            raise ConfigError("grid stop must exceed start", [f"{key}.start", f"{key}.stop"])
        return np.linspace(float(value["start"]), float(value["stop"]), count)
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 0:
        raise ConfigError("empty grid", [key])
    if np.any(np.diff(arr) <= 0):
        raise ConfigError("grid must be strictly increasing", [key])
    return arr


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            raw = load_toml(path)
        except Exception as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        cfg = cls(raw, path.parent)
        cfg.validate()
        return cfg

    @classmethod
    def empty(cls) -> RunConfig:
        return cls({})

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    # --- validation -----------------------------------------------------------------------

    def validate(self) -> None:
        bad = sorted(set(self.raw) - _SECTIONS)
        if bad:
            raise ConfigError("unknown sections", bad)
        c = self.section("circuit")
        if c:
            try:
                self.circuit()
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(str(exc), [f"circuit.{k}" for k in ("ej", "ec", "ng", "charge_cutoff")
                                             if k in c]) from exc
        for key in ("levels",):
            if key in c and not self.path(c[key]).exists():
                raise ConfigError(f"file {c[key]} not found", [f"circuit.{key}"])
        r = self.section("registry")
        if "path" in r and not self.path(r["path"]).exists():
            raise ConfigError(f"file {r['path']} not found", ["registry.path"])
        if self.section("resonator"):
            try:
                self.resonator()
            except (TypeError, ValueError, KeyError) as exc:
                raise ConfigError(f"invalid resonator block: {exc}", ["resonator"]) from exc
        d = self.section("drive")
        if "xi2" in d:
            xi2 = parse_grid(d["xi2"], "drive.xi2")
            if np.any(xi2 < 0):
                raise ConfigError("xi^2 values must be nonnegative", ["drive.xi2"])
        if "omega_d" in d:
            w = parse_grid(d["omega_d"], "drive.omega_d")
            if np.any(w <= 0):
                raise ConfigError("drive frequencies must be positive", ["drive.omega_d"])
        if "ng_samples" in d:
            self.ng_samples()

    # --- accessors ------------------------------------------------------------------------

    def circuit(self) -> CircuitSpec:
        c = self.section("circuit")
        missing = [k for k in ("ej", "ec") if k not in c]
        if missing:
            raise ConfigError("circuit parameters missing", [f"circuit.{k}" for k in missing])
        return CircuitSpec(float(c["ej"]), float(c["ec"]), float(c.get("ng", 0.0)),
                           int(c.get("charge_cutoff", 40)))

    def resonator(self) -> ResonatorSpec | None:
        r = self.section("resonator")
        if not r:
            return None
        return ResonatorSpec(float(r["omega_r"]), float(r["g"]), int(r.get("fock_cutoff", 5)))

    def drive_grid(self, key: str) -> np.ndarray:
        d = self.section("drive")
        if key not in d:
            raise ConfigError("drive grid missing", [f"drive.{key}"])
        return parse_grid(d[key], f"drive.{key}")

    def ng_samples(self) -> np.ndarray | None:
        d = self.section("drive")
        if "ng_samples" not in d:
            return None
        v = d["ng_samples"]
        if isinstance(v, int):
            if v < 1:
                raise ConfigError("ng_samples count must be positive", ["drive.ng_samples"])
            return np.linspace(0.0, 0.5, v) if v > 1 else np.array([0.0])
        return parse_grid(v, "drive.ng_samples")

    def drive_value(self, key: str, default=None):
        return self.section("drive").get(key, default)

    def thresholds(self) -> dict:
        return self.section("thresholds")

    def output_dir(self, cli_value: str | None = None) -> Path:
        if cli_value:
            return Path(cli_value)
        env = os.environ.get(OUTPUT_ENV)
        if env:
            return Path(env)
        o = self.section("output")
        return self.path(o["dir"]) if "dir" in o else Path.cwd()
