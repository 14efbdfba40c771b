"""Spurious-mode registry, frequency-matching attribution and dispersive shifts."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .circuit import Spectrum
from .drive import ResonanceLine, anharmonicity, predict_resonances
from .io import load_toml

ORIGINS = ("electromagnetic", "TLS", "unknown")
DEFAULT_TOLERANCE_MHZ = 50.0


@dataclass(frozen=True)
class SpuriousMode:
    id: str
    omega_s: float
    origin: str = "unknown"
    chi_mhz: float | None = None
    linewidth_mhz: float | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("mode identifier must be nonempty")
        if not self.omega_s > 0:
            raise ValueError(f"mode {self.id}: omega_s must be positive")
        if self.origin not in ORIGINS:
            raise ValueError(f"mode {self.id}: origin must be one of {ORIGINS}")


@dataclass(frozen=True)
class SpuriousModeRegistry:
    modes: tuple = ()

    def __post_init__(self):
        ids = [m.id for m in self.modes]
        if len(set(ids)) != len(ids):
            raise ValueError("mode identifiers must be unique")

    def __iter__(self):
        return iter(self.modes)

    def __len__(self):
        return len(self.modes)

    def get(self, mode_id: str) -> SpuriousMode:
        for m in self.modes:
            if m.id == mode_id:
                return m
        raise KeyError(mode_id)

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> SpuriousModeRegistry:
        modes = []
        for rec in records:
            modes.append(SpuriousMode(
                id=str(rec["id"]),
                omega_s=float(rec["omega_s_ghz"]),
                origin=str(rec.get("origin") or "unknown"),
                chi_mhz=_opt_float(rec.get("chi_mhz")),
                linewidth_mhz=_opt_float(rec.get("linewidth_mhz")),
            ))
        return cls(tuple(modes))

    def to_records(self) -> list[dict]:
        return [{"id": m.id, "omega_s_ghz": m.omega_s, "origin": m.origin,
                 "chi_mhz": m.chi_mhz, "linewidth_mhz": m.linewidth_mhz} for m in self.modes]


def _opt_float(v):
    if v is None or v == "":
        return None
    return float(v)


REGISTRY_FIELDS = ["id", "omega_s_ghz", "origin", "chi_mhz", "linewidth_mhz"]


def read_registry(path: str | Path) -> SpuriousModeRegistry:
    """Load a registry from CSV (one mode per row) or TOML (``[[mode]]`` tables)."""
    path = Path(path)
    if path.suffix == ".toml":
        doc = load_toml(path)
        return SpuriousModeRegistry.from_records(doc.get("mode", []))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "omega_s_ghz"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: registry header must include id and omega_s_ghz")
        return SpuriousModeRegistry.from_records(list(reader))


def write_registry(registry: SpuriousModeRegistry, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REGISTRY_FIELDS)
        w.writeheader()
        for rec in registry.to_records():
            w.writerow({k: ("" if v is None else v) for k, v in rec.items()})


@dataclass(frozen=True)
class Attribution:
    """A resonance line explaining a feature, with its zero-power frequency residual."""

    feature: str
    line: ResonanceLine
    residual_mhz: float
    slope_consistent: bool
    slope_ratio: float

    def recompute_residual_mhz(self, intercept_ghz: float) -> float:
        return (self.line.omega_d0 - intercept_ghz) * 1e3


def expected_slope_sign(line: ResonanceLine, alpha_q: float) -> int:
    """Sign of d(Delta/alpha)/d omega_d along ``line`` in the landscape plane."""
    return int(math.copysign(1, line.slope) * math.copysign(1, alpha_q))


def attribute_feature(feature, spectrum: Spectrum, registry: SpuriousModeRegistry,
                      tolerance_mhz: float = DEFAULT_TOLERANCE_MHZ, max_l: int = 10,
                      max_m: int = 2, max_n: int = 4, parity: bool | None = None) -> list[Attribution]:
    """Spurious-mode lines within ``tolerance_mhz`` of the feature's zero-power intercept.

    ``feature`` needs ``intercept_ghz``, ``slope`` (d(Delta/alpha)/d omega_d),
    ``initial`` and ``name``. Only lines whose landscape slope has the same
    sign as the feature's are kept; results are ranked by |residual|.
    """
    intercept = float(feature.intercept_ghz)
    slope = float(feature.slope)
    if math.isnan(slope) or slope == 0.0:
        return []
    alpha = anharmonicity(spectrum)
    tol = tolerance_mhz / 1e3
    lines = predict_resonances(spectrum, registry, window=(intercept - tol, intercept + tol),
                               max_l=max_l, max_m=max_m, max_n=max_n,
                               initial_levels=(int(feature.initial),), parity=parity,
                               include_intrinsic=False)
    out = []
    sign = 1 if slope > 0 else -1
    for line in lines:
        resid = (line.omega_d0 - intercept) * 1e3
        if abs(resid) > tolerance_mhz:
            continue
        if expected_slope_sign(line, alpha) != sign:
            continue
        predicted = 1.0 / (line.slope * alpha)
        ratio = slope / predicted if math.isfinite(slope) else math.inf
        out.append(Attribution(str(feature.name), line, resid, True, ratio))
    out.sort(key=lambda a: (abs(a.residual_mhz), a.line.n, a.line.m, abs(a.line.l), a.line.mode or ""))
    return out


ATTRIBUTION_FIELDS = ["feature", "intercept_ghz", "initial", "final", "mode", "l", "m", "n",
                      "omega_d0_ghz", "residual_mhz", "direction"]


def write_attributions(rows: Sequence[tuple], path: str | Path, header: dict | None = None) -> None:
    """Write (feature, attributions) pairs; a feature with none gets an empty row."""
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.DictWriter(fh, fieldnames=ATTRIBUTION_FIELDS)
        w.writeheader()
        for feature, atts in rows:
            base = {"feature": feature.name, "intercept_ghz": f"{feature.intercept_ghz:.6f}",
                    "initial": feature.initial}
            if not atts:
                w.writerow({**base, "direction": "unexplained"})
            for a in atts:
                ln = a.line
                w.writerow({**base, "final": ln.final, "mode": ln.mode, "l": ln.l, "m": ln.m, "n": ln.n,
                            "omega_d0_ghz": f"{ln.omega_d0:.6f}", "residual_mhz": f"{a.residual_mhz:.3f}",
                            "direction": ln.direction})


def chi_from_dephasing(slope: float, kappa_mhz: float) -> float:
    """Dispersive shift chi (MHz) from dGamma_2/dDelta, valid while chi sqrt(n) << kappa."""
    if not kappa_mhz > 0:
        raise ValueError("kappa must be positive")
    return slope * kappa_mhz / 2.0


def dephasing_slope(chi_mhz: float, kappa_mhz: float) -> float:
    """Inverse of :func:`chi_from_dephasing`."""
    if not kappa_mhz > 0:
        raise ValueError("kappa must be positive")
    return 2.0 * chi_mhz / kappa_mhz
