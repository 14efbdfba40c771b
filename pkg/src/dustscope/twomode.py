"""Zero-power resonance frequencies in the joint transmon-resonator system."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .circuit import CircuitSpec, ResonatorSpec, Spectrum, coupled_spectrum, transmon_spectrum


@dataclass(frozen=True)
class TwoModeTransition:
    """A drive-activated transition between two coupled-system states.

    ``initial`` and ``final`` are bare labels ``(transmon, photons)`` or
    dressed indices. The bare condition reads
    E_j - E_i + photons * omega_r = n * omega_d with ``bare = (i, j, photons)``.
    """

    name: str
    initial: tuple | int
    final: tuple | int
    n: int
    bare: tuple

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("photon number n must be positive")


@dataclass(frozen=True)
class TwoModeResonance:
    transition: TwoModeTransition
    dressed_ghz: float | None
    bare_ghz: float

    def to_record(self) -> dict:
        t = self.transition
        return {"name": t.name, "initial": str(t.initial), "final": str(t.final), "n": t.n,
                "dressed_ghz": "" if self.dressed_ghz is None else f"{self.dressed_ghz:.6f}",
                "bare_ghz": f"{self.bare_ghz:.6f}"}


def _energy(spectrum: Spectrum, state) -> float | None:
    if isinstance(state, int):
        return float(spectrum.energies[state])
    try:
        return float(spectrum.energies[spectrum.index_of(tuple(state))])
    except KeyError:
        return None


def two_mode_resonances(spec: CircuitSpec, resonator: ResonatorSpec,
                        transitions: Sequence[TwoModeTransition],
                        threshold: float = 0.9) -> list[TwoModeResonance]:
    """Zero-power drive frequencies from dressed energies and from bare conditions.

    The dressed value is None when a bare-labelled endpoint has no
    assigned dressed state at ``threshold``.
    """
    dressed = coupled_spectrum(spec, resonator, threshold=threshold)
    top = max(max(t.bare[0], t.bare[1]) for t in transitions) + 1
    bare_e = transmon_spectrum(spec, max(top, 2)).energies
    out = []
    for t in transitions:
        ei, ef = _energy(dressed, t.initial), _energy(dressed, t.final)
        dv = None if ei is None or ef is None else (ef - ei) / t.n
        i, j, k = t.bare
        bv = (bare_e[j] - bare_e[i] + k * resonator.omega_r) / t.n
        out.append(TwoModeResonance(t, dv, float(bv)))
    return out


def parse_transition(rec: dict) -> TwoModeTransition:
    """Build a transition from a config record with string or list endpoints."""

    def state(v):
        if isinstance(v, int):
            return v
        if isinstance(v, (list, tuple)):
            return tuple(int(x) for x in v)
        v = str(v)
        return tuple(int(x) for x in v.split(":")) if ":" in v else int(v)

    return TwoModeTransition(str(rec["name"]), state(rec["initial"]), state(rec["final"]),
                             int(rec["n"]), tuple(int(x) for x in rec["bare"]))


FIELDS = ["name", "initial", "final", "n", "dressed_ghz", "bare_ghz"]


def write_resonances(rows: Sequence[TwoModeResonance], path: str | Path, header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for key, v in (header or {}).items():
            fh.write(f"# {key}: {v}\n")
        w = csv.DictWriter(fh, fieldnames=FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r.to_record())
