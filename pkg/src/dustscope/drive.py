"""Drive-strength conversions, perturbative Stark shifts and resonance lines."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .circuit import Spectrum

if TYPE_CHECKING:
    from .environment import SpuriousModeRegistry


class NearResonanceWarning(UserWarning):
    """Drive frequency within a few anharmonicities of the qubit."""


@dataclass(frozen=True)
class DriveSpec:
    """Drive frequency (GHz) and amplitude, given either as E_d (GHz) or as xi.

    ``kind`` is ``"xi"`` or ``"ed"``.
    """

    omega_d: float
    amplitude: float
    kind: str = "xi"

    def __post_init__(self):
        if not self.omega_d > 0:
            raise ValueError(f"omega_d must be positive, got {self.omega_d}")
        if self.kind not in ("xi", "ed"):
            raise ValueError(f"amplitude kind must be 'xi' or 'ed', got {self.kind!r}")

    def ed(self, spectrum: Spectrum) -> float:
        if self.kind == "ed":
            return self.amplitude
        return amplitude_from_xi(self.amplitude, self.omega_d, spectrum)

    def xi(self, spectrum: Spectrum) -> float:
        if self.kind == "xi":
            return self.amplitude
        return xi_from_amplitude(self.amplitude, self.omega_d, spectrum)


def qubit_frequency(spectrum: Spectrum) -> float:
    return float(spectrum.transmon_energies()[1])


def anharmonicity(spectrum: Spectrum) -> float:
    e = spectrum.transmon_energies()
    return float(e[2] - 2 * e[1])


def _prefactor(omega_d: float, spectrum: Spectrum, warn: bool = True) -> float:
    if spectrum.circuit is None:
        raise ValueError("xi conversion needs circuit constants for n_zpf")
    w01 = qubit_frequency(spectrum)
    den = omega_d**2 - w01**2
    if den == 0.0:
        raise ValueError(f"drive at omega_01 = {w01} GHz: xi is undefined")
    if warn:
        alpha = abs(anharmonicity(spectrum))
        if abs(omega_d - w01) < 3 * alpha:
            warnings.warn(f"omega_d = {omega_d} GHz lies within 3|alpha| of omega_01; "
                          "the displacement formula is unreliable here", NearResonanceWarning,
                          stacklevel=3)
    return 2.0 * spectrum.circuit.n_zpf * omega_d / den


def xi_from_amplitude(ed: float, omega_d: float, spectrum: Spectrum, warn: bool = True) -> float:
    """Dimensionless displacement xi = 2 n_zpf w_d E_d / (w_d^2 - w_01^2)."""
    return ed * _prefactor(omega_d, spectrum, warn)


def amplitude_from_xi(xi: float, omega_d: float, spectrum: Spectrum, warn: bool = True) -> float:
    """Drive amplitude E_d (GHz) producing displacement ``xi``."""
    return xi / _prefactor(omega_d, spectrum, warn)


def ac_stark_shift(xi: float, alpha_q: float) -> float:
    """Leading-order shift of the qubit frequency, xi^2 alpha / 2."""
    return xi * xi * alpha_q / 2.0


def level_shift(level_change: int, xi: float, alpha_q: float) -> float:
    """Shift of a transition spanning ``level_change`` levels in the quartic model."""
    return level_change * ac_stark_shift(xi, alpha_q)


def beta_lin(ed: float, omega_d: float, omega_q: float, n_zpf: float, t):
    """Linear-response displacement of the drive frame at time ``t`` (ns).

    Satisfies beta + beta* = xi sin(2 pi omega_d t) with xi built on ``omega_q``.
    """
    if omega_d == omega_q:
        raise ValueError("beta_lin is undefined for a resonant drive")
    t = np.asarray(t, dtype=float)
    ph = np.exp(-2j * np.pi * omega_d * t)
    val = 0.5j * n_zpf * ed * (ph / (omega_d - omega_q) - np.conj(ph) / (omega_d + omega_q))
    return val if val.ndim else complex(val)


# --- resonance lines ----------------------------------------------------------------


@dataclass(frozen=True)
class ResonanceLine:
    """Solution of E_{i+l} - E_i + m omega_s = n omega_d at zero power.

    ``slope`` is d omega_d / d Delta, equal to l / n in the quartic model.
    """

    initial: int
    final: int
    mode: str | None
    m: int
    n: int
    omega_d0: float
    slope: float
    direction: str
    omega_s: float = 0.0
    transition: float = 0.0

    @property
    def l(self) -> int:  # noqa: E743
        return self.final - self.initial

    def frequency_at(self, delta: float) -> float:
        """Leading-order drive frequency when the qubit is Stark shifted by ``delta``."""
        return self.omega_d0 + self.slope * delta

    def matching_residual(self) -> float:
        return self.transition + self.m * self.omega_s - self.n * self.omega_d0

    def to_record(self) -> dict:
        return {
            "initial": self.initial,
            "final": self.final,
            "mode": self.mode or "",
            "l": self.l,
            "m": self.m,
            "n": self.n,
            "omega_d0_ghz": f"{self.omega_d0:.9f}",
            "slope": f"{self.slope:.6g}",
            "direction": self.direction,
        }


RESONANCE_FIELDS = ["initial", "final", "mode", "l", "m", "n", "omega_d0_ghz", "slope", "direction"]


def write_resonances(lines: Iterable[ResonanceLine], path: str | Path, header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.DictWriter(fh, fieldnames=RESONANCE_FIELDS)
        w.writeheader()
        for line in lines:
            w.writerow(line.to_record())


def _parity_active(spectrum: Spectrum, parity: bool | None) -> bool:
    if parity is not None:
        return parity
    ng = 0.0 if spectrum.circuit is None else spectrum.circuit.ng
    return math.isclose(ng - round(ng), 0.0, abs_tol=1e-12)


def predict_resonances(spectrum: Spectrum, registry: SpuriousModeRegistry | None = None,
                       window: tuple[float, float] = (0.0, math.inf), max_l: int = 10,
                       max_m: int = 2, max_n: int = 4, initial_levels: Iterable[int] = (0, 1),
                       parity: bool | None = None, include_intrinsic: bool = True) -> list[ResonanceLine]:
    """Enumerate integer resonance conditions with zero-power frequency in ``window``.

    The parity filter (l + m + n even) follows the offset charge of the
    spectrum unless ``parity`` forces it on or off. Lines are sorted by
    frequency, then by (initial, l, m, n, mode).
    """
    levels = spectrum.transmon_energies()
    modes = [] if registry is None else list(registry.modes)
    use_parity = _parity_active(spectrum, parity)
    lo, hi = window
    out = []
    for i in initial_levels:
        if i >= len(levels):
            continue
        for f in range(max(0, i - max_l), min(len(levels), i + max_l + 1)):
            l = f - i
            if l == 0:
                continue
            wt = float(levels[f] - levels[i])
            partners = [(None, 0.0, 0)] if include_intrinsic else []
            partners += [(md.id, md.omega_s, m) for md in modes for m in range(1, max_m + 1)]
            for mode_id, ws, m in partners:
                for n in range(1, max_n + 1):
                    if use_parity and (l + m + n) % 2:
                        continue
                    w0 = (wt + m * ws) / n
                    if not (w0 > 0 and lo <= w0 <= hi):
                        continue
                    out.append(ResonanceLine(
                        initial=i, final=f, mode=mode_id, m=m, n=n, omega_d0=w0,
                        slope=l / n, direction="excitation" if l > 0 else "decay",
                        omega_s=ws, transition=wt))
    out.sort(key=lambda r: (r.omega_d0, r.initial, r.l, r.m, r.n, r.mode or ""))
    return out
