"""One-period propagators, Floquet modes, amplitude sweeps and time evolution.

The driven Hamiltonian in the undriven eigenbasis is
``H(t) = diag(E) + E_d cos(2 pi w_d t) N`` with N the charge matrix. It is
integrated with a symmetric sixth-order composition of Strang steps that
splits H into its static part and the drive term. Both parts are exactly
unitary, so the propagator stays unitary to rounding error.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment

from . import _kernels
from .circuit import Spectrum
from .drive import DriveSpec, amplitude_from_xi

TWO_PI = 2.0 * np.pi

# Yoshida's sixth-order "solution A" weights, symmetric about the centre.
_W1, _W2, _W3 = -1.17767998417887, 0.235573213359357, 0.784513610477560
_W0 = 1.0 - 2.0 * (_W1 + _W2 + _W3)
YOSHIDA6 = np.array([_W3, _W2, _W1, _W0, _W1, _W2, _W3])

DEFAULT_TOL = 1e-10
MIN_STEPS = 32
MAX_STEPS = 8192
UNITARITY_LIMIT = 1e-6


class IntegrationError(RuntimeError):
    """The propagator missed its accuracy or unitarity target."""


def unitarity_defect(u: np.ndarray) -> float:
    return float(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0]), 2))


class PeriodIntegrator:
    """Split-operator propagator for one spectrum and drive frequency.

    Precomputes the drive eigenbasis and the static flows; the drive
    amplitude only enters the diagonal kicks, so one instance serves a
    whole amplitude sweep.
    """

    def __init__(self, spectrum: Spectrum, omega_d: float, steps: int,
                 weights: np.ndarray = YOSHIDA6):
        self.energies = np.asarray(spectrum.energies, dtype=float)
        self.omega_d = float(omega_d)
        self.period = 1.0 / self.omega_d
        self.steps = int(steps)
        self.weights = np.asarray(weights, dtype=float)
        nm = np.asarray(spectrum.n_matrix)
        self.coupling, self.basis = np.linalg.eigh(0.5 * (nm + nm.conj().T))
        self._plans: dict[float, tuple] = {}

    def _plan(self, h: float, nsteps: int):
        key = (h, nsteps)
        if key in self._plans:
            return self._plans[key]
        g = self.weights
        s = len(g)
        inner = [(g[k] + g[k + 1]) / 2 for k in range(s - 1)]
        wrap = (g[-1] + g[0]) / 2
        coeffs = sorted(set(inner + [wrap, g[-1] / 2, g[0] / 2]))
        pos = {c: i for i, c in enumerate(coeffs)}
        w = self.basis
        flows = np.empty((len(coeffs), len(w), len(w)), dtype=complex)
        for c, i in pos.items():
            flows[i] = w.conj().T @ (np.exp(-1j * TWO_PI * self.energies * c * h)[:, None] * w)
        clock = np.empty(s * nsteps)
        index = np.empty(s * nsteps, dtype=np.int64)
        for step in range(nsteps):
            for k in range(s):
                if k < s - 1:
                    c = inner[k]
                elif step < nsteps - 1:
                    c = wrap
                else:
                    c = g[-1] / 2
                clock[step * s + k] = c
                index[step * s + k] = pos[c]
        kicks = np.tile(g, nsteps)
        plan = (flows, index, kicks, clock, flows[pos[g[0] / 2]])
        self._plans[key] = plan
        return plan

    def propagate(self, ed: float, duration: float | None = None, t0: float = 0.0) -> np.ndarray:
        """U(t0 + duration, t0) in the spectrum eigenbasis; one period by default."""
        duration = self.period if duration is None else float(duration)
        if duration <= 0:
            raise ValueError("duration must be positive")
        nsteps = max(1, math.ceil(self.steps * duration / self.period - 1e-9))
        h = duration / nsteps
        flows, index, kicks, clock, first = self._plan(h, nsteps)
        x0 = first @ self.basis.conj().T
        start = t0 + self.weights[0] / 2 * h
        x = _kernels.evolve(x0, flows, index, kicks, self.coupling.copy(), float(ed),
                            self.omega_d, start, h, clock)
        return self.basis @ x


@dataclass(frozen=True)
class Propagator:
    matrix: np.ndarray
    steps: int
    unitarity_defect: float
    step_error: float


def choose_steps(spectrum: Spectrum, omega_d: float, ed: float, tol: float = DEFAULT_TOL,
                 start: int = MIN_STEPS, max_steps: int = MAX_STEPS):
    """Smallest power-of-two multiple of ``start`` whose step doubling changes U by < tol.

    Returns (steps, U at 2*steps, measured change). The doubled result is
    the more accurate one and is what callers use.
    """
    n = start
    prev = PeriodIntegrator(spectrum, omega_d, n).propagate(ed)
    while n <= max_steps:
        nxt = PeriodIntegrator(spectrum, omega_d, 2 * n).propagate(ed)
        err = float(np.linalg.norm(nxt - prev, 2))
        if err < tol:
            return 2 * n, nxt, err
        prev = nxt
        n *= 2
    raise IntegrationError(f"step doubling did not reach {tol:g} within {max_steps} steps per period")


def _check(u: np.ndarray, limit: float = UNITARITY_LIMIT) -> float:
    defect = unitarity_defect(u)
    if not defect <= limit:
        raise IntegrationError(f"unitarity defect {defect:.3g} exceeds {limit:g}")
    return defect


def one_period_propagator(spectrum: Spectrum, drive: DriveSpec, steps: int | None = None,
                          tol: float = DEFAULT_TOL) -> Propagator:
    """Propagator over one drive period T = 1/omega_d, starting at drive phase zero.

    With ``steps=None`` the step count is picked by doubling until the
    change in U falls below ``tol``. A unitarity defect above 1e-6 raises.
    """
    ed = drive.ed(spectrum)
    if ed == 0.0:
        u = np.diag(np.exp(-1j * TWO_PI * np.asarray(spectrum.energies) / drive.omega_d))
        return Propagator(u, 0, unitarity_defect(u), 0.0)
    if steps is None:
        n, u, err = choose_steps(spectrum, drive.omega_d, ed, tol)
    else:
        n = int(steps)
        u = PeriodIntegrator(spectrum, drive.omega_d, n).propagate(ed)
        err = math.nan
    return Propagator(u, n, _check(u), err)


@dataclass(frozen=True)
class FloquetSet:
    """Quasienergies (GHz, zone (-w_d/2, w_d/2]) and orthonormal modes as columns.

    Modes are ordered by a maximal-overlap matching to the undriven
    eigenstates, so at zero drive mode k is eigenstate k.
    """

    quasienergies: np.ndarray
    modes: np.ndarray
    omega_d: float
    xi: float
    ng: float
    eigenvalues: np.ndarray
    degenerate: tuple = ()

    @property
    def xi2(self) -> float:
        return self.xi * self.xi


def reduce_to_zone(eps, omega_d: float):
    """Map quasienergies into (-omega_d/2, omega_d/2]."""
    half = omega_d / 2.0
    return half - np.mod(half - np.asarray(eps, dtype=float), omega_d)


def floquet_modes(u: np.ndarray, omega_d: float, xi: float = math.nan, ng: float = math.nan,
                  degeneracy_tol: float = 1e-12) -> FloquetSet:
    """Eigen-decompose a one-period propagator.

    The complex Schur form of a unitary matrix is diagonal, so its Schur
    vectors are orthonormal eigenvectors even at near-degeneracies.
    """
    t, z = linalg.schur(u, output="complex")
    lam = np.diag(t).copy()
    cost = -np.abs(z) ** 2
    _, order = linear_sum_assignment(cost)
    z = z[:, order]
    lam = lam[order]
    eps = reduce_to_zone(-np.angle(lam) * omega_d / TWO_PI, omega_d)
    degenerate = []
    for i in range(len(lam)):
        for j in range(i + 1, len(lam)):
            if abs(lam[i] - lam[j]) < degeneracy_tol:
                degenerate.append((i, j))
    return FloquetSet(eps, z, float(omega_d), float(xi), float(ng), lam, tuple(degenerate))


@dataclass(frozen=True)
class ModeTable:
    """Floquet sets along an increasing xi^2 grid at fixed omega_d and n_g."""

    xi2: np.ndarray
    sets: tuple
    omega_d: float
    ng: float
    steps: int = 0
    defects: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        x = np.asarray(self.xi2)
        if len(x) != len(self.sets):
            raise ValueError("grid and Floquet sets differ in length")
        if np.any(np.diff(x) <= 0):
            raise ValueError("amplitude grid must be strictly increasing")

    def __len__(self):
        return len(self.sets)

    def overlaps_with_bare(self) -> np.ndarray:
        """Array [grid, mode, bare] of squared overlaps."""
        return np.stack([np.abs(fs.modes.T) ** 2 for fs in self.sets])

    def write_csv(self, path: str | Path, header: dict | None = None) -> None:
        k = self.sets[0].modes.shape[0]
        with open(path, "w", newline="") as fh:
            for key, v in (header or {}).items():
                fh.write(f"# {key}: {v}\n")
            w = csv.writer(fh)
            w.writerow(["xi2", "mode_index", "quasienergy_ghz"] + [f"overlap_{j}" for j in range(k)])
            for x2, fs in zip(self.xi2, self.sets):
                ov = np.abs(fs.modes) ** 2
                for m in range(fs.modes.shape[1]):
                    w.writerow([repr(float(x2)), m, repr(float(fs.quasienergies[m]))]
                               + [f"{p:.12g}" for p in ov[:, m]])


def _ed_grid(spectrum: Spectrum, omega_d: float, xi2: np.ndarray) -> np.ndarray:
    return np.array([amplitude_from_xi(math.sqrt(v), omega_d, spectrum, warn=False) for v in xi2])


def amplitude_sweep(spectrum: Spectrum, omega_d: float, xi2_grid: Sequence[float],
                    ng: float | None = None, steps: int | None = None,
                    tol: float = DEFAULT_TOL, jobs: int = 1) -> ModeTable:
    """Floquet sets on a xi^2 grid starting at zero.

    One step count, chosen at the largest amplitude, is used for the whole
    grid so neighbouring points share discretisation error.
    """
    xi2 = np.asarray(xi2_grid, dtype=float)
    if len(xi2) == 0 or xi2[0] != 0.0:
        raise ValueError("amplitude grid must start at xi^2 = 0")
    if ng is None:
        ng = spectrum.circuit.ng if spectrum.circuit is not None else 0.0
    eds = _ed_grid(spectrum, omega_d, xi2)
    if steps is None:
        steps = choose_steps(spectrum, omega_d, eds[-1], tol)[0] if len(xi2) > 1 else MIN_STEPS
    if jobs > 1 and len(xi2) > 2:
        chunks = np.array_split(np.arange(len(xi2)), jobs)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = pool.map(_propagate_chunk, [(spectrum, omega_d, steps, eds[c]) for c in chunks])
            mats = [m for part in parts for m in part]
    else:
        mats = _propagate_chunk((spectrum, omega_d, steps, eds))
    sets, defects = [], []
    for x2, u in zip(xi2, mats):
        defects.append(_check(u))
        sets.append(floquet_modes(u, omega_d, math.sqrt(x2), ng))
    return ModeTable(xi2, tuple(sets), float(omega_d), float(ng), int(steps), np.array(defects))


def _propagate_chunk(args):
    spectrum, omega_d, steps, eds = args
    integ = PeriodIntegrator(spectrum, omega_d, steps)
    static = np.diag(np.exp(-1j * TWO_PI * np.asarray(spectrum.energies) / omega_d))
    return [static if ed == 0.0 else integ.propagate(ed) for ed in eds]


def floquet_power(fs: FloquetSet, n: int) -> np.ndarray:
    """U(T)^n rebuilt from unit-modulus eigenvalues, exactly unitary."""
    lam = fs.eigenvalues / np.abs(fs.eigenvalues)
    return (fs.modes * lam**n) @ fs.modes.conj().T


@dataclass(frozen=True)
class Evolution:
    times: np.ndarray
    populations: np.ndarray
    norm_deviation: float
    steps: int


def time_evolve(spectrum: Spectrum, drive: DriveSpec, initial=0, duration: float = 1000.0,
                samples: int = 201, steps: int | None = None, tol: float = DEFAULT_TOL) -> Evolution:
    """Coherent populations of the undriven levels at evenly spaced times (ns).

    Whole periods are taken from the Floquet decomposition of U(T); the
    remainder of each sample time is integrated directly.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if samples < 2:
        raise ValueError("need at least two samples")
    idx = initial if isinstance(initial, (int, np.integer)) and not spectrum.is_coupled \
        else spectrum.index_of(initial)
    ed = drive.ed(spectrum)
    prop = one_period_propagator(spectrum, drive, steps, tol)
    fs = floquet_modes(prop.matrix, drive.omega_d)
    integ = PeriodIntegrator(spectrum, drive.omega_d, max(prop.steps, MIN_STEPS))
    psi0 = np.zeros(spectrum.count, dtype=complex)
    psi0[idx] = 1.0
    times = np.linspace(0.0, duration, samples)
    period = 1.0 / drive.omega_d
    states = []
    for t in times:
        n = int(math.floor(t / period + 1e-12))
        rest = t - n * period
        psi = floquet_power(fs, n) @ psi0
        if rest > 1e-12 * period and ed != 0.0:
            psi = integ.propagate(ed, duration=rest) @ psi
        elif rest > 1e-12 * period:
            psi = np.exp(-1j * TWO_PI * np.asarray(spectrum.energies) * rest) * psi
        states.append(psi)
    states = np.array(states)
    if spectrum.is_coupled:
        amps = states @ spectrum.states.T
        tl = spectrum.bare_labels
        nt = max(b[0] for b in tl) + 1
        probs = np.zeros((samples, nt))
        for b, lab in enumerate(tl):
            probs[:, lab[0]] += np.abs(amps[:, b]) ** 2
    else:
        probs = np.abs(states) ** 2
    norm_dev = float(np.max(np.abs(np.sum(np.abs(states) ** 2, axis=1) - 1.0)))
    return Evolution(times, probs, norm_dev, prop.steps)
