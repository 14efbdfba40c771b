"""Ideal-displaced-state fits and the hybridization parameter Theta.

The ideal displaced state of level j is a low-order polynomial in xi and in
the drive-frequency offset, fitted to Floquet-mode amplitudes only where the
mode still resembles its reference. Theta = 1 - |<mode|ideal>|^2 then stays
near zero under pure Stark deformation and grows where a resonance mixes
the mode with another level.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .circuit import CircuitSpec, ResonatorSpec, coupled_spectrum, transmon_spectrum
from .floquet import DEFAULT_TOL, ModeTable, amplitude_sweep

DEFAULT_DEGREES = (4, 2)
DEFAULT_CUTOFF = 0.8
DEFAULT_WINDOW = 5
MAX_PARTITION_XI2 = 0.5
TRIGGER_RUN = 3
SHARED_WEIGHT = 0.2


class FitRejected(ValueError):
    """Too few qualifying points to determine the polynomial coefficients."""


class OutsideDomain(ValueError):
    """Evaluation requested outside the fitted (xi, omega_d) domain."""


def default_ng_samples(count: int = 9) -> np.ndarray:
    """Uniform offsets over [0, 0.5]; the spectrum is symmetric under n_g -> 1 - n_g."""
    return np.linspace(0.0, 0.5, count)


@dataclass(frozen=True)
class Partition:
    xi2_lo: float
    xi2_hi: float
    coeffs: np.ndarray  # [xi power, omega power, basis state]
    points: int


@dataclass(frozen=True)
class DisplacedStateModel:
    """Piecewise polynomial model of the ideal displaced state of level ``j``.

    ``omega_c`` and ``omega_scale`` map the drive frequency to the
    polynomial variable (omega_d - omega_c) / omega_scale.
    """

    j: int
    partitions: tuple
    degrees: tuple
    cutoff: float
    omega_c: float
    omega_scale: float
    omega_range: tuple
    dim: int

    @property
    def boundaries(self) -> tuple:
        return tuple(p.xi2_lo for p in self.partitions[1:])

    @property
    def xi2_range(self) -> tuple:
        return (self.partitions[0].xi2_lo, self.partitions[-1].xi2_hi)

    def _partition(self, xi2: float) -> Partition:
        for p in self.partitions:
            if xi2 <= p.xi2_hi:
                return p
        return self.partitions[-1]

    def evaluate(self, xi: float, omega_d: float, normalize: bool = True,
                 check: bool = True) -> np.ndarray:
        xi2 = xi * xi
        lo, hi = self.xi2_range
        wlo, whi = self.omega_range
        slack = 1e-9
        if check and not (lo - slack <= xi2 <= hi + slack and wlo - slack <= omega_d <= whi + slack):
            raise OutsideDomain(f"(xi^2={xi2:.4g}, omega_d={omega_d:.6g}) lies outside the fit domain")
        p = self._partition(xi2)
        basis = _monomials(np.array([xi]), np.array([(omega_d - self.omega_c) / self.omega_scale]),
                           self.degrees)[0]
        vec = np.tensordot(basis, p.coeffs, axes=([0, 1], [0, 1]))
        if normalize:
            nrm = np.linalg.norm(vec)
            if nrm == 0:
                raise FitRejected("displaced state evaluates to the zero vector")
            vec = vec / nrm
        return vec


def _monomials(xi: np.ndarray, w: np.ndarray, degrees) -> np.ndarray:
    kx, kw = degrees
    px = xi[:, None] ** np.arange(kx + 1)[None, :]
    pw = w[:, None] ** np.arange(kw + 1)[None, :]
    return px[:, :, None] * pw[:, None, :]


def theta(mode: np.ndarray, model: DisplacedStateModel, at: tuple[float, float]) -> float:
    """1 - |<mode|ideal>|^2 at (xi, omega_d); both vectors are normalised."""
    ideal = model.evaluate(*at)
    m = np.asarray(mode)
    ov = abs(np.vdot(ideal, m)) ** 2 / np.vdot(m, m).real
    return float(min(1.0, max(0.0, 1.0 - ov)))


def _select(modes: np.ndarray, ref: np.ndarray):
    """Best-matching mode aligned in phase to ``ref``, with its overlap and the runner-up."""
    amp = ref.conj() @ modes
    ov = np.abs(amp) ** 2 / (np.vdot(ref, ref).real * np.sum(np.abs(modes) ** 2, axis=0))
    order = np.argsort(-ov, kind="stable")
    m = order[0]
    phase = amp[m] / abs(amp[m]) if abs(amp[m]) > 0 else 1.0
    second = ov[order[1]] if len(order) > 1 else 0.0
    return modes[:, m] * np.conj(phase), ov[m], second


def _solve(xi, w, targets, degrees, anchor=None):
    """Least-squares coefficients [xi power, omega power, state].

    With ``anchor`` the xi^0 terms are pinned to that state, so the model
    reproduces the undriven state exactly at xi = 0 for every frequency.
    """
    kx, kw = degrees
    shape = (kx + 1, kw + 1, targets.shape[1])
    first = 0 if anchor is None else 1
    full = np.zeros(shape, dtype=complex)
    if anchor is not None:
        full[0, 0] = anchor
        targets = targets - anchor[None, :]
    if first > kx:
        return full
    design = _monomials(xi, w, degrees)[:, first:, :].reshape(len(xi), -1)
    ncoef = design.shape[1]
    if len(xi) < ncoef:
        raise FitRejected(f"{len(xi)} qualifying points for {ncoef} coefficients")
    # Column scaling keeps the normal equations well conditioned.
    scale = np.max(np.abs(design), axis=0)
    scale[scale == 0] = 1.0
    sol, *_ = np.linalg.lstsq(design / scale, targets, rcond=None)
    full[first:] = (sol / scale[:, None]).reshape(kx + 1 - first, kw + 1, -1)
    return full


def _solve_reducing(xi, w, targets, degrees, anchor=None):
    """Fit at ``degrees``, lowering the xi degree (then omega) when points are scarce.

    Lower-degree coefficients are zero-padded to the full shape.
    """
    if len(xi) == 0:
        raise FitRejected("no qualifying points in partition")
    kx, kw = degrees
    while True:
        try:
            sub = _solve(xi, w, targets, (kx, kw), anchor)
        except FitRejected:
            if kx > 0:
                kx -= 1
            elif kw > 0:
                kw -= 1
            else:
                raise
            continue
        full = np.zeros((degrees[0] + 1, degrees[1] + 1, targets.shape[1]), dtype=complex)
        full[:kx + 1, :kw + 1] = sub
        return full


def fit_displaced_state(sweeps: Sequence[ModeTable], j: int, cutoff: float = DEFAULT_CUTOFF,
                        degrees: tuple = DEFAULT_DEGREES, omega_c: float | None = None,
                        max_partition: float = MAX_PARTITION_XI2) -> DisplacedStateModel:
    """Fit the ideal displaced state of level ``j`` over a set of amplitude sweeps.

    Amplitudes are processed upward in partitions. Inside a partition every
    mode is compared with a fixed reference: the bare state at first, then
    the previous partition's fit at the partition start. Points whose best
    overlap is below ``cutoff`` are left out of the fit. A new partition
    opens after ``max_partition`` in xi^2, or earlier when the overlap on
    the central sweep stays below ``cutoff`` for three consecutive points
    without the weight being shared by a second mode (a resonance). The
    first partition's xi^0 terms are pinned to the bare state.
    """
    if not sweeps:
        raise ValueError("no sweeps given")
    xi2 = np.asarray(sweeps[0].xi2, dtype=float)
    if xi2[0] != 0.0:
        raise ValueError("fit region must include xi = 0")
    for t in sweeps:
        if len(t.xi2) != len(xi2) or np.any(np.asarray(t.xi2) != xi2):
            raise ValueError("all sweeps must share one amplitude grid")
    omegas = np.array([t.omega_d for t in sweeps])
    centre = len(sweeps) // 2
    if omega_c is None:
        omega_c = float(omegas[centre])
    span = float(np.max(np.abs(omegas - omega_c)))
    omega_scale = span if span > 0 else 1.0
    kx, kw = degrees
    kw = min(kw, len(np.unique(omegas)) - 1)
    degrees = (kx, kw)
    dim = sweeps[0].sets[0].modes.shape[0]
    wvar = (omegas - omega_c) / omega_scale
    xi = np.sqrt(xi2)

    ref = np.zeros(dim, dtype=complex)
    ref[j] = 1.0
    refs = [ref] * len(sweeps)
    partitions = []
    start = 0
    npts = len(xi2)
    while start < npts:
        rows = []
        run = 0
        stop = start
        while stop < npts:
            if stop > start and xi2[stop] - xi2[start] > max_partition + 1e-12:
                break
            _, ov, second = _select(sweeps[centre].sets[stop].modes, refs[centre])
            if ov < cutoff and second < SHARED_WEIGHT:
                run += 1
            else:
                run = 0
            if run >= TRIGGER_RUN and stop - TRIGGER_RUN + 1 > start + 1:
                stop = stop - TRIGGER_RUN + 1
                rows = [r for r in rows if r < stop]
                break
            rows.append(stop)
            stop += 1
        xs, ws, ys = [], [], []
        for c, t in enumerate(sweeps):
            for r in rows:
                vec, ov, _ = _select(t.sets[r].modes, refs[c])
                if ov >= cutoff:
                    xs.append(xi[r])
                    ws.append(wvar[c])
                    ys.append(vec)
        coeffs = _solve_reducing(np.array(xs), np.array(ws), np.array(ys).reshape(len(ys), dim),
                                 degrees, ref if not partitions else None)
        lo = xi2[start] if not partitions else partitions[-1].xi2_hi
        hi = xi2[rows[-1]]
        partitions.append(Partition(float(lo), float(hi), coeffs, len(xs)))
        if stop >= npts:
            break
        # References for the next partition: this fit at its last amplitude.
        model = DisplacedStateModel(j, tuple(partitions), degrees, cutoff, omega_c, omega_scale,
                                    (float(omegas.min()), float(omegas.max())), dim)
        refs = [model.evaluate(xi[rows[-1]], w, check=False) for w in omegas]
        start = stop
    return DisplacedStateModel(j, tuple(partitions), degrees, cutoff, float(omega_c), omega_scale,
                               (float(omegas.min()), float(omegas.max())), dim)


def theta_column(table: ModeTable, model: DisplacedStateModel) -> np.ndarray:
    """Theta along one sweep, using the mode that best matches the model at each point."""
    out = np.empty(len(table))
    for r, fs in enumerate(table.sets):
        ideal = model.evaluate(math.sqrt(table.xi2[r]), table.omega_d)
        ov = np.abs(ideal.conj() @ fs.modes) ** 2
        out[r] = 1.0 - ov.max()
    return np.clip(out, 0.0, 1.0)


# --- landscapes --------------------------------------------------------------------------


@dataclass
class LandscapeGrid:
    """Theta(j) on an (n_g, xi^2, omega_d) grid; NaN marks a failed column."""

    omega_d: np.ndarray
    xi2: np.ndarray
    ng: np.ndarray
    theta: np.ndarray
    j: int
    failures: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def averaged(self) -> np.ndarray:
        """Mean over n_g samples with failed columns left out; [xi2, omega_d]."""
        valid = np.isfinite(self.theta)
        count = valid.sum(axis=0)
        total = np.where(valid, self.theta, 0.0).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(count > 0, total / np.maximum(count, 1), np.nan)

    def covers(self, omega_d: float) -> bool:
        return bool(self.omega_d[0] <= omega_d <= self.omega_d[-1])

    def sample(self, omega_d, xi2) -> np.ndarray:
        """Bilinear interpolation of the averaged map; NaN outside the grid."""
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator((self.xi2, self.omega_d), self.averaged,
                                         bounds_error=False, fill_value=np.nan)
        pts = np.column_stack([np.ravel(xi2), np.ravel(omega_d)])
        return interp(pts)

    def write_csv(self, path: str | Path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}: {v}\n")
            w = csv.writer(fh)
            w.writerow(["omega_d_ghz", "xi2", "ng", "theta"])
            for a, ng in enumerate(self.ng):
                for r, x2 in enumerate(self.xi2):
                    for c, wd in enumerate(self.omega_d):
                        val = self.theta[a, r, c]
                        w.writerow([repr(float(wd)), repr(float(x2)), repr(float(ng)),
                                    "nan" if not np.isfinite(val) else repr(float(val))])

    @classmethod
    def read_csv(cls, path: str | Path, j: int = 1) -> LandscapeGrid:
        """Inverse of :meth:`write_csv`; comment lines are skipped."""
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(ln for ln in fh if not ln.startswith("#"))]
        if not rows or rows[0] != ["omega_d_ghz", "xi2", "ng", "theta"]:
            raise ValueError(f"{path}: header must be omega_d_ghz,xi2,ng,theta")
        arr = np.array([[float(v) for v in r] for r in rows[1:] if r])
        ws, xs, ngs = (np.unique(arr[:, k]) for k in range(3))
        if len(ws) * len(xs) * len(ngs) != len(arr):
            raise ValueError(f"{path}: rows do not form a complete grid")
        theta_arr = np.full((len(ngs), len(xs), len(ws)), np.nan)
        theta_arr[np.searchsorted(ngs, arr[:, 2]), np.searchsorted(xs, arr[:, 1]),
                  np.searchsorted(ws, arr[:, 0])] = arr[:, 3]
        return cls(ws, xs, ngs, theta_arr, j)

    def write_averaged_csv(self, path: str | Path, header: dict | None = None) -> None:
        avg = self.averaged
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}: {v}\n")
            w = csv.writer(fh)
            w.writerow(["omega_d_ghz", "xi2", "stark_norm", "theta_avg"])
            for r, x2 in enumerate(self.xi2):
                for c, wd in enumerate(self.omega_d):
                    val = avg[r, c]
                    w.writerow([repr(float(wd)), repr(float(x2)), repr(float(x2) / 2.0),
                                "nan" if not np.isfinite(val) else repr(float(val))])


def _spectrum_for(spec: CircuitSpec, resonator: ResonatorSpec | None, count: int | None):
    if resonator is None:
        return transmon_spectrum(spec, count or 25)
    return coupled_spectrum(spec, resonator, count)


def _sweep_task(args):
    spec, resonator, count, omega_d, xi2, tol, steps = args
    spectrum = _spectrum_for(spec, resonator, count)
    try:
        return amplitude_sweep(spectrum, omega_d, xi2, spec.ng, steps=steps, tol=tol), None
    except Exception as exc:  # recorded per column, the grid carries on
        return None, f"{type(exc).__name__}: {exc}"


def compute_landscape(spec: CircuitSpec, omega_grid: Sequence[float], xi2_grid: Sequence[float],
                      ng_samples: Sequence[float] | None = None, j: int = 1,
                      resonator: ResonatorSpec | None = None, count: int | None = None,
                      cutoff: float = DEFAULT_CUTOFF, degrees: tuple = DEFAULT_DEGREES,
                      window: int = DEFAULT_WINDOW, tol: float = DEFAULT_TOL,
                      steps: int | None = None, jobs: int = 1) -> LandscapeGrid:
    """Theta(j) for every (n_g, xi^2, omega_d) plus its n_g average.

    Each column is fitted with the ``window`` nearest columns sharing one
    polynomial in the frequency offset. Columns whose sweep or fit fails are
    NaN and listed in ``failures``.
    """
    omegas = np.asarray(omega_grid, dtype=float)
    xi2 = np.asarray(xi2_grid, dtype=float)
    if omegas.size == 0 or xi2.size == 0:
        raise ValueError("grids must be nonempty")
    if np.any(np.diff(omegas) <= 0) or np.any(np.diff(xi2) <= 0):
        raise ValueError("grids must be strictly increasing")
    if xi2[0] != 0.0:
        raise ValueError("the xi^2 grid must start at 0")
    ngs = default_ng_samples() if ng_samples is None else np.asarray(ng_samples, dtype=float)
    tasks = [(spec.with_ng(ng), resonator, count, float(w), xi2, tol, steps) for ng in ngs for w in omegas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_sweep_task(t) for t in tasks]

    theta_arr = np.full((len(ngs), len(xi2), len(omegas)), np.nan)
    failures = []
    half = window // 2
    for a, ng in enumerate(ngs):
        tables = results[a * len(omegas):(a + 1) * len(omegas)]
        for c, w in enumerate(omegas):
            table, err = tables[c]
            if table is None:
                failures.append({"ng": float(ng), "omega_d": float(w), "reason": err})
                continue
            lo, hi = max(0, c - half), min(len(omegas), c + half + 1)
            group = [t for t, _ in tables[lo:hi] if t is not None]
            try:
                model = fit_displaced_state(group, j, cutoff, degrees, omega_c=float(w))
                theta_arr[a, :, c] = theta_column(table, model)
            except (FitRejected, np.linalg.LinAlgError, ValueError) as exc:
                failures.append({"ng": float(ng), "omega_d": float(w), "reason": f"{type(exc).__name__}: {exc}"})
    meta = {
        "ej_ghz": spec.ej, "ec_ghz": spec.ec, "charge_cutoff": spec.charge_cutoff,
        "levels": count or 25, "cutoff": cutoff, "degrees": list(degrees), "window": window,
        "tol": tol, "omega_r_ghz": None if resonator is None else resonator.omega_r,
        "g_ghz": None if resonator is None else resonator.g,
    }
    return LandscapeGrid(omegas, xi2, ngs, theta_arr, j, failures, meta)
