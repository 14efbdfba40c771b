"""Measured transition landscapes: ingestion, ridge extraction and classification.

A landscape is a grid over drive frequency (GHz) and normalised Stark shift
y = Delta/alpha, holding a transition probability. Ridges are traced by
linking per-row peaks across power rows; quasi-horizontal ridges, which
show up as plateaus along rows, are traced column-wise instead.

Mechanism labels:

* ``A``: the ridge holds a fixed Stark shift over a wide frequency span.
* ``B``: the ridge lies on a simulated Theta ridge of the same circuit.
* ``C``: anything else, with a spurious-mode attribution when one exists.
* ``unresolved``: the tests disagree.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks
from scipy.stats import theilslopes

from .circuit import Spectrum
from .environment import DEFAULT_TOLERANCE_MHZ, SpuriousModeRegistry, attribute_feature
from .hybridization import LandscapeGrid

LABELS = ("A", "B", "C", "unresolved")


class GridMismatchError(ValueError):
    """Measured and simulated landscapes share no drive-frequency range."""


@dataclass(frozen=True)
class MeasuredLandscape:
    """``prob[row, col]`` on axes ``stark_norm`` (rows) and ``omega_d`` (columns).

    ``mask`` is True where data must be ignored.
    """

    omega_d: np.ndarray
    stark_norm: np.ndarray
    prob: np.ndarray
    initial: int = 1
    mask: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.omega_d)
        y = np.asarray(self.stark_norm)
        p = np.asarray(self.prob)
        if p.shape != (len(y), len(w)):
            raise ValueError(f"prob has shape {p.shape}, expected {(len(y), len(w))}")
        if len(w) > 1 and not (np.all(np.diff(w) > 0)):
            raise ValueError("omega_d axis must be strictly increasing")
        if len(y) > 1 and not (np.all(np.diff(y) > 0)):
            raise ValueError("stark_norm axis must be strictly increasing")
        if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.initial not in (0, 1):
            raise ValueError("initial state tag must be 0 or 1")
        if self.mask is not None and np.asarray(self.mask).shape != p.shape:
            raise ValueError("mask shape differs from the grid")

    def masked_prob(self) -> np.ndarray:
        p = np.array(self.prob, dtype=float)
        if self.mask is not None:
            p[np.asarray(self.mask, dtype=bool)] = 0.0
        return p


def landscape_from_theta(grid: LandscapeGrid, initial: int = 1) -> MeasuredLandscape:
    """View an n_g-averaged Theta map as a landscape (y = xi^2 / 2)."""
    avg = np.nan_to_num(grid.averaged, nan=0.0)
    return MeasuredLandscape(grid.omega_d, grid.xi2 / 2.0, np.clip(avg, 0, 1), initial)


# --- file interface --------------------------------------------------------------------


def _mask_path(path: Path) -> Path:
    return path.with_name(path.stem + ".mask.csv")


def ingest_landscape(path: str | Path, mask_path: str | Path | None = None) -> MeasuredLandscape:
    """Read ``omega_d_ghz,stark_norm,prob`` rows plus an optional mask sidecar.

    A leading ``# initial_state: k`` comment sets the initial-state tag. The
    sidecar (default ``<stem>.mask.csv``) lists rectangles with columns
    ``omega_min_ghz,omega_max_ghz,stark_min,stark_max``.
    """
    path = Path(path)
    initial = 1
    rows = []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for ln in lines:
        if ln.startswith("#"):
            key, _, val = ln[1:].partition(":")
            if key.strip() == "initial_state":
                initial = int(val)
            continue
        body.append(ln)
    reader = csv.reader(body)
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:3]] != ["omega_d_ghz", "stark_norm", "prob"]:
        raise ValueError(f"{path}: header must be omega_d_ghz,stark_norm,prob")
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        try:
            w, y, p = (float(v) for v in rec[:3])
        except ValueError as exc:
            raise ValueError(f"{path}: malformed row {lineno}: {rec}") from exc
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"{path}: row {lineno}: probability {p} outside [0, 1]")
        rows.append((w, y, p))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.array(rows)
    ws = np.unique(arr[:, 0])
    ys = np.unique(arr[:, 1])
    if len(ws) * len(ys) != len(arr):
        raise ValueError(f"{path}: rows do not form a complete rectangular grid")
    prob = np.full((len(ys), len(ws)), np.nan)
    prob[np.searchsorted(ys, arr[:, 1]), np.searchsorted(ws, arr[:, 0])] = arr[:, 2]
    if np.isnan(prob).any():
        raise ValueError(f"{path}: duplicate grid points")
    mask = None
    mpath = Path(mask_path) if mask_path is not None else _mask_path(path)
    if mpath.exists():
        mask = np.zeros(prob.shape, dtype=bool)
        with open(mpath, newline="") as fh:
            for rec in csv.DictReader(fh):
                wlo, whi = float(rec["omega_min_ghz"]), float(rec["omega_max_ghz"])
                ylo, yhi = float(rec["stark_min"]), float(rec["stark_max"])
                mask |= ((ys[:, None] >= ylo) & (ys[:, None] <= yhi)
                         & (ws[None, :] >= wlo) & (ws[None, :] <= whi))
    return MeasuredLandscape(ws, ys, prob, initial, mask)


def export_landscape(land: MeasuredLandscape, path: str | Path,
                     mask_rects: Sequence[tuple] | None = None) -> None:
    """Write the landscape in the ingest format; ``mask_rects`` go to the sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# initial_state: {land.initial}\n")
        w = csv.writer(fh)
        w.writerow(["omega_d_ghz", "stark_norm", "prob"])
        for r, y in enumerate(land.stark_norm):
            for c, wd in enumerate(land.omega_d):
                w.writerow([repr(float(wd)), repr(float(y)), repr(float(land.prob[r, c]))])
    if mask_rects:
        with open(_mask_path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["omega_min_ghz", "omega_max_ghz", "stark_min", "stark_max"])
            for rect in mask_rects:
                w.writerow([repr(float(v)) for v in rect])


# --- ridges ------------------------------------------------------------------------------


@dataclass
class Feature:
    """A traced ridge.

    ``slope`` is d(stark_norm)/d(omega_d) in 1/GHz and ``intercept_ghz`` the
    drive frequency at zero power; both come from the low-power half.
    """

    name: str
    points: np.ndarray  # columns: omega_d, stark_norm, prob
    slope: float
    intercept_ghz: float
    orientation: str
    initial: int = 1
    label: str | None = None
    evidence: dict = field(default_factory=dict)
    attributions: list = field(default_factory=list)

    @property
    def omega_span(self) -> float:
        return float(np.ptp(self.points[:, 0]))

    @property
    def stark_span(self) -> float:
        return float(np.ptp(self.points[:, 1]))

    def to_record(self) -> dict:
        best = self.attributions[0] if self.attributions else None
        return {
            "feature": self.name,
            "label": self.label or "",
            "slope": f"{self.slope:.6g}",
            "intercept_ghz": f"{self.intercept_ghz:.6f}",
            "orientation": self.orientation,
            "evidence": ";".join(f"{k}={v}" for k, v in sorted(self.evidence.items())),
            "attribution": "" if best is None else
            f"l={best.line.l} m={best.line.m} n={best.line.n} mode={best.line.mode} "
            f"residual_mhz={best.residual_mhz:.2f}",
        }


def _refine(vals: np.ndarray, k: int) -> float:
    """Sub-cell peak position from a parabola through three samples."""
    if 0 < k < len(vals) - 1:
        a, b, c = vals[k - 1], vals[k], vals[k + 1]
        den = a - 2 * b + c
        if den < 0:
            return k + 0.5 * (a - c) / den
    return float(k)


def _scan_peaks(mat: np.ndarray, threshold: float, max_width: int):
    """Per-row peaks above ``threshold``; peaks sitting on wide plateaus are dropped."""
    out = []
    for r, row in enumerate(mat):
        idx, props = find_peaks(np.concatenate([[0.0], row, [0.0]]), height=threshold,
                                prominence=threshold / 2, width=(None, None), rel_height=0.5)
        kept = []
        for k, wid in zip(idx - 1, props["widths"]):
            if wid <= max_width:
                kept.append((_refine(row, k), float(row[k])))
        out.append(kept)
    return out


def _link(peaks, max_gap: int, tol: float, min_points: int):
    ridges = []  # each: list of (row, pos, value)
    active = []
    for r, row_peaks in enumerate(peaks):
        active = [rd for rd in active if r - rd[-1][0] <= max_gap + 1]
        cands = []
        for a, rd in enumerate(active):
            last_r, last_c, _ = rd[-1]
            if len(rd) >= 2:
                prev = rd[-min(len(rd), 4)]
                slope = (last_c - prev[1]) / (last_r - prev[0])
            else:
                slope = 0.0
            pred = last_c + slope * (r - last_r)
            lim = tol + (abs(slope) if len(rd) >= 2 else 1.5 * tol)
            for p, (pos, val) in enumerate(row_peaks):
                d = abs(pos - pred)
                if d <= lim:
                    cands.append((d, a, p))
        cands.sort()
        used_a, used_p = set(), set()
        for d, a, p in cands:
            if a in used_a or p in used_p:
                continue
            used_a.add(a)
            used_p.add(p)
            active[a].append((r, *row_peaks[p]))
        for p, (pos, val) in enumerate(row_peaks):
            if p not in used_p:
                rd = [(r, pos, val)]
                active.append(rd)
                ridges.append(rd)
    return [rd for rd in ridges if len(rd) >= min_points]


def _interp_axis(axis: np.ndarray, pos: np.ndarray) -> np.ndarray:
    return np.interp(pos, np.arange(len(axis)), axis)


def _low_half(pts: np.ndarray) -> np.ndarray:
    ys = pts[:, 1]
    cut = np.median(ys)
    low = pts[ys <= cut]
    return low if len(low) >= 3 else pts


def _near(a: np.ndarray, b: np.ndarray, cells: float) -> np.ndarray:
    """For each point of ``a`` (grid-index coords), whether some point of ``b`` is within ``cells``."""
    if len(b) == 0:
        return np.zeros(len(a), dtype=bool)
    d = np.max(np.abs(a[:, None, :] - b[None, :, :]), axis=2)
    return d.min(axis=1) <= cells


def extract_ridges(land: MeasuredLandscape, prominence: float = 0.2, max_gap: int = 2,
                   link_tol: float = 3.0, min_points: int = 4, max_peak_width: int = 15,
                   horizontal_ratio: float = 0.2) -> list[Feature]:
    """Trace ridges and fit each with a Theil-Sen line on its low-power half.

    Row peaks are linked upward in power, tolerating gaps of ``max_gap``
    rows. Peaks wider than ``max_peak_width`` cells are plateaus of
    quasi-horizontal ridges; those are traced along columns instead and kept
    when their row extent stays below ``horizontal_ratio`` of their column
    extent.
    """
    if not 0 < prominence < 1:
        raise ValueError("prominence must lie in (0, 1)")
    p = land.masked_prob()
    ws, ys = np.asarray(land.omega_d, float), np.asarray(land.stark_norm, float)
    feats = []
    accepted_cells = np.zeros((0, 2))

    row_ridges = _link(_scan_peaks(p, prominence, max_peak_width), max_gap, link_tol, min_points)
    for rd in row_ridges:
        arr = np.array(rd)
        cells = np.column_stack([arr[:, 0], arr[:, 1]])
        pts = np.column_stack([_interp_axis(ws, arr[:, 1]), ys[arr[:, 0].astype(int)], arr[:, 2]])
        low = _low_half(pts)
        if np.ptp(low[:, 1]) == 0:
            continue
        b, a, _, _ = theilslopes(low[:, 0], low[:, 1])
        slope = 1.0 / b if b != 0 else math.inf
        feats.append(Feature("", pts, slope, float(a), "steep", land.initial))
        accepted_cells = np.vstack([accepted_cells, cells])

    col_ridges = _link(_scan_peaks(p.T, prominence, max_peak_width), max_gap, link_tol, min_points)
    for rd in col_ridges:
        arr = np.array(rd)
        cells = np.column_stack([arr[:, 1], arr[:, 0]])
        row_extent = np.ptp(arr[:, 1])
        col_extent = np.ptp(arr[:, 0])
        if row_extent > max(1.0, horizontal_ratio * col_extent):
            continue
        if np.mean(_near(cells, accepted_cells, 1.5)) >= 0.5:
            continue
        pts = np.column_stack([ws[arr[:, 0].astype(int)], _interp_axis(ys, arr[:, 1]), arr[:, 2]])
        d, c, _, _ = theilslopes(pts[:, 1], pts[:, 0])
        intercept = -c / d if d != 0 else math.nan
        feats.append(Feature("", pts, float(d), float(intercept), "horizontal", land.initial))
        accepted_cells = np.vstack([accepted_cells, cells])

    feats.sort(key=lambda f: (f.orientation, np.nan_to_num(f.intercept_ghz, nan=np.inf),
                              float(f.points[0, 1])))
    for k, f in enumerate(feats):
        f.name = f"F{k}"
    return feats


# --- classification ------------------------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    horizontal_stark: float = 0.02
    horizontal_span_ghz: float = 0.3
    theta_mean: float = 0.05
    intercept_mhz: float = 50.0
    attribution_mhz: float = DEFAULT_TOLERANCE_MHZ
    theta_prominence: float = 0.1
    coverage: float = 0.5


def _theta_ridges(grids: Sequence[LandscapeGrid], prominence: float) -> list[Feature]:
    out = []
    for g in grids:
        out.extend(extract_ridges(landscape_from_theta(g), prominence=prominence))
    return out


def classify_features(features: Sequence[Feature], theta_landscape: LandscapeGrid | Sequence[LandscapeGrid],
                      registry: SpuriousModeRegistry, spectrum: Spectrum,
                      thresholds: Thresholds = Thresholds()) -> list[Feature]:
    """Label each feature A, B, C or unresolved; returns labelled copies.

    A: Stark-shift variation below ``horizontal_stark`` over at least
    ``horizontal_span_ghz``. B: mean simulated Theta along the ridge above
    ``theta_mean`` and a simulated ridge intercept within ``intercept_mhz``.
    C: otherwise, with attributions from the registry. A high Theta without
    a matching simulated intercept, or a ridge outside the simulated
    frequency range, is unresolved.
    """
    grids = [theta_landscape] if isinstance(theta_landscape, LandscapeGrid) else list(theta_landscape)
    if features and grids:
        lo = min(g.omega_d[0] for g in grids)
        hi = max(g.omega_d[-1] for g in grids)
        if all(f.points[:, 0].max() < lo or f.points[:, 0].min() > hi for f in features) and \
                any(f.stark_span >= thresholds.horizontal_stark for f in features):
            raise GridMismatchError("no feature overlaps the simulated frequency range")
    sim_ridges = _theta_ridges(grids, thresholds.theta_prominence)
    out = []
    for f in features:
        g = replace(f, evidence={}, attributions=[])
        g.evidence["stark_span"] = round(f.stark_span, 6)
        g.evidence["omega_span_ghz"] = round(f.omega_span, 6)
        if f.stark_span < thresholds.horizontal_stark and f.omega_span >= thresholds.horizontal_span_ghz:
            g.label = "A"
            g.evidence["test"] = "quasi-horizontal"
            out.append(g)
            continue
        w, y = f.points[:, 0], f.points[:, 1]
        vals = np.full(len(w), np.nan)
        for grid in grids:
            hit = np.isnan(vals) & (w >= grid.omega_d[0]) & (w <= grid.omega_d[-1])
            if hit.any():
                vals[hit] = grid.sample(w[hit], 2.0 * y[hit])
        covered = np.isfinite(vals)
        if covered.mean() < thresholds.coverage:
            g.label = "unresolved"
            g.evidence["test"] = "outside simulated range"
            out.append(g)
            continue
        mean_theta = float(np.mean(vals[covered]))
        g.evidence["mean_theta"] = round(mean_theta, 6)
        match = [r for r in sim_ridges if math.isfinite(r.intercept_ghz)
                 and abs(r.intercept_ghz - f.intercept_ghz) * 1e3 < thresholds.intercept_mhz]
        if mean_theta > thresholds.theta_mean:
            if match:
                best = min(match, key=lambda r: abs(r.intercept_ghz - f.intercept_ghz))
                g.label = "B"
                g.evidence["test"] = "theta coincidence"
                g.evidence["sim_intercept_ghz"] = round(best.intercept_ghz, 6)
            else:
                g.label = "unresolved"
                g.evidence["test"] = "theta high without intercept match"
            out.append(g)
            continue
        atts = attribute_feature(f, spectrum, registry, thresholds.attribution_mhz)
        g.attributions = atts
        g.label = "C"
        g.evidence["test"] = "attributed" if atts else "unexplained extrinsic"
        out.append(g)
    return out


REPORT_FIELDS = ["feature", "label", "slope", "intercept_ghz", "orientation", "evidence", "attribution"]


def write_report(features: Sequence[Feature], path: str | Path, header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        w.writeheader()
        for f in features:
            w.writerow(f.to_record())
