"""Branch analysis: follow Floquet modes along an amplitude sweep."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .circuit import Spectrum
from .floquet import ModeTable, amplitude_sweep

AMBIGUOUS_OVERLAP = 0.5
EXHAUSTIVE_LIMIT = 7


@dataclass(frozen=True)
class SwapEvent:
    """Two branches exchanging character; ``xi2`` is the bracket midpoint."""

    xi2: float
    branches: tuple
    overlap_drop: float
    width: float
    characters: tuple = ()


@dataclass
class BranchSet:
    """Branches labelled by the undriven state they start from.

    ``assignment[k, i]`` is the mode index of branch i at grid point k.
    """

    xi2: np.ndarray
    assignment: np.ndarray
    modes: np.ndarray
    quasienergies: np.ndarray
    step_overlap: np.ndarray
    omega_d: float
    ng: float
    ambiguous: list = field(default_factory=list)
    mean_quanta: np.ndarray | None = None
    swaps: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return self.assignment.shape[1]

    def branch(self, i: int):
        return list(zip(self.xi2, self.modes[:, i], self.quasienergies[:, i]))

    def dominant_character(self) -> np.ndarray:
        """Index of the largest undriven-state component of each branch mode."""
        return np.argmax(np.abs(self.modes) ** 2, axis=2)

    def write_csv(self, path: str | Path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            for key, v in (header or {}).items():
                fh.write(f"# {key}: {v}\n")
            w = csv.writer(fh)
            w.writerow(["xi2", "branch", "N", "quasienergy_ghz"])
            nq = self.mean_quanta
            for k, x2 in enumerate(self.xi2):
                for i in range(self.count):
                    nval = "" if nq is None else f"{nq[k, i]:.12g}"
                    w.writerow([repr(float(x2)), i, nval, repr(float(self.quasienergies[k, i]))])


def _match(ov: np.ndarray) -> np.ndarray:
    """Greedy descending-overlap matching, repaired exhaustively where it conflicts.

    ``ov[i, m]`` is the overlap of branch i with candidate mode m. A branch
    is conflicted when greedy denies it its best mode; those branches, the
    branches holding the modes they wanted, and the modes greedy handed all
    of them are re-matched optimally.
    """
    k = ov.shape[0]
    order = np.argsort(-ov, axis=None, kind="stable")
    assign = np.full(k, -1)
    taken = np.zeros(k, dtype=bool)
    for flat in order:
        i, m = divmod(int(flat), k)
        if assign[i] < 0 and not taken[m]:
            assign[i] = m
            taken[m] = True
    best = np.argmax(ov, axis=1)
    owner = np.empty(k, dtype=int)
    owner[assign] = np.arange(k)
    # Close the conflicted set over the holders of the modes its members want.
    group = set(np.flatnonzero(assign != best).tolist())
    frontier = list(group)
    while frontier:
        holder = int(owner[best[frontier.pop()]])
        if holder not in group:
            group.add(holder)
            frontier.append(holder)
    bad = np.array(sorted(group), dtype=int)
    if len(bad) > 1:
        cols = assign[bad]
        sub = ov[np.ix_(bad, cols)]
        if len(bad) <= EXHAUSTIVE_LIMIT:
            perm = max(itertools.permutations(range(len(bad))),
                       key=lambda p: (sum(sub[r, c] for r, c in enumerate(p)), tuple(-c for c in p)))
            assign[bad] = cols[list(perm)]
        else:
            r, c = linear_sum_assignment(-sub)
            assign[bad[r]] = cols[c]
    return assign


def track_branches(table: ModeTable, spectrum: Spectrum | None = None) -> BranchSet:
    """Label the modes at each amplitude by continuity with the previous amplitude.

    Steps whose best overlap falls below 0.5 are recorded in ``ambiguous``
    as (grid index, branch); refine the grid around them.
    """
    if table.xi2[0] != 0.0:
        raise ValueError("branch tracking must start from zero drive")
    npts = len(table)
    k = table.sets[0].modes.shape[1]
    seed = np.abs(table.sets[0].modes) ** 2
    assign = np.zeros((npts, k), dtype=int)
    assign[0] = _match(seed.T)
    modes = np.empty((npts, k, table.sets[0].modes.shape[0]), dtype=complex)
    qe = np.empty((npts, k))
    step_ov = np.ones((npts, k))
    modes[0] = table.sets[0].modes[:, assign[0]].T
    qe[0] = table.sets[0].quasienergies[assign[0]]
    ambiguous = []
    for s in range(1, npts):
        fs = table.sets[s]
        ov = np.abs(modes[s - 1].conj() @ fs.modes) ** 2
        a = _match(ov)
        assign[s] = a
        modes[s] = fs.modes[:, a].T
        qe[s] = fs.quasienergies[a]
        step_ov[s] = ov[np.arange(k), a]
        for i in np.flatnonzero(ov.max(axis=1) < AMBIGUOUS_OVERLAP):
            ambiguous.append((s, int(i)))
    bs = BranchSet(np.asarray(table.xi2, dtype=float), assign, modes, qe, step_ov,
                   table.omega_d, table.ng, ambiguous)
    bs.mean_quanta = mean_quanta(bs, spectrum)
    bs.swaps = detect_swaps(bs)
    return bs


def quanta_weights(spectrum: Spectrum | None, dim: int) -> np.ndarray:
    """Transmon excitation number carried by each undriven eigenstate.

    For a coupled spectrum the weight of a dressed state is its mean
    transmon quantum number over the product basis.
    """
    if spectrum is None or not spectrum.is_coupled:
        return np.arange(dim, dtype=float)
    t = np.array([b[0] for b in spectrum.bare_labels], dtype=float)
    return (np.abs(spectrum.states) ** 2).T @ t


def mean_quanta(branches: BranchSet, spectrum: Spectrum | None = None) -> np.ndarray:
    """N_i(xi^2) = sum_j j |<j|mode_i>|^2 as an array [grid, branch]."""
    w = quanta_weights(spectrum, branches.modes.shape[2])
    if spectrum is not None and spectrum.is_coupled:
        # Project onto the product basis so transmon quanta are exact.
        t = np.array([b[0] for b in spectrum.bare_labels], dtype=float)
        amp = branches.modes @ spectrum.states.T
        return np.abs(amp) ** 2 @ t
    return np.abs(branches.modes) ** 2 @ w


def detect_swaps(branches: BranchSet, window: float = 0.05, min_change: float = 1.0) -> list[SwapEvent]:
    """Find pairs of branches whose mean-quanta curves cross and trade places.

    A crossing of N_i and N_j between grid points k and k+1 counts as a swap
    when, across ``window`` in xi^2 on each side (clipped at neighbouring
    crossings of the same pair), one curve rises and the other falls by at
    least ``min_change`` quanta, and the two branches trade their dominant
    undriven-state character over the same span.
    """
    nq = branches.mean_quanta
    if nq is None:
        nq = mean_quanta(branches)
    npts, k = nq.shape
    if npts < 2:
        return []
    x = branches.xi2
    char = branches.dominant_character()
    events = []
    for i in range(k):
        for j in range(i + 1, k):
            diff = nq[:, i] - nq[:, j]
            flips = np.flatnonzero(np.sign(diff[:-1]) * np.sign(diff[1:]) < 0)
            for f, s in enumerate(flips):
                left = x[s] - window if f == 0 else max(x[s] - window, 0.5 * (x[flips[f - 1] + 1] + x[s]))
                right = x[s + 1] + window if f == len(flips) - 1 else \
                    min(x[s + 1] + window, 0.5 * (x[s + 1] + x[flips[f + 1]]))
                lo = int(np.searchsorted(x, left, side="left"))
                hi = int(np.searchsorted(x, right, side="right")) - 1
                lo, hi = min(lo, s), max(hi, s + 1)
                di = nq[hi, i] - nq[lo, i]
                dj = nq[hi, j] - nq[lo, j]
                if di * dj >= 0 or min(abs(di), abs(dj)) < min_change:
                    continue
                ci, cj = (char[lo, i], char[hi, i]), (char[lo, j], char[hi, j])
                if not (ci[0] == cj[1] and cj[0] == ci[1] and ci[0] != cj[0]):
                    continue
                # Weight each branch loses on the character it carried before the event.
                drop = max(abs(branches.modes[lo, b, c]) ** 2 - abs(branches.modes[hi, b, c]) ** 2
                           for b, c in ((i, ci[0]), (j, cj[0])))
                events.append(SwapEvent(
                    xi2=0.5 * (x[s] + x[s + 1]), branches=(i, j), overlap_drop=float(drop),
                    width=float(x[s + 1] - x[s]),
                    characters=((int(char[lo, i]), int(char[hi, i])),
                                (int(char[lo, j]), int(char[hi, j])))))
    events.sort(key=lambda e: (e.xi2, e.branches))
    return events


def branch_analysis(spectrum: Spectrum, omega_d: float, xi2_max: float, step: float = 0.005,
                    refine_levels: int = 3, **sweep_kwargs) -> BranchSet:
    """Sweep and track with local grid refinement wherever tracking is ambiguous."""
    n = int(round(xi2_max / step))
    grid = np.linspace(0.0, n * step, n + 1)
    table = amplitude_sweep(spectrum, omega_d, grid, **sweep_kwargs)
    bs = track_branches(table, spectrum)
    for _ in range(refine_levels):
        if not bs.ambiguous:
            break
        bad = sorted({s for s, _ in bs.ambiguous})
        extra = np.array([0.5 * (table.xi2[s - 1] + table.xi2[s]) for s in bad])
        sweep_kwargs["steps"] = table.steps
        added = amplitude_sweep(spectrum, omega_d, np.concatenate([[0.0], extra]), **sweep_kwargs)
        merged = sorted(zip(table.xi2, table.sets, table.defects), key=lambda r: r[0])
        merged += list(zip(added.xi2[1:], added.sets[1:], added.defects[1:]))
        merged.sort(key=lambda r: r[0])
        table = ModeTable(np.array([r[0] for r in merged]), tuple(r[1] for r in merged),
                          table.omega_d, table.ng, table.steps, np.array([r[2] for r in merged]))
        bs = track_branches(table, spectrum)
    return bs
