"""Undriven transmon and transmon-resonator Hamiltonians.

Energies are ordinary frequencies in GHz (h = 1). The transmon is written in
the charge basis n = -N..N; the coupled model is built on the product of the
lowest transmon eigenstates and a truncated Fock space.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np
from scipy import linalg, optimize

# Label of a dressed state: a transmon index, a (transmon, resonator) pair,
# or None when no bare state dominates.
Label = Hashable

TRANSMON_LEVELS = 25
CONVERGENCE_TOL_GHZ = 1e-6


class TruncationError(ValueError):
    """Requested more states than the basis can represent faithfully."""


class ConvergenceError(RuntimeError):
    """A solver or a truncation check did not converge."""


@dataclass(frozen=True)
class CircuitSpec:
    """Transmon constants in GHz; ``charge_cutoff`` N gives 2N + 1 charge states."""

    ej: float
    ec: float
    ng: float = 0.0
    charge_cutoff: int = 40

    def __post_init__(self):
        if not (self.ej > 0 and self.ec > 0):
            raise ValueError(f"E_J and E_C must be positive, got {self.ej}, {self.ec}")
        if int(self.charge_cutoff) != self.charge_cutoff or self.charge_cutoff < 10:
            raise ValueError(f"charge_cutoff must be an integer >= 10, got {self.charge_cutoff}")
        if not math.isfinite(self.ng):
            raise ValueError("n_g must be finite")

    @property
    def n_zpf(self) -> float:
        return (self.ej / (32.0 * self.ec)) ** 0.25

    def with_ng(self, ng: float) -> CircuitSpec:
        return replace(self, ng=float(ng))


@dataclass(frozen=True)
class ResonatorSpec:
    omega_r: float
    g: float
    fock_cutoff: int = 5

    def __post_init__(self):
        if not self.omega_r > 0:
            raise ValueError(f"omega_r must be positive, got {self.omega_r}")
        if int(self.fock_cutoff) != self.fock_cutoff or self.fock_cutoff < 2:
            raise ValueError(f"fock_cutoff must be an integer >= 2, got {self.fock_cutoff}")


@dataclass(frozen=True)
class Hamiltonian:
    """A Hermitian matrix together with the charge operator in the same basis.

    ``bare_labels`` names each basis vector of the coupled product basis;
    it is empty for the charge basis.
    """

    matrix: np.ndarray
    charge: np.ndarray
    circuit: CircuitSpec
    resonator: ResonatorSpec | None = None
    bare_labels: tuple = ()
    transmon_levels: int = 0

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class Spectrum:
    """Lowest eigenpairs of an undriven Hamiltonian.

    ``states`` holds eigenvectors as columns in the construction basis and
    ``n_matrix`` the transmon charge operator in the eigenbasis.
    """

    energies: np.ndarray
    states: np.ndarray
    n_matrix: np.ndarray
    labels: dict = field(default_factory=dict)
    circuit: CircuitSpec | None = None
    resonator: ResonatorSpec | None = None
    bare_labels: tuple = ()
    conflicts: tuple = ()

    @property
    def count(self) -> int:
        return len(self.energies)

    @property
    def is_coupled(self) -> bool:
        return self.resonator is not None

    def index_of(self, label: Label) -> int:
        """Eigenstate index carrying ``label``."""
        for k, lab in self.labels.items():
            if lab == label:
                return k
        raise KeyError(f"no eigenstate labelled {label!r}")

    def transmon_energies(self) -> np.ndarray:
        """Energies of the transmon ladder with the resonator empty.

        For a coupled spectrum only the leading run of assigned (j, 0) labels
        is returned.
        """
        if not self.is_coupled:
            return np.asarray(self.energies, dtype=float)
        out = []
        j = 0
        while True:
            try:
                out.append(self.energies[self.index_of((j, 0))])
            except KeyError:
                break
            j += 1
        return np.asarray(out)

    @classmethod
    def from_levels(cls, energies_ghz: Sequence[float], circuit: CircuitSpec | None = None) -> Spectrum:
        """Label-only spectrum from a list of level energies (e.g. measured)."""
        e = np.asarray(energies_ghz, dtype=float)
        e = e - e[0]
        k = len(e)
        return cls(
            energies=e,
            states=np.eye(k, dtype=complex),
            n_matrix=np.zeros((k, k), dtype=complex),
            labels={j: j for j in range(k)},
            circuit=circuit,
        )


def _charge_hamiltonian(spec: CircuitSpec, cutoff: int | None = None):
    # Charge states k-N..k+N centred on k = round(n_g).
    n_cut = spec.charge_cutoff if cutoff is None else cutoff
    n = np.arange(-n_cut, n_cut + 1, dtype=float) + round(spec.ng)
    dn = n - spec.ng
    h = np.diag(4.0 * spec.ec * dn**2)
    off = np.full(2 * n_cut, -spec.ej / 2.0)
    h += np.diag(off, 1) + np.diag(off, -1)
    return h.astype(complex), np.diag(dn).astype(complex)


def _lowest_eigh(h: np.ndarray, count: int, reflect: bool):
    """Lowest eigenpairs; with ``reflect`` the even and odd blocks are solved apart.

    At integer n_g the charge Hamiltonian commutes with n -> -n, and solving
    each parity block separately keeps near-degenerate high levels from
    mixing parities.
    """
    if not reflect:
        return linalg.eigh(h, subset_by_index=(0, count - 1))
    dim = h.shape[0]
    half = dim // 2
    q = np.zeros((dim, dim))
    r = np.arange(half)
    s2 = np.sqrt(0.5)
    q[r, r] = q[dim - 1 - r, r] = s2  # even combinations
    q[half, half] = 1.0
    q[r, half + 1 + r] = s2  # odd combinations
    q[dim - 1 - r, half + 1 + r] = -s2
    hq = q.T @ h.real @ q
    we, ve = linalg.eigh(hq[: half + 1, : half + 1], subset_by_index=(0, min(count, half + 1) - 1))
    wo, vo = linalg.eigh(hq[half + 1:, half + 1:], subset_by_index=(0, min(count, half) - 1))
    w = np.concatenate([we, wo])
    v = np.zeros((dim, len(w)))
    v[: half + 1, : len(we)] = ve
    v[half + 1:, len(we):] = vo
    order = np.argsort(w, kind="stable")[:count]
    return w[order], (q @ v)[:, order]


def _integer_ng(spec: CircuitSpec) -> bool:
    return abs(spec.ng - round(spec.ng)) < 1e-12


def _fix_phase(vecs: np.ndarray) -> np.ndarray:
    # Make the largest component of each column real and positive.
    idx = np.argmax(np.abs(vecs), axis=0)
    ph = vecs[idx, np.arange(vecs.shape[1])]
    return vecs * (np.abs(ph) / ph)[None, :]


def _transmon_eigen(spec: CircuitSpec, count: int, cutoff: int | None = None):
    h, nop = _charge_hamiltonian(spec, cutoff)
    w, v = _lowest_eigh(h.real, count, _integer_ng(spec))
    v = _fix_phase(v.astype(complex))
    return w, v, nop


def build_hamiltonian(spec: CircuitSpec, resonator: ResonatorSpec | None = None,
                      transmon_levels: int = TRANSMON_LEVELS) -> Hamiltonian:
    """Static Hamiltonian of the transmon, optionally coupled to a resonator.

    Without a resonator the result lives in the charge basis. With one, the
    transmon is first diagonalized and truncated to ``transmon_levels``
    states; the coupling -i g n (a - a^dag) then acts on the product space,
    ordered transmon-major.
    """
    if resonator is None:
        h, nop = _charge_hamiltonian(spec)
        return Hamiltonian(h, nop, spec)
    if transmon_levels > 2 * spec.charge_cutoff + 1:
        raise TruncationError(
            f"{transmon_levels} transmon levels exceed the charge basis of size {2 * spec.charge_cutoff + 1}")
    w, v, nop = _transmon_eigen(spec, transmon_levels)
    w = w - w[0]
    n_t = v.conj().T @ nop @ v
    m = resonator.fock_cutoff
    a = np.diag(np.sqrt(np.arange(1, m)), 1).astype(complex)
    eye_t = np.eye(transmon_levels)
    eye_r = np.eye(m)
    h = (np.kron(np.diag(w), eye_r) + resonator.omega_r * np.kron(eye_t, a.conj().T @ a)
         - 1j * resonator.g * np.kron(n_t, a - a.conj().T))
    h = 0.5 * (h + h.conj().T)
    labels = tuple((i, k) for i in range(transmon_levels) for k in range(m))
    return Hamiltonian(h, np.kron(n_t, eye_r), spec, resonator, labels, transmon_levels)


def eigensolve(ham: Hamiltonian, count: int, check_convergence: bool = True,
               tol_ghz: float = CONVERGENCE_TOL_GHZ) -> Spectrum:
    """Lowest ``count`` eigenpairs with energies shifted so that E_0 = 0.

    The charge cutoff is validated by doubling it and comparing the
    requested energies; a change above ``tol_ghz`` raises ConvergenceError.
    """
    if count < 1 or count > ham.dim:
        raise TruncationError(f"requested {count} states from a basis of dimension {ham.dim}")
    if ham.resonator is not None and count > ham.transmon_levels * ham.resonator.fock_cutoff:
        raise TruncationError("count exceeds the coupled truncation")
    try:
        reflect = ham.resonator is None and _integer_ng(ham.circuit)
        w, v = _lowest_eigh(ham.matrix, count, reflect)
    except linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigensolver failed: {exc}") from exc
    v = _fix_phase(np.asarray(v, dtype=complex))
    energies = w - w[0]

    if check_convergence:
        spec = ham.circuit
        doubled = replace(spec, charge_cutoff=2 * spec.charge_cutoff)
        if ham.resonator is None:
            ref = linalg.eigvalsh(_charge_hamiltonian(doubled)[0], subset_by_index=(0, count - 1))
            drift = np.max(np.abs((ref - ref[0]) - energies))
        else:
            # The cutoff only enters through the truncated transmon ladder.
            k = ham.transmon_levels
            base = _transmon_eigen(spec, k)[0]
            ref = _transmon_eigen(doubled, k)[0]
            drift = np.max(np.abs((ref - ref[0]) - (base - base[0])))
        if drift > tol_ghz:
            raise ConvergenceError(
                f"charge cutoff {spec.charge_cutoff} not converged: doubling moves levels by {drift * 1e6:.3g} kHz")

    n_matrix = v.conj().T @ ham.charge @ v
    n_matrix = 0.5 * (n_matrix + n_matrix.conj().T)
    spectrum = Spectrum(
        energies=energies,
        states=v,
        n_matrix=n_matrix,
        labels={j: j for j in range(count)} if ham.resonator is None else {},
        circuit=ham.circuit,
        resonator=ham.resonator,
        bare_labels=ham.bare_labels,
    )
    if ham.resonator is not None:
        spectrum = label_dressed_states(spectrum, 0.9)
    return spectrum


def transmon_spectrum(spec: CircuitSpec, count: int = TRANSMON_LEVELS, **kwargs) -> Spectrum:
    return eigensolve(build_hamiltonian(spec), count, **kwargs)


def coupled_spectrum(spec: CircuitSpec, resonator: ResonatorSpec, count: int | None = None,
                     transmon_levels: int = TRANSMON_LEVELS, threshold: float = 0.9,
                     **kwargs) -> Spectrum:
    ham = build_hamiltonian(spec, resonator, transmon_levels)
    spectrum = eigensolve(ham, count or ham.dim, **kwargs)
    if threshold != 0.9:
        spectrum = label_dressed_states(spectrum, threshold)
    return spectrum


def ng_midpoint_energies(spec: CircuitSpec, count: int, resonator: ResonatorSpec | None = None,
                         **kwargs) -> np.ndarray:
    """Average of the energies at n_g = 0 and n_g = 0.5 (centre of the dispersion band)."""
    out = []
    for ng in (0.0, 0.5):
        s = spec.with_ng(ng)
        if resonator is None:
            out.append(transmon_spectrum(s, count, **kwargs).energies)
        else:
            out.append(coupled_spectrum(s, resonator, **kwargs).transmon_energies()[:count])
    return 0.5 * (out[0] + out[1])


def _excitations(label) -> int:
    return sum(label) if isinstance(label, tuple) else int(label)


def label_dressed_states(spectrum: Spectrum, threshold: float = 0.9) -> Spectrum:
    """Attach bare product-state labels to dressed eigenstates.

    Each dressed state claims the bare state of maximal squared overlap
    (ties go to fewer total excitations). Claims below ``threshold`` and
    claims shared by two dressed states stay unassigned (None); shared
    claims are also listed in ``conflicts``.
    """
    if not spectrum.bare_labels:
        raise ValueError("labelling needs a spectrum built on a product basis")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    probs = np.abs(spectrum.states) ** 2
    exc = np.array([_excitations(b) for b in spectrum.bare_labels])
    claims = {}
    for k in range(probs.shape[1]):
        col = probs[:, k]
        best = col.max()
        # Ties within rounding noise resolve to the lowest excitation count.
        tied = np.flatnonzero(col >= best - 1e-12)
        b = tied[np.argmin(exc[tied])]
        claims[k] = (b, best)
    owners: dict[int, list[int]] = {}
    for k, (b, p) in claims.items():
        if p >= threshold:
            owners.setdefault(b, []).append(k)
    labels = {k: None for k in claims}
    conflicts = []
    for b, ks in owners.items():
        if len(ks) == 1:
            labels[ks[0]] = spectrum.bare_labels[b]
        else:
            conflicts.append((spectrum.bare_labels[b], tuple(ks)))
    return replace(spectrum, labels=labels, conflicts=tuple(conflicts))


# --- measured levels and fitting -------------------------------------------------


@dataclass(frozen=True)
class MeasuredLevels:
    """Level energies in MHz relative to the ground state.

    Indices are transmon levels ``j`` or (transmon, resonator) pairs.
    """

    indices: tuple
    energies_mhz: np.ndarray
    uncertainties_mhz: np.ndarray

    def __post_init__(self):
        idx = list(self.indices)
        if len(set(idx)) != len(idx):
            raise ValueError("level indices must be distinct")
        for i in idx:
            parts = i if isinstance(i, tuple) else (i,)
            if any(int(p) < 0 for p in parts):
                raise ValueError(f"level index {i!r} is negative")
        if len(self.energies_mhz) != len(idx) or len(self.uncertainties_mhz) != len(idx):
            raise ValueError("indices, energies and uncertainties must have equal length")
        if np.any(np.asarray(self.uncertainties_mhz) < 0):
            raise ValueError("uncertainties must be nonnegative")

    @classmethod
    def from_rows(cls, rows) -> MeasuredLevels:
        idx, e, s = zip(*rows)
        return cls(tuple(idx), np.asarray(e, dtype=float), np.asarray(s, dtype=float))

    def __len__(self):
        return len(self.indices)


def _parse_index(text: str):
    text = text.strip()
    if ":" in text:
        a, b = text.split(":")
        return (int(a), int(b))
    return int(text)


def read_levels(path: str | Path) -> MeasuredLevels:
    """Read ``index,energy_mhz,uncertainty_mhz`` rows; ``j:k`` denotes a product level."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"index", "energy_mhz", "uncertainty_mhz"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((_parse_index(row["index"]), float(row["energy_mhz"]),
                             float(row["uncertainty_mhz"] or 0.0)))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row ({exc})") from exc
    if not rows:
        raise ValueError(f"{path}: no levels")
    return MeasuredLevels.from_rows(rows)


def write_levels(levels: MeasuredLevels, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "energy_mhz", "uncertainty_mhz"])
        for i, e, s in zip(levels.indices, levels.energies_mhz, levels.uncertainties_mhz):
            key = f"{i[0]}:{i[1]}" if isinstance(i, tuple) else str(i)
            w.writerow([key, repr(float(e)), repr(float(s))])


@dataclass(frozen=True)
class FitResult:
    circuit: CircuitSpec
    resonator: ResonatorSpec | None
    model_mhz: np.ndarray
    residuals_mhz: np.ndarray
    indices: tuple
    cost: float
    starts: int

    def to_dict(self) -> dict:
        return {
            "ej_ghz": self.circuit.ej,
            "ec_ghz": self.circuit.ec,
            "g_ghz": None if self.resonator is None else self.resonator.g,
            "omega_r_ghz": None if self.resonator is None else self.resonator.omega_r,
            "residuals_mhz": {(f"{i[0]}:{i[1]}" if isinstance(i, tuple) else str(i)): float(r)
                              for i, r in zip(self.indices, self.residuals_mhz)},
            "model_mhz": [float(x) for x in self.model_mhz],
            "cost": float(self.cost),
        }

    def write_json(self, path: str | Path, extra: dict | None = None) -> None:
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def model_levels(indices: Sequence, spec: CircuitSpec, resonator: ResonatorSpec | None = None,
                 ng: float | None = None) -> np.ndarray:
    """Model energies (GHz) of the requested levels.

    ``ng=None`` averages n_g = 0 and n_g = 0.5; otherwise ``spec.ng`` is
    replaced by ``ng``.
    """
    ngs = (0.0, 0.5) if ng is None else (ng,)
    acc = np.zeros(len(indices))
    for value in ngs:
        s = spec.with_ng(value)
        if resonator is None:
            top = max(int(i) for i in indices)
            e = transmon_spectrum(s, top + 1, check_convergence=False).energies
            acc += np.array([e[int(i)] for i in indices])
        else:
            # Above one half the maximal-overlap claim is unique.
            sp = coupled_spectrum(s, resonator, check_convergence=False, threshold=0.5)
            keys = [i if isinstance(i, tuple) else (int(i), 0) for i in indices]
            acc += np.array([sp.energies[sp.index_of(k)] for k in keys])
    return acc / len(ngs)


def quartic_guess(levels: MeasuredLevels) -> tuple[float, float]:
    """(E_J, E_C) from omega_01 and the anharmonicity, with E_C = -alpha."""
    lookup = {i: e / 1e3 for i, e in zip(levels.indices, levels.energies_mhz)}
    w01 = lookup.get(1, lookup.get((1, 0)))
    e2 = lookup.get(2, lookup.get((2, 0)))
    if w01 is None:
        raise ValueError("level 1 is required to initialise the fit")
    ec = (2 * w01 - e2) if e2 is not None else 0.05 * w01
    ec = max(ec, 1e-3)
    ej = (w01 + ec) ** 2 / (8 * ec)
    return ej, ec


def fit_parameters(levels: MeasuredLevels, model: str = "transmon", ng: float | None = None,
                   uncertainty_floor_mhz: float = 1.0, guess: dict | None = None,
                   charge_cutoff: int = 40, fock_cutoff: int = 5, starts: int = 4,
                   seed: int = 0) -> FitResult:
    """Least-squares circuit parameters from measured level energies.

    Residuals are weighted by max(uncertainty, ``uncertainty_floor_mhz``).
    The solver starts from the quartic inversion and from ``starts``
    perturbations of it within +-20 %; the lowest cost wins.
    """
    if model not in ("transmon", "coupled"):
        raise ValueError(f"unknown model {model!r}")
    need = 3 if model == "transmon" else 4
    if len(levels) < need:
        raise ValueError(f"{model} fit needs at least {need} levels, got {len(levels)}")
    nonzero = [i for i, e in zip(levels.indices, levels.energies_mhz) if i not in (0, (0, 0))]
    idx = tuple(nonzero)
    data = np.array([e for i, e in zip(levels.indices, levels.energies_mhz) if i in idx])
    sig = np.array([s for i, s in zip(levels.indices, levels.uncertainties_mhz) if i in idx])
    sig = np.maximum(sig, uncertainty_floor_mhz)
    if np.any(sig <= 0):
        raise ValueError("zero uncertainty with no floor gives infinite weight")

    ej0, ec0 = quartic_guess(levels)
    if model == "transmon":
        x0 = np.array([ej0, ec0])
        if guess:
            x0 = np.array([guess.get("ej", ej0), guess.get("ec", ec0)])
    else:
        g0 = (guess or {}).get("g", 0.1)
        wr0 = (guess or {}).get("omega_r")
        if wr0 is None:
            wr_meas = [e / 1e3 for i, e in zip(levels.indices, levels.energies_mhz) if i == (0, 1)]
            wr0 = wr_meas[0] if wr_meas else 7.0
        x0 = np.array([(guess or {}).get("ej", ej0), (guess or {}).get("ec", ec0), g0, wr0])

    def unpack(x):
        spec = CircuitSpec(ej=x[0], ec=x[1], charge_cutoff=charge_cutoff)
        res = None if model == "transmon" else ResonatorSpec(omega_r=x[3], g=x[2], fock_cutoff=fock_cutoff)
        return spec, res

    def resid(x):
        if np.any(x <= 0):
            return np.full(len(idx), 1e6)
        spec, res = unpack(x)
        try:
            return (model_levels(idx, spec, res, ng) * 1e3 - data) / sig
        except KeyError:  # a requested level lost its bare character
            return np.full(len(idx), 1e6)

    rng = np.random.default_rng(seed)
    candidates = [x0] + [x0 * (1 + rng.uniform(-0.2, 0.2, size=x0.size)) for _ in range(starts)]
    best = None
    for x in candidates:
        try:
            sol = optimize.least_squares(resid, x, method="lm", x_scale=np.abs(x0),
                                         xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        except (ValueError, linalg.LinAlgError):
            continue
        if not np.all(np.isfinite(sol.x)) or np.any(sol.x <= 0):
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None or best.status <= 0:
        raise ConvergenceError("spectrum fit did not converge from any start")
    spec, res = unpack(best.x)
    model_mhz = model_levels(idx, spec, res, ng) * 1e3
    return FitResult(spec, res, model_mhz, model_mhz - data, idx, float(best.cost), len(candidates))
