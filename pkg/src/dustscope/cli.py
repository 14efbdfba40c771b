"""Command-line entry point.

Exit codes: 0 success, 1 computation failure, 2 usage or configuration
error. Every output file carries the configuration hash and package
version in its header.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
from scipy import linalg

from . import __version__
from .circuit import (CircuitSpec, ConvergenceError, ResonatorSpec, Spectrum, TruncationError,
                      coupled_spectrum, fit_parameters, read_levels, transmon_spectrum)
from .config import ConfigError, RunConfig
from .drive import DriveSpec, predict_resonances, write_resonances
from .environment import SpuriousModeRegistry, attribute_feature, read_registry, write_attributions
from .floquet import IntegrationError, amplitude_sweep, time_evolve
from .hybridization import FitRejected, LandscapeGrid, compute_landscape
from .io import canonical_json, config_hash

log = logging.getLogger("dustscope")

_NOT_HASHED = {"config", "out", "jobs", "plot", "verbose", "func"}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --- shared helpers ----------------------------------------------------------------------


def _effective(args, cfg: RunConfig) -> dict:
    return {"command": args.command, "config": cfg.raw,
            "args": {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_HASHED}}


def _header(args, cfg: RunConfig) -> dict:
    return {"config_sha256": config_hash(_effective(args, cfg)), "version": __version__}


def _circuit(args, cfg: RunConfig) -> CircuitSpec:
    base = cfg.section("circuit")
    ej = args.ej if getattr(args, "ej", None) is not None else base.get("ej")
    ec = args.ec if getattr(args, "ec", None) is not None else base.get("ec")
    if ej is None or ec is None:
        raise ConfigError("circuit parameters missing (use --ej/--ec or [circuit])", ["circuit.ej", "circuit.ec"])
    ng = args.ng if getattr(args, "ng", None) is not None else base.get("ng", 0.0)
    cutoff = base.get("charge_cutoff", 40)
    return CircuitSpec(float(ej), float(ec), float(ng), int(cutoff))


def _resonator(args, cfg: RunConfig) -> ResonatorSpec | None:
    if getattr(args, "omega_r", None) is not None:
        if args.g is None:
            raise ConfigError("--omega-r needs --g", ["resonator.g"])
        return ResonatorSpec(args.omega_r, args.g)
    return cfg.resonator()


def _spectrum(args, cfg: RunConfig, count: int = 25) -> Spectrum:
    spec = _circuit(args, cfg)
    res = _resonator(args, cfg)
    if res is None:
        return transmon_spectrum(spec, count)
    return coupled_spectrum(spec, res)


def _registry(args, cfg: RunConfig) -> SpuriousModeRegistry:
    path = getattr(args, "registry", None) or cfg.section("registry").get("path")
    if path is None:
        return SpuriousModeRegistry()
    p = Path(path) if getattr(args, "registry", None) else cfg.path(path)
    if not p.exists():
        raise ConfigError(f"registry file {p} not found", ["registry.path"])
    return read_registry(p)


def _scalar(args, cfg: RunConfig, flag: str, key: str, default=None):
    val = getattr(args, flag, None)
    if val is not None:
        return val
    val = cfg.drive_value(key, default)
    if val is None:
        raise ConfigError(f"missing value for {key}", [f"drive.{key}"])
    return val


def _outdir(args, cfg: RunConfig) -> Path:
    out = cfg.output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _xi2_linspace(stop: float, count: int) -> np.ndarray:
    if count < 2 or stop <= 0:
        raise ConfigError("xi2 grid needs count >= 2 and a positive maximum", ["drive.xi2"])
    return np.linspace(0.0, stop, count)


# --- subcommands ---------------------------------------------------------------------------


def cmd_fit_spectrum(args, cfg):
    path = args.levels or cfg.section("circuit").get("levels")
    if path is None:
        raise ConfigError("no measured levels given", ["circuit.levels"])
    p = Path(path) if args.levels else cfg.path(path)
    if not p.exists():
        raise ConfigError(f"levels file {p} not found", ["circuit.levels"])
    levels = read_levels(p)
    fit = fit_parameters(levels, model=args.model, ng=args.ng,
                         uncertainty_floor_mhz=args.uncertainty_floor)
    doc = {"provenance": _header(args, cfg), **fit.to_dict()}
    out = _outdir(args, cfg) / "fit.json"
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"ej_ghz={fit.circuit.ej:.6f} ec_ghz={fit.circuit.ec:.6f} -> {out}")


def cmd_eigen(args, cfg):
    sp = _spectrum(args, cfg, args.count)
    out = _outdir(args, cfg) / "spectrum.csv"
    with open(out, "w") as fh:
        for k, v in _header(args, cfg).items():
            fh.write(f"# {k}: {v}\n")
        fh.write("index,label,energy_ghz\n")
        for i in range(min(args.count, sp.count)):
            lab = sp.labels.get(i)
            lab = "unassigned" if lab is None else (f"{lab[0]}:{lab[1]}" if isinstance(lab, tuple) else lab)
            fh.write(f"{i},{lab},{float(sp.energies[i])!r}\n")
    print(f"{sp.count} levels -> {out}")


def cmd_sweep(args, cfg):
    sp = _spectrum(args, cfg)
    omega = float(_scalar(args, cfg, "omega_d", "omega_d"))
    xi2 = _xi2_linspace(args.xi2_max, args.xi2_count) if args.xi2_max else cfg.drive_grid("xi2")
    table = amplitude_sweep(sp, omega, xi2, jobs=args.jobs)
    out = _outdir(args, cfg) / "modes.csv"
    table.write_csv(out, _header(args, cfg))
    print(f"{len(table)} amplitudes, {table.steps} steps/period -> {out}")


def cmd_branches(args, cfg):
    from .tracking import branch_analysis

    sp = _spectrum(args, cfg)
    omega = float(_scalar(args, cfg, "omega_d", "omega_d"))
    bs = branch_analysis(sp, omega, args.xi2_max, step=args.step, jobs=args.jobs)
    outdir = _outdir(args, cfg)
    hdr = _header(args, cfg)
    bs.write_csv(outdir / "branches.csv", hdr)
    with open(outdir / "swaps.csv", "w") as fh:
        for k, v in hdr.items():
            fh.write(f"# {k}: {v}\n")
        fh.write("xi2,branch_a,branch_b,overlap_drop,width\n")
        for e in bs.swaps:
            fh.write(f"{float(e.xi2)!r},{e.branches[0]},{e.branches[1]},{e.overlap_drop:.6g},{float(e.width)!r}\n")
    if args.plot:
        from .plotting import branches_svg

        branches_svg(bs.xi2, bs.mean_quanta, outdir / "branches.svg")
    print(f"{len(bs.swaps)} swap events -> {outdir / 'swaps.csv'}")


def cmd_landscape(args, cfg):
    spec = _circuit(args, cfg)
    res = _resonator(args, cfg)
    if args.omega_start is not None:
        omegas = np.linspace(args.omega_start, args.omega_stop, args.omega_count)
    else:
        omegas = cfg.drive_grid("omega_d")
    xi2 = _xi2_linspace(args.xi2_max, args.xi2_count) if args.xi2_max else cfg.drive_grid("xi2")
    if xi2[0] != 0.0:
        raise ConfigError("the xi^2 grid must start at 0", ["drive.xi2"])
    if len(omegas) < 2:
        raise ConfigError("landscape needs at least two drive frequencies", ["drive.omega_d"])
    ngs = np.linspace(0.0, 0.5, args.ng_count) if args.ng_count else cfg.ng_samples()
    j = int(args.j if args.j is not None else cfg.drive_value("j", 1))
    grid = compute_landscape(spec, omegas, xi2, ngs, j=j, resonator=res, jobs=args.jobs)
    outdir = _outdir(args, cfg)
    hdr = _header(args, cfg)
    grid.write_csv(outdir / "landscape.csv", hdr)
    grid.write_averaged_csv(outdir / "landscape_avg.csv", hdr)
    with open(outdir / "failures.csv", "w") as fh:
        for k, v in hdr.items():
            fh.write(f"# {k}: {v}\n")
        fh.write("ng,omega_d_ghz,reason\n")
        for f in grid.failures:
            reason = f["reason"].replace(",", ";").replace("\n", " ")
            fh.write(f"{f['ng']!r},{f['omega_d']!r},{reason}\n")
    if args.plot:
        from .plotting import landscape_svg

        landscape_svg(grid.omega_d, grid.xi2 / 2, np.nan_to_num(grid.averaged), outdir / "landscape.svg")
    print(f"{len(grid.failures)} failed columns -> {outdir / 'landscape.csv'}")


def cmd_two_mode(args, cfg):
    from .twomode import parse_transition, two_mode_resonances, write_resonances as write_tm

    spec = _circuit(args, cfg)
    res = _resonator(args, cfg)
    if res is None:
        raise ConfigError("two-mode analysis needs a resonator", ["resonator"])
    records = cfg.raw.get("transition", [])
    if not records:
        raise ConfigError("no [[transition]] entries", ["transition"])
    try:
        transitions = [parse_transition(r) for r in records]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid transition: {exc}", ["transition"]) from exc
    rows = two_mode_resonances(spec, res, transitions)
    out = _outdir(args, cfg) / "two_mode.csv"
    write_tm(rows, out, _header(args, cfg))
    print(f"{len(rows)} transitions -> {out}")


def _attribution_spectrum(args, cfg) -> Spectrum:
    path = getattr(args, "levels", None) or cfg.section("circuit").get("levels")
    if path is not None:
        p = Path(path) if getattr(args, "levels", None) else cfg.path(path)
        lv = read_levels(p)
        pairs = sorted((i, float(e)) for i, e in zip(lv.indices, lv.energies_mhz) if isinstance(i, int))
        if not pairs or pairs[0][0] != 0:
            pairs.insert(0, (0, 0.0))
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise ConfigError("measured levels must form a ladder 0..K", ["circuit.levels"])
        return Spectrum.from_levels([e / 1e3 for _, e in pairs])
    return _spectrum(args, cfg, 12)


def cmd_attribute(args, cfg):
    sp = _attribution_spectrum(args, cfg)
    reg = _registry(args, cfg)
    tol = args.tolerance or cfg.thresholds().get("attribution_mhz", 50.0)
    rows = []
    for k, (w, s) in enumerate(zip(args.intercept, args.slope)):
        f = SimpleNamespace(name=f"F{k}", intercept_ghz=w, slope=s, initial=args.initial)
        rows.append((f, attribute_feature(f, sp, reg, tol)))
    out = _outdir(args, cfg) / "attributions.csv"
    write_attributions(rows, out, _header(args, cfg))
    if args.lines:
        lo, hi = args.lines
        write_resonances(predict_resonances(sp, reg, (lo, hi), initial_levels=(args.initial,)),
                         out.with_name("resonances.csv"), _header(args, cfg))
    print(f"{sum(bool(a) for _, a in rows)}/{len(rows)} features attributed -> {out}")


def cmd_classify(args, cfg):
    from .classify import Thresholds, classify_features, extract_ridges, ingest_landscape, write_report

    land = ingest_landscape(args.landscape)
    grids = [LandscapeGrid.read_csv(p) for p in args.theta]
    th = cfg.thresholds()
    known = set(Thresholds.__dataclass_fields__)
    unknown = sorted(set(th) - known - {"prominence"})
    if unknown:
        raise ConfigError("unknown thresholds", [f"thresholds.{k}" for k in unknown])
    thresholds = Thresholds(**{k: v for k, v in th.items() if k in known})
    prom = args.prominence or th.get("prominence", 0.2)
    feats = extract_ridges(land, prominence=prom)
    sp = _attribution_spectrum(args, cfg)
    labelled = classify_features(feats, grids, _registry(args, cfg), sp, thresholds)
    out = _outdir(args, cfg) / "classification.csv"
    write_report(labelled, out, _header(args, cfg))
    counts = {lab: sum(f.label == lab for f in labelled) for lab in ("A", "B", "C", "unresolved")}
    print(" ".join(f"{k}={v}" for k, v in counts.items()) + f" -> {out}")


def cmd_evolve(args, cfg):
    sp = _spectrum(args, cfg)
    omega = float(_scalar(args, cfg, "omega_d", "omega_d"))
    xi2 = float(_scalar(args, cfg, "xi2", "xi2"))
    initial = int(args.initial if args.initial is not None else cfg.drive_value("initial", 0))
    duration = float(args.duration or cfg.drive_value("duration_ns", 1000.0))
    samples = int(args.samples or cfg.drive_value("samples", 201))
    ev = time_evolve(sp, DriveSpec(omega, float(np.sqrt(xi2))), initial, duration, samples)
    outdir = _outdir(args, cfg)
    levels = min(ev.populations.shape[1], args.levels_out)
    with open(outdir / "populations.csv", "w") as fh:
        for k, v in _header(args, cfg).items():
            fh.write(f"# {k}: {v}\n")
        fh.write(f"# norm_deviation: {ev.norm_deviation:.3e}\n")
        fh.write("time_ns," + ",".join(f"p{j}" for j in range(levels)) + "\n")
        for t, row in zip(ev.times, ev.populations):
            fh.write(f"{float(t)!r}," + ",".join(f"{p:.12g}" for p in row[:levels]) + "\n")
    if args.plot:
        from .plotting import populations_svg

        populations_svg(ev.times, ev.populations, outdir / "populations.svg", range(levels))
    print(f"norm deviation {ev.norm_deviation:.2e} -> {outdir / 'populations.csv'}")


# --- parser ----------------------------------------------------------------------------------


def _circuit_flags(p):
    p.add_argument("--ej", type=float, help="Josephson energy (GHz)")
    p.add_argument("--ec", type=float, help="charging energy (GHz)")
    p.add_argument("--ng", type=float, help="offset charge")
    p.add_argument("--omega-r", type=float, help="resonator frequency (GHz); enables the coupled model")
    p.add_argument("--g", type=float, help="transmon-resonator coupling (GHz)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output directory (overrides config and environment)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--plot", action="store_true", help="also write SVG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="dustscope", description="Drive-induced transition analysis for transmons.")
    parser.add_argument("--version", action="version", version=f"dustscope {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit-spectrum", parents=[common], help="fit circuit parameters to measured levels")
    p.add_argument("--levels", help="CSV with index,energy_mhz,uncertainty_mhz")
    p.add_argument("--model", choices=("transmon", "coupled"), default="transmon")
    p.add_argument("--ng", type=float, help="offset charge (default: dispersion-band midpoint)")
    p.add_argument("--uncertainty-floor", type=float, default=1.0, help="MHz")
    p.set_defaults(func=cmd_fit_spectrum)

    p = sub.add_parser("eigen", parents=[common], help="undriven spectrum")
    _circuit_flags(p)
    p.add_argument("--count", type=int, default=12)
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("sweep", parents=[common], help="Floquet modes along an amplitude grid")
    _circuit_flags(p)
    p.add_argument("--omega-d", type=float)
    p.add_argument("--xi2-max", type=float)
    p.add_argument("--xi2-count", type=int, default=41)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("branches", parents=[common], help="branch analysis and swap detection")
    _circuit_flags(p)
    p.add_argument("--omega-d", type=float)
    p.add_argument("--xi2-max", type=float, default=2.0)
    p.add_argument("--step", type=float, default=0.005)
    p.set_defaults(func=cmd_branches)

    p = sub.add_parser("landscape", parents=[common], help="hybridization landscape")
    _circuit_flags(p)
    p.add_argument("--omega-start", type=float)
    p.add_argument("--omega-stop", type=float)
    p.add_argument("--omega-count", type=int, default=50)
    p.add_argument("--xi2-max", type=float)
    p.add_argument("--xi2-count", type=int, default=40)
    p.add_argument("--ng-count", type=int)
    p.add_argument("--j", type=int)
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("two-mode", parents=[common], help="transmon-resonator resonance frequencies")
    _circuit_flags(p)
    p.set_defaults(func=cmd_two_mode)

    p = sub.add_parser("attribute", parents=[common], help="match feature intercepts to spurious modes")
    _circuit_flags(p)
    p.add_argument("--levels", help="measured levels CSV used instead of a circuit model")
    p.add_argument("--registry", help="spurious-mode registry (CSV or TOML)")
    p.add_argument("--intercept", type=float, nargs="+", required=True, help="zero-power intercepts (GHz)")
    p.add_argument("--slope", type=float, nargs="+", required=True, help="d(Delta/alpha)/d omega_d per feature")
    p.add_argument("--initial", type=int, default=1)
    p.add_argument("--tolerance", type=float, help="MHz")
    p.add_argument("--lines", type=float, nargs=2, metavar=("LO", "HI"),
                   help="also list all resonance lines in this window")
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("classify", parents=[common], help="extract and classify measured features")
    _circuit_flags(p)
    p.add_argument("--landscape", required=True, help="measured landscape CSV")
    p.add_argument("--theta", nargs="+", required=True, help="simulated landscape CSV(s)")
    p.add_argument("--levels", help="measured levels CSV for attribution")
    p.add_argument("--registry")
    p.add_argument("--prominence", type=float)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evolve", parents=[common], help="coherent time evolution")
    _circuit_flags(p)
    p.add_argument("--omega-d", type=float)
    p.add_argument("--xi2", type=float)
    p.add_argument("--initial", type=int)
    p.add_argument("--duration", type=float, help="ns")
    p.add_argument("--samples", type=int)
    p.add_argument("--levels-out", type=int, default=8, help="number of levels written")
    p.set_defaults(func=cmd_evolve)
    return parser


def execute(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"dustscope: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig.empty()
        if args.jobs < 1:
            raise ConfigError("--jobs must be positive", ["jobs"])
        args.func(args, cfg)
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"dustscope: configuration error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, TruncationError, IntegrationError, FitRejected, linalg.LinAlgError,
            ArithmeticError) as exc:
        print(f"dustscope: computation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # Invalid physical inputs (e.g. negative energies) are configuration errors.
        print(f"dustscope: invalid input: {exc}", file=sys.stderr)
        return 2
    log.debug("effective config: %s", canonical_json(_effective(args, cfg)))
    return 0


def main() -> None:
    sys.exit(execute())


if __name__ == "__main__":
    main()
