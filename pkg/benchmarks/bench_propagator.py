"""Time one-period propagators with the compiled and the numpy kernels.

Usage: python3 benchmarks/bench_propagator.py [--repeat N] [--steps S]
"""

import argparse
import math
import time

import numpy as np

from dustscope import _kernels
from dustscope._kernels import _fallback
from dustscope.circuit import CircuitSpec, transmon_spectrum
from dustscope.drive import DriveSpec
from dustscope.floquet import PeriodIntegrator

try:
    from dustscope._kernels import _propagate
except ImportError:  # extension not built
    _propagate = None


def _time(integ, ed, repeat):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        u = integ.propagate(ed)
        best = min(best, time.perf_counter() - t0)
    return best, u


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--omega-d", type=float, default=8.05)
    ap.add_argument("--xi2", type=float, default=0.5)
    args = ap.parse_args(argv)

    spectrum = transmon_spectrum(CircuitSpec(16.2856, 0.17013))
    ed = DriveSpec(args.omega_d, math.sqrt(args.xi2)).ed(spectrum)
    integ = PeriodIntegrator(spectrum, args.omega_d, args.steps)
    integ.propagate(ed)  # build and cache the step plan

    backends = [("python", _fallback.evolve)]
    if _propagate is not None:
        backends.insert(0, ("cython", _propagate.evolve))
    default = _kernels.evolve
    results = {}
    try:
        for name, fn in backends:
            _kernels.evolve = fn
            results[name] = _time(integ, ed, args.repeat)
    finally:
        _kernels.evolve = default

    print(f"dim={spectrum.count} steps/period={args.steps} omega_d={args.omega_d} xi2={args.xi2}")
    for name, (secs, _) in results.items():
        print(f"{name:>7}: {secs * 1e3:9.2f} ms per period")
    if len(results) == 2:
        (ta, ua), (tb, ub) = results["cython"], results["python"]
        print(f"speedup: {tb / ta:.1f}x, max |U_cython - U_python| = {np.max(np.abs(ua - ub)):.1e}")
    else:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
