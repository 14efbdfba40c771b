import time

import numpy as np
import pytest

from dustscope.circuit import CircuitSpec, ResonatorSpec, transmon_spectrum

# Reference device: transmon-only and coupled circuit parameters.
EJ, EC = 16.2856, 0.17013
COUPLED = dict(ej=16.40, ec=0.1695, g=0.153, omega_r=9.029)
MEASURED_MHZ = [4528.52, 8872.74, 13016.8, 16939.9, 20613.0]
MEASURED_SIGMA = [0.0, 0.0, 0.0, 0.2, 2.0]
# Joint transmon-resonator resonances: (name, initial, final, n, bare (i, j, photons), GHz).
TWO_MODE_ROWS = [
    ("K", (1, 0), (7, 1), 3, (1, 7, 1), 10.57),
    ("L", (1, 0), (4, 1), 2, (1, 4, 1), 10.74),
    ("L'a", (0, 0), (3, 1), 2, (0, 3, 1), 11.04),
    ("L'b", (0, 0), 22, 3, (0, 9, 0), 11.04),
    ("K'", (0, 0), 21, 3, (0, 6, 1), 11.03),
]
REGISTRY_ROWS = [("RO", 9.0342, "electromagnetic"), ("EM2", 15.07, "electromagnetic")]
# Wall-clock seconds of expensive fixtures, and acceptance verdict lines.
TIMINGS: dict = {}
VERDICTS: list = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def spec():
    return CircuitSpec(EJ, EC)


@pytest.fixture(scope="session")
def spec_q():
    """Quarter offset charge, used for the branch analyses."""
    return CircuitSpec(EJ, EC, ng=0.25)


@pytest.fixture(scope="session")
def spectrum(spec):
    return transmon_spectrum(spec)


@pytest.fixture(scope="session")
def spectrum_q(spec_q):
    return transmon_spectrum(spec_q)


@pytest.fixture(scope="session")
def coupled_params():
    return CircuitSpec(COUPLED["ej"], COUPLED["ec"]), ResonatorSpec(COUPLED["omega_r"], COUPLED["g"])


@pytest.fixture(scope="session")
def registry():
    from dustscope.environment import SpuriousMode, SpuriousModeRegistry

    return SpuriousModeRegistry(tuple(SpuriousMode(i, w, o) for i, w, o in REGISTRY_ROWS))


@pytest.fixture(scope="session")
def measured_spectrum():
    from dustscope.circuit import Spectrum

    return Spectrum.from_levels([0.0] + [e / 1e3 for e in MEASURED_MHZ])


@pytest.fixture(scope="session")
def coarse_landscape(spec):
    """Theta(1) over 7.8-8.1 GHz, 50 x 40 points, three offset charges."""
    from dustscope.hybridization import compute_landscape

    t0 = time.perf_counter()
    grid = compute_landscape(spec, np.linspace(7.8, 8.1, 50), np.linspace(0.0, 2.0, 40),
                             ng_samples=[0.0, 0.25, 0.5], j=1)
    TIMINGS["coarse_landscape"] = time.perf_counter() - t0
    return grid


@pytest.fixture(scope="session")
def extrinsic_window_landscape(spec):
    """Theta(1) around the 9.7 GHz extrinsic line."""
    from dustscope.hybridization import compute_landscape

    return compute_landscape(spec, np.linspace(9.55, 9.8, 26), np.linspace(0.0, 2.0, 40),
                             ng_samples=[0.0, 0.25, 0.5], j=1)


@pytest.fixture(scope="session")
def broadening_landscape(spec):
    """Theta(1) following the 1-5 ridge from low power down to 7.74 GHz at xi^2 = 1.5."""
    from dustscope.hybridization import compute_landscape

    return compute_landscape(spec, np.linspace(7.74, 8.04, 51), np.linspace(0.0, 1.5, 31),
                             ng_samples=[0.0, 0.25, 0.5], j=1)
