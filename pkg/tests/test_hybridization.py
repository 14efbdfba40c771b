import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dustscope.floquet import FloquetSet, ModeTable, amplitude_sweep
from dustscope.hybridization import (
    FitRejected, LandscapeGrid, OutsideDomain, compute_landscape, fit_displaced_state, theta,
    theta_column,
)

# --- synthetic mode tables ---------------------------------------------------------------------

DIM = 4


def _poly_state(xi, w, coeffs):
    kx, kw = coeffs.shape[:2]
    basis = (xi ** np.arange(kx))[:, None] * (w ** np.arange(kw))[None, :]
    return np.tensordot(basis, coeffs, axes=([0, 1], [0, 1]))


def _synthetic_table(omega, omega_c, xi2, coeffs, j=1):
    sets = []
    for x2 in xi2:
        xi = np.sqrt(x2)
        modes = np.eye(DIM, dtype=complex)
        modes[:, j] = _poly_state(xi, omega - omega_c, coeffs)
        sets.append(FloquetSet(np.zeros(DIM), modes, omega, xi, 0.0, np.ones(DIM)))
    return ModeTable(np.asarray(xi2), tuple(sets), omega, 0.0)


def _coeffs(seed, kx=3, kw=2, j=1, scale=0.02):
    rng = np.random.default_rng(seed)
    c = scale * (rng.normal(size=(kx + 1, kw + 1, DIM)) + 1j * rng.normal(size=(kx + 1, kw + 1, DIM)))
    c[:, :, j] = scale * rng.normal(size=(kx + 1, kw + 1))  # keeps <j|mode> real and positive
    c[0] = 0  # the undriven mode is the bare state at every frequency
    c[0, 0, j] = 1.0
    return c


def test_bare_point_model_is_exact(spectrum):
    t = amplitude_sweep(spectrum, 8.0, [0.0])
    m = fit_displaced_state([t], 1, degrees=(0, 0))
    v = m.evaluate(0.0, 8.0)
    e = np.zeros(spectrum.count)
    e[1] = 1
    assert np.array_equal(np.abs(v), e)
    assert theta(t.sets[0].modes[:, 1], m, (0.0, 8.0)) == 0.0


def test_polynomial_surface_recovered():
    c = _coeffs(7)
    omegas = [7.9, 7.95, 8.0, 8.05, 8.1]
    xi2 = np.linspace(0, 0.4, 21)
    tables = [_synthetic_table(w, 8.0, xi2, c) for w in omegas]
    m = fit_displaced_state(tables, 1, degrees=(3, 2), omega_c=8.0)
    assert len(m.partitions) == 1
    # Frequency variable is scaled by the half-span of the window.
    scale = m.omega_scale
    got = m.partitions[0].coeffs / (scale ** np.arange(3))[None, :, None]
    assert np.max(np.abs(got - c)) < 1e-8


def test_later_partitions_track_the_surface():
    # Later partitions inherit the phase of their reference, so only the
    # first is compared coefficient by coefficient; the rest by overlap.
    c = _coeffs(11)
    xi2 = np.linspace(0, 1.2, 49)
    tables = [_synthetic_table(w, 8.0, xi2, c) for w in (7.95, 8.0, 8.05)]
    m = fit_displaced_state(tables, 1, degrees=(3, 2), omega_c=8.0)
    assert len(m.partitions) == 3
    first = m.partitions[0].coeffs / (m.omega_scale ** np.arange(3))[None, :, None]
    assert np.max(np.abs(first - c)) < 1e-8
    worst = max(theta(_poly_state(np.sqrt(x2), w - 8.0, c), m, (np.sqrt(x2), w))
                for x2 in xi2 for w in (7.95, 7.975, 8.0, 8.05))
    assert worst < 1e-6


def test_too_few_points_rejected():
    c = _coeffs(3, kx=0, kw=0)
    t = _synthetic_table(8.0, 8.0, [0.0], c)
    # One point cannot fix even a constant when every point falls below the cutoff.
    t.sets[0].modes[:, 1] = np.array([0.6, 0.6, 0.5, np.sqrt(1 - 0.97)])
    with pytest.raises(FitRejected):
        fit_displaced_state([t], 1, degrees=(0, 0))


def test_fit_requires_zero_amplitude():
    c = _coeffs(3)
    with pytest.raises(ValueError):
        fit_displaced_state([_synthetic_table(8.0, 8.0, [0.1, 0.2], c)], 1)
    with pytest.raises(ValueError):
        fit_displaced_state([], 1)


def test_outside_domain_rejected(spectrum):
    t = amplitude_sweep(spectrum, 8.0, np.linspace(0, 0.2, 5))
    m = fit_displaced_state([t], 1)
    with pytest.raises(OutsideDomain):
        m.evaluate(np.sqrt(0.5), 8.0)
    with pytest.raises(OutsideDomain):
        m.evaluate(0.1, 8.3)


@pytest.fixture(scope="module")
def quiet_fit(spectrum_q):
    tables = [amplitude_sweep(spectrum_q, w, np.linspace(0, 1, 21)) for w in np.linspace(6.9, 7.1, 5)]
    return tables, fit_displaced_state(tables, 1, omega_c=7.0)


def test_theta_zero_at_zero_drive(quiet_fit):
    tables, m = quiet_fit
    assert theta(tables[2].sets[0].modes[:, 1], m, (0.0, 7.0)) < 1e-6
    assert abs(m.evaluate(0.0, 6.95)[1]) ** 2 > 0.99


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2 * np.pi), st.integers(0, 20))
def test_theta_phase_invariant_and_bounded(quiet_fit, phi, r):
    tables, m = quiet_fit
    mode = tables[2].sets[r].modes[:, 1]
    xi = np.sqrt(tables[2].xi2[r])
    a = theta(mode, m, (xi, 7.0))
    b = theta(np.exp(1j * phi) * mode, m, (xi, 7.0))
    assert abs(a - b) < 1e-12
    assert 0.0 <= a <= 1.0


def test_quiet_window_small_theta(quiet_fit):
    tables, m = quiet_fit
    col = np.concatenate([theta_column(t, m) for t in tables])
    assert np.all((col >= 0) & (col <= 1))
    assert col.max() < 0.02


def test_cutoff_insensitive_in_quiet_window(spec_q):
    kw = dict(ng_samples=[0.25], j=1)
    a = compute_landscape(spec_q, np.linspace(6.9, 7.1, 5), np.linspace(0, 1, 21), cutoff=0.8, **kw)
    b = compute_landscape(spec_q, np.linspace(6.9, 7.1, 5), np.linspace(0, 1, 21), cutoff=0.9, **kw)
    assert np.nanmax(np.abs(a.theta - b.theta)) < 0.01
    assert not a.failures and not b.failures


def test_hybridization_peak_at_two_photon_resonance(spec_q):
    g = compute_landscape(spec_q, np.linspace(8.01, 8.03, 5), np.linspace(0, 0.3, 31), ng_samples=[0.25])
    assert np.all(g.theta[:, 0, :] == 0.0)
    assert np.nanmax(g.theta) > 0.4


# --- landscape grid ----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_grid(spec):
    return compute_landscape(spec, np.linspace(7.95, 8.05, 4), np.linspace(0, 0.3, 7),
                             ng_samples=[0.0, 0.5], j=1)


def test_landscape_invariants(small_grid):
    th = small_grid.theta
    assert th.shape == (2, 7, 4)
    assert np.all((th >= 0) & (th <= 1))
    assert np.all(th[:, 0, :] == 0)
    assert np.allclose(small_grid.averaged, th.mean(axis=0))


def test_landscape_deterministic(spec, small_grid, tmp_path):
    again = compute_landscape(spec, np.linspace(7.95, 8.05, 4), np.linspace(0, 0.3, 7),
                              ng_samples=[0.0, 0.5], j=1)
    small_grid.write_csv(tmp_path / "a.csv")
    again.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    small_grid.write_averaged_csv(tmp_path / "a_avg.csv")
    again.write_averaged_csv(tmp_path / "b_avg.csv")
    assert (tmp_path / "a_avg.csv").read_bytes() == (tmp_path / "b_avg.csv").read_bytes()


def test_landscape_csv_round_trip(small_grid, tmp_path):
    small_grid.write_csv(tmp_path / "g.csv", {"version": "x"})
    back = LandscapeGrid.read_csv(tmp_path / "g.csv")
    assert np.array_equal(back.theta, small_grid.theta)
    assert np.array_equal(back.omega_d, small_grid.omega_d)
    assert np.array_equal(back.xi2, small_grid.xi2)


def test_averaged_skips_failed_columns():
    th = np.array([[[0.2, np.nan]], [[0.4, np.nan]]])
    g = LandscapeGrid(np.array([7.0, 7.1]), np.array([0.0]), np.array([0.0, 0.5]), th, 1)
    assert np.isclose(g.averaged[0, 0], 0.3) and np.isnan(g.averaged[0, 1])


def test_landscape_grid_validation(spec):
    with pytest.raises(ValueError):
        compute_landscape(spec, [8.0], [0.1, 0.2])
    with pytest.raises(ValueError):
        compute_landscape(spec, [8.0, 7.9], [0.0, 0.2])
    with pytest.raises(ValueError):
        compute_landscape(spec, [], [0.0])


def test_failed_column_recorded(spec):
    # An impossible step budget fails every sweep; the grid survives with NaNs.
    g = compute_landscape(spec, [8.0, 8.1], [0.0, 0.5], ng_samples=[0.0], tol=1e-30, steps=None)
    assert len(g.failures) == 2
    assert np.all(np.isnan(g.theta))


# --- broadening on the 1-5 feature --------------------------------------------------------------


def _extent(row, level=0.1):
    """Frequency cells from the first to the last value above ``level``."""
    idx = np.flatnonzero(np.nan_to_num(row) > level)
    return 0 if idx.size == 0 else int(idx[-1] - idx[0] + 1)


@pytest.mark.slow
def test_feature_broadens_with_power(broadening_landscape):
    g = broadening_landscape
    r03, r15 = (int(np.argmin(np.abs(g.xi2 - x))) for x in (0.3, 1.5))
    assert _extent(g.averaged[r15]) > _extent(g.averaged[r03]) > 0


@pytest.mark.slow
def test_ng_average_at_least_as_wide(broadening_landscape):
    g = broadening_landscape
    r15 = int(np.argmin(np.abs(g.xi2 - 1.5)))
    wide = _extent(g.averaged[r15])
    assert all(_extent(g.theta[a, r15]) <= wide for a in range(len(g.ng)))
