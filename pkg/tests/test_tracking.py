import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dustscope.floquet import amplitude_sweep
from dustscope.tracking import (
    AMBIGUOUS_OVERLAP, _match, branch_analysis, detect_swaps, mean_quanta, track_branches,
)


@pytest.fixture(scope="module")
def near_15(spectrum_q):
    return branch_analysis(spectrum_q, 8.02, 0.2, step=0.005)


def _is_bijection(assignment):
    k = assignment.shape[1]
    return all(sorted(row) == list(range(k)) for row in assignment)


def test_single_point_grid_is_bare(spectrum):
    bs = track_branches(amplitude_sweep(spectrum, 8.05, [0.0]), spectrum)
    assert np.array_equal(bs.assignment[0], np.arange(spectrum.count))
    assert np.allclose(np.abs(bs.modes[0]), np.eye(spectrum.count), atol=1e-12)
    assert bs.swaps == []


def test_nonzero_start_rejected(spectrum):
    with pytest.raises(ValueError):
        track_branches(amplitude_sweep(spectrum, 8.05, [0.0, 0.1]).__class__(
            np.array([0.1]), (amplitude_sweep(spectrum, 8.05, [0.0]).sets[0],), 8.05, 0.0))


def test_mean_quanta_start_at_index(near_15):
    assert np.array_equal(near_15.mean_quanta[0], np.arange(near_15.count, dtype=float))


def test_bijection_and_continuity(near_15):
    assert _is_bijection(near_15.assignment)
    flagged = set(near_15.ambiguous)
    for s in range(1, len(near_15.xi2)):
        for i in range(near_15.count):
            if (s, i) not in flagged:
                assert near_15.step_overlap[s, i] >= AMBIGUOUS_OVERLAP


def test_total_quanta_invariant_under_relabelling(near_15):
    rng = np.random.default_rng(0)
    nq = near_15.mean_quanta
    for k in range(0, len(nq), 7):
        assert np.isclose(nq[k].sum(), nq[k, rng.permutation(near_15.count)].sum())


def test_one_five_swap_detected(near_15):
    ev = [e for e in near_15.swaps if e.branches == (1, 5)]
    assert len(ev) == 1
    e = ev[0]
    assert abs(e.xi2 - 0.10) <= 0.03
    assert e.characters == ((1, 5), (5, 1))
    assert e.xi2 > 0 and e.width > 0


def test_swap_symmetry(near_15):
    nq = near_15.mean_quanta
    for e in near_15.swaps:
        i, j = e.branches
        assert i != j
        lo = int(np.searchsorted(near_15.xi2, e.xi2 - 0.05))
        hi = int(np.searchsorted(near_15.xi2, e.xi2 + 0.05, side="right")) - 1
        delta = nq[hi] - nq[lo]
        di, dj = delta[i], delta[j]
        assert di * dj < 0
        others = np.delete(np.abs(delta), [i, j])
        if others.max() < 0.1:
            assert abs(di + dj) < 0.2
    assert any(e.branches == (1, 5) for e in near_15.swaps)


def test_refinement_moves_event_less_than_a_step(spectrum_q, near_15):
    coarse = branch_analysis(spectrum_q, 8.02, 0.2, step=0.01)
    a = [e.xi2 for e in coarse.swaps if e.branches == (1, 5)]
    b = [e.xi2 for e in near_15.swaps if e.branches == (1, 5)]
    assert len(a) == len(b) == 1
    assert abs(a[0] - b[0]) < 0.01


def test_quiet_drive_has_no_computational_swaps(spectrum_q):
    bs = branch_analysis(spectrum_q, 7.0, 1.0, step=0.005)
    assert not any(set(e.branches) & {0, 1} for e in bs.swaps)
    assert _is_bijection(bs.assignment)


def test_swaps_need_character_exchange(near_15):
    # Shuffle the modes of branch 1 after the event: the N curves still cross,
    # but without a matching character trade no event may be reported.
    mod = type(near_15)(near_15.xi2, near_15.assignment, near_15.modes.copy(), near_15.quasienergies,
                        near_15.step_overlap, near_15.omega_d, near_15.ng)
    mod.modes[:, 5] = mod.modes[0, 5]
    mod.mean_quanta = mean_quanta(mod)
    assert not any(e.branches == (1, 5) for e in detect_swaps(mod))


# --- matching ----------------------------------------------------------------------------------


def test_match_prefers_descending_overlap():
    ov = np.array([[0.9, 0.1], [0.6, 0.4]])
    assert list(_match(ov)) == [0, 1]


def test_match_repairs_greedy_conflict():
    # Greedy grabs (0,0)=0.8, leaving branch 1 with 0.0; exhaustive repair does better.
    ov = np.array([[0.8, 0.7, 0.0], [0.75, 0.0, 0.1], [0.0, 0.0, 0.9]])
    a = _match(ov)
    assert sorted(a) == [0, 1, 2]
    assert list(a) == [1, 0, 2]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**31 - 1))
def test_match_is_permutation(k, seed):
    ov = np.random.default_rng(seed).random((k, k))
    assert sorted(_match(ov)) == list(range(k))


def test_ambiguous_steps_flagged(spectrum_q):
    # A single huge amplitude step cannot be tracked reliably.
    bs = track_branches(amplitude_sweep(spectrum_q, 7.825, [0.0, 1.8]), spectrum_q)
    assert bs.ambiguous
    assert all(s == 1 for s, _ in bs.ambiguous)


def test_branch_csv(tmp_path, near_15):
    near_15.write_csv(tmp_path / "b.csv", {"version": "x"})
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[1] == "xi2,branch,N,quasienergy_ghz"
    assert len(lines) == 2 + near_15.count * len(near_15.xi2)
