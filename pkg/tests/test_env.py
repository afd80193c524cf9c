import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eyeparse.env import (N_ACTIONS, NOOP, EnvState, VisitHeatmap, action_name, apply_action,
                          decode, initial_state, initial_window, legal_actions)
from eyeparse.voxel import EyeWindow

DIMS = (10, 10, 10)


def state(lo, hi, dims=DIMS):
    return EnvState(EyeWindow(lo, hi), dims)


def test_action_ids():
    assert N_ACTIONS == 13 and NOOP == 12
    assert action_name(0) == "expand+x" and action_name(1) == "contract+x"
    assert action_name(NOOP) == "noop"
    with pytest.raises(ValueError):
        decode(13)


def test_expand_plus_x():
    s = apply_action(state((2, 2, 2), (6, 6, 6)), 0)
    assert s.window == EyeWindow((2, 2, 2), (7, 6, 6))
    assert s.step == 1


def test_contract_at_min_side_is_absorbed():
    s0 = state((2, 2, 2), (4, 6, 6))
    s1 = apply_action(s0, 1)
    assert s1.window == s0.window and s1.step == 1


def test_expand_at_bound_is_absorbed():
    s0 = state((0, 0, 0), (10, 10, 10))
    assert apply_action(s0, 0).window == s0.window
    assert apply_action(s0, 2).window == s0.window


def test_noop_keeps_window():
    s0 = state((1, 1, 1), (5, 5, 5))
    s1 = apply_action(s0, NOOP)
    assert s1.window == s0.window and s1.step == 1


def test_expand_then_contract_is_inverse():
    s0 = state((2, 2, 2), (6, 6, 6))
    for side in range(6):
        s = apply_action(apply_action(s0, 2 * side), 2 * side + 1)
        assert s.window == s0.window


def test_interior_window_all_effective():
    flags = legal_actions(state((2, 2, 2), (6, 6, 6)))
    assert [a for a, _ in flags] == list(range(13))
    assert all(eff for a, eff in flags if a != NOOP)


def test_full_grid_only_contractions_effective():
    flags = dict(legal_actions(state((0, 0, 0), DIMS)))
    for a in range(12):
        assert flags[a] == (a % 2 == 1)
    assert flags[NOOP] is False


def _oracle_effective(lo, hi, dims, a):
    if a == NOOP:
        return False
    side, op = divmod(a, 2)
    axis, positive = side // 2, side % 2 == 0
    l, h = lo[axis], hi[axis]
    if op == 0:
        return h + 1 <= dims[axis] if positive else l - 1 >= 0
    return h - l > 2


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 8), min_size=3, max_size=3),
       st.lists(st.integers(0, 8), min_size=3, max_size=3))
def test_legal_flags_match_bound_arithmetic(lo, extra):
    lo = [min(l, 8) for l in lo]
    hi = [min(10, l + 2 + e) for l, e in zip(lo, extra)]
    s = state(lo, hi)
    for a, eff in legal_actions(s):
        assert eff == _oracle_effective(lo, hi, DIMS, a)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 12), max_size=60),
       st.tuples(st.integers(2, 12), st.integers(2, 12), st.integers(2, 12)))
def test_random_sequences_keep_window_valid(actions, dims):
    s = initial_state(dims)
    for a in actions:
        before = s
        s = apply_action(s, a)
        assert before.step + 1 == s.step
        assert s.window.within(dims)
        assert all(v >= 2 for v in s.window.size)
    assert s.step == len(actions)


def test_apply_action_is_pure():
    s0 = state((2, 2, 2), (6, 6, 6))
    apply_action(s0, 0)
    assert s0.window == EyeWindow((2, 2, 2), (6, 6, 6)) and s0.step == 0


def test_initial_window_centred_half():
    w = initial_window((10, 8, 6))
    assert w.size == (5, 4, 3)
    assert w.lo == (2, 2, 1)


def test_single_visit_and_disjoint_visits():
    hm = VisitHeatmap((6, 6, 6))
    hm.record_visit(EyeWindow((0, 0, 0), (2, 2, 2)))
    assert hm.total == 8 and hm.counts.max() == 1
    hm.record_visit(EyeWindow((3, 3, 3), (5, 5, 5)))
    assert hm.total == 16 and hm.counts.max() == 1


def test_overlapping_visits_match_enumeration():
    hm = VisitHeatmap((5, 5, 5))
    wins = [EyeWindow((0, 0, 0), (3, 3, 3)), EyeWindow((1, 1, 1), (4, 4, 4))]
    for w in wins:
        hm.record_visit(w)
    expected = np.zeros((5, 5, 5), dtype=int)
    for w in wins:
        for i in range(w.lo[0], w.hi[0]):
            for j in range(w.lo[1], w.hi[1]):
                for k in range(w.lo[2], w.hi[2]):
                    expected[i, j, k] += 1
    np.testing.assert_array_equal(hm.counts, expected)
    assert hm.counts.max() == 2
    assert hm.total == sum(w.volume for w in wins)


def test_heatmap_text_round_trip(tmp_path):
    hm = VisitHeatmap((3, 4, 2))
    hm.record_visit(EyeWindow((0, 1, 0), (2, 4, 2)))
    hm.record_visit(EyeWindow((1, 0, 0), (3, 2, 2)))
    path = tmp_path / "h.txt"
    hm.write_text(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "3 4 2"
    # x varies fastest
    assert int(lines[1]) == hm.counts[0, 0, 0] and int(lines[2]) == hm.counts[1, 0, 0]
    back = VisitHeatmap.read_text(path)
    np.testing.assert_array_equal(back.counts, hm.counts)
    paths = hm.write_slices(tmp_path / "slices")
    assert len(paths) == 2
    np.testing.assert_array_equal(np.loadtxt(paths[0], delimiter=",").T, hm.counts[:, :, 0])
