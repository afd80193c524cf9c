import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eyeparse import dqn
from eyeparse.dqn import (QNet, RewardDict, SearchConfig, WindowInputs, WinnerMemory, check_lock,
                          dueling_q, iou_reward, nstep_target, q_values, search_class,
                          select_action, simulate_nstep, update_params)
from eyeparse.env import EnvState
from eyeparse.errors import NumericError
from eyeparse.numcore import RngState
from eyeparse.rewardnet import RewardVector
from eyeparse.voxel import EyeWindow, OccupancyGrid, box_iou


def _grid(dims=(12, 12, 12), box=((3, 3, 0), (7, 8, 5))):
    counts = np.zeros(dims, dtype=int)
    colors = np.zeros(dims + (3,))
    sl = tuple(slice(l, h) for l, h in zip(*box))
    counts[sl] = 1
    colors[sl] = (120, 80, 40)
    return OccupancyGrid(counts, colors, 0.1, (0, 0, 0))


def _x(seed):
    return np.random.default_rng(seed).random((4, 32, 32, 32)).astype(np.float32)


def test_dueling_examples():
    assert np.all(dueling_q(0.0, np.zeros(13)) == 0)
    a = np.zeros(13)
    a[:2] = (0.5, -0.5)
    assert dueling_q(1.0, a).mean() == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.lists(st.floats(-5, 5), min_size=13, max_size=13))
def test_dueling_matches_formula(v, a):
    a = np.array(a)
    np.testing.assert_allclose(dueling_q(v, a), v + a - a.mean(), atol=1e-12)


def test_mean_q_equals_value_on_random_states():
    net = QNet(seed=0)
    xs = np.stack([_x(s) for s in range(100)])
    v, _, q = net.streams(xs)
    np.testing.assert_allclose(q.data.mean(axis=1), v.data[:, 0], atol=1e-5)


def test_q_values_shape_and_finite_check():
    net = QNet(seed=1)
    assert q_values(net, _x(0)).shape == (13,)
    net.value[3].data[:] = np.inf
    with pytest.raises(NumericError):
        q_values(net, _x(0))


def test_greedy_without_winner_and_tie_break():
    rng = RngState(0)
    q = np.arange(13.0)
    assert select_action(q, (0,), None, rng) == 12
    assert select_action(np.zeros(13), (0,), WinnerMemory(), rng) == 0


def test_winner_replayed_half_the_time():
    mem = WinnerMemory()
    mem.offer((1,), 7, 0.1)
    rng = RngState(42)
    q = np.zeros(13)
    q[3] = 1.0
    picks = [select_action(q, (1,), mem, rng) for _ in range(10_000)]
    assert abs(picks.count(7) / 10_000 - 0.5) <= 0.02
    assert set(picks) == {3, 7}


def test_stuck_selection_is_uniform():
    rng = RngState(1)
    picks = [select_action(np.arange(13.0), (0,), None, rng, stuck=True) for _ in range(2600)]
    counts = np.bincount(picks, minlength=13)
    assert counts.min() > 120


def test_winner_memory_keeps_minimum():
    mem = WinnerMemory()
    mem.offer((0,), 1, 0.5)
    mem.offer((0,), 2, 0.7)
    mem.offer((0,), 3, 0.2)
    assert mem.winner((0,)) == 3 and mem.score((0,)) == 0.2
    assert mem.winner((9,)) is None


def test_nstep_examples():
    assert nstep_target([0.0, 0.0], 0.0, 0.5) == 0.0
    assert nstep_target([1.0], 0.0, 0.0) == pytest.approx(math.tanh(1.0), abs=1e-12)
    assert nstep_target([1.0, 1.0], 1.0, 0.5) == pytest.approx(math.tanh(1.75), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.floats(0, 1), st.lists(st.floats(0, 3), min_size=8, max_size=8),
       st.floats(-1, 1))
def test_nstep_target_in_open_interval(n, lam, r, q_final):
    t = nstep_target(r[:n], q_final, lam)
    direct = math.tanh(sum(lam ** i * r[i] for i in range(n)) + lam ** n * q_final)
    assert t == pytest.approx(direct, abs=1e-9)
    assert -1 < t < 1 or abs(direct) == 1.0


def test_update_zero_error_and_zero_rate_leave_params():
    net = QNet(seed=2)
    x = _x(3)
    before = [p.data.copy() for p in net.params]
    q = q_values(net, x)
    update_params(net, x, 4, float(np.float32(q[4])), 0.1)
    for a, p in zip(before, net.params):
        np.testing.assert_allclose(a, p.data, atol=1e-6)
    update_params(net, x, 4, 0.9, 0.0)
    for a, p in zip(before, net.params):
        np.testing.assert_allclose(a, p.data, atol=1e-6)


def test_update_moves_q_toward_target():
    net = QNet(seed=3, q_init=0.0)
    x = _x(4)
    q0 = q_values(net, x)[5]
    update_params(net, x, 5, q0 + 0.5, 1e-3)
    assert q_values(net, x)[5] > q0


def test_update_rejects_non_finite_target():
    with pytest.raises(NumericError):
        update_params(QNet(seed=0), _x(0), 0, float("nan"), 0.1)


def test_check_lock_threshold():
    assert check_lock(RewardVector(0.95, 0.05))
    assert check_lock(RewardVector(0.9, 0.1))
    assert not check_lock(RewardVector(0.89, 0.11))


def test_reward_dict_caches():
    calls = []

    def fn(w):
        calls.append(w)
        return RewardVector(0.25, 0.75)

    rd = RewardDict(fn)
    w = EyeWindow((0, 0, 0), (2, 2, 2))
    first = rd.get(w)
    second = rd.get(EyeWindow((0, 0, 0), (2, 2, 2)))
    assert first == second and len(calls) == 1
    assert rd.hits == 1 and rd.misses == 1 and w in rd


def test_simulate_leaves_live_state_and_fills_dict():
    grid = _grid()
    target = EyeWindow((3, 3, 0), (7, 8, 5))
    rd = RewardDict(iou_reward(target))
    s0 = EnvState(EyeWindow((2, 2, 1), (8, 8, 6)), grid.dims)
    snapshot = (s0.window, s0.step)
    q_tg, trace = simulate_nstep(s0, QNet(seed=4), rd, WindowInputs(grid), 3, 0.5)
    assert (s0.window, s0.step) == snapshot
    assert len(trace.actions) == 3 and len(trace.rewards) == 3
    assert -1 < q_tg < 1
    for s, r in zip(trace.states[1:], trace.rewards):
        assert s.window in rd
        assert r == pytest.approx(3 * box_iou(s.window, target))
    q_tg2, _ = simulate_nstep(s0, QNet(seed=4), rd, WindowInputs(grid), 3, 0.5)
    assert q_tg2 == q_tg
    assert rd.hits >= 3


def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(mis=0)
    with pytest.raises(ValueError):
        SearchConfig(lam=1.5)
    with pytest.raises(ValueError):
        SearchConfig(mth=1.0)
    with pytest.raises(ValueError):
        SearchConfig(start="corner")


def test_empty_scene_terminates_immediately():
    grid = OccupancyGrid(np.zeros((6, 6, 6), dtype=int), np.zeros((6, 6, 6, 3)), 0.1, (0, 0, 0))
    res = search_class(grid, QNet(seed=0), SearchConfig(mis=50), RngState(0),
                       reward=lambda w: RewardVector(0.0, 1.0))
    assert res.locks == [] and res.stats["terminated"] == "empty" and res.stats["steps"] == 0


def test_oracle_search_locks_small_scene():
    box = ((3, 3, 0), (7, 8, 5))
    grid = _grid(box=box)
    target = EyeWindow(*box)
    res = search_class(grid, QNet(seed=0), SearchConfig(mis=400, max_locks=1), RngState(0),
                       reward=iou_reward(target))
    assert len(res.locks) == 1
    assert box_iou(res.locks[0].window, target) >= 0.9
    assert not res.active.counts[res.locks[0].window.slices].any()
    assert res.heatmap.visits >= res.stats["steps"]
    assert any("event=lock" in line for line in res.log)


def test_reward_model_skips_empty_windows():
    grid = _grid()

    class Boom:
        def analyze(self, x):
            raise AssertionError("net evaluated on an empty window")

    fn = dqn.rewardnet_reward(Boom(), WindowInputs(grid))
    assert fn(EyeWindow((9, 9, 9), (12, 12, 12))) == dqn.EMPTY_REWARD


def test_start_callback_sets_first_window():
    grid = _grid()
    start = EyeWindow((3, 3, 0), (7, 8, 5))
    res = search_class(grid, QNet(seed=0), SearchConfig(mis=1, probe_lock=False), RngState(0),
                       reward=lambda w: RewardVector(0.0, 1.0), start=lambda g: start)
    first = res.log[0]
    lo = tuple(int(v) for v in first.split("lo=(")[1].split(")")[0].split(","))
    hi = tuple(int(v) for v in first.split("hi=(")[1].split(")")[0].split(","))
    # one action away from the supplied start
    moved = sum(abs(a - b) for a, b in zip(lo + hi, start.lo + start.hi))
    assert moved <= 1
