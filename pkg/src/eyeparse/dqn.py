"""Dueling Q-network agent that steers the eye window toward a class object.

The search loop follows the reside/simulate structure: each decision is
followed by rounds of greedy N-step rollouts on copies of the state,
each rollout yielding a tanh-squashed discounted target that nudges the
Q value of the rollout's first action.
"""

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .env import N_ACTIONS, EnvState, VisitHeatmap, apply_action, initial_state
from .errors import NumericError
from .rewardnet import CONV_LAYERS, ConvTrunk, RewardVector, _dense_params, confidence
from .voxel import EyeWindow, box_iou, window_input

TRUNK_WIDTH = 64
STREAM_WIDTH = 32


class QNet:
    """Conv trunk, a shared dense layer, then value and advantage streams.

    ``q_init`` seeds the value-stream output bias; setting it at or above
    the upper bound of the targets makes untried actions look attractive.
    """

    kind = "qnet"

    def __init__(self, rng=None, seed=0, n_actions=N_ACTIONS, q_init=1.0):
        rng = rng if rng is not None else nc.RngState(seed)
        self.n_actions = n_actions
        self.trunk = ConvTrunk(rng, prefix="qconv")
        width = CONV_LAYERS[-1][0]
        self.shared = _dense_params(rng, width, TRUNK_WIDTH, "shared")
        self.value = _dense_params(rng, TRUNK_WIDTH, STREAM_WIDTH, "value1") + \
            _dense_params(rng, STREAM_WIDTH, 1, "value2")
        self.advantage = _dense_params(rng, TRUNK_WIDTH, STREAM_WIDTH, "adv1") + \
            _dense_params(rng, STREAM_WIDTH, n_actions, "adv2")
        self.value[3].data[:] = q_init
        center = np.eye(n_actions) - 1.0 / n_actions
        self._center = nc.Tensor(center.astype(np.float32))
        self._center_bias = nc.Tensor(np.zeros(n_actions, dtype=np.float32))

    @property
    def params(self):
        return self.trunk.params + self.shared + self.value + self.advantage

    def named_tensors(self):
        return [(p.name, p) for p in self.params]

    def config(self):
        return {"n_actions": self.n_actions}

    def streams(self, x):
        """``(V, A, Q)`` tensors for one input or a batch."""
        acts = self.trunk(x)
        pooled = nc.global_avg_pool3d(acts[-1])
        h = nc.dense(pooled, self.shared[0], self.shared[1], "relu")
        v = nc.dense(nc.dense(h, self.value[0], self.value[1], "relu"), self.value[2], self.value[3])
        a = nc.dense(nc.dense(h, self.advantage[0], self.advantage[1], "relu"),
                     self.advantage[2], self.advantage[3])
        q = nc.add(v, nc.dense(a, self._center, self._center_bias))
        return v, a, q


def dueling_q(value, advantages):
    """``V + A - mean(A)`` on plain arrays."""
    advantages = np.asarray(advantages, dtype=np.float64)
    return value + advantages - advantages.mean(axis=-1, keepdims=True)


def q_values(model, x):
    with nc.no_grad():
        _, _, q = model.streams(np.asarray(x, dtype=np.float32))
    q = q.data.astype(np.float64)
    if not np.all(np.isfinite(q)):
        raise NumericError("non-finite Q value", layer="q")
    return q


def nstep_target(rewards, q_final, lam):
    """``tanh(sum_t lam^t r_t + lam^N Q')`` for N = len(rewards)."""
    total = 0.0
    for t, r in enumerate(rewards):
        total += lam ** t * r
    return float(np.tanh(total + lam ** len(rewards) * q_final))


def update_params(model, x, action, q_target, eta):
    """One SGD step on ``0.5 (q_target - Q(s, action))^2``; returns the old Q."""
    if not np.isfinite(q_target):
        raise NumericError("non-finite target", layer="q_target")
    _, _, q = model.streams(np.asarray(x, dtype=np.float32))
    q_sa = nc.index(q, action)
    diff = nc.sub(q_sa, float(q_target))
    loss = nc.mul(nc.mul(diff, diff), 0.5)
    nc.backward(loss, params=model.params)
    nc.sgd_step(model.params, eta)
    return float(q_sa.data)


def check_lock(rv, threshold=0.9):
    """Locked when R1 is not less than the threshold."""
    return rv.r1 >= threshold


class RewardDict:
    """Memo of window key -> reward vector, filled on first request."""

    def __init__(self, reward_fn):
        self.reward_fn = reward_fn
        self.table = {}
        self.hits = 0
        self.misses = 0

    def get(self, window):
        key = window.key
        rv = self.table.get(key)
        if rv is None:
            self.misses += 1
            rv = self.reward_fn(window)
            self.table[key] = rv
        else:
            self.hits += 1
        return rv

    def __contains__(self, window):
        return window.key in self.table

    def __len__(self):
        return len(self.table)

    def clear(self):
        self.table.clear()


class WinnerMemory:
    """Per state, the rollout action whose Q was closest to its target."""

    def __init__(self):
        self.table = {}

    def offer(self, key, action, score):
        best = self.table.get(key)
        if best is None or score < best[1]:
            self.table[key] = (int(action), float(score))

    def winner(self, key):
        entry = self.table.get(key)
        return None if entry is None else entry[0]

    def score(self, key):
        entry = self.table.get(key)
        return None if entry is None else entry[1]

    def __len__(self):
        return len(self.table)

    def clear(self):
        self.table.clear()


def select_action(q, key, winners, rng, stuck=False):
    """Random when stuck; else the stored winner half the time; else argmax.

    ``np.argmax`` breaks ties toward the lowest action id.
    """
    if stuck:
        return int(rng.integers(0, len(q)))
    if winners is not None:
        w = winners.winner(key)
        if w is not None and rng.random() < 0.5:
            return w
    return int(np.argmax(q))


class WindowInputs:
    """Bounded cache of resampled CNN inputs for windows of one grid."""

    def __init__(self, grid, capacity=256):
        self.grid = grid
        self.capacity = capacity
        self._cache = OrderedDict()

    def __call__(self, window):
        key = window.key
        x = self._cache.get(key)
        if x is None:
            x = window_input(self.grid, window)
            self._cache[key] = x
            if len(self._cache) > self.capacity:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return x


@dataclass
class SimTrace:
    states: list
    actions: list
    rewards: list
    q_first: float
    q_final: float
    reward_vectors: list = field(default_factory=list)


def simulate_nstep(state, model, reward_dict, inputs, n_steps, lam, first_action=None,
                   winners=None, rng=None):
    """Greedy rollout of ``n_steps`` on a copy of ``state``.

    ``first_action`` forces the opening move (default: greedy). With
    ``winners`` given, a simulated state that has a stored winner follows
    it with probability one half. Returns ``(q_target, trace)``; the
    caller's state is never touched because states are immutable values.
    """
    states, actions, rewards, rvs = [state], [], [], []
    q_first = None
    s = state
    for _ in range(n_steps):
        q = q_values(model, inputs(s.window))
        if q_first is None and first_action is not None:
            a = int(first_action)
        elif winners is not None:
            a = select_action(q, s.key, winners, rng)
        else:
            a = int(np.argmax(q))
        if q_first is None:
            q_first = float(q[a])
        s = apply_action(s, a)
        rv = reward_dict.get(s.window)
        states.append(s)
        actions.append(a)
        rvs.append(rv)
        rewards.append(confidence(rv))
    q_final = float(q_values(model, inputs(s.window)).max())
    q_tg = nstep_target(rewards, q_final, lam)
    return q_tg, SimTrace(states, actions, rewards, q_first, q_final, rvs)


START_MODES = ("center", "full")


def start_state(dims, mode="center"):
    if mode == "full":
        return EnvState(EyeWindow.full(dims), tuple(dims))
    return initial_state(dims)


@dataclass
class SearchConfig:
    mis: int = 5000          # max iterate steps
    mrs: int = 1             # reside rounds per decision
    mss: int = 3             # simulated steps per rollout (N)
    lam: float = 0.1         # decay
    mth: float = 0.9         # lock threshold on R1
    k: int = 13              # rollouts per reside round
    eta: float = 0.2         # learning rate
    patience: int = 5        # stalled decisions before a random walk step
    winner_replay: bool = True
    replay_in_rollouts: bool = False  # rollouts also follow stored winners
    probe_lock: bool = True  # lock states first reached inside a rollout
    max_locks: int = 0       # 0 = unlimited
    start: str = "center"    # "center": half extent; "full": the whole grid
    branch: bool = True      # the n-th rollout of a decision opens with the n-th ranked action

    def __post_init__(self):
        for name in ("mis", "mrs", "mss", "k", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.lam <= 1:
            raise ValueError("lam must lie in [0, 1]")
        if not 0 < self.mth < 1:
            raise ValueError("mth must lie in (0, 1)")
        if self.start not in START_MODES:
            raise ValueError(f"start must be one of {START_MODES}")


@dataclass
class LockEvent:
    window: object
    step: int
    reward: RewardVector


@dataclass
class SearchResult:
    locks: list
    heatmap: VisitHeatmap
    stats: dict
    log: list
    active: object


def iou_reward(target_box):
    """Ground-truth oracle: R1 is the window's IoU with ``target_box``."""
    def reward(window):
        iou = box_iou(window, target_box)
        return RewardVector(iou, 1.0 - iou)
    return reward


EMPTY_REWARD = RewardVector(0.0, 1.0)


def rewardnet_reward(model, inputs):
    """Reward from ``model``; a window over no occupied unit scores zero outright."""
    def reward(window):
        if not inputs.grid.counts[window.slices].any():
            return EMPTY_REWARD
        return model.analyze(inputs(window))[0]
    return reward


def search_class(grid, qnet, config, rng, reward=None, reward_model=None, on_lock=None,
                 log=None, start=None):
    """Drive the eye window over ``grid`` until budget or scene exhausted.

    Rewards come from ``reward(window)`` or from ``reward_model`` applied to
    the active grid. ``on_lock(active_grid, window)`` returns the grid left
    after labelling; by default the window's units are simply removed.
    ``start(active_grid)`` may supply the window to (re)start from; when it
    is omitted or returns None, ``config.start`` decides.
    """
    if (reward is None) == (reward_model is None):
        raise ValueError("give exactly one of reward or reward_model")
    active = grid
    inputs = WindowInputs(active)
    reward_fn = reward if reward is not None else rewardnet_reward(reward_model, inputs)
    rdict = RewardDict(reward_fn)
    winners = WinnerMemory()
    heatmap = VisitHeatmap(grid.dims)
    def fresh_state():
        window = start(active) if start is not None else None
        if window is None:
            return start_state(grid.dims, config.start)
        return EnvState(window, tuple(grid.dims))

    state = fresh_state()
    locks, lines = [], []
    locked_keys = set()
    decided = set()
    stats = {"steps": 0, "random_walks": 0, "winner_used": 0, "updates": 0,
             "first_lock_step": None, "terminated": "budget"}
    prev_best, stall = -np.inf, 0
    rollout_replay = config.winner_replay and config.replay_in_rollouts

    def do_lock(window, step, rv):
        nonlocal active, state, inputs, prev_best, stall
        locks.append(LockEvent(window, step, rv))
        locked_keys.add(window.key)
        if stats["first_lock_step"] is None:
            stats["first_lock_step"] = step
        lines.append(f"step={step} event=lock lo={window.lo} hi={window.hi} r1={rv.r1:.4f}")
        active = on_lock(active, window) if on_lock is not None else active.without(window)
        inputs = WindowInputs(active)
        if reward_model is not None:
            rdict.reward_fn = rewardnet_reward(reward_model, inputs)
        rdict.clear()
        winners.clear()
        decided.clear()
        state = fresh_state()
        prev_best, stall = -np.inf, 0

    def lockable(window, rv):
        return check_lock(rv, config.mth) and window.key not in locked_keys

    for step in range(config.mis):
        if not active.occupied.any():
            stats["terminated"] = "empty"
            break
        if config.max_locks and len(locks) >= config.max_locks:
            stats["terminated"] = "max_locks"
            break
        stats["steps"] = step + 1
        q = q_values(qnet, inputs(state.window))
        best = float(q.max())
        stuck = stall >= config.patience
        if best > prev_best:
            stall = 0
        else:
            stall += 1
        prev_best = best
        # winners are replayed only when the window returns to a state it left before
        revisit = state.key in decided
        decided.add(state.key)
        replay = winners if config.winner_replay and revisit else None
        action = select_action(q, state.key, replay, rng, stuck)
        if stuck:
            stats["random_walks"] += 1
            stall = 0
        elif action != int(np.argmax(q)):
            stats["winner_used"] += 1
        state = apply_action(state, action)
        heatmap.record_visit(state.window)
        rv = rdict.get(state.window)
        line = (f"step={step} lo={state.window.lo} hi={state.window.hi} action={action} "
                f"r={confidence(rv):.4f} q={q[action]:.4f}")
        lines.append(line)
        if log is not None:
            log(line)
        if lockable(state.window, rv):
            do_lock(state.window, step, rv)
            continue
        probe = None
        x = inputs(state.window)
        q_state = q_values(qnet, x)
        # winner score: distance between the state's value and each rollout target
        q_ref = float(q_state.max())
        # opening moves cycle through the actions in the state's initial Q order
        order = np.argsort(-q_state, kind="stable") if config.branch else None
        n = 0
        for _ in range(config.mrs):
            for _ in range(config.k):
                first = None if order is None else order[n % N_ACTIONS]
                n += 1
                q_tg, trace = simulate_nstep(state, qnet, rdict, inputs, config.mss, config.lam,
                                             first_action=first,
                                             winners=winners if rollout_replay else None,
                                             rng=rng)
                update_params(qnet, x, trace.actions[0], q_tg, config.eta)
                stats["updates"] += 1
                winners.offer(state.key, trace.actions[0], abs(q_ref - q_tg))
                if config.probe_lock and probe is None:
                    for s, prv in zip(trace.states[1:], trace.reward_vectors):
                        if lockable(s.window, prv):
                            probe = (s, prv)
                            break
            if probe is not None:
                break
        if probe is not None:
            s, prv = probe
            heatmap.record_visit(s.window)
            state = s
            do_lock(s.window, step, prv)
    stats["locks"] = len(locks)
    stats["reward_cache"] = {"hits": rdict.hits, "misses": rdict.misses}
    return SearchResult(locks, heatmap, stats, lines, active)
