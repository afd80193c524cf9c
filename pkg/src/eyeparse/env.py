"""The eye-window environment: discrete face moves and visit heatmaps."""

import os
from dataclasses import dataclass, replace

import numpy as np

from .voxel import EyeWindow

SIDES = ("+x", "-x", "+y", "-y", "+z", "-z")
EXPAND, CONTRACT = 0, 1
NOOP = 12
N_ACTIONS = 13


def action_name(action):
    if action == NOOP:
        return "noop"
    side, op = divmod(int(action), 2)
    return f"{'expand' if op == EXPAND else 'contract'}{SIDES[side]}"


def decode(action):
    """``(axis, positive_side, op)`` for a face action; None for the no-op."""
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"action id {action} outside [0, {N_ACTIONS - 1}]")
    if action == NOOP:
        return None
    side, op = divmod(int(action), 2)
    return side // 2, side % 2 == 0, op


@dataclass(frozen=True)
class EnvState:
    window: EyeWindow
    dims: tuple
    step: int = 0

    @property
    def key(self):
        return self.window.key


def initial_window(dims):
    """Centred window spanning half the grid on every axis."""
    size = [max(2, d // 2) for d in dims]
    lo = [(d - s) // 2 for d, s in zip(dims, size)]
    return EyeWindow(lo, [l + s for l, s in zip(lo, size)])


def initial_state(dims):
    return EnvState(initial_window(dims), tuple(dims))


def _moved(window, dims, action):
    spec = decode(action)
    if spec is None:
        return window
    axis, positive, op = spec
    lo, hi = list(window.lo), list(window.hi)
    grow = op == EXPAND
    if positive:
        hi[axis] += 1 if grow else -1
    else:
        lo[axis] += -1 if grow else 1
    if lo[axis] < 0 or hi[axis] > dims[axis] or hi[axis] - lo[axis] < 2:
        return window
    return EyeWindow(lo, hi)


def apply_action(state, action):
    """Move one face by one unit; blocked moves leave the window as is."""
    return replace(state, window=_moved(state.window, state.dims, action), step=state.step + 1)


def legal_actions(state):
    """All 13 actions with a flag telling whether each changes the window."""
    return [(a, _moved(state.window, state.dims, a) != state.window) for a in range(N_ACTIONS)]


class VisitHeatmap:
    """Per-unit count of how often the eye window covered each unit."""

    def __init__(self, dims):
        self.dims = tuple(dims)
        self.counts = np.zeros(self.dims, dtype=np.int64)
        self.visits = 0

    def record_visit(self, window):
        self.counts[window.slices] += 1
        self.visits += 1
        return self

    @property
    def total(self):
        return int(self.counts.sum())

    def write_text(self, path):
        """``Nx Ny Nz`` header then one count per line, x fastest."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("{} {} {}\n".format(*self.dims))
            for v in self.counts.ravel(order="F"):
                fh.write(f"{v}\n")

    @classmethod
    def read_text(cls, path):
        with open(path, encoding="utf-8") as fh:
            dims = tuple(int(v) for v in fh.readline().split())
            values = np.array([int(line) for line in fh if line.strip()], dtype=np.int64)
        hm = cls(dims)
        hm.counts = values.reshape(dims, order="F")
        return hm

    def write_slices(self, directory, prefix="heatmap"):
        """One CSV per z layer: rows are y, columns are x."""
        os.makedirs(directory, exist_ok=True)
        paths = []
        for z in range(self.dims[2]):
            path = os.path.join(directory, f"{prefix}_z{z:03d}.csv")
            np.savetxt(path, self.counts[:, :, z].T, fmt="%d", delimiter=",")
            paths.append(path)
        return paths
