"""Point clouds, attributed occupancy grids and eye-window sampling."""

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, CapacityError, InputError

DEFAULT_UNIT_SIZE = 0.05
DEFAULT_UNIT_BUDGET = 2 ** 27
CNN_SIZE = (32, 32, 32)


@dataclass(frozen=True)
class PointCloud:
    """Points with position in meters, 0-255 colour and an optional label.

    ``labels`` is None for an unlabeled cloud.
    """

    xyz: np.ndarray
    rgb: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        rgb = np.asarray(self.rgb).reshape(-1, 3)
        if len(xyz) != len(rgb):
            raise InputError(f"{len(xyz)} positions but {len(rgb)} colours")
        if not np.all(np.isfinite(xyz)):
            raise InputError("point coordinates must be finite")
        if rgb.size and (rgb.min() < 0 or rgb.max() > 255):
            raise InputError("colours must lie in 0..255")
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "rgb", rgb.astype(np.int64))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(labels) != len(xyz):
                raise InputError(f"{len(labels)} labels for {len(xyz)} points")
            if labels.size and labels.min() < 0:
                raise InputError("labels must be non-negative")
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.xyz)

    def subset(self, mask_or_index):
        labels = None if self.labels is None else self.labels[mask_or_index]
        return PointCloud(self.xyz[mask_or_index], self.rgb[mask_or_index], labels)

    def with_labels(self, labels):
        return PointCloud(self.xyz, self.rgb, labels)


def read_points(path):
    """Parse the whitespace ``x y z r g b [label]`` text format."""
    rows, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (6, 7):
                raise InputError(f"{path}:{lineno}: expected 6 or 7 fields, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts[:3]] + [int(v) for v in parts[3:6]])
                if len(parts) == 7:
                    labels.append(int(parts[6]))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    if labels and len(labels) != len(rows):
        raise InputError(f"{path}: label column present on only some lines")
    arr = np.array(rows, dtype=np.float64).reshape(-1, 6)
    return PointCloud(arr[:, :3], arr[:, 3:].astype(np.int64), labels if labels else None)


def format_points(cloud, labels=None):
    labels = cloud.labels if labels is None else labels
    lines = []
    for i in range(len(cloud)):
        x, y, z = cloud.xyz[i]
        r, g, b = cloud.rgb[i]
        line = f"{x:.4f} {y:.4f} {z:.4f} {r} {g} {b}"
        if labels is not None:
            line += f" {labels[i]}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def write_points(path, cloud, labels=None, header=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        fh.write(format_points(cloud, labels))


@dataclass(frozen=True)
class EyeWindow:
    """Axis-aligned box of grid units, ``lo`` inclusive and ``hi`` exclusive."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise InputError("window corners must be 3-vectors")
        if any(h - l < 2 for l, h in zip(lo, hi)):
            raise InputError(f"window sides must be at least 2 units: {lo}..{hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def size(self):
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def volume(self):
        s = self.size
        return s[0] * s[1] * s[2]

    @property
    def key(self):
        return self.lo + self.hi

    @property
    def slices(self):
        return tuple(slice(l, h) for l, h in zip(self.lo, self.hi))

    def within(self, dims):
        return all(0 <= l and h <= d for l, h, d in zip(self.lo, self.hi, dims))

    @classmethod
    def full(cls, dims):
        return cls((0, 0, 0), tuple(dims))


def box_iou(a, b):
    """Intersection over union of two unit boxes (any objects with lo/hi)."""
    inter = 1
    for al, ah, bl, bh in zip(a.lo, a.hi, b.lo, b.hi):
        side = min(ah, bh) - max(al, bl)
        if side <= 0:
            return 0.0
        inter *= side
    va = np.prod([h - l for l, h in zip(a.lo, a.hi)])
    vb = np.prod([h - l for l, h in zip(b.lo, b.hi)])
    return float(inter / (va + vb - inter))


class OccupancyGrid:
    """Dense lattice of units carrying point count and mean colour.

    Arrays are read-only; derive new grids instead of editing in place.
    """

    def __init__(self, counts, colors, unit_size, origin):
        counts = np.asarray(counts, dtype=np.int64)
        colors = np.asarray(colors, dtype=np.float64)
        if counts.ndim != 3 or colors.shape != counts.shape + (3,):
            raise InputError(f"grid arrays disagree: counts {counts.shape}, colors {colors.shape}")
        if unit_size <= 0:
            raise InputError("unit_size must be positive")
        counts.setflags(write=False)
        colors.setflags(write=False)
        self.counts = counts
        self.colors = colors
        self.unit_size = float(unit_size)
        self.origin = tuple(float(v) for v in origin)

    @property
    def dims(self):
        return self.counts.shape

    @property
    def occupied(self):
        return self.counts > 0

    @property
    def n_units(self):
        return self.counts.size

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (self.dims == other.dims and self.unit_size == other.unit_size
                and self.origin == other.origin
                and np.array_equal(self.counts, other.counts)
                and np.array_equal(self.colors, other.colors))

    def __repr__(self):
        return (f"OccupancyGrid(dims={self.dims}, unit_size={self.unit_size}, "
                f"occupied={int(self.occupied.sum())})")

    def without(self, window):
        """Copy with every unit inside ``window`` emptied."""
        counts = self.counts.copy()
        colors = self.colors.copy()
        counts[window.slices] = 0
        colors[window.slices] = 0
        return OccupancyGrid(counts, colors, self.unit_size, self.origin)


def grid_shape(cloud, unit_size):
    extent = cloud.xyz.max(axis=0) - cloud.xyz.min(axis=0)
    # tolerance keeps an exact multiple of the unit from spawning an extra layer
    return tuple(max(1, int(np.ceil(e / unit_size - 1e-9))) for e in extent)


def unit_indices(xyz, unit_size, origin, dims):
    """Unit index of each point; points on the far boundary clamp inward."""
    idx = np.floor((np.asarray(xyz) - np.asarray(origin)) / unit_size).astype(np.int64)
    return np.clip(idx, 0, np.asarray(dims) - 1)


def voxelize(cloud, unit_size=DEFAULT_UNIT_SIZE, origin=None, dims=None,
             unit_budget=DEFAULT_UNIT_BUDGET):
    """Bin ``cloud`` into a grid spanning its bounding box.

    ``origin`` and ``dims`` may be fixed to voxelize a subset of a scene
    on the scene's own lattice.
    """
    if unit_size <= 0:
        raise InputError("unit_size must be positive")
    if len(cloud) == 0 and (origin is None or dims is None):
        raise InputError("cannot voxelize an empty point cloud")
    if origin is None:
        origin = cloud.xyz.min(axis=0)
    if dims is None:
        dims = grid_shape(cloud, unit_size)
    dims = tuple(int(d) for d in dims)
    total = dims[0] * dims[1] * dims[2]
    if total > unit_budget:
        raise CapacityError(f"grid {dims} needs {total} units, budget is {unit_budget}")
    counts = np.zeros(total, dtype=np.int64)
    sums = np.zeros((total, 3), dtype=np.float64)
    if len(cloud):
        idx = unit_indices(cloud.xyz, unit_size, origin, dims)
        flat = np.ravel_multi_index(idx.T, dims)
        counts = np.bincount(flat, minlength=total)
        for ch in range(3):
            sums[:, ch] = np.bincount(flat, weights=cloud.rgb[:, ch], minlength=total)
    with np.errstate(invalid="ignore", divide="ignore"):
        colors = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], 0.0)
    return OccupancyGrid(counts.reshape(dims), colors.reshape(dims + (3,)), unit_size, origin)


def extract_window(grid, window):
    """Sub-grid under ``window`` with the origin moved to its corner."""
    if not window.within(grid.dims):
        raise BoundsError(f"window {window.lo}..{window.hi} outside grid {grid.dims}")
    origin = tuple(o + l * grid.unit_size for o, l in zip(grid.origin, window.lo))
    return OccupancyGrid(grid.counts[window.slices].copy(), grid.colors[window.slices].copy(),
                         grid.unit_size, origin)


def nearest_indices(n, target):
    """Source index sampled by each of ``target`` lattice cells."""
    return np.minimum(((np.arange(target) + 0.5) * n / target).astype(np.int64), n - 1)


def resample_to_cnn_input(sub, target=CNN_SIZE):
    """Nearest-neighbour resample to a [4, *target] float32 array.

    Channels are occupancy in {0, 1} followed by r, g, b scaled to [0, 1].
    """
    if min(sub.dims) < 2:
        raise InputError(f"sub-grid {sub.dims} too small to resample")
    ix, iy, iz = (nearest_indices(n, t) for n, t in zip(sub.dims, target))
    sel = np.ix_(ix, iy, iz)
    out = np.empty((4,) + tuple(target), dtype=np.float32)
    out[0] = sub.counts[sel] > 0
    colors = sub.colors[sel]
    out[1:] = np.moveaxis(colors, -1, 0) / 255.0
    return out


def window_input(grid, window, target=CNN_SIZE):
    return resample_to_cnn_input(extract_window(grid, window), target)


def write_grid(path, grid):
    """Text dump: header line, then ``i j k count r g b`` per occupied unit."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        nx, ny, nz = grid.dims
        ox, oy, oz = grid.origin
        fh.write(f"{nx} {ny} {nz} {grid.unit_size:.6f} {ox:.6f} {oy:.6f} {oz:.6f}\n")
        for i, j, k in zip(*np.nonzero(grid.counts)):
            r, g, b = grid.colors[i, j, k]
            fh.write(f"{i} {j} {k} {grid.counts[i, j, k]} {r:.3f} {g:.3f} {b:.3f}\n")
