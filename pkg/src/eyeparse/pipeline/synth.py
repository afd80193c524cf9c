"""Synthetic rooms: structural slabs plus axis-aligned cuboid furniture."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import GenerationError
from ..numcore import RngState
from ..voxel import EyeWindow, PointCloud, unit_indices, voxelize

CLASSES = ("ceiling", "floor", "wall", "table", "chair")
EASY_CLASSES = ("ceiling", "floor", "wall")
CLASS_COLORS = {
    "ceiling": (225, 225, 220),
    "floor": (110, 110, 115),
    "wall": (200, 185, 160),
    "table": (140, 85, 40),
    "chair": (40, 80, 170),
}


@dataclass
class ObjectSpec:
    name: str
    size_min: tuple
    size_max: tuple
    count: int = 1
    color: tuple = None


@dataclass
class SceneSpec:
    room: tuple = (3.0, 3.0, 2.4)
    density: float = 60.0           # points per square meter of surface
    color_noise: float = 8.0
    structure: bool = True
    objects: list = field(default_factory=list)
    classes: tuple = CLASSES
    margin: float = 0.3             # keep-out distance from the walls
    gap: float = 0.3                # minimum footprint separation
    max_retries: int = 200


def default_room_spec():
    return SceneSpec(objects=[
        ObjectSpec("table", (0.8, 0.5, 0.6), (1.1, 0.8, 0.8)),
        ObjectSpec("chair", (0.4, 0.4, 0.8), (0.5, 0.5, 1.0)),
    ])


@dataclass
class SyntheticScene:
    cloud: PointCloud
    instances: np.ndarray           # per point, -1 for structure
    objects: list                   # (instance, class_id, lo_m, hi_m)
    spec: SceneSpec

    def grid(self, unit_size):
        return scene_grid(self.cloud, self.spec.room, unit_size)

    def object_boxes(self, unit_size):
        """``(class_id, EyeWindow)`` per object from its points' units."""
        dims = lattice_dims(self.spec.room, unit_size)
        idx = unit_indices(self.cloud.xyz, unit_size, (0.0, 0.0, 0.0), dims)
        boxes = []
        for inst, cid, _, _ in self.objects:
            mine = idx[self.instances == inst]
            lo = mine.min(axis=0)
            hi = np.minimum(mine.max(axis=0) + 1, dims)
            # windows need two units per side
            hi = np.maximum(hi, lo + 2)
            lo = np.minimum(lo, np.asarray(dims) - 2)
            boxes.append((cid, EyeWindow(lo, hi)))
        return boxes


def lattice_dims(room, unit_size):
    return tuple(max(2, int(np.ceil(L / unit_size - 1e-9))) for L in room)


def scene_grid(cloud, room, unit_size, mask=None):
    """Voxelize (a subset of) a room on the room's fixed lattice."""
    sub = cloud if mask is None else cloud.subset(mask)
    return voxelize(sub, unit_size, origin=(0.0, 0.0, 0.0), dims=lattice_dims(room, unit_size))


def face_counts(size, density, bottom=False):
    """Point count for each sampled face of a box; the bottom face is skipped."""
    sx, sy, sz = size
    faces = [sx * sy, sx * sz, sx * sz, sy * sz, sy * sz]
    if bottom:
        faces.append(sx * sy)
    return [int(round(a * density)) for a in faces]


def _plane(rng, n, origin, u, v):
    a = rng.random((n, 1))
    b = rng.random((n, 1))
    return np.asarray(origin) + a * np.asarray(u) + b * np.asarray(v)


def _box_faces(rng, lo, size, density):
    sx, sy, sz = size
    x0, y0, z0 = lo
    counts = face_counts(size, density)
    faces = [
        ((x0, y0, z0 + sz), (sx, 0, 0), (0, sy, 0)),
        ((x0, y0, z0), (sx, 0, 0), (0, 0, sz)),
        ((x0, y0 + sy, z0), (sx, 0, 0), (0, 0, sz)),
        ((x0, y0, z0), (0, sy, 0), (0, 0, sz)),
        ((x0 + sx, y0, z0), (0, sy, 0), (0, 0, sz)),
    ]
    return np.concatenate([_plane(rng, n, o, u, v) for n, (o, u, v) in zip(counts, faces)])


def _colors(rng, base, n, noise):
    c = np.asarray(base, dtype=np.float64) + rng.normal(0, noise, size=(n, 3))
    return np.clip(np.round(c), 0, 255).astype(np.int64)


def _place(rng, spec, size, placed):
    lx, ly, _ = spec.room
    for _ in range(spec.max_retries):
        hi_x, hi_y = lx - spec.margin - size[0], ly - spec.margin - size[1]
        if hi_x < spec.margin or hi_y < spec.margin:
            break
        x = rng.uniform(spec.margin, hi_x)
        y = rng.uniform(spec.margin, hi_y)
        ok = all(x + size[0] + spec.gap <= px or px + ps[0] + spec.gap <= x or
                 y + size[1] + spec.gap <= py or py + ps[1] + spec.gap <= y
                 for (px, py), ps in placed)
        if ok:
            return x, y
    raise GenerationError(f"could not place a {size} object without overlap")


def generate_synthetic_scene(spec=None, seed=0):
    """Sample a fully labelled room; identical output for identical seeds."""
    spec = spec if spec is not None else default_room_spec()
    rng = RngState(seed)
    lx, ly, lz = spec.room
    cid = {name: i for i, name in enumerate(spec.classes)}
    xyz, rgb, labels, inst = [], [], [], []

    def add(points, name, instance):
        n = len(points)
        xyz.append(points)
        rgb.append(_colors(rng, CLASS_COLORS.get(name, (128, 128, 128)), n, spec.color_noise))
        labels.append(np.full(n, cid[name], dtype=np.int64))
        inst.append(np.full(n, instance, dtype=np.int64))

    if spec.structure:
        d = spec.density
        add(_plane(rng, int(round(lx * ly * d)), (0, 0, 0), (lx, 0, 0), (0, ly, 0)), "floor", -1)
        add(_plane(rng, int(round(lx * ly * d)), (0, 0, lz), (lx, 0, 0), (0, ly, 0)), "ceiling", -1)
        for origin, u in (((0, 0, 0), (lx, 0, 0)), ((0, ly, 0), (lx, 0, 0)),
                          ((0, 0, 0), (0, ly, 0)), ((lx, 0, 0), (0, ly, 0))):
            length = lx if u[0] else ly
            add(_plane(rng, int(round(length * lz * d)), origin, u, (0, 0, lz)), "wall", -1)

    objects, placed = [], []
    instance = 0
    for obj in spec.objects:
        for _ in range(obj.count):
            size = tuple(float(rng.uniform(a, b)) for a, b in zip(obj.size_min, obj.size_max))
            x, y = _place(rng, spec, size, placed)
            placed.append(((x, y), size))
            lo = (x, y, 0.0)
            pts = _box_faces(rng, lo, size, spec.density)
            if obj.color is not None:
                n = len(pts)
                xyz.append(pts)
                rgb.append(_colors(rng, obj.color, n, spec.color_noise))
                labels.append(np.full(n, cid[obj.name], dtype=np.int64))
                inst.append(np.full(n, instance, dtype=np.int64))
            else:
                add(pts, obj.name, instance)
            objects.append((instance, cid[obj.name], lo, tuple(a + s for a, s in zip(lo, size))))
            instance += 1

    if not xyz:
        raise GenerationError("scene spec produced no points")
    # a fixed decimal grid keeps the text round trip exact
    points = np.round(np.concatenate(xyz), 4)
    cloud = PointCloud(points, np.concatenate(rgb), np.concatenate(labels))
    return SyntheticScene(cloud, np.concatenate(inst), objects, spec)
