"""Scene records on disk and the train/test split."""

import glob
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError
from ..numcore import RngState
from ..voxel import EyeWindow, read_points, voxelize, write_points
from .synth import CLASSES, lattice_dims


@dataclass
class SceneData:
    """A labelled or unlabelled room on a fixed lattice.

    ``objects`` holds ``(class_id, lo_m, hi_m)`` boxes in meters; it may be
    empty for scenes that came without annotations.
    """

    cloud: object
    objects: list = field(default_factory=list)
    origin: tuple = (0.0, 0.0, 0.0)
    extent: tuple = None
    name: str = "scene"
    classes: tuple = CLASSES

    def __post_init__(self):
        if self.extent is None:
            if len(self.cloud) == 0:
                raise InputError("scene has no points")
            self.extent = tuple(float(v) for v in self.cloud.xyz.max(axis=0) - np.asarray(self.origin))

    def dims(self, unit_size):
        return lattice_dims(self.extent, unit_size)

    def grid(self, unit_size, mask=None):
        sub = self.cloud if mask is None else self.cloud.subset(mask)
        return voxelize(sub, unit_size, origin=self.origin, dims=self.dims(unit_size))

    def object_boxes(self, unit_size):
        """``(class_id, EyeWindow)`` per object, in grid units."""
        dims = np.asarray(self.dims(unit_size))
        org = np.asarray(self.origin)
        boxes = []
        for cid, lo, hi in self.objects:
            a = np.clip(np.floor((np.asarray(lo) - org) / unit_size + 1e-9).astype(int), 0, dims - 2)
            b = np.floor((np.asarray(hi) - org) / unit_size - 1e-9).astype(int) + 1
            b = np.clip(np.maximum(b, a + 2), 2, dims)
            boxes.append((int(cid), EyeWindow(a, b)))
        return boxes


def from_synthetic(scene, name="scene"):
    return SceneData(scene.cloud, [(cid, lo, hi) for _, cid, lo, hi in scene.objects],
                     (0.0, 0.0, 0.0), tuple(scene.spec.room), name, tuple(scene.spec.classes))


def _sidecar(path):
    return os.path.splitext(path)[0] + ".json"


def save_scene(scene, path):
    """Point file plus a JSON sidecar carrying the lattice and object boxes."""
    write_points(path, scene.cloud)
    meta = {"origin": list(scene.origin), "extent": list(scene.extent),
            "classes": list(scene.classes),
            "objects": [{"class_id": int(c), "lo": list(lo), "hi": list(hi)}
                        for c, lo, hi in scene.objects]}
    with open(_sidecar(path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_scene(path):
    cloud = read_points(path)
    name = os.path.splitext(os.path.basename(path))[0]
    side = _sidecar(path)
    if not os.path.exists(side):
        origin = tuple(float(v) for v in cloud.xyz.min(axis=0)) if len(cloud) else (0.0,) * 3
        return SceneData(cloud, [], origin, None, name)
    try:
        with open(side, encoding="utf-8") as fh:
            meta = json.load(fh)
        objects = [(o["class_id"], tuple(o["lo"]), tuple(o["hi"])) for o in meta.get("objects", [])]
        return SceneData(cloud, objects, tuple(meta["origin"]), tuple(meta["extent"]), name,
                         tuple(meta.get("classes", CLASSES)))
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{side}: malformed scene metadata ({exc})") from None


def scene_paths(directory):
    paths = sorted(glob.glob(os.path.join(directory, "*.txt")))
    if not paths:
        raise InputError(f"no scene files (*.txt) in {directory}")
    return paths


def split_dataset(scenes, fraction=0.7, seed=0):
    """Seeded disjoint split; the training share is ``round(fraction * n)``."""
    scenes = list(scenes)
    if not 0 < fraction < 1:
        raise InputError("fraction must lie in (0, 1)")
    if len(scenes) < 2:
        raise InputError("need at least two scenes to split")
    n_train = min(max(1, int(round(fraction * len(scenes)))), len(scenes) - 1)
    perm = RngState(seed).permutation(len(scenes))
    train = [scenes[i] for i in sorted(perm[:n_train])]
    test = [scenes[i] for i in sorted(perm[n_train:])]
    return train, test
