"""Training the three networks on scenes and parsing a new scene with them.

Parsing runs in two phases. Structural classes are labelled directly by
a residual RNN over the whole scene. The remaining classes are searched
one at a time: the eye window locks onto an object, the RNN refines the
points inside the window, and points it rejects go back to the pool.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from ..dqn import START_MODES, QNet, search_class
from ..errors import ConfigurationError, InputError
from ..numcore import RngState
from ..rescls import ResRnnModel, build_point_sequence, classify, train_rnn
from ..rewardnet import (CnnFeatures, RewardNet, make_training_set, mine_hard_negatives,
                         propose_window, train_reward_net)
from ..voxel import EyeWindow, box_iou, unit_indices, window_input
from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import evaluate_metrics

DIRECT, LOCK, REFINED, FALLBACK = "direct-RNN", "window-lock", "refined", "fallback"


@dataclass
class ModelSet:
    classes: tuple
    unit_size: float
    cnn: dict = field(default_factory=dict)          # class id -> RewardNet
    qnet: dict = field(default_factory=dict)         # class id -> QNet
    direct: object = None                            # ResRnnModel with zero features
    refine: object = None                            # ResRnnModel with window features
    volume: dict = field(default_factory=dict)       # class id -> mean object volume (m^3)
    expected: dict = field(default_factory=dict)     # class id -> objects per room
    size: dict = field(default_factory=dict)         # class id -> mean object extent (m)

    def class_order(self, easy):
        """Non-easy classes by descending mean object volume, ties by id."""
        ids = [i for i, c in enumerate(self.classes) if c not in easy]
        return sorted(ids, key=lambda i: (-self.volume.get(i, 0.0), i))

    def _extra(self, cid=None):
        extra = {"classes": list(self.classes), "unit_size": self.unit_size}
        if cid is not None:
            extra.update(class_name=self.classes[cid], class_index=cid,
                         mean_volume=self.volume.get(cid, 0.0),
                         expected_objects=self.expected.get(cid, 1),
                         mean_size=list(self.size.get(cid, ())))
        return extra

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        paths = []
        for cid, m in sorted(self.cnn.items()):
            paths.append(os.path.join(directory, f"cnn_{self.classes[cid]}.ckpt"))
            save_checkpoint(m, paths[-1], self._extra(cid))
        for cid, m in sorted(self.qnet.items()):
            paths.append(os.path.join(directory, f"qnet_{self.classes[cid]}.ckpt"))
            save_checkpoint(m, paths[-1], self._extra(cid))
        for name, m in (("direct", self.direct), ("refine", self.refine)):
            if m is not None:
                paths.append(os.path.join(directory, f"rnn_{name}.ckpt"))
                save_checkpoint(m, paths[-1], self._extra())
        return paths

    @classmethod
    def load(cls, directory, classes=None, unit_size=None):
        """Read whatever checkpoints exist in ``directory``."""
        if not os.path.isdir(directory):
            raise InputError(f"model directory {directory} does not exist")
        ms = None

        def ensure(cfg):
            nonlocal ms
            if ms is None:
                ms = cls(tuple(cfg.get("classes", classes or ())), cfg.get("unit_size", unit_size))
            return ms

        for name in sorted(os.listdir(directory)):
            if not name.endswith(".ckpt"):
                continue
            model, cfg = load_checkpoint(os.path.join(directory, name))
            ms_ = ensure(cfg)
            if name.startswith(("cnn_", "qnet_")):
                cid = int(cfg["class_index"])
                ms_.volume[cid] = float(cfg.get("mean_volume", 0.0))
                ms_.expected[cid] = int(cfg.get("expected_objects", 1))
                if cfg.get("mean_size"):
                    ms_.size[cid] = tuple(float(v) for v in cfg["mean_size"])
                (ms_.cnn if name.startswith("cnn_") else ms_.qnet)[cid] = model
            elif name == "rnn_direct.ckpt":
                ms_.direct = model
            elif name == "rnn_refine.ckpt":
                ms_.refine = model
        if ms is None:
            raise InputError(f"no trained models (*.ckpt) in {directory}")
        return ms


@dataclass
class LabeledScene:
    cloud: object
    labels: np.ndarray
    provenance: np.ndarray
    classes: tuple
    searches: dict = field(default_factory=dict)     # class id -> SearchResult

    @property
    def other(self):
        return len(self.classes)

    def write(self, path):
        from ..voxel import write_points
        write_points(path, self.cloud, self.labels,
                     header="labels: " + ", ".join(self.classes + ("other",)))
        with open(os.path.splitext(path)[0] + ".provenance", "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write("\n".join(self.provenance.tolist()) + "\n")


# ---------------------------------------------------------------- helpers

def _easy_ids(classes, easy):
    return [i for i, c in enumerate(classes) if c in easy]


def _structure_free(scene, easy_ids):
    """Mask of points that are not structural according to the ground truth."""
    return ~np.isin(scene.cloud.labels, easy_ids)


def _require_labels(scene):
    if scene.cloud.labels is None:
        raise InputError(f"scene {scene.name} has no ground-truth labels")


def _window_mask(idx, window):
    return np.all((idx >= np.asarray(window.lo)) & (idx < np.asarray(window.hi)), axis=1)


def _grow(window, dims, margin):
    """``window`` with each face pushed out by ``margin`` of its side, clipped to the grid."""
    lo, hi = [], []
    for l, h, d in zip(window.lo, window.hi, dims):
        m = int(round(margin * (h - l)))
        lo.append(max(0, l - m))
        hi.append(min(d, h + m))
    return EyeWindow(lo, hi)


def _jitter(box, dims, rng, spread=0.2):
    lo, hi = [], []
    for l, h, d in zip(box.lo, box.hi, dims):
        j = max(1, int(round(spread * (h - l))))
        a = int(np.clip(l + rng.integers(-j, j + 1), 0, d - 2))
        b = int(np.clip(h + rng.integers(-j, j + 1), a + 2, d))
        lo.append(a)
        hi.append(b)
    return EyeWindow(lo, hi)


# ---------------------------------------------------------------- training

def object_statistics(scenes, classes):
    """Mean object volume, objects per room and extent for each class id."""
    vols, counts, sizes = {}, {}, {}
    for s in scenes:
        per = {}
        for cid, lo, hi in s.objects:
            vols.setdefault(cid, []).append(float(np.prod(np.subtract(hi, lo))))
            sizes.setdefault(cid, []).append(np.subtract(hi, lo))
            per[cid] = per.get(cid, 0) + 1
        for cid in range(len(classes)):
            counts.setdefault(cid, []).append(per.get(cid, 0))
    volume = {c: float(np.mean(v)) for c, v in vols.items()}
    expected = {c: max(1, math.ceil(np.mean(n))) for c, n in counts.items() if c in vols}
    size = {c: tuple(float(v) for v in np.mean(v, axis=0)) for c, v in sizes.items()}
    return volume, expected, size


def train_cnns(scenes, cfg, models, log=None):
    """One class-vs-rest reward net per searched class.

    After the first fit, each mining round adds the negatives the net
    scores highest (plus as many fresh positives, to stay balanced) and
    training continues on the enlarged set.
    """
    easy = _easy_ids(cfg.classes, cfg.easy_classes)
    rng = RngState(cfg.seed)
    for cid in models.class_order(cfg.easy_classes):
        holders = [s for s in scenes if any(c == cid for c, _, _ in s.objects)]
        if not holders:
            continue
        per = max(2, cfg.cnn_windows // len(holders))
        grids = []
        xs, ys = [], []
        for s in holders:
            _require_labels(s)
            grid = s.grid(cfg.unit_size, _structure_free(s, easy))
            boxes = s.object_boxes(cfg.unit_size)
            grids.append((grid, boxes))
            x, y, _ = make_training_set(grid, boxes, cid, per, rng)
            xs.append(x)
            ys.append(y)
        model = RewardNet(RngState(cfg.seed * 1000 + cid), class_id=cid)
        for rnd in range(cfg.cnn_mining_rounds + 1):
            if rnd:
                added = 0
                for grid, boxes in grids:
                    hard, _ = mine_hard_negatives(model, grid, boxes, cid, cfg.cnn_mining_pool,
                                                  max(1, per // 2), rng)
                    if len(hard) == 0:
                        continue
                    x, y, _ = make_training_set(grid, boxes, cid, 2 * len(hard), rng)
                    xs += [hard, x[y == 0]]
                    ys += [np.ones(len(hard), dtype=np.int64), y[y == 0]]
                    added += len(hard)
                if log is not None:
                    log(f"cnn {cfg.classes[cid]} mining round={rnd} hard_negatives={added}")
                if not added:
                    break
            hook = None if log is None else (lambda e, l, a, c=cid: log(
                f"cnn {cfg.classes[c]} epoch={e} loss={l:.4f} acc={a:.3f}"))
            train_reward_net(model, np.concatenate(xs), np.concatenate(ys), cfg.cnn_epochs,
                             cfg.cnn_lr, rng, cfg.cnn_batch, hook)
        models.cnn[cid] = model
    return models


def window_starter(models, cid, cfg):
    """``start`` callback for search_class, or None for the fixed start modes."""
    if cfg.window_start in START_MODES:
        return None
    if cfg.window_start != "proposal":
        raise ConfigurationError(f"window_start must be 'proposal' or one of {START_MODES}")
    if cid not in models.size:
        return None
    sx, sy, sz = (max(2, int(round(v / models.unit_size))) for v in models.size[cid])
    sizes = [(sx, sy, sz)] if sx == sy else [(sx, sy, sz), (sy, sx, sz)]
    cnn = models.cnn[cid]
    return lambda grid: propose_window(cnn, grid, sizes, cfg.proposal_stride)[0]


def train_qnets(scenes, cfg, models, log=None):
    """Warm up one Q network per class by searching the training rooms."""
    easy = _easy_ids(cfg.classes, cfg.easy_classes)
    for cid, cnn in sorted(models.cnn.items()):
        qnet = QNet(RngState(cfg.seed * 1000 + 500 + cid))
        rng = RngState(cfg.seed * 1000 + 700 + cid)
        for episode in range(cfg.dqn_episodes):
            for s in scenes:
                n_obj = sum(1 for c, _, _ in s.objects if c == cid)
                if not n_obj:
                    continue
                grid = s.grid(cfg.unit_size, _structure_free(s, easy))
                res = search_class(grid, qnet, cfg.search_config(mis=cfg.dqn_mis, max_locks=n_obj),
                                   rng, reward_model=cnn, start=window_starter(models, cid, cfg))
                if log is not None:
                    log(f"dqn {cfg.classes[cid]} episode={episode} scene={s.name} "
                        f"locks={len(res.locks)} steps={res.stats['steps']}")
        models.qnet[cid] = qnet
    return models


def direct_sequences(scenes, cfg):
    out = []
    zeros = CnnFeatures.zeros()
    for s in scenes:
        _require_labels(s)
        seq = build_point_sequence(s.cloud, zeros, cfg.unit_size, s.origin)
        out.append((seq.vectors, s.cloud.labels[seq.index]))
    return out


def refine_sequences(scenes, cfg, models):
    """Windows jittered around each searched object; off-class points are "other"."""
    easy = _easy_ids(cfg.classes, cfg.easy_classes)
    other = len(cfg.classes)
    rng = RngState(cfg.seed + 17)
    out = []
    for s in scenes:
        _require_labels(s)
        mask = _structure_free(s, easy)
        grid = s.grid(cfg.unit_size, mask)
        idx = unit_indices(s.cloud.xyz, cfg.unit_size, s.origin, grid.dims)
        for cid, box in s.object_boxes(cfg.unit_size):
            if cid not in models.cnn:
                continue
            for n in range(cfg.rnn_windows):
                w = box if n == 0 else _jitter(box, grid.dims, rng, spread=0.3)
                w = _grow(w, grid.dims, cfg.refine_margin)
                sel = np.flatnonzero(mask & _window_mask(idx, w))
                if len(sel) == 0:
                    continue
                feats = models.cnn[cid].analyze(window_input(grid, w))[1]
                sub = s.cloud.subset(sel)
                seq = build_point_sequence(sub, feats, cfg.unit_size, s.origin)
                labels = np.where(sub.labels == cid, cid, other)[seq.index]
                out.append((seq.vectors, labels))
    return out


def train_rnns(scenes, cfg, models, log=None):
    n = len(cfg.classes)
    for name, data in (("direct", direct_sequences(scenes, cfg)),
                       ("refine", refine_sequences(scenes, cfg, models) if models.cnn else [])):
        if not data:
            continue
        model = ResRnnModel(n, RngState(cfg.seed * 1000 + (900 if name == "direct" else 950)),
                            dropout=cfg.rnn_dropout)
        hook = None if log is None else (lambda e, l, nm=name: log(f"rnn {nm} epoch={e} loss={l:.4f}"))
        train_rnn(model, data, cfg.rnn_epochs, cfg.rnn_lr, RngState(cfg.seed + 31), cfg.rnn_chunk,
                  hook)
        setattr(models, name, model)
    return models


def train_all(scenes, cfg, log=None):
    """Full training: reward CNNs, Q networks, then both RNNs."""
    volume, expected, size = object_statistics(scenes, cfg.classes)
    models = ModelSet(tuple(cfg.classes), cfg.unit_size, volume=volume, expected=expected,
                      size=size)
    train_cnns(scenes, cfg, models, log)
    train_qnets(scenes, cfg, models, log)
    train_rnns(scenes, cfg, models, log)
    return models


# ---------------------------------------------------------------- parsing

def parse_scene(scene, models, cfg, log=None):
    """Label every point of ``scene``; returns ``(LabeledScene, metrics or None)``."""
    classes = tuple(cfg.classes)
    if tuple(models.classes) != classes:
        raise ConfigurationError(f"models were trained for {models.classes}, config lists {classes}")
    easy = _easy_ids(classes, cfg.easy_classes)
    if cfg.order:
        unknown = [c for c in cfg.order if c not in classes]
        if unknown:
            raise ConfigurationError(f"unknown classes in order: {unknown}")
        order = [classes.index(c) for c in cfg.order if classes.index(c) not in easy]
    else:
        order = models.class_order(cfg.easy_classes)

    n = len(scene.cloud)
    other = len(classes)
    labels = np.full(n, -1, dtype=np.int64)
    prov = np.full(n, FALLBACK, dtype=object)
    dims = scene.dims(cfg.unit_size)
    idx = unit_indices(scene.cloud.xyz, cfg.unit_size, scene.origin, dims)

    if easy:
        if models.direct is None:
            raise ConfigurationError("no direct RNN model for the structural classes")
        seq = build_point_sequence(scene.cloud, CnnFeatures.zeros(), cfg.unit_size, scene.origin)
        pred = classify(models.direct, seq, cfg.rnn_chunk)
        keep = np.isin(pred, easy)
        labels[seq.index[keep]] = pred[keep]
        prov[seq.index[keep]] = DIRECT
        if log is not None:
            log(f"phase1 labelled={int(keep.sum())} of {n}")

    searches = {}
    for cid in order:
        if cid not in models.cnn or cid not in models.qnet:
            raise ConfigurationError(f"missing trained models for class {classes[cid]!r}")
        if cfg.refine and models.refine is None:
            raise ConfigurationError("refinement is on but no refine RNN model was trained")
        if not (labels == -1).any():
            break
        cnn = models.cnn[cid]

        def pool_grid():
            return scene.grid(cfg.unit_size, labels == -1)

        def on_lock(active, window, cid=cid, cnn=cnn):
            region = _grow(window, dims, cfg.refine_margin) if cfg.refine else window
            sel = np.flatnonzero((labels == -1) & _window_mask(idx, region))
            if len(sel) == 0:
                return active
            if cfg.refine:
                feats = cnn.analyze(window_input(active, region))[1]
                sub = scene.cloud.subset(sel)
                seq = build_point_sequence(sub, feats, cfg.unit_size, scene.origin)
                pred = classify(models.refine, seq, cfg.rnn_chunk)
                chosen = sel[seq.index[pred == cid]]
                tag = REFINED
            else:
                chosen, tag = sel, LOCK
            labels[chosen] = cid
            prov[chosen] = tag
            if log is not None:
                log(f"lock class={classes[cid]} lo={window.lo} hi={window.hi} "
                    f"points={len(sel)} kept={len(chosen)}")
            return pool_grid()

        limit = cfg.max_locks or models.expected.get(cid, 0)
        search_cfg = cfg.search_config(max_locks=limit)
        res = search_class(pool_grid(), models.qnet[cid], search_cfg, RngState(cfg.seed * 7919 + cid),
                           reward_model=cnn, on_lock=on_lock,
                           start=window_starter(models, cid, cfg))
        searches[cid] = res
        if log is not None:
            log(f"phase2 class={classes[cid]} locks={len(res.locks)} steps={res.stats['steps']}")

    labels[labels == -1] = other
    out = LabeledScene(scene.cloud.with_labels(labels), labels, prov, classes, searches)
    metrics = None
    if scene.cloud.labels is not None:
        metrics = evaluate_metrics(labels, scene.cloud.labels, classes)
    return out, metrics


def lock_quality(result, boxes, cid):
    """Best IoU of each lock against the class's ground-truth boxes."""
    targets = [b for c, b in boxes if c == cid]
    return [max((box_iou(l.window, t) for t in targets), default=0.0) for l in result.locks]
