"""Network 1's 3D CNN: reward vector, confidence and multi-scale features."""

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import InputError, NumericError, TrainingError
from .voxel import EyeWindow, box_iou, window_input

# (filters, kernel, stride) for the three convolutions
CONV_LAYERS = ((8, 5, 3), (16, 4, 2), (32, 3, 1))
IN_CHANNELS = 4
INPUT_SIZE = 32
HEAD_HIDDEN = 64
FEATURE_DIM = 16
POS_IOU = 0.7
NEG_IOU = 0.3


def conv_shapes(size=INPUT_SIZE, layers=CONV_LAYERS):
    shapes = []
    for f, k, s in layers:
        size = nc.conv3d_output_shape(size, k, s)
        shapes.append((f, size, size, size))
    return shapes


@dataclass(frozen=True)
class RewardVector:
    r1: float
    r2: float

    @property
    def confidence(self):
        return confidence(self)


@dataclass(frozen=True)
class CnnFeatures:
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray

    def concat(self):
        return np.concatenate([self.f1, self.f2, self.f3])

    def __len__(self):
        return len(self.f1) + len(self.f2) + len(self.f3)

    @classmethod
    def zeros(cls, dim=FEATURE_DIM):
        z = np.zeros(dim, dtype=np.float32)
        return cls(z, z.copy(), z.copy())


def confidence(rv):
    """Scalar reward ``2 R1 + 1 - R2``."""
    return 2.0 * rv.r1 + 1.0 - rv.r2


def _check_finite(t, layer):
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite activation in {layer}", layer=layer)
    return t


class ConvTrunk:
    """Three stacked relu convolutions shared in shape by both Network 1 parts."""

    def __init__(self, rng, prefix="conv", layers=CONV_LAYERS, in_channels=IN_CHANNELS):
        self.layers = layers
        self.params = []
        c = in_channels
        for n, (f, k, _) in enumerate(layers, 1):
            fan_in, fan_out = c * k ** 3, f * k ** 3
            w = nc.glorot_uniform((f, c, k, k, k), fan_in, fan_out, rng, name=f"{prefix}{n}.w")
            b = nc.zeros(f, name=f"{prefix}{n}.b")
            self.params += [w, b]
            c = f

    def __call__(self, x, check=False):
        acts = []
        h = x
        for n, (_, _, s) in enumerate(self.layers):
            w, b = self.params[2 * n], self.params[2 * n + 1]
            h = nc.relu(nc.conv3d(h, w, b, stride=s))
            if check:
                _check_finite(h, f"conv{n + 1}")
            acts.append(h)
        return acts


def _dense_params(rng, n_in, n_out, name):
    return [nc.glorot_uniform((n_out, n_in), n_in, n_out, rng, name=f"{name}.w"),
            nc.zeros(n_out, name=f"{name}.b")]


class RewardNet:
    """Binary class-vs-rest 3D CNN for one class.

    Conv stack, global average pooling, a 64-unit relu layer and a 2-way
    softmax. Three linear projections of the flattened conv outputs give
    the encoded features f1, f2, f3.
    """

    kind = "rewardnet"

    def __init__(self, rng=None, feature_dim=FEATURE_DIM, class_id=None, seed=0):
        rng = rng if rng is not None else nc.RngState(seed)
        self.feature_dim = feature_dim
        self.class_id = class_id
        self.trunk = ConvTrunk(rng)
        self.head = _dense_params(rng, CONV_LAYERS[-1][0], HEAD_HIDDEN, "head1") + \
            _dense_params(rng, HEAD_HIDDEN, 2, "head2")
        self.proj = []
        for n, shape in enumerate(conv_shapes(), 1):
            self.proj += _dense_params(rng, int(np.prod(shape)), feature_dim, f"proj{n}")
        self.conv_passes = 0
        self._cache = None

    @property
    def params(self):
        return self.trunk.params + self.head + self.proj

    def named_tensors(self):
        return [(p.name, p) for p in self.params]

    def config(self):
        return {"feature_dim": self.feature_dim, "class_id": self.class_id}

    def _fingerprint(self):
        return tuple(p.version for p in self.params)

    def logits(self, x, check=False):
        acts = self.trunk(x, check=check)
        self.conv_passes += 1
        return self._head(acts, check), acts

    def _head(self, acts, check=False):
        pooled = nc.global_avg_pool3d(acts[-1])
        h = nc.dense(pooled, self.head[0], self.head[1], "relu")
        out = nc.dense(h, self.head[2], self.head[3])
        if check:
            _check_finite(h, "head1")
            _check_finite(out, "head2")
        return out

    def _features(self, acts, batched=False):
        feats = []
        for n, a in enumerate(acts):
            flat = nc.flatten(a, batched=batched)
            feats.append(nc.dense(flat, self.proj[2 * n], self.proj[2 * n + 1]))
        return feats

    def analyze(self, x):
        """Reward vector and features from a single conv pass (cached)."""
        x = np.asarray(x, dtype=np.float32)
        fp = self._fingerprint()
        if self._cache is not None:
            cx, cfp, result = self._cache
            if cfp == fp and (cx is x or np.array_equal(cx, x)):
                return result
        with nc.no_grad():
            logits, acts = self.logits(x, check=True)
            probs = nc.softmax(logits).data
            feats = [f.data.copy() for f in self._features(acts)]
            for n, f in enumerate(feats, 1):
                if not np.all(np.isfinite(f)):
                    raise NumericError(f"non-finite activation in proj{n}", layer=f"proj{n}")
        result = (RewardVector(float(probs[0]), float(probs[1])), CnnFeatures(*feats))
        self._cache = (x, fp, result)
        return result

    def predict_proba(self, xs, batch_size=32):
        """R1 for a batch of inputs [B, 4, 32, 32, 32]."""
        out = []
        with nc.no_grad():
            for i in range(0, len(xs), batch_size):
                logits, _ = self.logits(np.asarray(xs[i:i + batch_size], dtype=np.float32))
                out.append(nc.softmax(logits).data[:, 0])
        return np.concatenate(out) if out else np.zeros(0)


def forward_reward(model, x):
    return model.analyze(x)[0]


def encode_features(model, x):
    return model.analyze(x)[1]


# ---------------------------------------------------------------- training data

def _jittered(box, dims, rng, spread):
    lo, hi = [], []
    for l, h, d in zip(box.lo, box.hi, dims):
        side = h - l
        j = max(1, int(round(spread * side)))
        nl = int(np.clip(l + rng.integers(-j, j + 1), 0, d - 2))
        nh = int(np.clip(h + rng.integers(-j, j + 1), nl + 2, d))
        lo.append(nl)
        hi.append(nh)
    return EyeWindow(lo, hi)


def _random_window(dims, rng):
    lo, hi = [], []
    for d in dims:
        side = int(rng.integers(2, d + 1))
        start = int(rng.integers(0, d - side + 1))
        lo.append(start)
        hi.append(start + side)
    return EyeWindow(lo, hi)


def _near_window(box, dims, rng):
    # shifted or inflated copy of a box, to mine hard negatives
    lo, hi = list(box.lo), list(box.hi)
    for axis in range(3):
        side = hi[axis] - lo[axis]
        mode = rng.integers(0, 3)
        if mode == 0:
            shift = int(rng.integers(-side, side + 1))
            lo[axis] += shift
            hi[axis] += shift
        elif mode == 1:
            lo[axis] -= int(rng.integers(0, side + 1))
            hi[axis] += int(rng.integers(0, side + 1))
        lo[axis] = int(np.clip(lo[axis], 0, dims[axis] - 2))
        hi[axis] = int(np.clip(hi[axis], lo[axis] + 2, dims[axis]))
    return EyeWindow(lo, hi)


def make_training_set(grid, objects, class_id, count, rng, spread=0.15, max_tries=2000):
    """Balanced window inputs for one class.

    ``objects`` is a sequence of ``(class_id, box)`` pairs in grid units.
    Positives overlap a class object with IoU >= 0.7 and are labelled 0
    (the R1 slot); negatives have IoU < 0.3 against every class object
    and are labelled 1.
    """
    targets = [box for cid, box in objects if cid == class_id]
    others = [box for cid, box in objects if cid != class_id]
    if not targets:
        raise InputError(f"no object of class {class_id} in scene")
    n_pos = count // 2
    n_neg = count - n_pos
    windows, labels = [], []

    def best_iou(w):
        return max(box_iou(w, t) for t in targets)

    tries = 0
    while labels.count(0) < n_pos:
        tries += 1
        if tries > max_tries * max(1, n_pos):
            raise InputError("could not mine enough positive windows")
        box = targets[int(rng.integers(0, len(targets)))]
        w = box if labels.count(0) == 0 else _jittered(box, grid.dims, rng, spread)
        if best_iou(w) >= POS_IOU:
            windows.append(w)
            labels.append(0)
    tries = 0
    while len(labels) < count:
        tries += 1
        if tries > max_tries * max(1, n_neg):
            raise InputError("could not mine enough negative windows")
        mode = int(rng.integers(0, 3))
        if mode == 0 or (mode == 2 and not others):
            w = _random_window(grid.dims, rng)
        elif mode == 1:
            w = _near_window(targets[int(rng.integers(0, len(targets)))], grid.dims, rng)
        else:
            w = _jittered(others[int(rng.integers(0, len(others)))], grid.dims, rng, spread)
        if best_iou(w) < NEG_IOU:
            windows.append(w)
            labels.append(1)
    inputs = np.stack([window_input(grid, w) for w in windows])
    return inputs, np.array(labels, dtype=np.int64), windows


def _sub_window(box, dims, rng):
    # random sub-box (often a thin slab) of a box, grown to the 2-unit minimum
    lo, hi = [], []
    for l, h, d in zip(box.lo, box.hi, dims):
        a = int(rng.integers(l, h))
        b = int(rng.integers(a + 1, h + 1))
        if b - a < 2:
            a, b = (a, a + 2) if a + 2 <= d else (d - 2, d)
        lo.append(a)
        hi.append(b)
    return EyeWindow(lo, hi)


def candidate_negatives(grid, objects, class_id, count, rng, max_tries=50):
    """Non-empty windows with IoU < 0.3 against every object of the class.

    Mixes uniform random boxes, pieces of any object and shifted copies
    of class objects: the kinds of windows a search wanders through.
    """
    targets = [box for cid, box in objects if cid == class_id]
    boxes = [box for _, box in objects]
    out = []
    for _ in range(count * max_tries):
        if len(out) >= count:
            break
        mode = int(rng.integers(0, 3))
        if mode == 0 or not boxes:
            w = _random_window(grid.dims, rng)
        elif mode == 1:
            w = _sub_window(boxes[int(rng.integers(0, len(boxes)))], grid.dims, rng)
        else:
            w = _near_window(targets[int(rng.integers(0, len(targets)))], grid.dims, rng)
        if not grid.counts[w.slices].any():
            continue
        if not targets or max(box_iou(w, t) for t in targets) < NEG_IOU:
            out.append(w)
    return out


def mine_hard_negatives(model, grid, objects, class_id, pool, keep, rng, floor=0.5):
    """The ``keep`` candidate negatives the model scores highest (R1 >= ``floor``)."""
    cands = candidate_negatives(grid, objects, class_id, pool, rng)
    if not cands:
        return np.zeros((0, IN_CHANNELS) + (INPUT_SIZE,) * 3, dtype=np.float32), []
    xs = np.stack([window_input(grid, w) for w in cands])
    r1 = model.predict_proba(xs)
    order = [i for i in np.argsort(-r1, kind="stable")[:keep] if r1[i] >= floor]
    return xs[order], [cands[i] for i in order]


def sliding_windows(dims, size, stride=2):
    """Every ``size`` box on a ``stride`` lattice, plus boxes flush with the far faces."""
    size = [int(min(max(2, s), d)) for s, d in zip(size, dims)]
    starts = []
    for s, d in zip(size, dims):
        a = list(range(0, d - s + 1, stride))
        if a[-1] != d - s:
            a.append(d - s)
        starts.append(a)
    return [EyeWindow((i, j, k), (i + size[0], j + size[1], k + size[2]))
            for i in starts[0] for j in starts[1] for k in starts[2]]


def propose_window(model, grid, sizes, stride=2):
    """Highest-R1 non-empty window among sliding boxes of the given sizes.

    Returns ``(window, r1)``, or ``(None, 0.0)`` when every box is empty.
    """
    cands = []
    for size in sizes:
        for w in sliding_windows(grid.dims, size, stride):
            if grid.counts[w.slices].any():
                cands.append(w)
    if not cands:
        return None, 0.0
    best, best_r1 = None, -1.0
    for start in range(0, len(cands), 64):
        chunk = cands[start:start + 64]
        r1 = model.predict_proba(np.stack([window_input(grid, w) for w in chunk]))
        i = int(np.argmax(r1))
        if r1[i] > best_r1:
            best, best_r1 = chunk[i], float(r1[i])
    return best, best_r1


# ---------------------------------------------------------------- training

def train_reward_net(model, inputs, labels, epochs, learning_rate, rng=None,
                     batch_size=10, log=None):
    """Minibatch SGD on cross-entropy.

    Returns ``(loss_trace, accuracy_trace)`` with one entry per epoch,
    both measured on the batches as they were seen.
    """
    inputs = np.asarray(inputs, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(inputs) == 0:
        raise InputError("empty training set")
    rng = rng if rng is not None else nc.RngState(0)
    params = model.params
    losses, accs = [], []
    for epoch in range(epochs):
        order = rng.permutation(len(inputs))
        total, correct = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            logits, _ = model.logits(inputs[idx])
            loss = nc.softmax_cross_entropy(logits, labels[idx])
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            nc.backward(loss, params=params)
            nc.sgd_step(params, learning_rate)
            total += float(loss.data) * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels[idx]).sum())
        losses.append(total / len(inputs))
        accs.append(correct / len(inputs))
        if log is not None:
            log(epoch, losses[-1], accs[-1])
    model._cache = None
    return losses, accs


def accuracy(model, inputs, labels):
    probs = model.predict_proba(inputs)
    pred = np.where(probs >= 0.5, 0, 1)
    return float((pred == np.asarray(labels)).mean())
