"""Network 2: a residual recurrent classifier over per-point vectors.

Each point of a window becomes ``[x, y, z, r, g, b, f1, f2, f3]``; the
points are put in a canonical spatial order and read by the network as a
sequence so the LSTM can carry context from neighbouring points.
"""

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import InputError, NumericError, TrainingError
from .rewardnet import FEATURE_DIM, CnnFeatures

POINT_DIM = 6 + 3 * FEATURE_DIM
HIDDEN = 128
HEAD = 64
CHUNK = 256
CLIP = 1.0
ORDERS = ("morton", "lexicographic")


# ---------------------------------------------------------------- sequences

def _spread_bits(v):
    # interleave two zero bits between each of the low 21 bits
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton_code(idx):
    """Z-order key of integer [n, 3] indices; x takes the lowest bit."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
    if idx.size and idx.min() < 0:
        raise InputError("morton indices must be non-negative")
    return (_spread_bits(idx[:, 0]) | (_spread_bits(idx[:, 1]) << np.uint64(1))
            | (_spread_bits(idx[:, 2]) << np.uint64(2)))


def canonical_order(xyz, unit_size, origin=None, order="morton"):
    """Permutation putting points in a deterministic spatial order.

    Points are binned to units of ``unit_size`` from ``origin`` (default:
    the minimum corner) and sorted by Morton code of the unit index, or by
    unit (z, y, x) for the lexicographic mode. Ties fall back to the raw
    coordinates, x first.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    if order not in ORDERS:
        raise ValueError(f"unknown order {order!r}; expected one of {ORDERS}")
    if len(xyz) == 0:
        return np.zeros(0, dtype=np.int64)
    origin = xyz.min(axis=0) if origin is None else np.asarray(origin, dtype=np.float64)
    idx = np.maximum(np.floor((xyz - origin) / unit_size), 0).astype(np.int64)
    raw = (xyz[:, 2], xyz[:, 1], xyz[:, 0])
    if order == "morton":
        keys = raw + (morton_code(idx),)
    else:
        keys = raw + (idx[:, 0], idx[:, 1], idx[:, 2])
    return np.lexsort(keys)


@dataclass
class PointSequence:
    """Ordered point vectors plus the source index of each row."""

    vectors: np.ndarray     # [T, POINT_DIM] float32
    index: np.ndarray       # [T] position of each row in the source cloud

    def __len__(self):
        return len(self.index)


def point_vectors(cloud, features):
    """Unordered [n, 54] rows; every point shares the window's features."""
    feat = features.concat() if isinstance(features, CnnFeatures) else np.asarray(features)
    if feat.shape != (3 * FEATURE_DIM,):
        raise InputError(f"expected {3 * FEATURE_DIM} feature values, got {feat.shape}")
    n = len(cloud)
    out = np.empty((n, POINT_DIM), dtype=np.float32)
    out[:, :3] = cloud.xyz
    out[:, 3:6] = cloud.rgb / 255.0
    out[:, 6:] = feat
    if not np.all(np.isfinite(out)):
        raise InputError("point vectors must be finite")
    return out


def build_point_sequence(cloud, features, unit_size, origin=None, order="morton"):
    if len(cloud) == 0:
        raise InputError("cannot build a sequence from an empty point set")
    perm = canonical_order(cloud.xyz, unit_size, origin, order)
    return PointSequence(point_vectors(cloud, features)[perm], perm)


# ---------------------------------------------------------------- model

def _dense(rng, n_in, n_out, name):
    return [nc.glorot_uniform((n_out, n_in), n_in, n_out, rng, name=f"{name}.w"),
            nc.zeros(n_out, name=f"{name}.b")]


class ResRnnModel:
    """dense -> drop -> res(2 dense) -> LSTM -> res(2 dense) -> drop -> dense -> drop -> dense.

    Seven dense layers, three dropouts, two residual blocks and one LSTM;
    the softmax covers ``n_classes`` labels plus a final "other" slot.
    """

    kind = "resrnn"

    def __init__(self, n_classes, rng=None, seed=0, dropout=0.5, hidden=HIDDEN, head=HEAD,
                 input_dim=POINT_DIM):
        if n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        rng = rng if rng is not None else nc.RngState(seed)
        self.n_classes = int(n_classes)
        self.dropout = float(dropout)
        self.hidden = hidden
        self.head = head
        self.input_dim = input_dim
        self.embed = _dense(rng, input_dim, hidden, "embed")
        self.res1 = _dense(rng, hidden, hidden, "res1a") + _dense(rng, hidden, hidden, "res1b")
        self.lstm = [
            nc.glorot_uniform((4 * hidden, hidden), hidden, 4 * hidden, rng, name="lstm.wx"),
            nc.glorot_uniform((4 * hidden, hidden), hidden, 4 * hidden, rng, name="lstm.wh"),
            nc.zeros(4 * hidden, name="lstm.b"),
        ]
        # forget gates start open so early training sees long context
        self.lstm[2].data[hidden:2 * hidden] = 1.0
        self.res2 = _dense(rng, hidden, hidden, "res2a") + _dense(rng, hidden, hidden, "res2b")
        self.fc = _dense(rng, hidden, head, "fc")
        self.out = _dense(rng, head, self.n_classes + 1, "out")

    @property
    def other(self):
        return self.n_classes

    @property
    def params(self):
        return self.embed + self.res1 + self.lstm + self.res2 + self.fc + self.out

    def named_tensors(self):
        return [(p.name, p) for p in self.params]

    def config(self):
        return {"n_classes": self.n_classes, "dropout": self.dropout, "hidden": self.hidden,
                "head": self.head, "input_dim": self.input_dim}

    def zero_state(self):
        z = np.zeros(self.hidden, dtype=np.float32)
        return z, z.copy()

    @staticmethod
    def _residual(x, p):
        inner = nc.dense(nc.dense(x, p[0], p[1], "relu"), p[2], p[3])
        return nc.add(x, inner)

    def logits(self, xs, state=None, training=False, rng=None):
        """``(logits [T, C+1], next_state)`` for one chunk of vectors."""
        xs = nc.as_tensor(np.asarray(xs, dtype=np.float32))
        if xs.data.ndim != 2 or xs.shape[1] != self.input_dim:
            raise InputError(f"expected [T, {self.input_dim}] vectors, got {xs.shape}")
        h0, c0 = state if state is not None else self.zero_state()
        rate = self.dropout
        z = nc.dense(xs, self.embed[0], self.embed[1], "relu")
        z = nc.dropout(z, rate, rng, training)
        z = self._residual(z, self.res1)
        z, h, c = nc.lstm_sequence(z, h0, c0, self.lstm)
        z = self._residual(z, self.res2)
        z = nc.dropout(z, rate, rng, training)
        z = nc.dense(z, self.fc[0], self.fc[1], "relu")
        z = nc.dropout(z, rate, rng, training)
        return nc.dense(z, self.out[0], self.out[1]), (h, c)


def forward_classify(model, sequence, chunk=None, state=None):
    """Per-point class distributions [T, C+1] with dropout off.

    With ``chunk`` set the sequence is processed in pieces and the LSTM
    state is carried from piece to piece, which gives the same result as
    one pass.
    """
    xs = sequence.vectors if isinstance(sequence, PointSequence) else np.asarray(sequence)
    if len(xs) == 0:
        return np.zeros((0, model.n_classes + 1))
    step = len(xs) if chunk is None else int(chunk)
    out = []
    with nc.no_grad():
        for start in range(0, len(xs), step):
            logits, state = model.logits(xs[start:start + step], state)
            out.append(nc.softmax(logits).data)
    probs = np.concatenate(out)
    if not np.all(np.isfinite(probs)):
        raise NumericError("non-finite class distribution", layer="out")
    return probs


def classify(model, sequence, chunk=CHUNK):
    """Predicted label per row of ``sequence``."""
    return forward_classify(model, sequence, chunk).argmax(axis=1)


def train_rnn(model, sequences, epochs, learning_rate, rng=None, chunk=CHUNK, log=None,
              clip=CLIP):
    """SGD with truncated backpropagation through time.

    ``sequences`` holds ``(vectors [T, 54], labels [T])`` pairs. Each
    sequence is cut into ``chunk``-long pieces; gradients stop at piece
    boundaries but the LSTM state carries over. Each update's gradient is
    clipped to global norm ``clip`` (None disables clipping). Returns the
    per-epoch mean per-point cross-entropy.
    """
    data = [(np.asarray(v, dtype=np.float32), np.asarray(y, dtype=np.int64)) for v, y in sequences]
    data = [(v, y) for v, y in data if len(v)]
    if not data:
        raise InputError("no labelled points to train on")
    for v, y in data:
        if len(v) != len(y):
            raise InputError(f"{len(v)} vectors but {len(y)} labels")
        if y.min() < 0 or y.max() > model.n_classes:
            raise InputError(f"labels must lie in 0..{model.n_classes}")
    rng = rng if rng is not None else nc.RngState(0)
    params = model.params
    total_points = sum(len(y) for _, y in data)
    losses = []
    for epoch in range(epochs):
        total = 0.0
        for i in rng.permutation(len(data)):
            xs, ys = data[i]
            state = model.zero_state()
            for start in range(0, len(xs), chunk):
                logits, state = model.logits(xs[start:start + chunk], state, training=True, rng=rng)
                loss = nc.softmax_cross_entropy(logits, ys[start:start + chunk])
                if not np.isfinite(loss.data):
                    raise TrainingError(f"loss diverged at epoch {epoch}", node="loss")
                nc.backward(loss, params=params)
                nc.clip_grad_norm(params, clip)
                nc.sgd_step(params, learning_rate)
                total += float(loss.data) * len(logits.data)
        losses.append(total / total_points)
        if log is not None:
            log(epoch, losses[-1])
    return losses


def point_accuracy(model, sequences, chunk=CHUNK):
    correct = total = 0
    for v, y in sequences:
        pred = classify(model, np.asarray(v, dtype=np.float32), chunk)
        correct += int((pred == np.asarray(y)).sum())
        total += len(y)
    return correct / max(total, 1)
