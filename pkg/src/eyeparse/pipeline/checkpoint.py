"""Binary model checkpoints.

Layout (all integers little-endian uint32)::

    b"VSK1" | version | len + kind tag | len + config JSON | tensor count
    then per tensor: len + name | ndim | dims... | float32 values (row-major)
"""

import json
import struct

import numpy as np

from ..errors import CorruptHeaderError, FormatError, TruncationError, VersionError
from ..rescls import ResRnnModel
from ..rewardnet import RewardNet
from ..dqn import QNet

MAGIC = b"VSK1"
VERSION = 1
_U32 = struct.Struct("<I")


def _model_kinds():
    return {RewardNet.kind: RewardNet, QNet.kind: QNet, ResRnnModel.kind: ResRnnModel}


def encode_checkpoint(model, extra=None):
    config = dict(model.config())
    if extra:
        config.update(extra)
    parts = [MAGIC, _U32.pack(VERSION)]

    def blob(b):
        parts.append(_U32.pack(len(b)))
        parts.append(b)

    blob(model.kind.encode("utf-8"))
    blob(json.dumps(config, sort_keys=True).encode("utf-8"))
    tensors = model.named_tensors()
    parts.append(_U32.pack(len(tensors)))
    for name, t in tensors:
        blob(name.encode("utf-8"))
        data = np.ascontiguousarray(t.data, dtype="<f4")
        parts.append(_U32.pack(data.ndim))
        parts.extend(_U32.pack(d) for d in data.shape)
        parts.append(data.tobytes())
    return b"".join(parts)


def save_checkpoint(model, path, extra=None):
    """Write ``model``; ``extra`` adds keys (class list, unit size...) to the config echo."""
    data = encode_checkpoint(model, extra)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise EOFError
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return _U32.unpack(self.take(4))[0]

    def blob(self):
        return self.take(self.u32())


def decode_checkpoint(data):
    """``(kind, config, [(name, array)])`` from checkpoint bytes."""
    if data[:4] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    r = _Reader(data)
    r.take(4)
    try:
        version = r.u32()
    except EOFError:
        raise CorruptHeaderError("header ends before the version field") from None
    if version != VERSION:
        raise VersionError(f"checkpoint version {version}; this build reads version {VERSION}")
    try:
        kind = r.blob().decode("utf-8")
        config = json.loads(r.blob().decode("utf-8"))
        count = r.u32()
    except (EOFError, UnicodeDecodeError, ValueError) as exc:
        raise CorruptHeaderError(f"unreadable checkpoint header ({exc.__class__.__name__})") from None
    if not isinstance(config, dict):
        raise CorruptHeaderError("checkpoint config is not a mapping")
    tensors = []
    for i in range(count):
        name = f"#{i}"
        try:
            name = r.blob().decode("utf-8")
            ndim = r.u32()
            shape = tuple(r.u32() for _ in range(ndim))
            n = int(np.prod(shape, dtype=np.int64))
            values = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape)
        except EOFError:
            raise TruncationError(f"checkpoint truncated inside tensor {name!r}", tensor=name) from None
        except UnicodeDecodeError:
            raise CorruptHeaderError(f"tensor {i} has an unreadable name") from None
        tensors.append((name, values.astype(np.float32)))
    if r.pos != len(data):
        raise CorruptHeaderError(f"{len(data) - r.pos} trailing bytes after the last tensor")
    return kind, config, tensors


def build_model(kind, config, tensors):
    kinds = _model_kinds()
    if kind not in kinds:
        raise FormatError(f"unknown model kind {kind!r}")
    if kind == RewardNet.kind:
        model = RewardNet(feature_dim=config.get("feature_dim", 16), class_id=config.get("class_id"))
    elif kind == QNet.kind:
        model = QNet(n_actions=config.get("n_actions", 13))
    else:
        keys = ("dropout", "hidden", "head", "input_dim")
        model = ResRnnModel(config["n_classes"], **{k: config[k] for k in keys if k in config})
    named = dict(model.named_tensors())
    if set(named) != {n for n, _ in tensors}:
        raise FormatError(f"tensor names do not match a {kind} model")
    for name, values in tensors:
        if named[name].shape != values.shape:
            raise FormatError(f"tensor {name}: shape {values.shape}, model expects {named[name].shape}")
        named[name].data[...] = values
    return model


def load_checkpoint(path):
    """``(model, config)``; the config carries any extra keys saved with it."""
    with open(path, "rb") as fh:
        data = fh.read()
    kind, config, tensors = decode_checkpoint(data)
    return build_model(kind, config, tensors), config
