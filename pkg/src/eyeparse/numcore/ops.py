"""Differentiable operations over :class:`Tensor`.

Every op accepts a single example or a leading batch axis where the
networks need one; broadcasting is limited to numpy's rules on
elementwise ops.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make_node

ACTIVATIONS = ("identity", "tanh", "sigmoid", "relu")


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _operands(a, b):
    a = as_tensor(a)
    dtype = a.dtype
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=dtype), dtype=dtype)
    return a, b


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _operands(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(out, (a, b), backward, "add")


def sub(a, b):
    if not isinstance(a, Tensor):
        b = as_tensor(b)
        a = Tensor(np.asarray(a, dtype=b.dtype), dtype=b.dtype)
    a, b = _operands(a, b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return make_node(out, (a, b), backward, "sub")


def mul(a, b):
    a, b = _operands(a, b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(out, (a, b), backward, "mul")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0).astype(x.dtype), (x,),
                     lambda g: (g * mask,), "relu")


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1 / (1 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1 + ez)
    return out


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return make_node(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def log(x):
    x = as_tensor(x)
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def activation(x, kind):
    if kind == "identity":
        return x
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- structure

def sum(x):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    return make_node(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                     lambda g: (np.broadcast_to(g, x.shape),), "sum")


def mean(x):
    x = as_tensor(x)
    n = x.size
    return make_node(np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                     lambda g: (np.broadcast_to(g / n, x.shape),), "mean")


def reshape(x, shape):
    x = as_tensor(x)
    return make_node(x.data.reshape(shape), (x,),
                     lambda g: (g.reshape(x.shape),), "reshape")


def flatten(x, batched=False):
    return reshape(x, (x.shape[0], -1) if batched else (-1,))


def index(x, idx):
    x = as_tensor(x)
    out = np.asarray(x.data[idx])

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_node(out, (x,), backward, "index")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make_node(out, tensors, backward, "concat")


# ---------------------------------------------------------------- layers

def dense(x, weights, bias, activation_kind="identity"):
    """``activation(weights @ x + bias)`` for x of shape [n] or [B, n]."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if weights.data.ndim != 2 or x.shape[-1] != weights.shape[1] or bias.shape != (weights.shape[0],):
        raise ShapeError(f"dense: input {x.shape}, weights {weights.shape}, bias {bias.shape}")
    if activation_kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation_kind!r}")
    z = x.data @ weights.data.T + bias.data

    if activation_kind == "identity":
        y = z
    elif activation_kind == "relu":
        y = np.maximum(z, 0)
    elif activation_kind == "tanh":
        y = np.tanh(z)
    else:
        y = _sigmoid(z)

    def backward(g):
        if activation_kind == "relu":
            g = g * (z > 0)
        elif activation_kind == "tanh":
            g = g * (1 - y * y)
        elif activation_kind == "sigmoid":
            g = g * y * (1 - y)
        if x.data.ndim == 1:
            gw = np.outer(g, x.data)
            gb = g
        else:
            gw = g.T @ x.data
            gb = g.sum(axis=0)
        gx = g @ weights.data if x.requires_grad else None
        return gx, gw, gb

    return make_node(y.astype(x.dtype, copy=False), (x, weights, bias), backward, "dense")


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x):
    """Softmax over the last axis, stabilised by max-subtraction."""
    x = as_tensor(x)
    y = _softmax(x.data)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_node(y, (x,), backward, "softmax")


def softmax_cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits)."""
    logits = as_tensor(logits)
    z = logits.data if logits.data.ndim == 2 else logits.data[None]
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if t.shape[0] != z.shape[0]:
        raise ShapeError(f"{t.shape[0]} targets for {z.shape[0]} rows")
    shifted = z - z.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    n = z.shape[0]
    loss = -logp[np.arange(n), t].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(n), t] -= 1
        grad *= g / n
        return (grad.reshape(logits.shape),)

    return make_node(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "softmax_xent")


def _conv_cols(x, k, stride):
    # x: [B, C, D, H, W] -> cols [B*D'*H'*W', C*k^3]
    win = sliding_window_view(x, (k, k, k), axis=(2, 3, 4))
    win = win[:, :, ::stride, ::stride, ::stride]
    b, c, d, h, w = win.shape[:5]
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(b * d * h * w, c * k ** 3)
    return cols, (d, h, w)


def conv3d(x, filters, bias=None, stride=1):
    """3D cross-correlation, no padding.

    ``x`` is [C, D, H, W] or [B, C, D, H, W]; ``filters`` is [F, C, k, k, k].
    """
    x, filters = as_tensor(x), as_tensor(filters)
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    batched = x.data.ndim == 5
    xd = x.data if batched else x.data[None]
    if xd.ndim != 5 or filters.data.ndim != 5:
        raise ShapeError(f"conv3d: input {x.shape}, filters {filters.shape}")
    f, c, k = filters.shape[0], filters.shape[1], filters.shape[2]
    if xd.shape[1] != c or filters.shape[3] != k or filters.shape[4] != k:
        raise ShapeError(f"conv3d: input {x.shape} vs filters {filters.shape}")
    if min(xd.shape[2:]) < k:
        raise ShapeError(f"conv3d: spatial dims {xd.shape[2:]} smaller than kernel {k}")
    nb = xd.shape[0]
    cols, (od, oh, ow) = _conv_cols(xd, k, stride)
    wmat = filters.data.reshape(f, -1)
    out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = out.reshape(nb, od, oh, ow, f).transpose(0, 4, 1, 2, 3)
    if not batched:
        out = out[0]
    out = np.ascontiguousarray(out)
    parents = (x, filters) if bias is None else (x, filters, bias)

    def backward(g):
        g5 = g if batched else g[None]
        gflat = g5.transpose(0, 2, 3, 4, 1).reshape(-1, f)
        gw = (gflat.T @ cols).reshape(filters.shape)
        gx = None
        if x.requires_grad:
            gcols = (gflat @ wmat).reshape(nb, od, oh, ow, c, k, k, k)
            gx5 = np.zeros_like(xd)
            span = (od - 1) * stride + 1, (oh - 1) * stride + 1, (ow - 1) * stride + 1
            for a in range(k):
                for b in range(k):
                    for e in range(k):
                        gx5[:, :, a:a + span[0]:stride, b:b + span[1]:stride, e:e + span[2]:stride] += \
                            gcols[:, :, :, :, :, a, b, e].transpose(0, 4, 1, 2, 3)
            gx = gx5 if batched else gx5[0]
        if bias is None:
            return gx, gw
        return gx, gw, gflat.sum(axis=0)

    return make_node(out, parents, backward, "conv3d")


def conv3d_output_shape(size, k, stride):
    return (size - k) // stride + 1


def global_avg_pool3d(x):
    """Mean over the three trailing spatial axes."""
    x = as_tensor(x)
    spatial = x.shape[-3:]
    n = spatial[0] * spatial[1] * spatial[2]
    out = x.data.mean(axis=(-3, -2, -1))

    def backward(g):
        return (np.broadcast_to((g / n)[..., None, None, None], x.shape),)

    return make_node(out.astype(x.dtype, copy=False), (x,), backward, "avg_pool")


def dropout(x, rate, rng=None, training=False):
    """Inverted dropout; identity unless ``training``."""
    x = as_tensor(x)
    if not training or rate <= 0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------- recurrence

def lstm_step(x, hidden, cell, params):
    """One LSTM step built from primitive ops.

    ``params`` is ``(w_input [4h, n], w_hidden [4h, h], bias [4h])`` with
    gate blocks ordered input, forget, candidate, output.
    """
    x, hidden, cell = as_tensor(x), as_tensor(hidden), as_tensor(cell)
    w_x, w_h, b = (as_tensor(p) for p in params)
    h = w_h.shape[1]
    if w_x.shape[0] != 4 * h or hidden.shape[-1] != h or cell.shape[-1] != h:
        raise ShapeError(f"lstm_step: hidden {hidden.shape}, cell {cell.shape}, w_hidden {w_h.shape}")
    zeros = Tensor(np.zeros(4 * h, dtype=w_x.dtype), dtype=w_x.dtype)
    z = add(dense(x, w_x, b), dense(hidden, w_h, zeros))
    i = sigmoid(index(z, np.s_[..., 0:h]))
    f = sigmoid(index(z, np.s_[..., h:2 * h]))
    g = tanh(index(z, np.s_[..., 2 * h:3 * h]))
    o = sigmoid(index(z, np.s_[..., 3 * h:4 * h]))
    new_cell = add(mul(f, cell), mul(i, g))
    new_hidden = mul(o, tanh(new_cell))
    return new_hidden, new_cell


def lstm_sequence(xs, hidden, cell, params):
    """Run an LSTM over ``xs`` [T, n]; fused forward and BPTT.

    Returns ``(hs, final_hidden, final_cell)`` where ``hs`` [T, h] is the
    differentiable output and the final states are detached arrays used
    to carry state into the next chunk.
    """
    xs, hidden, cell = as_tensor(xs), as_tensor(hidden), as_tensor(cell)
    w_x, w_h, b = (as_tensor(p) for p in params)
    nh = w_h.shape[1]
    if xs.data.ndim != 2 or xs.shape[1] != w_x.shape[1] or w_x.shape[0] != 4 * nh:
        raise ShapeError(f"lstm_sequence: xs {xs.shape}, w_input {w_x.shape}")
    if hidden.shape != (nh,) or cell.shape != (nh,):
        raise ShapeError(f"lstm_sequence: state shapes {hidden.shape}, {cell.shape}")
    n_steps = xs.shape[0]
    dtype = xs.dtype
    zx = xs.data @ w_x.data.T + b.data
    wht = w_h.data.T
    gates = np.empty((n_steps, 4 * nh), dtype=dtype)
    cells = np.empty((n_steps + 1, nh), dtype=dtype)
    hs = np.empty((n_steps + 1, nh), dtype=dtype)
    hs[0], cells[0] = hidden.data, cell.data
    for t in range(n_steps):
        z = zx[t] + hs[t] @ wht
        gt = gates[t]
        gt[:nh] = _sigmoid(z[:nh])
        gt[nh:2 * nh] = _sigmoid(z[nh:2 * nh])
        gt[2 * nh:3 * nh] = np.tanh(z[2 * nh:3 * nh])
        gt[3 * nh:] = _sigmoid(z[3 * nh:])
        cells[t + 1] = gt[nh:2 * nh] * cells[t] + gt[:nh] * gt[2 * nh:3 * nh]
        hs[t + 1] = gt[3 * nh:] * np.tanh(cells[t + 1])
    tanh_c = np.tanh(cells[1:])

    def backward(g):
        dz = np.empty_like(gates)
        dh_next = np.zeros(nh, dtype=dtype)
        dc_next = np.zeros(nh, dtype=dtype)
        w_hd = w_h.data
        for t in range(n_steps - 1, -1, -1):
            gt = gates[t]
            i, f, c_hat, o = gt[:nh], gt[nh:2 * nh], gt[2 * nh:3 * nh], gt[3 * nh:]
            dh = g[t] + dh_next
            dc = dh * o * (1 - tanh_c[t] ** 2) + dc_next
            dzt = dz[t]
            dzt[:nh] = dc * c_hat * i * (1 - i)
            dzt[nh:2 * nh] = dc * cells[t] * f * (1 - f)
            dzt[2 * nh:3 * nh] = dc * i * (1 - c_hat ** 2)
            dzt[3 * nh:] = dh * tanh_c[t] * o * (1 - o)
            dc_next = dc * f
            dh_next = dzt @ w_hd
        gxs = dz @ w_x.data if xs.requires_grad else None
        gwx = dz.T @ xs.data
        gwh = dz.T @ hs[:-1]
        gb = dz.sum(axis=0)
        return gxs, dh_next, dc_next, gwx, gwh, gb

    out = make_node(hs[1:].copy(), (xs, hidden, cell, w_x, w_h, b), backward, "lstm_seq")
    return out, hs[-1].copy(), cells[-1].copy()
