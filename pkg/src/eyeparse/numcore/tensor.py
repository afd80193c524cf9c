"""Dense tensors with a dynamic reverse-mode autodiff graph."""

import contextlib
import itertools

import numpy as np

from ..errors import ContractError

DEFAULT_DTYPE = np.float32

_grad_enabled = True
_ids = itertools.count()


@contextlib.contextmanager
def no_grad():
    """Run ops without recording graph nodes (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    """A value node. Parameters are leaves with ``requires_grad=True``.

    ``version`` counts in-place updates so caches keyed on weights can
    detect staleness.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "parents",
                 "_backward", "id", "version")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = "param" if requires_grad else "input"
        self.parents = ()
        self._backward = None
        self.id = next(_ids)
        self.version = 0

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self.parents

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, np.ndarray) and x.dtype.kind == "f":
        dtype = x.dtype
    return Tensor(x, dtype=dtype)


def make_node(data, parents, backward, op):
    """Create the output node of an op.

    ``backward(g)`` returns one gradient (or None) per parent.
    """
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward
    return out


class Graph:
    """Topologically ordered record of the nodes reachable from an output."""

    def __init__(self, output):
        self.output = output
        self.order = _topological(output)

    @property
    def nodes(self):
        return [(n.op, tuple(p.id for p in n.parents), n.is_leaf and n.requires_grad)
                for n in self.order]

    def parameters(self):
        return [n for n in self.order if n.is_leaf and n.requires_grad]

    def validate(self):
        """Check that every node's inputs precede it."""
        seen = set()
        for node in self.order:
            for p in node.parents:
                if p.id not in seen:
                    return False
            seen.add(node.id)
        return True


def _topological(output):
    order, visited = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in visited:
            continue
        visited.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.id not in visited:
                stack.append((p, False))
    return order


def backward(loss, params=None):
    """Populate ``.grad`` on every leaf reachable from a scalar ``loss``.

    Gradients are recomputed from scratch on each call. Tensors listed in
    ``params`` that the loss does not reach get a zero gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    graph = Graph(loss)
    for node in graph.order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=parent.data.dtype, copy=True).reshape(parent.shape)
            else:
                parent.grad += g
    # interior nodes keep no gradient; only leaves are of interest
    for node in graph.order:
        if node.parents:
            node.grad = None
    if params is not None:
        reached = {n.id for n in graph.order}
        for p in params:
            if p.grad is None or p.id not in reached:
                p.grad = np.zeros_like(p.data)
    return graph
