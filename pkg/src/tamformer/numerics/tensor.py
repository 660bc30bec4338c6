"""Define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its inputs and a
closure mapping the output gradient to input gradients. Tensors are stamped
with a creation counter, so sorting the reachable nodes by that counter is a
valid topological order; :meth:`Tensor.backward` is one reverse sweep over it.
"""

import contextlib
import itertools

import numpy as np

from ..errors import ContractError

_counter = itertools.count()
_grad_enabled = True
_dtype = np.float64
_kink_log = None


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (evaluation, finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


@contextlib.contextmanager
def record_kinks():
    """Collect the activation pattern of every piecewise op evaluated inside."""
    global _kink_log
    prev = _kink_log
    _kink_log = []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def log_kink_pattern(pattern):
    if _kink_log is not None:
        _kink_log.append(pattern)


@contextlib.contextmanager
def extended_precision():
    """Create new tensors in the platform's extended float (x87 80-bit on x86-64).

    Used only for the finite-difference side of gradient checks, where the
    rounding noise of float64 would swamp tiny gradient entries. Parameters
    created earlier keep float64 storage and are promoted inside each op.
    """
    global _dtype
    prev = _dtype
    _dtype = np.longdouble
    try:
        yield
    finally:
        _dtype = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents = ()
        self._backward = None
        self._id = next(_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def values(self):
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar; the implementations live in ops.py
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import scale
        return scale(self, -1.0)

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring it."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() without a seed gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ContractError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")
        if not self.requires_grad:
            return

        pending = {self._id: grad}
        for node in reversed(graph_nodes(self)):
            g = pending.pop(node._id, None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = pending.get(parent._id)
                pending[parent._id] = pg if prev is None else prev + pg


def graph_nodes(root):
    """All grad-requiring nodes reachable from ``root``, inputs before consumers."""
    seen = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in seen or not node.requires_grad:
            continue
        seen[node._id] = node
        stack.extend(node._parents)
    return [seen[k] for k in sorted(seen)]


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data, parents, backward, op):
    """Wrap an op result, recording parents only when a gradient can flow."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward
    return out
