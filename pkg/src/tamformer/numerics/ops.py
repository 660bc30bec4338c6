"""Differentiable primitives used by the model.

Shapes follow numpy conventions; any leading axes act as batch axes. Binary
elementwise ops broadcast, and their backward rules sum gradients back down
to each input's own shape.
"""

import numpy as np

from ..errors import ContractError, DimensionError
from . import _backend
from .tensor import Tensor, as_tensor, log_kink_pattern, make_node

LARGE = 1e9


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a, b, what):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} do not broadcast") from None


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch axes of {a.shape} and {b.shape} differ") from None

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), backward, "matmul")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), backward, "mul")


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return make_node(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a):
    a = as_tensor(a)
    on = a.data > 0
    log_kink_pattern(on)
    return make_node(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,), "relu")


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    # exp of a non-positive argument only, so large |x| cannot overflow
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log(a):
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clip(a, lo, hi):
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    log_kink_pattern(inside)
    return make_node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def softmax_rows(x):
    """Softmax over the last axis, with max subtraction."""
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] == 0:
        raise DimensionError(f"softmax_rows: empty rows in shape {x.shape}")
    y = _backend.softmax_fwd(x.data)
    return make_node(y, (x,), lambda g: (_backend.softmax_bwd(y, g),), "softmax_rows")


def layer_norm(x, gain, bias, eps=1e-5):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1] if x.ndim else 0
    if d < 2:
        raise DimensionError(f"layer_norm: needs last axis >= 2, got shape {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {d}"
        )
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    y, xhat, rstd = _backend.layer_norm_fwd(x.data, gain.data, bias.data, eps)

    def backward(g):
        gx, gg, gb = _backend.layer_norm_bwd(g, xhat, rstd, gain.data)
        return gx, gg, gb

    return make_node(y, (x, gain, bias), backward, "layer_norm")


def concat_last_axis(*tensors):
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat_last_axis: no inputs")
    lead = ts[0].shape[:-1]
    for t in ts[1:]:
        if t.shape[:-1] != lead:
            raise DimensionError(
                f"concat_last_axis: leading shapes differ: {[t.shape for t in ts]}"
            )
    widths = [t.shape[-1] for t in ts]
    cuts = np.cumsum(widths)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=-1))

    return make_node(np.concatenate([t.data for t in ts], axis=-1), ts, backward, "concat")


def sum(a, axis=None):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return make_node(out, (a,), backward, "sum")


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis), 1.0 / n)


def sum_sq(a, axis=None):
    a = as_tensor(a)
    out = (a.data * a.data).sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (2.0 * a.data * g,)

    return make_node(out, (a,), backward, "sum_sq")


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from None
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return make_node(
        np.ascontiguousarray(a.data.transpose(axes)), (a,),
        lambda g: (g.transpose(inv),), "transpose",
    )


def take(a, index, axis):
    """Select entries along ``axis`` (used for query-grid sub-sampling)."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (slice(None),) * (axis % a.ndim) + (index,), g)
        return (ga,)

    return make_node(np.take(a.data, index, axis=axis), (a,), backward, "take")


def where(cond, a, fill):
    """``a`` where ``cond`` holds, the constant ``fill`` elsewhere."""
    a = as_tensor(a)
    cond = np.broadcast_to(np.asarray(cond, dtype=bool), a.shape)
    return make_node(np.where(cond, a.data, fill), (a,), lambda g: (g * cond,), "where")


def stop_gradient(a):
    return Tensor(as_tensor(a).data)


_ELEMENTWISE = {
    "add": add,
    "mul": mul,
    "relu": relu,
    "scale": scale,
    "concat_last_axis": concat_last_axis,
    "mean": mean,
    "sum_sq": sum_sq,
}


def elementwise(kind, *inputs, **kwargs):
    """Dispatch one of the simple elementwise/reduction kinds by name."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise kind {kind!r}") from None
    return fn(*inputs, **kwargs)
