from . import _backend as backend
from .gradcheck import grad_check, gradient_errors
from .ops import (
    LARGE,
    add,
    clip,
    concat_last_axis,
    elementwise,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_rows,
    stop_gradient,
    sub,
    sum,
    sum_sq,
    take,
    transpose,
    where,
)
from .tensor import Tensor, as_tensor, extended_precision, grad_enabled, graph_nodes, no_grad

__all__ = [
    "LARGE", "Tensor", "add", "as_tensor", "backend", "clip", "concat_last_axis",
    "elementwise", "extended_precision", "grad_check", "grad_enabled", "gradient_errors", "graph_nodes",
    "layer_norm", "log", "matmul", "mean", "mul", "no_grad", "relu", "reshape",
    "scale", "sigmoid", "softmax_rows", "stop_gradient", "sub", "sum", "sum_sq",
    "take", "transpose", "where",
]
