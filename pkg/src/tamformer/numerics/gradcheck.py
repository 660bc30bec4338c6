"""Central finite-difference gradient checking."""

import contextlib

import numpy as np

from ..errors import ContractError
from .tensor import extended_precision, no_grad, record_kinks


def _evaluate(build):
    with record_kinks() as kinks:
        value = build().data
    return value, kinks


def _same_pattern(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def _central_difference(build, flat, i, eps, min_eps):
    """Central difference at entry ``i``; the step shrinks tenfold (down to
    ``min_eps``) while the two probes land on different sides of a relu/clip
    kink, where a difference quotient does not estimate the derivative."""
    orig = flat[i]
    step = eps
    while True:
        hi, lo = orig + step, orig - step
        flat[i] = hi
        f_hi, k_hi = _evaluate(build)
        flat[i] = lo
        f_lo, k_lo = _evaluate(build)
        flat[i] = orig
        if _same_pattern(k_hi, k_lo) or step / 10 < min_eps:
            return float((f_hi - f_lo) / (hi - lo))
        step /= 10


def gradient_errors(build, params, eps=1e-5, extended=True):
    """Per-entry relative errors between analytic and numeric gradients.

    ``build`` is a zero-argument callable returning a scalar loss tensor that
    depends on ``params``. Entries are perturbed in place and restored.
    Returns one array per parameter, shaped like it.

    The analytic side always runs in float64. With ``extended`` the two
    perturbed losses are evaluated in extended precision, which keeps the
    difference quotient accurate for entries whose gradient is far below
    one float64 ulp of the loss divided by ``eps``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"grad_check eps must lie in [1e-7, 1e-3], got {eps}")
    for p in params:
        p.grad = None
    loss = build()
    if loss.data.size != 1:
        raise ContractError(f"grad_check needs a scalar loss, got shape {loss.shape}")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    errors = []
    precision = extended_precision() if extended else contextlib.nullcontext()
    with no_grad(), precision:
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            if not np.shares_memory(flat, p.data):
                raise ContractError("grad_check needs contiguous parameter storage")
            a_flat = a.reshape(-1)
            err = np.zeros(flat.size)
            for i in range(flat.size):
                num = _central_difference(build, flat, i, eps, min_eps=1e-7)
                err[i] = abs(a_flat[i] - num) / max(abs(a_flat[i]), abs(num), 1e-8)
            errors.append(err.reshape(p.shape))
    return errors


def grad_check(build, params, eps=1e-5, extended=True):
    """Max relative error over every entry of every parameter."""
    errs = gradient_errors(build, params, eps, extended)
    return max((float(e.max()) for e in errs if e.size), default=0.0)
