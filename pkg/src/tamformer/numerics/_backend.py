"""Kernel backend selection.

The compiled extension is used when it imports cleanly; setting
``TAMFORMER_PURE_PYTHON=1`` forces the numpy fallback. ``use_backend`` swaps
at runtime (tests and the benchmark rely on it).
"""

import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_active = _kernels_py
name = "python"


def available():
    out = ["python"]
    if _compiled is not None:
        out.append("compiled")
    return out


def use_backend(which):
    global _active, name
    if which == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        _active = _compiled
    elif which == "python":
        _active = _kernels_py
    else:
        raise ValueError(f"unknown backend {which!r}")
    name = which


if _compiled is not None and os.environ.get("TAMFORMER_PURE_PYTHON", "") not in ("1", "true"):
    use_backend("compiled")


def _kernels_for(*arrays):
    # the compiled kernels are float64-only; other dtypes take the numpy path
    if all(a.dtype == np.float64 for a in arrays):
        return _active
    return _kernels_py


def _rows(a):
    return np.ascontiguousarray(a).reshape(-1, a.shape[-1])


def softmax_fwd(x):
    return _kernels_for(x).softmax_fwd(_rows(x)).reshape(x.shape)


def softmax_bwd(y, gy):
    return _kernels_for(y, gy).softmax_bwd(_rows(y), _rows(gy)).reshape(y.shape)


def layer_norm_fwd(x, gain, bias, eps):
    k = _kernels_for(x, gain, bias)
    y, xhat, rstd = k.layer_norm_fwd(
        _rows(x), np.ascontiguousarray(gain), np.ascontiguousarray(bias), float(eps)
    )
    return y.reshape(x.shape), xhat, rstd


def layer_norm_bwd(gy, xhat, rstd, gain):
    k = _kernels_for(gy, xhat, rstd, gain)
    gx, gg, gb = k.layer_norm_bwd(_rows(gy), xhat, rstd, np.ascontiguousarray(gain))
    return gx.reshape(gy.shape), gg, gb
