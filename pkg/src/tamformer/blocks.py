"""Transformer building blocks: positional table, biased multi-head attention,
and the pre-norm residual block used for the per-modality encoders, the query
branch and the cross-attention decoder.

Blocks keep two widths apart: the residual width ``d_in`` of the stream they
update, and the attention width ``d_model`` that is split across heads, so a
block can run on the concatenation of several modality streams while
attention stays head-divisible.
"""

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import ContractError, DimensionError
from .numerics import (
    LARGE,
    Tensor,
    add,
    as_tensor,
    layer_norm,
    matmul,
    relu,
    reshape,
    scale,
    softmax_rows,
    transpose,
)


def glorot(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)), requires_grad=True)


def zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def relu_bias(n, value=0.01):
    """Small positive bias for layers feeding a relu, so an all-dead input
    does not park the pre-activation exactly on the kink."""
    return Tensor(np.full(n, value), requires_grad=True)


def ones(*shape):
    return Tensor(np.ones(shape), requires_grad=True)


def positional_encoding(T, d):
    """Fixed sinusoidal table, ``[T, d]``; even channels sin, odd channels cos."""
    if T < 1:
        raise ContractError(f"positional_encoding: T must be >= 1, got {T}")
    if d < 2 or d % 2:
        raise ContractError(f"positional_encoding: width must be even, got {d}")
    pos = np.arange(T, dtype=np.float64)[:, None]
    rate = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((T, d))
    table[:, 0::2] = np.sin(pos / rate)
    table[:, 1::2] = np.cos(pos / rate)
    return Tensor(table)


@dataclass
class AttentionBlockParams:
    n_heads: int
    wq: Tensor
    bq: Tensor
    wk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    # separate norm for the key/value stream of cross-attention blocks
    lnkv_g: Optional[Tensor] = None
    lnkv_b: Optional[Tensor] = None

    @property
    def d_in(self):
        return self.wq.shape[0]

    @property
    def d_kv(self):
        return self.wk.shape[0]

    @property
    def d_model(self):
        return self.wq.shape[1]

    @property
    def cross(self):
        return self.lnkv_g is not None

    def named_tensors(self, prefix=""):
        out = []
        for f in fields(self):
            if f.name == "n_heads":
                continue
            t = getattr(self, f.name)
            if t is not None:
                out.append((prefix + f.name, t))
        return out


def init_attention_block(rng, d_in, d_model, n_heads, ff_dim, d_kv=None, cross=False):
    """Glorot-uniform weights, zero biases, unit norm gains."""
    if n_heads < 1 or d_model % n_heads:
        raise ContractError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
    if ff_dim <= 0:
        raise ContractError(f"ff_dim must be positive, got {ff_dim}")
    d_kv = d_in if d_kv is None else d_kv
    if d_kv != d_in:
        cross = True
    return AttentionBlockParams(
        n_heads=n_heads,
        wq=glorot(rng, d_in, d_model), bq=zeros(d_model),
        wk=glorot(rng, d_kv, d_model),
        wv=glorot(rng, d_kv, d_model), bv=zeros(d_model),
        wo=glorot(rng, d_model, d_in), bo=zeros(d_in),
        ln1_g=ones(d_in), ln1_b=zeros(d_in),
        ln2_g=ones(d_in), ln2_b=zeros(d_in),
        w1=glorot(rng, d_in, ff_dim), b1=relu_bias(ff_dim),
        w2=glorot(rng, ff_dim, d_in), b2=zeros(d_in),
        lnkv_g=ones(d_kv) if cross else None,
        lnkv_b=zeros(d_kv) if cross else None,
    )


def causal_bias(t_q, t_k, frames=None):
    """Hard bias: 0 where ``col <= frame(row)``, ``-LARGE`` after it."""
    frames = np.arange(t_q) if frames is None else np.asarray(frames)
    allowed = np.arange(t_k)[None, :] <= frames[:, None]
    return np.where(allowed, 0.0, -LARGE)


def _split_heads(x, n_heads):
    *lead, t, d = x.shape
    x = reshape(x, (*lead, t, n_heads, d // n_heads))
    n = len(lead)
    return transpose(x, (*range(n), n + 1, n, n + 2))


def _merge_heads(x):
    *lead, h, t, dh = x.shape
    n = len(lead)
    x = transpose(x, (*range(n), n + 1, n, n + 2))
    return reshape(x, (*lead, t, h * dh))


def multi_head_attention(params, q_in, kv_in, bias):
    """Scaled dot-product attention with an additive bias on the logits.

    ``bias`` is ``[..., T_q, T_k]`` (array or tensor); a row that is entirely
    ``-LARGE`` has nothing to attend to and is rejected. Returns the projected
    output ``[..., T_q, d_in]`` and the weights ``[..., N_h, T_q, T_k]``.
    """
    q_in, kv_in, bias = as_tensor(q_in), as_tensor(kv_in), as_tensor(bias)
    if q_in.shape[-1] != params.d_in or kv_in.shape[-1] != params.d_kv:
        raise DimensionError(
            f"attention: inputs {q_in.shape} / {kv_in.shape} do not match "
            f"block widths d_in={params.d_in}, d_kv={params.d_kv}"
        )
    t_q, t_k = q_in.shape[-2], kv_in.shape[-2]
    if bias.shape[-2:] != (t_q, t_k):
        raise DimensionError(f"attention: bias {bias.shape} does not match [{t_q}x{t_k}]")
    if np.any(np.all(bias.data <= -LARGE / 2, axis=-1)):
        raise ContractError("attention: a bias row masks every key position")

    h = params.n_heads
    d_head = params.d_model // h
    q = _split_heads(add(matmul(q_in, params.wq), params.bq), h)
    # no key bias: it shifts every logit of a row equally and cancels in the softmax
    k = _split_heads(matmul(kv_in, params.wk), h)
    v = _split_heads(add(matmul(kv_in, params.wv), params.bv), h)

    logits = scale(matmul(q, transpose(k, (*range(k.ndim - 2), k.ndim - 1, k.ndim - 2))),
                   1.0 / np.sqrt(d_head))
    bias_h = reshape(bias, (*bias.shape[:-2], 1, t_q, t_k))
    weights = softmax_rows(add(logits, bias_h))
    out = _merge_heads(matmul(weights, v))
    return add(matmul(out, params.wo), params.bo), weights


def feed_forward(params, x):
    return add(matmul(relu(add(matmul(x, params.w1), params.b1)), params.w2), params.b2)


def transformer_block(params, q_in, kv_in, bias, eps=1e-5, return_weights=False):
    """Pre-norm residual block: ``x' = q + MHA(LN q, LN kv)``, ``out = x' + FFN(LN x')``.

    Self-attention is the case ``kv_in is q_in`` on a block without a separate
    key/value norm.
    """
    q_in = as_tensor(q_in)
    q_norm = layer_norm(q_in, params.ln1_g, params.ln1_b, eps)
    if params.cross:
        kv_norm = layer_norm(kv_in, params.lnkv_g, params.lnkv_b, eps)
    elif kv_in is q_in:
        kv_norm = q_norm
    else:
        kv_norm = layer_norm(kv_in, params.ln1_g, params.ln1_b, eps)
    attn, weights = multi_head_attention(params, q_norm, kv_norm, bias)
    x = add(q_in, attn)
    out = add(x, feed_forward(params, layer_norm(x, params.ln2_g, params.ln2_b, eps)))
    return (out, weights) if return_weights else out
