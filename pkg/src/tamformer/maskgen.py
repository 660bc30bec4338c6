"""Learned causal soft attention masks.

A mask row for target step ``t`` scores every source frame ``t' <= frame(t)``
with a small MLP applied to the pair ``[target_feats[t] ; source_feats[t']]``,
squashes the score with a sigmoid, and is exactly zero past ``frame(t)``.
Masks enter attention as an additive log bias (:func:`mask_to_bias`).
"""

from dataclasses import dataclass

import numpy as np

from .blocks import glorot, relu_bias, zeros
from .errors import ContractError, DimensionError
from .numerics import LARGE, Tensor, add, log, matmul, mul, relu, reshape, sigmoid, where


@dataclass
class MaskScorerParams:
    w_target: Tensor
    w_source: Tensor
    b_in: Tensor
    hidden: list  # [(w, b), ...] for the remaining hidden layers
    w_out: Tensor
    b_out: Tensor

    @property
    def layer_sizes(self):
        return [self.w_target.shape[1]] + [w.shape[1] for w, _ in self.hidden]

    def named_tensors(self, prefix=""):
        out = [
            (prefix + "w_target", self.w_target),
            (prefix + "w_source", self.w_source),
            (prefix + "b_in", self.b_in),
        ]
        for i, (w, b) in enumerate(self.hidden):
            out += [(f"{prefix}hidden{i}.w", w), (f"{prefix}hidden{i}.b", b)]
        return out + [(prefix + "w_out", self.w_out), (prefix + "b_out", self.b_out)]


def init_mask_scorer(rng, d_cat, hidden_sizes=(128, 64, 32)):
    """Pairwise scorer ``2*d_cat -> hidden_sizes -> 1``.

    The first layer is stored as two ``d_cat x h`` halves, one per side of the
    pair; that equals one ``2*d_cat x h`` matrix on the concatenated input.
    """
    sizes = list(hidden_sizes)
    if not sizes or any(s < 1 for s in sizes):
        raise ContractError(f"mask scorer hidden sizes must be positive, got {sizes}")
    full = glorot(rng, 2 * d_cat, sizes[0]).data
    hidden = [(glorot(rng, a, b), relu_bias(b)) for a, b in zip(sizes[:-1], sizes[1:])]
    return MaskScorerParams(
        w_target=Tensor(full[:d_cat].copy(), requires_grad=True),
        w_source=Tensor(full[d_cat:].copy(), requires_grad=True),
        b_in=relu_bias(sizes[0]),
        hidden=hidden,
        w_out=glorot(rng, sizes[-1], 1),
        b_out=zeros(1),
    )


@dataclass
class LearnedMask:
    rows: Tensor  # [..., T_q, T_k]
    grid_map: np.ndarray  # frame index of each target row

    @property
    def causal(self):
        return causal_support(self.grid_map, self.rows.shape[-1])

    @property
    def frames_available(self):
        return self.grid_map + 1


def causal_support(grid_map, t_k):
    return np.arange(t_k)[None, :] <= np.asarray(grid_map)[:, None]


def _check_grid(grid_map, t_q, t_k):
    grid_map = np.asarray(grid_map, dtype=np.intp)
    if grid_map.shape != (t_q,):
        raise ContractError(f"grid_map has {grid_map.size} entries for {t_q} target rows")
    if t_q and (grid_map.min() < 0 or grid_map.max() >= t_k):
        raise ContractError(f"grid_map entries must lie in [0, {t_k - 1}], got {grid_map.tolist()}")
    if np.any(np.diff(grid_map) < 0):
        raise ContractError("grid_map must be nondecreasing")
    return grid_map


def predict_mask(scorer, target_feats, source_feats, grid_map):
    """Soft causal mask ``[..., T_q, T_k]`` from per-step features."""
    t_q, t_k = target_feats.shape[-2], source_feats.shape[-2]
    if target_feats.shape[-1] != scorer.w_target.shape[0] or source_feats.shape[-1] != scorer.w_source.shape[0]:
        raise DimensionError(
            f"predict_mask: feature widths {target_feats.shape[-1]}/{source_feats.shape[-1]} "
            f"do not match scorer input {scorer.w_target.shape[0]}"
        )
    grid_map = _check_grid(grid_map, t_q, t_k)
    h_dim = scorer.b_in.shape[0]
    tgt = matmul(target_feats, scorer.w_target)
    src = matmul(source_feats, scorer.w_source)
    h = add(reshape(tgt, (*tgt.shape[:-2], t_q, 1, h_dim)),
            reshape(src, (*src.shape[:-2], 1, t_k, h_dim)))
    h = relu(add(h, scorer.b_in))
    for w, b in scorer.hidden:
        h = relu(add(matmul(h, w), b))
    logit = add(matmul(h, scorer.w_out), scorer.b_out)
    m = sigmoid(reshape(logit, logit.shape[:-1]))
    return LearnedMask(rows=mul(m, causal_support(grid_map, t_k).astype(np.float64)), grid_map=grid_map)


def mask_to_bias(mask, eps=1e-6):
    """``ln(M + eps)`` on the causal support, ``-LARGE`` past it."""
    if eps <= 0:
        raise ContractError("mask_to_bias: eps must be positive")
    return where(mask.causal, log(add(mask.rows, eps)), -LARGE)


def sparsity_stats(mask, threshold=0.5):
    """Per row: frames whose mask value reaches ``threshold``, and frames available."""
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must lie in (0, 1), got {threshold}")
    rows = mask.rows.data if isinstance(mask.rows, Tensor) else np.asarray(mask.rows)
    used = ((rows >= threshold) & mask.causal).sum(axis=-1)
    available = np.broadcast_to(mask.frames_available, used.shape)
    return used, available.copy()


def write_mask_csv(path, rows):
    """One ``row,col,value`` line per entry, row-major, 6 decimals."""
    rows = np.asarray(rows)
    with open(path, "w", newline="") as fh:
        fh.write("row,col,value\n")
        for i in range(rows.shape[0]):
            for j in range(rows.shape[1]):
                fh.write(f"{i},{j},{rows[i, j]:.6f}\n")
