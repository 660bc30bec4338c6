"""Model assembly.

Each modality is linearly projected to ``d_model`` channels. Per-modality
encoders run on the full-rate frame grid; an early-fusion query branch runs
the concatenated projections on a sub-sampled grid (every
``query_stride``-th frame, anchored on the last frame of each group); a
cross-attention decoder lets every query read the encoded frames. Both
attention stages are biased by learned causal masks scored from the
concatenated projections. A small MLP with a sigmoid turns each decoded
query into a crossing probability.
"""

import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .blocks import (
    AttentionBlockParams,
    causal_bias,
    glorot,
    init_attention_block,
    relu_bias,
    positional_encoding,
    transformer_block,
    zeros,
)
from .errors import ContractError, ParseError, RangeError, VersionError
from .maskgen import LearnedMask, MaskScorerParams, init_mask_scorer, mask_to_bias, predict_mask
from .numerics import (
    Tensor,
    add,
    as_tensor,
    concat_last_axis,
    layer_norm,
    matmul,
    no_grad,
    relu,
    reshape,
    scale,
    sigmoid,
    take,
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    modality_names: tuple = ("context", "bbox", "pose", "speed")
    modality_widths: tuple = (16, 4, 12, 1)
    t_enc: int = 45
    query_stride: int = 3
    d_model: int = 16
    n_heads: int = 2
    ff_dim: int = 64
    depth: int = 1
    mask_hidden: tuple = (128, 64, 32)
    head_hidden: int = 32
    ln_eps: float = 1e-5
    mask_eps: float = 1e-6
    fps: int = 30

    def __post_init__(self):
        # tuples keep the config hashable after a JSON round trip
        for name in ("modality_names", "modality_widths", "mask_hidden"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        if len(self.modality_names) != len(self.modality_widths) or not self.modality_names:
            raise ContractError("modality_names and modality_widths must be nonempty and aligned")
        if any(w < 1 for w in self.modality_widths):
            raise ContractError(f"modality widths must be positive: {self.modality_widths}")
        if self.query_stride < 1 or self.t_enc < self.query_stride:
            raise ContractError(
                f"need query_stride >= 1 and t_enc >= query_stride "
                f"(t_enc={self.t_enc}, query_stride={self.query_stride})"
            )
        if self.d_model % 2 or self.d_model % self.n_heads:
            raise ContractError(
                f"d_model={self.d_model} must be even and divisible by n_heads={self.n_heads}"
            )
        if self.depth < 1 or self.ff_dim < 1 or self.head_hidden < 1:
            raise ContractError("depth, ff_dim and head_hidden must be positive")

    @property
    def n_modalities(self):
        return len(self.modality_widths)

    @property
    def d_raw(self):
        return int(sum(self.modality_widths))

    @property
    def d_cat(self):
        """Width of the fused (concatenated, projected) features."""
        return self.n_modalities * self.d_model

    @property
    def t_q(self):
        return self.t_enc // self.query_stride

    @property
    def query_frames(self):
        s = self.query_stride
        return np.arange(s - 1, self.t_q * s, s)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ContractError(f"unknown model config fields: {sorted(extra)}")
        return cls(**d)


PROFILES = {
    # small enough for exhaustive finite-difference checks
    "desk": ModelConfig(
        modality_widths=(4, 2, 3, 1), t_enc=12, query_stride=3, d_model=8, n_heads=2,
        ff_dim=16, mask_hidden=(8, 4, 2),
    ),
    "wide": ModelConfig(),
    # head count, feed-forward width and 4.5 s window of the published setup
    "paper": ModelConfig(t_enc=135, d_model=96, n_heads=6, ff_dim=1024),
}


@dataclass
class TamformerParams:
    config: ModelConfig
    phi: list  # [(w, b)] per modality: raw width -> d_model
    encoders: list  # [[AttentionBlockParams] * depth] per modality
    query: List[AttentionBlockParams]
    decoder: List[AttentionBlockParams]
    mask_e: MaskScorerParams
    mask_d: MaskScorerParams
    head: list  # [(w1, b1), (w2, b2)]

    def named_tensors(self):
        out = []
        for m, (w, b) in enumerate(self.phi):
            out += [(f"phi.{m}.w", w), (f"phi.{m}.b", b)]
        for m, stack in enumerate(self.encoders):
            for d, blk in enumerate(stack):
                out += blk.named_tensors(f"enc.{m}.{d}.")
        for d, blk in enumerate(self.query):
            out += blk.named_tensors(f"query.{d}.")
        for d, blk in enumerate(self.decoder):
            out += blk.named_tensors(f"dec.{d}.")
        out += self.mask_e.named_tensors("mask_e.")
        out += self.mask_d.named_tensors("mask_d.")
        for i, (w, b) in enumerate(self.head):
            out += [(f"head.{i}.w", w), (f"head.{i}.b", b)]
        return out

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def parameter_count(self):
        return int(sum(t.size for t in self.tensors()))

    def zero_grad(self):
        for t in self.tensors():
            t.grad = None

    def copy(self):
        """Deep copy with fresh leaf tensors (same values)."""
        clone = init_params(self.config, seed=0)
        for (_, dst), (_, src) in zip(clone.named_tensors(), self.named_tensors()):
            dst.data[...] = src.data
        return clone


def init_params(config, seed=0):
    """Deterministic initialization from ``seed``."""
    rng = np.random.default_rng(seed)
    c = config
    phi = [(glorot(rng, w, c.d_model), zeros(c.d_model)) for w in c.modality_widths]
    encoders = [
        [init_attention_block(rng, c.d_model, c.d_model, c.n_heads, c.ff_dim) for _ in range(c.depth)]
        for _ in c.modality_widths
    ]
    query = [init_attention_block(rng, c.d_cat, c.d_model, c.n_heads, c.ff_dim) for _ in range(c.depth)]
    decoder = [
        init_attention_block(rng, c.d_cat, c.d_model, c.n_heads, c.ff_dim, cross=True)
        for _ in range(c.depth)
    ]
    mask_e = init_mask_scorer(rng, c.d_cat, c.mask_hidden)
    mask_d = init_mask_scorer(rng, c.d_cat, c.mask_hidden)
    # z_d rows have unit length, i.e. entries ~1/sqrt(d_cat); the first head
    # layer starts sqrt(d_cat) larger so its outputs match unit-scale inputs
    head = [(scale_init(glorot(rng, c.d_cat, c.head_hidden), np.sqrt(c.d_cat)),
             relu_bias(c.head_hidden)),
            # a damped output layer keeps fresh-model scores near 0.5
            (scale_init(glorot(rng, c.head_hidden, 1), 0.1), zeros(1))]
    return TamformerParams(c, phi, encoders, query, decoder, mask_e, mask_d, head)


def scale_init(t, factor):
    t.data *= factor
    return t


def count_parameters(config):
    """Closed-form parameter count (must agree with :func:`init_params`)."""
    c = config

    def block(d_in, d_kv, cross):
        attn = d_in * c.d_model + 2 * d_kv * c.d_model + 2 * c.d_model + c.d_model * d_in + d_in
        ffn = d_in * c.ff_dim + c.ff_dim + c.ff_dim * d_in + d_in
        norms = 4 * d_in + (2 * d_kv if cross else 0)
        return attn + ffn + norms

    sizes = list(c.mask_hidden)
    scorer = 2 * c.d_cat * sizes[0] + sizes[0]
    scorer += sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:])) + sizes[-1] + 1
    total = sum(w * c.d_model + c.d_model for w in c.modality_widths)
    total += c.depth * c.n_modalities * block(c.d_model, c.d_model, False)
    total += c.depth * block(c.d_cat, c.d_cat, False)
    total += c.depth * block(c.d_cat, c.d_cat, True)
    total += 2 * scorer
    total += c.d_cat * c.head_hidden + c.head_hidden + c.head_hidden + 1
    return total


# ---------------------------------------------------------------- forward


def _check_inputs(config, x):
    if len(x) != config.n_modalities:
        raise ContractError(f"expected {config.n_modalities} modalities, got {len(x)}")
    lead = None
    for m, (xm, w) in enumerate(zip(x, config.modality_widths)):
        if xm.ndim < 2 or xm.shape[-1] != w or xm.shape[-2] != config.t_enc:
            raise ContractError(
                f"modality {m} ({config.modality_names[m]}): expected [..., {config.t_enc}, {w}], "
                f"got {xm.shape}"
            )
        if lead is None:
            lead = xm.shape[:-2]
        elif xm.shape[:-2] != lead:
            raise ContractError("modalities disagree on batch shape")


def project(params, x):
    """``x_m = phi_m(raw_m)``, one ``[..., t_enc, d_model]`` tensor per modality."""
    x = [as_tensor(xm) for xm in x]
    _check_inputs(params.config, x)
    return [add(matmul(xm, w), b) for xm, (w, b) in zip(x, params.phi)]


def encode(params, x, mask_e, collect=None, projected=None):
    """``z_m = TE_m(x_m + PE)`` under the encoder mask, concatenated over modalities."""
    c = params.config
    xs = project(params, x) if projected is None else projected
    bias = mask_to_bias(mask_e, c.mask_eps)
    pe = positional_encoding(c.t_enc, c.d_model)
    z = []
    for m, (xm, stack) in enumerate(zip(xs, params.encoders)):
        h = add(xm, pe)
        for d, blk in enumerate(stack):
            h, wts = transformer_block(blk, h, h, bias, c.ln_eps, return_weights=True)
            if collect is not None:
                collect.append((f"enc.{m}.{d}", wts))
        z.append(h)
    return concat_last_axis(*z)


def build_queries(params, x, collect=None, projected=None):
    """Early fusion: projected features concatenated, sub-sampled, then causal TQ."""
    c = params.config
    if c.t_enc < c.query_stride:
        raise ContractError("t_enc must be at least query_stride")
    xs = project(params, x) if projected is None else projected
    frames = c.query_frames
    h = take(concat_last_axis(*xs), frames, axis=-2)
    bias = causal_bias(c.t_q, c.t_q)
    for d, blk in enumerate(params.query):
        h, wts = transformer_block(blk, h, h, bias, c.ln_eps, return_weights=True)
        if collect is not None:
            collect.append((f"query.{d}", wts))
    return h, frames


@dataclass
class ForwardOutput:
    scores: Tensor  # [..., T_q]
    embeddings: Tensor  # decoder output [..., T_q, d_cat]
    query_frames: np.ndarray
    mask_e: LearnedMask
    mask_d: LearnedMask
    attention: list = field(default_factory=list)  # (block name, weights) when collected


def forward_arrays(params, x, collect_attention=False):
    """Full forward on per-modality arrays ``[..., t_enc, width]``."""
    c = params.config
    collect = [] if collect_attention else None
    xs = project(params, x)
    fused = concat_last_axis(*xs)
    frames = c.query_frames
    mask_e = predict_mask(params.mask_e, fused, fused, np.arange(c.t_enc))
    z_e = encode(params, x, mask_e, collect, projected=xs)
    z_q, _ = build_queries(params, x, collect, projected=xs)
    mask_d = predict_mask(params.mask_d, take(fused, frames, axis=-2), fused, frames)
    bias_d = mask_to_bias(mask_d, c.mask_eps)
    h = z_q
    for d, blk in enumerate(params.decoder):
        h, wts = transformer_block(blk, h, z_e, bias_d, c.ln_eps, return_weights=True)
        if collect is not None:
            collect.append((f"dec.{d}", wts))
    # Pre-norm stacks leave the residual stream unnormalized. z_d rows are
    # closed with a gain-free norm scaled to unit length: a learned gain would
    # let the gap term vanish by shrinking every row, and unit-RMS rows would
    # make that term grow with the width. The head's affine layer absorbs both.
    h = layer_norm(h, Tensor(np.ones(c.d_cat)), Tensor(np.zeros(c.d_cat)), c.ln_eps)
    h = scale(h, 1.0 / np.sqrt(c.d_cat))
    (w1, b1), (w2, b2) = params.head
    logit = add(matmul(relu(add(matmul(h, w1), b1)), w2), b2)
    scores = sigmoid(reshape(logit, logit.shape[:-1]))
    return ForwardOutput(scores, h, frames, mask_e, mask_d, collect or [])


@dataclass
class PredictionTimeline:
    query_frames: np.ndarray  # frame index within the sample's track
    scores: np.ndarray
    embeddings: Tensor
    output: Optional[ForwardOutput] = None


def sample_window(sample, config, end=None):
    """Last ``t_enc`` frames of every modality (ending at ``end``, exclusive)."""
    names = [n for n, _ in sample.modalities]
    if tuple(names) != tuple(config.modality_names):
        raise ContractError(f"sample modalities {names} != config {list(config.modality_names)}")
    end = sample.n_frames if end is None else end
    start = end - config.t_enc
    if start < 0:
        raise ContractError(
            f"sample {sample.sample_id} has {sample.n_frames} frames, needs {config.t_enc}"
        )
    return [np.asarray(track)[start:end] for _, track in sample.modalities]


def window_start(sample, config):
    return sample.n_frames - config.t_enc


def forward(params, sample):
    out = forward_arrays(params, sample_window(sample, params.config))
    return PredictionTimeline(
        query_frames=window_start(sample, params.config) + out.query_frames,
        scores=out.scores.data.copy(),
        embeddings=out.embeddings,
        output=out,
    )


def stack_windows(samples, config):
    per = [sample_window(s, config) for s in samples]
    return [np.stack([p[m] for p in per]) for m in range(config.n_modalities)]


def predict(params, samples, batch_size=64):
    """Scores ``[n, T_q]`` without recording a graph."""
    out = []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            out.append(forward_arrays(params, stack_windows(chunk, params.config)).scores.data)
    return np.concatenate(out) if out else np.zeros((0, params.config.t_q))


# ------------------------------------------------------ anticipation times


def anticipation_bounds(sample, config):
    """(smallest, largest) anticipation time, in seconds, on the query grid."""
    frames = window_start(sample, config) + config.query_frames
    return ((sample.event_frame - frames[-1]) / config.fps,
            (sample.event_frame - frames[0]) / config.fps)


def query_step_for_time(sample, config, t_a, tol=1e-9):
    """Query step whose frame time is closest to ``event_time - t_a``.

    Ties go to the earlier frame. Times outside the grid raise
    :class:`RangeError` naming the valid bounds.
    """
    lo, hi = anticipation_bounds(sample, config)
    if not lo - tol <= t_a <= hi + tol:
        raise RangeError(
            f"anticipation time {t_a:g}s is outside the observable range "
            f"[{lo:.4g}, {hi:.4g}]s for sample {sample.sample_id}"
        )
    frames = window_start(sample, config) + config.query_frames
    target = sample.event_frame / config.fps - t_a
    dist = np.abs(frames / config.fps - target)
    # argmin returns the first minimum, i.e. the earlier frame on ties
    return int(np.argmin(np.round(dist, 12)))


# -------------------------------------------------------------- checkpoints


def _format_values(values):
    return "[" + ",".join(format(float(v), ".17g") for v in values) + "]"


def save_checkpoint(path, params, extra=None):
    """Versioned JSON: ``{format_version, config, tensors: [{name, shape, values}]}``."""
    for name, t in params.named_tensors():
        if not np.all(np.isfinite(t.data)):
            raise ContractError(f"refusing to save non-finite tensor {name}")
    head = {"format_version": CHECKPOINT_VERSION, "config": params.config.to_dict()}
    if extra:
        head["extra"] = extra
    parts = [json.dumps(head, sort_keys=True)[:-1], ', "tensors": [']
    rows = []
    for name, t in params.named_tensors():
        rows.append(
            '{"name": %s, "shape": %s, "values": %s}'
            % (json.dumps(name), json.dumps(list(t.shape)), _format_values(t.values))
        )
    parts.append(",\n".join(rows))
    parts.append("]}\n")
    with open(path, "w") as fh:
        fh.write("".join(parts))


def load_checkpoint(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.msg, exc.lineno) from None
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ParseError(path, "missing format_version")
    if doc["format_version"] != CHECKPOINT_VERSION:
        raise VersionError(
            path, f"checkpoint format_version {doc['format_version']} != {CHECKPOINT_VERSION}"
        )
    try:
        config = ModelConfig.from_dict(doc["config"])
        params = init_params(config, seed=0)
        named = dict(params.named_tensors())
        seen = set()
        for entry in doc["tensors"]:
            t = named[entry["name"]]
            values = np.asarray(entry["values"], dtype=np.float64)
            if list(t.shape) != list(entry["shape"]) or values.size != t.size:
                raise ParseError(path, f"tensor {entry['name']} has shape {entry['shape']}, expected {list(t.shape)}")
            t.data[...] = values.reshape(t.shape)
            seen.add(entry["name"])
    except (KeyError, TypeError) as exc:
        raise ParseError(path, f"malformed checkpoint ({exc!r})") from None
    missing = set(named) - seen
    if missing:
        raise ParseError(path, f"checkpoint lacks tensors {sorted(missing)[:5]}")
    return params


def checkpoint_extra(path):
    with open(path) as fh:
        return json.load(fh).get("extra", {})
