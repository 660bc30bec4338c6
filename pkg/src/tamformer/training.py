"""Losses, plain SGD and the two-stage schedule.

Stage 1 fits the per-step binary cross-entropy only. Stage 2 resumes from the
stage-1 weights and adds the anticipation-gap term, which pulls every query
step's decoder embedding toward the final step's.
"""

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import GeneratorConfig, augment_all, check_no_leakage, generate_synthetic, split, splitmix64
from .errors import ContractError, TrainingDivergedError
from .harness.metrics import compute_metrics
from .model import (
    PredictionTimeline,
    forward_arrays,
    init_params,
    save_checkpoint,
    stack_windows,
)
from .numerics import (
    add,
    as_tensor,
    clip,
    gradient_errors,
    log,
    mean,
    mul,
    no_grad,
    scale,
    stop_gradient,
    sub,
    sum_sq,
    take,
)

logger = logging.getLogger(__name__)

PAPER_LEARNING_RATES = {"pie": 1e-5, "jaad_all": 1e-2, "jaad_beh": 1e-3}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    lr_stage2: float | None = None  # None reuses lr
    epochs_stage1: int = 150
    epochs_stage2: int = 150
    batch_size: int = 8
    seed: int = 0
    augment: bool = False
    max_shifts: int = 5
    shift_step: int = 3
    reg_stage1: bool = False
    reg_stage2: bool = True
    reg_scale: float = 1.0
    stop_target: bool = True
    pos_weight: float = 1.0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if self.lr_stage2 is not None and not self.lr_stage2 > 0:
            raise ContractError(f"lr_stage2 must be positive, got {self.lr_stage2}")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ContractError("epoch counts must be nonnegative")
        if self.batch_size < 1:
            raise ContractError("batch_size must be positive")

    def stage_lr(self, stage):
        return self.lr if stage == 1 or self.lr_stage2 is None else self.lr_stage2

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ContractError(f"unknown train config fields: {sorted(extra)}")
        return cls(**d)


TRAIN_PROFILES = {
    "desk": TrainConfig(),
    "paper": TrainConfig(lr=PAPER_LEARNING_RATES["jaad_all"], epochs_stage1=500, epochs_stage2=500),
}


# ------------------------------------------------------------------ losses


def _scores(x):
    if isinstance(x, PredictionTimeline):
        if x.output is None:
            raise ContractError("timeline carries no differentiable scores")
        return x.output.scores
    return as_tensor(x)


def bce_loss(scores, labels, pos_weight=1.0):
    """Mean binary cross-entropy over query steps (and batch), args clamped at 1e-12.

    ``scores`` is ``[..., T_q]`` (or a timeline); ``labels`` matches the leading axes.
    """
    s = _scores(scores)
    if s.size == 0 or s.shape[-1] == 0:
        raise ContractError("bce_loss: empty timeline")
    y = np.asarray(labels, dtype=np.float64)
    y = np.broadcast_to(y.reshape(y.shape + (1,) * (s.ndim - y.ndim)), s.shape)
    pos = log(clip(s, 1e-12, 1.0))
    neg = log(clip(sub(1.0, s), 1e-12, 1.0))
    per = add(mul(pos, pos_weight * y), mul(neg, 1.0 - y))
    return scale(mean(per), -1.0)


def reg_loss(embeddings, stop_target=True):
    """``sum_t ||z_d[t] - z_d[T]||^2`` per sample, averaged over leading axes.

    With ``stop_target`` the final embedding is a constant target.
    """
    z = as_tensor(embeddings)
    if z.ndim < 2 or z.shape[-2] < 2:
        raise ContractError(f"reg_loss needs at least 2 query steps, got shape {z.shape}")
    last = take(z, [z.shape[-2] - 1], axis=-2)
    if stop_target:
        last = stop_gradient(last)
    per_sample = sum_sq(sub(z, last), axis=(-2, -1))
    return mean(per_sample)


def sgd_step(params, grads, lr):
    """In place ``theta <- theta - lr * g``; ``None`` gradients leave a tensor untouched."""
    if len(params) != len(grads):
        raise ContractError(f"{len(params)} parameters vs {len(grads)} gradients")
    for p, g in zip(params, grads):
        if g is None:
            continue
        if np.shape(g) != p.shape:
            raise ContractError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        p.data -= lr * g
    return params


# ---------------------------------------------------------------- training


@dataclass
class EpochRecord:
    epoch: int
    stage: int
    l_ce: float
    l_r: float
    l_total: float
    acc: float
    auc: float  # nan when the epoch saw one class only
    f1: float
    reg_active: bool


@dataclass
class TrainResult:
    params: object
    log: list
    stage1_params: object = None
    checkpoints: list = field(default_factory=list)


def training_samples(samples, manifest, train_config):
    train = split(samples, manifest, "train")
    if train_config.augment:
        train = augment_all(train, train_config.max_shifts, train_config.shift_step)
    check_no_leakage(train, manifest)
    if not train:
        raise ContractError("train split is empty")
    return train


def objective(params, xs, labels, train_config, reg_active, stop_target=None):
    """(total, l_ce, l_r, forward output) for one batch."""
    out = forward_arrays(params, xs)
    l_ce = bce_loss(out.scores, labels, train_config.pos_weight)
    st = train_config.stop_target if stop_target is None else stop_target
    l_r = reg_loss(out.embeddings, st)
    total = add(l_ce, scale(l_r, train_config.reg_scale)) if reg_active else l_ce
    return total, l_ce, l_r, out


def train_two_stage(samples, manifest, model_config, train_config, out_dir=None, init=None):
    """Stage 1 (cross-entropy) then stage 2 (cross-entropy + gap term).

    Deterministic in ``train_config.seed``: it seeds the initialization and
    every epoch's shuffle. Checkpoints go to ``out_dir`` when given.
    """
    tc = train_config
    train = training_samples(samples, manifest, tc)
    windows = stack_windows(train, model_config)
    labels = np.array([s.label for s in train], dtype=np.float64)
    n = labels.size
    params = init_params(model_config, seed=tc.seed) if init is None else init
    result = TrainResult(params=params, log=[])
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    epoch_no = 0
    for stage, n_epochs, reg_active in ((1, tc.epochs_stage1, tc.reg_stage1),
                                        (2, tc.epochs_stage2, tc.reg_stage2)):
        for _ in range(n_epochs):
            epoch_no += 1
            order = np.random.default_rng(splitmix64(tc.seed, epoch_no)).permutation(n)
            sums = np.zeros(3)
            final = np.empty(n)
            for start in range(0, n, tc.batch_size):
                idx = order[start:start + tc.batch_size]
                params.zero_grad()
                total, l_ce, l_r, out = objective(
                    params, [w[idx] for w in windows], labels[idx], tc, reg_active
                )
                if not math.isfinite(total.item()):
                    raise TrainingDivergedError(epoch_no, stage)
                total.backward()
                tensors = params.tensors()
                sgd_step(tensors, [t.grad for t in tensors], tc.stage_lr(stage))
                sums += len(idx) * np.array([l_ce.item(), l_r.item(), total.item()])
                final[idx] = out.scores.data[:, -1]
            m = compute_metrics(final, labels)
            rec = EpochRecord(
                epoch_no, stage, *(sums / n), m.accuracy,
                float("nan") if m.auc is None else m.auc, m.f1, reg_active,
            )
            result.log.append(rec)
            logger.debug("epoch %d stage %d: %s", epoch_no, stage, rec)
            if out_dir and tc.checkpoint_every and epoch_no % tc.checkpoint_every == 0:
                path = os.path.join(out_dir, f"epoch_{epoch_no:04d}.json")
                save_checkpoint(path, params, {"stage": stage, "epoch": epoch_no})
                result.checkpoints.append(path)
        if stage == 1:
            result.stage1_params = params.copy()
        if out_dir:
            path = os.path.join(out_dir, f"stage{stage}.json")
            save_checkpoint(path, params, {"stage": stage, "epoch": epoch_no,
                                           "train_config": tc.to_dict()})
            result.checkpoints.append(path)
    return result


def mean_reg_loss(params, samples, stop_target=True, batch_size=64):
    """Average gap term over ``samples`` (no graph recorded)."""
    total = 0.0
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            out = forward_arrays(params, stack_windows(chunk, params.config))
            total += reg_loss(out.embeddings, stop_target).item() * len(chunk)
    return total / len(samples)


LOG_COLUMNS = ("epoch", "stage", "l_ce", "l_r", "l_total", "acc", "auc", "f1")


def write_train_log(path, log):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in log:
            w.writerow([r.epoch, r.stage] + [repr(float(getattr(r, k))) for k in LOG_COLUMNS[2:]])


def model_grad_check(model_config, eps=1e-5, seed=0, batch=2, data_seed=3):
    """Finite-difference check of the full stage-2 loss over every parameter.

    The gap term is taken without its stop-gradient: with it, the backward
    pass is deliberately not the derivative of the forward value.
    Returns ``(max relative error, {tensor name: max error})``.
    """
    params = init_params(model_config, seed=seed)
    gen = GeneratorConfig.for_model(model_config)
    samples, _ = generate_synthetic(max(batch, 2), data_seed, gen)
    xs = stack_windows(samples[:batch], model_config)
    labels = np.array([s.label for s in samples[:batch]], dtype=np.float64)
    tc = TrainConfig()
    errs = gradient_errors(
        lambda: objective(params, xs, labels, tc, True, stop_target=False)[0],
        params.tensors(), eps,
    )
    per = {name: float(e.max()) for (name, _), e in zip(params.named_tensors(), errs)}
    return max(per.values()), per
