"""Adam, warmup schedule, and the guarded train step.

train_step is functional: it returns new parameter/optimizer structures and
never mutates its inputs.  A non-finite loss or gradient marks the report
nan_detected and returns the inputs unchanged, so an unstable consistency
term can never corrupt the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from genir.errors import ConfigError
from genir.model.losses import (
    cross_entropy_grad,
    kl_consistency_grad,
    softmax_consistency_grad,
)
from genir.model.net import ModelParams, backward, forward

CONSISTENCY_MODES = ("off", "kl", "softmax")


@dataclass
class Batch:
    """One training batch in model token space.

    src: (B, Ls) encoder input ids, 0-padded.
    tgt_out: (B, Lt) target ids (identifier tokens plus EOS for sequential
             heads; a single class id for the atomic head).
    tgt_in: (B, Lt) teacher-forcing decoder input.
    tgt_mask: (B, Lt) bool, True where tgt_out is a real position.  Explicit
             because the atomic head's class 0 is a legitimate target.
    """

    src: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_mask: np.ndarray

    def __post_init__(self) -> None:
        if self.src.shape[0] != self.tgt_out.shape[0]:
            raise ConfigError("batch size mismatch between src and tgt")
        if self.tgt_in.shape != self.tgt_out.shape or self.tgt_out.shape != self.tgt_mask.shape:
            raise ConfigError("tgt arrays must share one shape")


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 1e-3
    warmup_steps: int = 10_000

    def lr(self, step: int) -> float:
        """Linear warmup to base_lr, then constant.  step is 1-indexed."""
        if self.warmup_steps <= 0:
            return self.base_lr
        return self.base_lr * min(1.0, step / self.warmup_steps)


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def init_adam(params: ModelParams) -> AdamState:
    return AdamState(
        step=0,
        m={k: np.zeros_like(t) for k, t in params.tensors.items()},
        v={k: np.zeros_like(t) for k, t in params.tensors.items()},
    )


@dataclass(frozen=True)
class LossReport:
    cross_entropy: float
    consistency: float
    total: float
    nan_detected: bool


def _pass_rng(dropout_seed, pass_idx, rate):
    if dropout_seed is None or rate <= 0.0:
        return None
    return np.random.default_rng(np.random.SeedSequence([dropout_seed, pass_idx]))


def compute_loss(
    params: ModelParams,
    batch: Batch,
    consistency: str = "off",
    kl_weight: float = 0.015,
    softmax_weight: float = 0.15,
    dropout_seed: int | None = None,
    want_grads: bool = True,
):
    """Total loss (and gradients) for one batch.

    Consistency modes run the batch twice with independent dropout draws and
    report cross_entropy as the mean of the two passes.  With dropout
    disabled the passes coincide, so the KL term is exactly zero.
    """
    if consistency not in CONSISTENCY_MODES:
        raise ConfigError(f"consistency must be one of {CONSISTENCY_MODES}")
    rate = params.config.dropout_rate
    rng1 = _pass_rng(dropout_seed, 0, rate)
    logits1, h1, cache1 = forward(params, batch.src, batch.tgt_in, rng1)
    ce1, dl1 = cross_entropy_grad(logits1, batch.tgt_out, batch.tgt_mask, want_grads)

    if consistency == "off":
        report = LossReport(ce1, 0.0, ce1, not np.isfinite(ce1))
        if not want_grads or report.nan_detected:
            return report, None
        return report, backward(params, cache1, dl1)

    rng2 = _pass_rng(dropout_seed, 1, rate)
    logits2, h2, cache2 = forward(params, batch.src, batch.tgt_in, rng2)
    ce2, dl2 = cross_entropy_grad(logits2, batch.tgt_out, batch.tgt_mask, want_grads)
    ce = 0.5 * (ce1 + ce2)

    dh1 = dh2 = None
    if consistency == "kl":
        weight = kl_weight
        cons, dz1, dz2 = kl_consistency_grad(logits1, logits2, batch.tgt_mask)
    else:
        weight = softmax_weight
        cons, dh1, dh2 = softmax_consistency_grad(
            h1, h2, batch.tgt_mask, want_grad=want_grads
        )
        dz1 = np.zeros_like(logits1) if want_grads else None
        dz2 = dz1
    total = ce + weight * cons
    report = LossReport(ce, cons, total, not np.isfinite(total))
    if not want_grads or report.nan_detected:
        return report, None
    grads = backward(
        params,
        cache1,
        0.5 * dl1 + weight * dz1,
        dh_extra=None if dh1 is None else weight * dh1,
    )
    grads2 = backward(
        params,
        cache2,
        0.5 * dl2 + weight * dz2,
        dh_extra=None if dh2 is None else weight * dh2,
    )
    for name, g in grads2.items():
        grads[name] += g
    return report, grads


def train_step(
    params: ModelParams,
    opt: AdamState,
    batch: Batch,
    schedule: LrSchedule,
    consistency: str = "off",
    kl_weight: float = 0.015,
    softmax_weight: float = 0.15,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    dropout_seed: int | None = None,
):
    """One guarded Adam update; returns (params, opt, LossReport)."""
    report, grads = compute_loss(
        params,
        batch,
        consistency=consistency,
        kl_weight=kl_weight,
        softmax_weight=softmax_weight,
        dropout_seed=dropout_seed,
    )
    if report.nan_detected:
        return params, opt, report
    if any(not np.all(np.isfinite(g)) for g in grads.values()):
        return params, opt, LossReport(
            report.cross_entropy, report.consistency, report.total, True
        )
    t = opt.step + 1
    lr = schedule.lr(t)
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    new_tensors: dict[str, np.ndarray] = {}
    for name, theta in params.tensors.items():
        g = grads.get(name)
        if g is None:
            new_m[name] = opt.m[name]
            new_v[name] = opt.v[name]
            new_tensors[name] = theta
            continue
        m = beta1 * opt.m[name] + (1.0 - beta1) * g
        v = beta2 * opt.v[name] + (1.0 - beta2) * (g * g)
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        new_m[name] = m.astype(theta.dtype)
        new_v[name] = v.astype(theta.dtype)
        new_tensors[name] = (theta - lr * mhat / (np.sqrt(vhat) + eps)).astype(theta.dtype)
    return (
        ModelParams(config=params.config, tensors=new_tensors),
        AdamState(step=t, m=new_m, v=new_v),
        report,
    )
