"""Training loop: batches in, checkpoints and a JSONL loss log out.

The loop is a thin driver over train_step.  Dropout randomness is derived
per step from the run seed, so two runs with the same settings and batch
stream produce bit-identical parameters and logs (log rows carry no
timestamps for that reason).
"""

from __future__ import annotations

import json
import logging
import os
from collections.abc import Callable, Iterator
from dataclasses import dataclass

from genir.errors import ConfigError
from genir.model.checkpoint import save_checkpoint
from genir.model.net import ModelParams
from genir.model.optim import (
    CONSISTENCY_MODES,
    AdamState,
    Batch,
    LrSchedule,
    init_adam,
    train_step,
)
from genir.tasks import stable_hash

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSettings:
    steps: int
    base_lr: float = 1e-3
    warmup_steps: int = 10000
    consistency: str = "off"
    kl_weight: float = 0.015
    softmax_weight: float = 0.15
    log_every: int = 100
    eval_every: int = 0  # 0 disables the eval callback
    checkpoint_every: int = 0  # 0 keeps only the final checkpoint
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        if self.consistency not in CONSISTENCY_MODES:
            raise ConfigError(f"consistency must be one of {CONSISTENCY_MODES}")


def run_training(
    params: ModelParams,
    batches: Iterator[Batch],
    settings: TrainSettings,
    out_dir: str | None = None,
    opt: AdamState | None = None,
    eval_fn: Callable[[ModelParams, int], dict] | None = None,
):
    """Consume settings.steps batches and return (params, opt, log_rows).

    out_dir, when given, receives checkpoint/ (final weights + optimizer)
    and train_log.jsonl.  eval_fn is invoked every eval_every steps and its
    dict is merged into that step's log row.
    """
    if opt is None:
        opt = init_adam(params)
    schedule = LrSchedule(base_lr=settings.base_lr, warmup_steps=settings.warmup_steps)
    rows: list[dict] = []
    nan_steps = 0
    # step is the loop iteration; opt.step counts applied updates and lags
    # behind it whenever a non-finite loss skips one.
    for step in range(1, settings.steps + 1):
        batch = next(batches)
        lr_used = schedule.lr(opt.step + 1)
        dropout_seed = (
            stable_hash(settings.seed, "dropout", step)
            if params.config.dropout_rate > 0.0
            else None
        )
        params, opt, report = train_step(
            params,
            opt,
            batch,
            schedule,
            consistency=settings.consistency,
            kl_weight=settings.kl_weight,
            softmax_weight=settings.softmax_weight,
            dropout_seed=dropout_seed,
        )
        if report.nan_detected:
            nan_steps += 1
            logger.warning("step %d: non-finite loss; update skipped", step)
        if report.nan_detected or step % settings.log_every == 0 or step == settings.steps:
            row = {
                "step": step,
                "ce": report.cross_entropy,
                "cons": report.consistency,
                "total": report.total,
                "lr": lr_used,
                "nan": report.nan_detected,
            }
            if eval_fn is not None and settings.eval_every > 0 and (
                step % settings.eval_every == 0 or step == settings.steps
            ):
                row.update(eval_fn(params, step))
            rows.append(row)
        elif eval_fn is not None and settings.eval_every > 0 and step % settings.eval_every == 0:
            row = {"step": step}
            row.update(eval_fn(params, step))
            rows.append(row)
        if (
            out_dir
            and settings.checkpoint_every > 0
            and step % settings.checkpoint_every == 0
            and step < settings.steps
        ):
            save_checkpoint(os.path.join(out_dir, f"checkpoint-{step:07d}"), params, opt)
    if nan_steps:
        logger.warning("%d of %d steps skipped on non-finite loss", nan_steps, settings.steps)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(os.path.join(out_dir, "checkpoint"), params, opt)
        log_path = os.path.join(out_dir, "train_log.jsonl")
        tmp = log_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
        os.replace(tmp, log_path)
    return params, opt, rows
