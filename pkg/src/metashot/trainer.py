"""Meta-training of the adapter on the base split.

Cross-entropy over temperature-scaled cosine logits, AdamW with decoupled
weight decay and a cosine learning-rate schedule. The run is fully
deterministic given the seed: shot selection, batch shuffling, and parameter
updates all draw from one seeded generator in a fixed order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adapter as ad
from .errors import ConfigError, NumericError, SplitError, SupportError
from .store import SIDE_BASE, LoadedTask
from .tensor import make_rng
from .zeroshot import top1

RESAMPLE_FIXED = "fixed"
RESAMPLE_PER_EPOCH = "per_epoch"


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    lr: float = 1e-4
    lr_min: float = 1e-6
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    temperature: float = 100.0
    seed: int = 0
    support_resample: str = RESAMPLE_FIXED

    def validate(self) -> None:
        if min(self.epochs, self.batch_size) < 1 or min(self.lr, self.lr_min, self.eps) <= 0:
            raise ConfigError(f"invalid training config: {self}")
        if self.weight_decay < 0 or self.temperature <= 0:
            raise ConfigError(f"invalid training config: {self}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError(f"adam betas must lie in (0,1): {self.beta1}, {self.beta2}")
        if self.support_resample not in (RESAMPLE_FIXED, RESAMPLE_PER_EPOCH):
            raise ConfigError(f"unknown support_resample {self.support_resample!r}")


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "OptimizerState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), t=0)


def cross_entropy(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    """Mean of -log softmax(temperature * logits)[label], in float64."""
    z = temperature * np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    zmax = z.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(z - zmax), axis=1)) + zmax[:, 0]
    loss = float(np.mean(lse - z[np.arange(z.shape[0]), labels]))
    if not np.isfinite(loss):
        raise NumericError("non-finite cross-entropy")
    return loss


def cosine_lr(step: int, total_steps: int, lr: float, lr_min: float) -> float:
    """Half-cosine decay from lr at step 0 to lr_min at total_steps."""
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def adamw_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: OptimizerState,
    config: TrainConfig,
    lr_t: float,
) -> np.ndarray:
    """One decoupled-weight-decay Adam update on a flat float64 vector.

    Mutates ``state``; returns the updated parameter vector.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise ConfigError(f"grad shape {grads.shape} != param shape {params.shape}")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient passed to optimizer")
    state.t += 1
    state.m = config.beta1 * state.m + (1.0 - config.beta1) * grads
    state.v = config.beta2 * state.v + (1.0 - config.beta2) * grads**2
    mhat = state.m / (1.0 - config.beta1**state.t)
    vhat = state.v / (1.0 - config.beta2**state.t)
    out = params * (1.0 - lr_t * config.weight_decay)
    out = out - lr_t * mhat / (np.sqrt(vhat) + config.eps)
    return out


@dataclass
class TrainResult:
    params: ad.AdapterParams
    log: list[dict] = field(default_factory=list)


def base_subtask(task: LoadedTask) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Restrict a task to its base side: (classes, support, queries, remapped labels)."""
    if task.split is None:
        raise SplitError("task has no base/novel split; run split_by_zeroshot first")
    base_idx = task.side_indices(SIDE_BASE)
    if base_idx.size == 0:
        raise SplitError("base split is empty")
    remap = -np.ones(task.n_classes, dtype=np.int64)
    remap[base_idx] = np.arange(base_idx.size)
    mask = remap[task.labels] >= 0
    return (
        task.text[base_idx],
        task.support[base_idx],
        task.queries[mask],
        remap[task.labels[mask]],
    )


def train(
    task: LoadedTask,
    adapter_config: ad.AdapterConfig,
    config: TrainConfig,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Optimize the adapter on the base split; returns params and a per-epoch log."""
    config.validate()
    classes, support, queries, labels = base_subtask(task)
    if support.shape[1] < 1:
        raise SupportError("base classes have no support shots")

    rng = make_rng(config.seed)
    params = ad.AdapterParams.init(adapter_config, seed=config.seed)
    vec = params.to_vector()
    state = OptimizerState.zeros(vec.size)

    nq = queries.shape[0]
    steps_per_epoch = max(1, math.ceil(nq / config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    log: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        if config.support_resample == RESAMPLE_PER_EPOCH:
            order = rng.permutation(support.shape[1])
            epoch_support = support[:, order, :]
        else:
            epoch_support = support
        perm = rng.permutation(nq)
        lr_start = cosine_lr(step, total_steps, config.lr, config.lr_min)
        losses = []
        for b in range(steps_per_epoch):
            idx = perm[b * config.batch_size : (b + 1) * config.batch_size]
            if idx.size == 0:
                continue
            live = params.from_vector(vec, dtype=np.float64)
            loss, grads = ad.loss_and_grads(
                queries[idx], labels[idx], classes, epoch_support, live, config.temperature
            )
            lr_t = cosine_lr(step, total_steps, config.lr, config.lr_min)
            vec = adamw_step(vec, grads.to_vector(), state, config, lr_t)
            losses.append(loss)
            step += 1
        lr_end = cosine_lr(step, total_steps, config.lr, config.lr_min)
        params_f32 = params.from_vector(vec)
        logits = ad.adapter_logits(queries, classes, epoch_support, params_f32)
        base_top1 = float(np.mean(top1(logits) == labels)) * 100.0
        log.append(
            {
                "epoch": epoch + 1,
                "mean_loss": float(np.mean(losses)),
                "base_top1": base_top1,
                "lr_start": lr_start,
                "lr_end": lr_end,
            }
        )
    result = TrainResult(params=params.from_vector(vec), log=log)
    if log_path is not None:
        write_train_log(log, log_path)
    return result


def write_train_log(log: list[dict], path: str | Path) -> None:
    """JSON lines, one record per epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
