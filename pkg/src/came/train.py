"""SGD training loop: momentum, weight decay, global-norm gradient clipping,
linear warmup, deterministic shuffling, and checkpoint-resumable state.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import DatasetSplit, RelationInstance
from .losses import LossConfig, _context_aware_batch
from .metrics import EvalReport, evaluate
from .model import (
    CameConfig,
    CameParams,
    TrainState,
    _backward_batch,
    _forward_batch,
    init_params,
)
from .numerics import derive_seed, make_rng


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    warmup_factor: float = 0.1
    warmup_steps: int = 500
    weight_decay: float = 0.0001
    momentum: float = 0.9
    grad_clip_norm: float = 5.0
    batch_size: int = 12
    epochs: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.warmup_factor <= 1.0:
            raise ValueError(f"warmup_factor must be in (0, 1], got {self.warmup_factor}")
        if self.warmup_steps < 0:
            raise ValueError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.weight_decay < 0 or self.momentum < 0:
            raise ValueError("weight_decay and momentum must be >= 0")
        if self.grad_clip_norm <= 0:
            raise ValueError(f"grad_clip_norm must be positive, got {self.grad_clip_norm}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class OptimizerState:
    velocities: dict[str, np.ndarray]
    step: int = 0


def init_optimizer_state(params: CameParams) -> OptimizerState:
    return OptimizerState({k: np.zeros_like(v) for k, v in params.tensors.items()})


class TrainingError(RuntimeError):
    """Non-finite loss or gradient during training; carries the step index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


def warmup_lr(step: int, config: TrainConfig) -> float:
    """Linear ramp from warmup_factor * lr at step 0 to lr at warmup_steps."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step >= config.warmup_steps:
        return config.learning_rate
    frac = step / config.warmup_steps
    return config.learning_rate * (config.warmup_factor + (1.0 - config.warmup_factor) * frac)


def clip_grad_norm(
    grads: dict[str, np.ndarray], max_norm: float, step: int = -1
) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients by max_norm/norm when the global L2 norm exceeds
    max_norm (no scaling at exact equality). Mutates grads in place; returns
    (grads, observed norm).
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    sq = 0.0
    for name, g in grads.items():
        s = float(np.dot(g.ravel(), g.ravel()))
        if not np.isfinite(s):
            raise TrainingError(f"non-finite gradient in {name}", step)
        sq += s
    norm = float(np.sqrt(sq))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return grads, norm


def sgd_step(
    params: CameParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    config: TrainConfig,
) -> tuple[CameParams, OptimizerState]:
    """Heavy-ball SGD with decoupled-into-gradient weight decay.

    g' = g + weight_decay * p;  v <- momentum * v + g';  p <- p - lr_eff * v
    with lr_eff from the warmup schedule at the current step counter.
    Updates params and state in place and returns them.
    """
    if set(grads) != set(params.tensors):
        raise ValueError("gradient groups do not match parameter groups")
    lr = warmup_lr(state.step, config)
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        v = state.velocities[name]
        g_eff = g + config.weight_decay * p
        v *= config.momentum
        v += g_eff
        p -= lr * v
    state.step += 1
    return params, state


def canonical_order(instances: Sequence[RelationInstance]) -> list[RelationInstance]:
    """Sort by (image_id, pair_id) so training is invariant to storage order."""
    return sorted(instances, key=lambda r: (r.image_id, r.pair_id))


@dataclass
class FitResult:
    params: CameParams
    log: list[dict] = field(default_factory=list)
    state: OptimizerState | None = None
    final_epoch: int = 0

    def train_state(self) -> TrainState:
        return TrainState(
            step=self.state.step,
            epoch=self.final_epoch,
            velocities=self.state.velocities,
        )


def _batch_arrays(instances: Sequence[RelationInstance], idx: np.ndarray):
    X = np.stack([instances[i].x for i in idx])
    C = np.stack([instances[i].c for i in idx])
    t = np.asarray([instances[i].label for i in idx])
    return X, C, t


def fit(
    dataset: DatasetSplit,
    came_config: CameConfig,
    loss_config: LossConfig,
    train_config: TrainConfig,
    resume: TrainState | None = None,
    resume_params: CameParams | None = None,
    eval_ks: Sequence[int] = (5, 10, 20),
    graph_constraint: bool = True,
    eval_every: int = 1,
) -> FitResult:
    """Train the head with the expert-weighted composite loss.

    Epochs iterate seeded shuffles of the canonically ordered train split;
    each batch runs the batched forward, the composite loss, backprop to all
    parameter groups, global-norm clipping, and one SGD step. The log gets
    one record per epoch with the train loss and (every ``eval_every``
    epochs) the validation report. Fully deterministic under
    train_config.seed; resuming from a saved train state reproduces the
    uninterrupted run bit for bit.
    """
    if not dataset.train:
        raise ValueError("train split is empty")
    train = canonical_order(dataset.train)
    counts = dataset.vocabulary.train_counts
    seed = train_config.seed

    if resume is not None:
        if resume_params is None:
            raise ValueError("resume requires the checkpointed params")
        params = resume_params.copy()
        state = OptimizerState(
            {k: v.copy() for k, v in resume.velocities.items()}, step=resume.step
        )
        start_epoch = resume.epoch
    else:
        params = init_params(
            came_config, dataset.d_x, dataset.d_c, dataset.vocabulary.m, seed
        )
        state = init_optimizer_state(params)
        start_epoch = 0

    log: list[dict] = []
    n_train = len(train)
    bsz = train_config.batch_size
    for epoch in range(start_epoch, train_config.epochs):
        rng = make_rng(derive_seed(seed, 0x5F, epoch))
        perm = rng.permutation(n_train)
        loss_sum = 0.0
        for start in range(0, n_train, bsz):
            idx = perm[start : start + bsz]
            if idx.size == 0:
                warnings.warn(f"skipping empty batch at step {state.step}", stacklevel=2)
                continue
            X, C, t = _batch_arrays(train, idx)
            bt = _forward_batch(params, came_config, X, C)
            losses, d_experts, d_beta = _context_aware_batch(
                bt.Y, bt.Beta, t, loss_config, counts
            )
            batch_loss = float(losses.mean())
            if not np.isfinite(batch_loss):
                raise TrainingError("non-finite training loss", state.step)
            scale = 1.0 / idx.size
            grads = _backward_batch(
                params,
                came_config,
                bt,
                d_experts=d_experts * scale,
                d_beta=d_beta * scale if came_config.ew_enabled else None,
            )
            clip_grad_norm(grads, train_config.grad_clip_norm, step=state.step)
            sgd_step(params, grads, state, train_config)
            loss_sum += batch_loss * idx.size
        entry = {
            "epoch": epoch,
            "step": state.step,
            "lr": warmup_lr(state.step, train_config),
            "train_loss": loss_sum / n_train,
        }
        is_last = epoch == train_config.epochs - 1
        if dataset.val and (is_last or (epoch + 1) % eval_every == 0):
            report = evaluate(
                params,
                came_config,
                dataset.val,
                dataset.vocabulary,
                ks=eval_ks,
                graph_constraint=graph_constraint,
            )
            entry["val"] = {
                "recall_at": {str(k): v for k, v in report.recall_at.items()},
                "mean_recall_at": {str(k): v for k, v in report.mean_recall_at.items()},
                "mean_metric": report.mean_metric,
            }
        log.append(entry)
    return FitResult(params=params, log=log, state=state, final_epoch=train_config.epochs)
