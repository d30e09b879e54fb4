"""Base classification losses (CE, focal, LDAM, class-balanced) and the
expert-weighted composite loss, each with an analytic gradient w.r.t. logits.

Every public loss returns ``(loss, grad)`` for one instance. The ``_*_batch``
variants operate on (B, m) logit matrices and are what the training loop
uses; the public functions are thin single-row wrappers, so there is exactly
one implementation of each formula.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BASE_LOSSES = ("ce", "focal", "ldam", "class_balanced")


@dataclass(frozen=True)
class LossConfig:
    """Which base loss the composite loss wraps, plus its hyperparameters.

    focal_gamma is the focusing exponent (1 - p_t)^gamma; ldam_c scales the
    per-class margins c / n_j^(1/4); cb_beta is the effective-number decay of
    the class-balanced weights (1 - beta) / (1 - beta^n_j).
    """

    base: str = "class_balanced"
    focal_gamma: float = 2.0
    ldam_c: float = 0.5
    cb_beta: float = 0.999

    def __post_init__(self):
        if self.base not in BASE_LOSSES:
            raise ValueError(f"base must be one of {BASE_LOSSES}, got {self.base!r}")
        if self.focal_gamma < 0:
            raise ValueError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if self.ldam_c < 0:
            raise ValueError(f"ldam_c must be >= 0, got {self.ldam_c}")
        if not 0.0 <= self.cb_beta < 1.0:
            raise ValueError(f"cb_beta must be in [0, 1), got {self.cb_beta}")


def _check_batch(logits: np.ndarray, targets: np.ndarray) -> None:
    m = logits.shape[1]
    if np.any(targets < 0) or np.any(targets >= m):
        bad = targets[(targets < 0) | (targets >= m)][0]
        raise ValueError(f"target {bad} out of range for {m} classes")


def _softmax_and_lse(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mx = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - mx)
    s = e.sum(axis=1, keepdims=True)
    lse = (mx + np.log(s)).ravel()
    return e / s, lse


def _ce_batch(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _check_batch(logits, targets)
    probs, lse = _softmax_and_lse(logits)
    rows = np.arange(logits.shape[0])
    losses = lse - logits[rows, targets]
    grads = probs.copy()
    grads[rows, targets] -= 1.0
    return losses, grads


def _focal_batch(
    logits: np.ndarray, targets: np.ndarray, focal_gamma: float
) -> tuple[np.ndarray, np.ndarray]:
    _check_batch(logits, targets)
    probs, lse = _softmax_and_lse(logits)
    rows = np.arange(logits.shape[0])
    v = logits[rows, targets] - lse        # log p_t <= 0
    p_t = np.exp(v)
    u = -np.expm1(v)                       # 1 - p_t, accurate near p_t = 1
    ce = -v
    losses = np.zeros_like(v)
    coeff = np.zeros_like(v)
    pos = u > 0.0
    # d loss / d logits = coeff * (softmax - onehot); at u == 0 both the loss
    # and its gradient vanish for every gamma >= 0.
    losses[pos] = u[pos] ** focal_gamma * ce[pos]
    coeff[pos] = u[pos] ** focal_gamma
    if focal_gamma > 0.0:
        coeff[pos] += focal_gamma * u[pos] ** (focal_gamma - 1.0) * p_t[pos] * ce[pos]
    grads = probs
    grads[rows, targets] -= 1.0
    grads *= coeff[:, None]
    return losses, grads


def ldam_margins(train_counts, ldam_c: float) -> np.ndarray:
    """Per-class margins delta_j = c / n_j^(1/4)."""
    counts = np.asarray(train_counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ValueError("all train_counts must be >= 1 for LDAM margins")
    return ldam_c / counts ** 0.25


def _ldam_batch(
    logits: np.ndarray, targets: np.ndarray, margins: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    _check_batch(logits, targets)
    rows = np.arange(logits.shape[0])
    adjusted = logits.copy()
    adjusted[rows, targets] -= margins[targets]
    return _ce_batch(adjusted, targets)


def class_balanced_weights(train_counts, cb_beta: float) -> np.ndarray:
    """Effective-number weights (1-b)/(1-b^n_j), normalized to mean 1."""
    counts = np.asarray(train_counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ValueError("all train_counts must be >= 1 for class-balanced weights")
    if not 0.0 <= cb_beta < 1.0:
        raise ValueError(f"cb_beta must be in [0, 1), got {cb_beta}")
    if cb_beta == 0.0:
        raw = np.ones_like(counts)
    else:
        raw = (1.0 - cb_beta) / (1.0 - cb_beta ** counts)
    return raw * (counts.size / raw.sum())


def _cb_batch(
    logits: np.ndarray, targets: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    losses, grads = _ce_batch(logits, targets)
    w = weights[targets]
    return losses * w, grads * w[:, None]


def _base_loss_batch(
    logits: np.ndarray,
    targets: np.ndarray,
    config: LossConfig,
    train_counts=None,
) -> tuple[np.ndarray, np.ndarray]:
    if config.base == "ce":
        return _ce_batch(logits, targets)
    if config.base == "focal":
        return _focal_batch(logits, targets, config.focal_gamma)
    if train_counts is None:
        raise ValueError(f"{config.base} loss requires train_counts")
    if config.base == "ldam":
        return _ldam_batch(logits, targets, ldam_margins(train_counts, config.ldam_c))
    return _cb_batch(logits, targets, class_balanced_weights(train_counts, config.cb_beta))


def _as_logits(logits) -> np.ndarray:
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"logits must be a non-empty vector, got shape {arr.shape}")
    return arr


def _single(batch_fn, logits, target, *args) -> tuple[float, np.ndarray]:
    z = _as_logits(logits)
    losses, grads = batch_fn(z[None, :], np.asarray([target]), *args)
    return float(losses[0]), grads[0]


def ce_loss(logits, target: int) -> tuple[float, np.ndarray]:
    """Cross entropy: lse(z) - z[target]; grad = softmax(z) - onehot(target)."""
    return _single(_ce_batch, logits, target)


def focal_loss(logits, target: int, focal_gamma: float = 2.0) -> tuple[float, np.ndarray]:
    """(1 - p_t)^gamma * (-ln p_t); reduces to CE exactly at gamma = 0."""
    if focal_gamma < 0:
        raise ValueError(f"focal_gamma must be >= 0, got {focal_gamma}")
    return _single(_focal_batch, logits, target, focal_gamma)


def ldam_loss(
    logits, target: int, train_counts, ldam_c: float = 0.5
) -> tuple[float, np.ndarray]:
    """CE with the target logit shifted down by the per-class margin."""
    return _single(_ldam_batch, logits, target, ldam_margins(train_counts, ldam_c))


def class_balanced_loss(
    logits, target: int, train_counts, cb_beta: float = 0.999
) -> tuple[float, np.ndarray]:
    """CE scaled by the target class's mean-normalized effective-number weight."""
    return _single(_cb_batch, logits, target, class_balanced_weights(train_counts, cb_beta))


@dataclass(frozen=True)
class ContextAwareLossResult:
    """loss = sum_i beta_i * L_base(y_i, target).

    expert_grads[i] is the gradient w.r.t. expert i's logits (beta_i * g_i);
    expert_losses[i] is L_base(y_i, target), which is exactly d loss / d beta_i
    and is what the gate's chain rule consumes.
    """

    loss: float
    expert_grads: np.ndarray    # (n, m)
    expert_losses: np.ndarray   # (n,)


def context_aware_loss(
    per_expert_logits,
    beta,
    target: int,
    loss_config: LossConfig,
    train_counts=None,
) -> ContextAwareLossResult:
    """Expert-weighted composite of the configured base loss.

    Linear in beta for fixed logits; with beta = [1] it is the base loss.
    """
    y = np.asarray(per_expert_logits, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError(f"per_expert_logits must be (n, m), got shape {y.shape}")
    n = y.shape[0]
    if n < 1:
        raise ValueError("need at least one expert")
    b = np.asarray(beta, dtype=np.float64)
    if b.shape != (n,):
        raise ValueError(f"beta shape {b.shape} does not match {n} experts")
    if abs(b.sum() - 1.0) > 1e-6:
        raise ValueError(f"beta must sum to 1 within 1e-6, got {b.sum()!r}")
    targets = np.full(n, target)
    losses, grads = _base_loss_batch(y, targets, loss_config, train_counts)
    return ContextAwareLossResult(
        loss=float(b @ losses),
        expert_grads=grads * b[:, None],
        expert_losses=losses,
    )


def _context_aware_batch(
    expert_logits: np.ndarray,   # (n, B, m)
    beta: np.ndarray,            # (B, n)
    targets: np.ndarray,         # (B,)
    loss_config: LossConfig,
    train_counts=None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-instance composite losses plus upstream gradient seeds.

    Returns (losses (B,), d_expert_logits (n, B, m), d_beta (B, n)); the seeds
    are for the per-instance loss, the caller rescales for batch means.
    """
    n, bsz, m = expert_logits.shape
    flat_losses, flat_grads = _base_loss_batch(
        expert_logits.reshape(n * bsz, m),
        np.tile(targets, n),
        loss_config,
        train_counts,
    )
    losses_nb = flat_losses.reshape(n, bsz)
    grads_nbm = flat_grads.reshape(n, bsz, m)
    total = np.einsum("bn,nb->b", beta, losses_nb)
    d_expert = grads_nbm * beta.T[:, :, None]
    return total, d_expert, losses_nb.T.copy()
