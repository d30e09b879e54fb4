"""Dense numerics shared by every module: stable reductions, seeded RNG,
finite-difference gradients and gradient checking.

All math is done in 64-bit floats. Matrices and vectors are C-order
``numpy.ndarray`` of dtype float64 throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

RNG_ALGORITHM = "pcg64"


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator (PCG64). Same seed => identical draw stream."""
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(master: int, *keys: int) -> int:
    """Deterministic child seed from a master seed plus integer keys.

    Used for per-epoch shuffles and per-ablation-cell seeds so concurrent
    work never shares a generator.
    """
    ss = np.random.SeedSequence([int(master), *[int(k) for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0])


def as_float_vector(values, name: str = "input") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    return arr


def require_finite(arr: np.ndarray, name: str = "input") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def stable_softmax(logits) -> np.ndarray:
    """Softmax with max-subtraction.

    Output sums to 1 (within 1e-12), every entry in (0, 1], and the result
    is invariant under adding a constant to all logits.
    """
    x = as_float_vector(logits, "logits")
    if x.size == 0:
        raise ValueError("logits must be non-empty")
    require_finite(x, "logits")
    shifted = x - x.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_rows(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-wise stable softmax over ``axis`` (no validation, internal use)."""
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_sum_exp(logits) -> float:
    """ln sum(exp(x_i)) via the shift trick; exact for a single element."""
    x = as_float_vector(logits, "logits")
    if x.size == 0:
        raise ValueError("logits must be non-empty")
    require_finite(x, "logits")
    m = x.max()
    if x.size == 1:
        return float(m)
    return float(m + np.log(np.exp(x - m).sum()))


class GradientEvaluationError(RuntimeError):
    """Objective returned a non-finite value during finite differencing."""

    def __init__(self, coordinate: int, value: float):
        super().__init__(
            f"non-finite objective value {value!r} while perturbing coordinate {coordinate}"
        )
        self.coordinate = coordinate
        self.value = value


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], x, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    grad_i = (f(x + h e_i) - f(x - h e_i)) / (2 h). Exact for quadratics up
    to rounding; this is the independent oracle the analytic gradients in the
    model and loss modules are validated against.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    x0 = as_float_vector(x, "x").copy()
    grad = np.empty_like(x0)
    for i in range(x0.size):
        orig = x0[i]
        x0[i] = orig + h
        fp = float(f(x0))
        x0[i] = orig - h
        fm = float(f(x0))
        x0[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradientEvaluationError(i, fp if not np.isfinite(fp) else fm)
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    tol: float
    passed: bool
    worst_index: int


def check_gradients(analytic, numeric, tol: float) -> GradCheckReport:
    """Compare analytic vs numeric gradients.

    Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|); the
    report carries the max over coordinates and pass/fail against ``tol``.
    """
    a = as_float_vector(analytic, "analytic")
    n = as_float_vector(numeric, "numeric")
    if a.size != n.size:
        raise ValueError(f"length mismatch: analytic {a.size} vs numeric {n.size}")
    if a.size == 0:
        return GradCheckReport(0.0, tol, True, -1)
    denom = np.maximum(1e-8, np.abs(a) + np.abs(n))
    rel = np.abs(a - n) / denom
    worst = int(np.argmax(rel))
    max_err = float(rel[worst])
    return GradCheckReport(max_err, tol, max_err <= tol, worst)


def largest_remainder(weights: Sequence[float], total: int) -> np.ndarray:
    """Apportion ``total`` integer units proportionally to ``weights``.

    Hamilton / largest-remainder rounding: floor the exact quotas, then hand
    the leftover units to the largest fractional parts (ties to the lowest
    index). The result always sums exactly to ``total``.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative with positive sum")
    if total < 0:
        raise ValueError(f"total must be non-negative, got {total}")
    quotas = w * (total / w.sum())
    base = np.floor(quotas).astype(np.int64)
    leftover = int(total - base.sum())
    if leftover > 0:
        remainders = quotas - base
        # stable argsort descending on remainder, ascending on index
        order = np.lexsort((np.arange(w.size), -remainders))
        base[order[:leftover]] += 1
    return base
