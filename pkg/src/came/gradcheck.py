"""Finite-difference validation of every analytic gradient in the package:
the four base losses w.r.t. logits, and the full forward graph w.r.t. every
parameter group under (a) the expert-weighted composite loss and (b) a CE
probe on the weighted-ensemble output, which exercises the predicate-
weighting path end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import RelationInstance
from .losses import (
    LossConfig,
    ce_loss,
    class_balanced_loss,
    context_aware_loss,
    focal_loss,
    ldam_loss,
)
from .model import CameConfig, CameParams, backward, forward, init_params
from .numerics import check_gradients, finite_diff_gradient, make_rng, derive_seed

DEFAULT_TOL = 1e-4

# small dims keep full-parameter-vector finite differencing cheap
CHECK_DIMS = {"d_x": 6, "d_c": 5, "m": 9}
CHECK_CONFIG = CameConfig(num_experts=3, hidden_dim=7, pw_temperature=0.7)


@dataclass
class GradCheckCase:
    name: str
    max_rel_error: float
    tol: float
    passed: bool
    group_errors: dict[str, float] = field(default_factory=dict)

    def failing_groups(self) -> list[str]:
        return [g for g, e in self.group_errors.items() if e > self.tol]


@dataclass
class GradCheckSuiteResult:
    cases: list[GradCheckCase]

    @property
    def passed(self) -> bool:
        return all(case.passed for case in self.cases)

    def summary_lines(self) -> list[str]:
        lines = []
        for case in self.cases:
            status = "PASS" if case.passed else "FAIL"
            line = f"{status}  {case.name}: max rel err {case.max_rel_error:.3e} (tol {case.tol:g})"
            if not case.passed and case.group_errors:
                line += "  failing groups: " + ", ".join(case.failing_groups())
            lines.append(line)
        return lines


def _loss_fn(base: str, counts, loss_config: LossConfig):
    if base == "ce":
        return lambda z, t: ce_loss(z, t)
    if base == "focal":
        return lambda z, t: focal_loss(z, t, loss_config.focal_gamma)
    if base == "ldam":
        return lambda z, t: ldam_loss(z, t, counts, loss_config.ldam_c)
    return lambda z, t: class_balanced_loss(z, t, counts, loss_config.cb_beta)


def check_loss_gradient(
    base: str,
    num_points: int = 20,
    m: int = 12,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    loss_config: LossConfig | None = None,
) -> GradCheckCase:
    """FD-validate one base loss's gradient w.r.t. logits at random points."""
    if loss_config is None:
        loss_config = LossConfig(base=base)
    rng = make_rng(derive_seed(seed, hash_name(base)))
    counts = [int(c) for c in rng.integers(1, 2000, m)]
    fn = _loss_fn(base, counts, loss_config)
    worst = 0.0
    for _ in range(num_points):
        logits = rng.normal(0.0, 2.0, m)
        target = int(rng.integers(0, m))
        _, analytic = fn(logits, target)
        numeric = finite_diff_gradient(lambda z: fn(z, target)[0], logits)
        report = check_gradients(analytic, numeric, tol)
        worst = max(worst, report.max_rel_error)
    return GradCheckCase(
        name=f"loss/{base}", max_rel_error=worst, tol=tol, passed=worst <= tol
    )


def hash_name(name: str) -> int:
    # stable across processes (unlike builtin hash on str)
    return sum((i + 1) * ord(ch) for i, ch in enumerate(name)) % (2**31)


def _random_point(config: CameConfig, seed: int) -> tuple[CameParams, RelationInstance, int]:
    d_x, d_c, m = CHECK_DIMS["d_x"], CHECK_DIMS["d_c"], CHECK_DIMS["m"]
    params = init_params(config, d_x, d_c, m, seed)
    rng = make_rng(derive_seed(seed, 0xF0))
    # overwrite with a rougher draw so gradients are far from zero
    for name, t in params.tensors.items():
        t += rng.normal(0.0, 0.4, t.shape)
    inst = RelationInstance(
        image_id=0,
        pair_id=0,
        x=rng.normal(0.0, 1.0, d_x),
        c=rng.normal(0.0, 1.0, d_c),
        label=int(rng.integers(0, m)),
    )
    return params, inst, inst.label


def _group_errors(
    params: CameParams, analytic: np.ndarray, numeric: np.ndarray, tol: float
) -> dict[str, float]:
    errors = {}
    offset = 0
    for name, t in params.tensors.items():
        group = name.split(".")[0]
        seg = slice(offset, offset + t.size)
        report = check_gradients(analytic[seg], numeric[seg], tol)
        errors[group] = max(errors.get(group, 0.0), report.max_rel_error)
        offset += t.size
    return errors


def check_model_gradient(
    objective: str = "context_aware",
    config: CameConfig = CHECK_CONFIG,
    loss_config: LossConfig | None = None,
    num_points: int = 20,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    fault_group: str | None = None,
) -> GradCheckCase:
    """FD-validate the full forward graph w.r.t. the whole parameter vector.

    objective "context_aware": the expert-weighted composite loss (gradients
    reach experts, the shared encoder, and the expert-weighting gate; the
    predicate-weighting groups are exactly zero on both routes).
    objective "came_ce": cross entropy on the weighted-ensemble output
    (gradients reach the predicate-weighting gate and edge embedding).

    fault_group is a test hook: the named group's analytic gradient gets a
    sign flip, which must make the check fail.
    """
    if objective not in ("context_aware", "came_ce"):
        raise ValueError(f"unknown objective {objective!r}")
    if loss_config is None:
        loss_config = LossConfig(base="ce")
    m = CHECK_DIMS["m"]
    counts = [max(1, 2 ** (i % 7)) for i in range(m)]
    worst = 0.0
    group_errors: dict[str, float] = {}
    for point in range(num_points):
        params, inst, target = _random_point(config, derive_seed(seed, point))

        def objective_value(vec: np.ndarray) -> float:
            trace = forward(params.from_vector(vec), config, inst)
            if objective == "context_aware":
                return context_aware_loss(
                    trace.y_experts, trace.beta, target, loss_config, counts
                ).loss
            loss, _ = ce_loss(trace.y_came, target)
            return loss

        trace = forward(params, config, inst)
        if objective == "context_aware":
            res = context_aware_loss(trace.y_experts, trace.beta, target, loss_config, counts)
            grads = backward(
                params,
                config,
                trace,
                d_experts=res.expert_grads,
                d_beta=res.expert_losses if config.ew_enabled else None,
            )
        else:
            _, d_came = ce_loss(trace.y_came, target)
            grads = backward(params, config, trace, d_came=d_came)

        if fault_group is not None:
            flipped = False
            for name in grads:
                if name.split(".")[0] == fault_group:
                    grads[name] = -grads[name]
                    flipped = True
            if not flipped:
                raise ValueError(f"no parameter group named {fault_group!r}")

        analytic = np.concatenate([grads[name].ravel() for name in params.tensors])
        numeric = finite_diff_gradient(objective_value, params.to_vector())
        errors = _group_errors(params, analytic, numeric, tol)
        for g, e in errors.items():
            group_errors[g] = max(group_errors.get(g, 0.0), e)
        worst = max(worst, max(errors.values()))
    return GradCheckCase(
        name=f"model/{objective}",
        max_rel_error=worst,
        tol=tol,
        passed=worst <= tol,
        group_errors=group_errors,
    )


def run_gradcheck_suite(
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    num_points: int = 20,
    fault_group: str | None = None,
    model_config: CameConfig = CHECK_CONFIG,
    loss_config: LossConfig | None = None,
) -> GradCheckSuiteResult:
    """The full validation suite: all four base losses plus both full-model
    objectives with expert and predicate weighting enabled."""
    cases = [
        check_loss_gradient(base, num_points=num_points, seed=seed, tol=tol)
        for base in ("ce", "focal", "ldam", "class_balanced")
    ]
    cases.append(
        check_model_gradient(
            "context_aware",
            config=model_config,
            loss_config=loss_config,
            num_points=num_points,
            seed=seed,
            tol=tol,
            fault_group=fault_group,
        )
    )
    cases.append(
        check_model_gradient(
            "came_ce",
            config=model_config,
            num_points=num_points,
            seed=seed,
            tol=tol,
            fault_group=fault_group,
        )
    )
    return GradCheckSuiteResult(cases)
