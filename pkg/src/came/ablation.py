"""Ablation sweeps over module combinations (single-expert baseline, plain
mixture, + expert weighting, + predicate weighting), expert counts, and the
predicate-weighting temperature, mirroring the paper-style comparison table.

Grid cells train independently with seeds derived from (master seed, cell
index) and may run as concurrent worker processes; results are deterministic
either way. A failing cell is recorded and the sweep continues.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from .config import RunConfig
from .data import DatasetSplit
from .losses import LossConfig
from .metrics import EvalReport, evaluate, top1_accuracy
from .model import CameConfig
from .numerics import derive_seed
from .train import fit


@dataclass(frozen=True)
class AblationCell:
    index: int
    label: str
    came_config: CameConfig
    loss_config: LossConfig


def build_grid(config: RunConfig) -> list[AblationCell]:
    """Cells from the run config's ablate section, in a fixed order:
    module combinations, then expert counts, then temperature sweep."""
    base_model = config.model
    cells: list[AblationCell] = []

    def add(label: str, came: CameConfig, loss: LossConfig) -> None:
        cells.append(AblationCell(len(cells), label, came, loss))

    module_rows = {
        "baseline": (
            "baseline (n=1, ce)",
            replace(base_model, num_experts=1, ew_enabled=False, pw_enabled=False),
            replace(config.loss, base="ce"),
        ),
        "me": (
            f"ME (n={base_model.num_experts})",
            replace(base_model, ew_enabled=False, pw_enabled=False),
            config.loss,
        ),
        "me_ew": (
            f"ME+EW (n={base_model.num_experts})",
            replace(base_model, ew_enabled=True, pw_enabled=False),
            config.loss,
        ),
        "me_ew_pw": (
            f"ME+EW+PW (n={base_model.num_experts})",
            replace(base_model, ew_enabled=True, pw_enabled=True),
            config.loss,
        ),
    }
    for name in config.ablate.modules:
        if name not in module_rows:
            raise ValueError(f"unknown ablation module row {name!r}")
        add(*module_rows[name])
    for n in config.ablate.expert_counts:
        add(
            f"ME+EW n={n}",
            replace(base_model, num_experts=n, ew_enabled=True, pw_enabled=False),
            config.loss,
        )
    for gamma in config.ablate.gammas:
        add(
            f"ME+EW+PW gamma={gamma:g}",
            replace(base_model, ew_enabled=True, pw_enabled=True, pw_temperature=gamma),
            config.loss,
        )
    return cells


def run_cell(
    dataset: DatasetSplit, cell: AblationCell, config: RunConfig
) -> dict:
    """Train one cell and evaluate it on the test split."""
    seed = derive_seed(config.seed, 0xAB, cell.index)
    train_config = replace(config.train, seed=seed)
    result = fit(
        dataset,
        cell.came_config,
        cell.loss_config,
        train_config,
        eval_ks=config.eval.ks,
        graph_constraint=config.eval.graph_constraint,
        eval_every=max(1, train_config.epochs),   # skip mid-run val for speed
    )
    report = evaluate(
        result.params,
        cell.came_config,
        dataset.test,
        dataset.vocabulary,
        ks=config.eval.ks,
        graph_constraint=config.eval.graph_constraint,
    )
    accuracy = top1_accuracy(result.params, cell.came_config, dataset.test)
    return {
        "index": cell.index,
        "label": cell.label,
        "report": report,
        "top1_accuracy": accuracy,
        "error": None,
    }


def _run_cell_safe(args) -> dict:
    dataset, cell, config = args
    try:
        return run_cell(dataset, cell, config)
    except Exception as exc:   # cell failures must not kill the sweep
        return {
            "index": cell.index,
            "label": cell.label,
            "report": None,
            "top1_accuracy": None,
            "error": f"{type(exc).__name__}: {exc}",
        }


def run_grid(
    dataset: DatasetSplit,
    config: RunConfig,
    cells: list[AblationCell] | None = None,
) -> list[dict]:
    """All cells, optionally across worker processes; rows come back in
    grid order regardless of completion order."""
    if cells is None:
        cells = build_grid(config)
    workers = max(1, config.ablate.workers)
    jobs = [(dataset, cell, config) for cell in cells]
    if workers == 1 or len(cells) <= 1:
        rows = [_run_cell_safe(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
            rows = list(pool.map(_run_cell_safe, jobs))
    return sorted(rows, key=lambda r: r["index"])
