"""Command-line surface: dataset synthesis, training, evaluation, gradient
checking, ablation sweeps, and report emission from prediction dumps.

Exit codes: 0 success, 1 check failure, 2 invalid input or config,
3 runtime training failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import ablation, gradcheck, reports
from .config import ConfigError, RunConfig, load_config
from .data import (
    DumpFormatError,
    PredicateVocabulary,
    generate_synthetic,
    load_feature_dump,
    partition_classes,
    save_feature_dump,
)
from .metrics import evaluate, evaluate_predictions, load_prediction_dump
from .model import load_checkpoint, save_checkpoint
from .train import TrainingError, fit

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2
EXIT_TRAINING = 3


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    return config


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def cmd_synth(args) -> int:
    config = _load_run_config(args)
    dataset = generate_synthetic(
        m=config.data.m,
        s=config.data.zipf_s,
        total=config.data.total,
        d_x=config.data.d_x,
        d_c=config.data.d_c,
        noise_sigma=config.data.noise_sigma,
        seed=config.seed,
        pairs_per_image=config.data.pairs_per_image,
        val_fraction=config.data.val_fraction,
        test_fraction=config.data.test_fraction,
    )
    out = _out_dir(config)
    save_feature_dump(dataset, out / "dataset.jsonl")
    partition = partition_classes(dataset.vocabulary)
    summary = {
        "m": dataset.vocabulary.m,
        "names": list(dataset.vocabulary.names),
        "train_counts": list(dataset.vocabulary.train_counts),
        "partition": {
            "head": list(partition.head),
            "body": list(partition.body),
            "tail": list(partition.tail),
        },
        "sizes": {
            "train": len(dataset.train),
            "val": len(dataset.val),
            "test": len(dataset.test),
        },
    }
    _write_text(out / "vocabulary.json", json.dumps(summary, sort_keys=True, indent=1) + "\n")
    print(reports.class_histogram_text(dataset.vocabulary), end="")
    print(f"wrote {out / 'dataset.jsonl'}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_run_config(args)
    dataset = load_feature_dump(args.data)
    out = _out_dir(config)
    resume_state = resume_params = None
    came_config = config.model
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        if ckpt.train_state is None:
            raise ConfigError(f"{args.resume} has no training state to resume from")
        resume_state, resume_params = ckpt.train_state, ckpt.params
        came_config = ckpt.config
    result = fit(
        dataset,
        came_config,
        config.loss,
        config.train,
        resume=resume_state,
        resume_params=resume_params,
        eval_ks=config.eval.ks,
        graph_constraint=config.eval.graph_constraint,
    )
    save_checkpoint(
        out / "checkpoint.ckpt",
        result.params,
        came_config,
        dataset.vocabulary,
        train_state=result.train_state(),
    )
    log_lines = [json.dumps(entry, sort_keys=True) for entry in result.log]
    _write_text(out / "train_log.jsonl", "".join(line + "\n" for line in log_lines))
    if dataset.val:
        report = evaluate(
            result.params,
            came_config,
            dataset.val,
            dataset.vocabulary,
            ks=config.eval.ks,
            graph_constraint=config.eval.graph_constraint,
        )
        _write_text(out / "val_report.json", report.to_json())
    for line in log_lines[-3:]:
        print(line)
    print(f"wrote {out / 'checkpoint.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_run_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_feature_dump(args.data)
    if (dataset.d_x, dataset.d_c) != (ckpt.params.d_x, ckpt.params.d_c):
        raise ConfigError(
            f"checkpoint dims (d_x={ckpt.params.d_x}, d_c={ckpt.params.d_c}) do not "
            f"match dataset (d_x={dataset.d_x}, d_c={dataset.d_c})"
        )
    if dataset.vocabulary.m != ckpt.params.m:
        raise ConfigError(
            f"checkpoint has m={ckpt.params.m} classes, dataset has {dataset.vocabulary.m}"
        )
    instances = dataset.split(args.split)
    if not instances:
        raise ConfigError(f"split {args.split!r} is empty")
    partition = partition_classes(ckpt.vocabulary)
    report = evaluate(
        ckpt.params,
        ckpt.config,
        instances,
        ckpt.vocabulary,
        ks=config.eval.ks,
        partition=partition,
        graph_constraint=config.eval.graph_constraint,
    )
    out = _out_dir(config)
    _write_text(out / "eval_report.json", report.to_json())
    _write_text(
        out / "per_class_recall.csv",
        reports.per_class_recall_csv(report, ckpt.vocabulary, partition),
    )
    _write_text(
        out / "per_class_recall.svg",
        reports.recall_bar_chart_svg(report, ckpt.vocabulary, partition),
    )
    for k in report.ks:
        print(
            f"K={k}: R={report.recall_at[k]:.4f} mR={report.mean_recall_at[k]:.4f} "
            f"var/m={report.var_over_mean[k]:.2f}"
        )
    print(f"mean metric: {report.mean_metric:.2f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = _load_run_config(args)
    suite = gradcheck.run_gradcheck_suite(
        seed=config.seed,
        tol=args.tol,
        num_points=args.points,
        fault_group=args.inject_sign_flip,
    )
    for line in suite.summary_lines():
        print(line)
    if not suite.passed:
        failing = sorted(
            {g for case in suite.cases if not case.passed for g in case.failing_groups()}
        )
        if failing:
            print("failing parameter groups: " + ", ".join(failing), file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _load_run_config(args)
    dataset = load_feature_dump(args.data)
    rows = ablation.run_grid(dataset, config)
    out = _out_dir(config)
    table = reports.ablation_markdown(rows, config.eval.ks)
    _write_text(out / "ablation.md", table)
    cell_lines = []
    for row in rows:
        doc = {"index": row["index"], "label": row["label"], "error": row["error"]}
        if row["report"] is not None:
            doc["top1_accuracy"] = row["top1_accuracy"]
            doc["report"] = json.loads(row["report"].to_json())
        cell_lines.append(json.dumps(doc, sort_keys=True))
    _write_text(out / "ablation_cells.jsonl", "".join(line + "\n" for line in cell_lines))
    print(table, end="")
    print(f"wrote {out / 'ablation.md'}")
    return EXIT_OK


def cmd_report(args) -> int:
    config = _load_run_config(args)
    predictions, m = load_prediction_dump(args.predictions)
    # vocabulary stands in from the dump itself: names are synthetic and
    # counts are gt occurrences, which also define the partition
    counts = [0] * m
    for image in predictions:
        for _, pred in image.gt_triplets:
            counts[pred] += 1
    vocab = PredicateVocabulary(
        tuple(f"class_{i:02d}" for i in range(m)), tuple(counts)
    )
    partition = partition_classes(vocab)
    report = evaluate_predictions(
        predictions,
        m,
        ks=config.eval.ks,
        partition=partition,
        graph_constraint=config.eval.graph_constraint,
    )
    out = _out_dir(config)
    _write_text(out / "eval_report.json", report.to_json())
    _write_text(out / "per_class_recall.csv", reports.per_class_recall_csv(report, vocab, partition))
    _write_text(out / "per_class_recall.svg", reports.recall_bar_chart_svg(report, vocab, partition))
    print(report.to_json(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="came",
        description="context-aware mixture-of-experts head for long-tailed "
        "relation classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output directory override")

    p = sub.add_parser("synth", help="generate a synthetic long-tailed dataset")
    common(p)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="train on a feature dump")
    common(p)
    p.add_argument("--data", required=True, help="feature dump path")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a feature dump")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    common(p)
    p.add_argument("--tol", type=float, default=gradcheck.DEFAULT_TOL)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--inject-sign-flip", default=None, help=argparse.SUPPRESS)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and compare the ablation grid")
    common(p)
    p.add_argument("--data", required=True, help="feature dump path")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("report", help="evaluate an external prediction dump")
    common(p)
    p.add_argument("--predictions", required=True, help="prediction dump path")
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ConfigError, DumpFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
