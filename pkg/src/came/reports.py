"""Static report emission: per-class recall CSV, an SVG bar chart with
head/body/tail shading, the ablation Markdown table, and the class-count
histogram printed by dataset synthesis. All outputs are plain strings with
fixed formatting so identical inputs give identical bytes.
"""

from __future__ import annotations

import io
import csv
from decimal import Decimal, ROUND_HALF_UP
from typing import Sequence

from .data import ClassPartition, PredicateVocabulary
from .metrics import EvalReport

GROUP_COLORS = {"head": "#4878cf", "body": "#ee854a", "tail": "#6acc65"}


def round_half_up(value: float, digits: int = 1) -> float:
    """Decimal half-up rounding (paper-table style), not banker's."""
    q = Decimal(10) ** -digits
    return float(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def format_percent(value: float | None, digits: int = 1) -> str:
    if value is None:
        return "-"
    return f"{round_half_up(value * 100, digits):.{digits}f}"


def per_class_recall_csv(
    report: EvalReport, vocab: PredicateVocabulary, partition: ClassPartition
) -> str:
    """One row per class: id, name, train count, group, recall at each K.

    Classes absent from the evaluated ground truth have empty recall cells.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["class_id", "name", "train_count", "group"]
    header += [f"recall_at_{k}" for k in report.ks]
    writer.writerow(header)
    for cls in range(vocab.m):
        row = [
            cls,
            vocab.names[cls],
            vocab.train_counts[cls],
            partition.group_of(cls),
        ]
        for k in report.ks:
            r = report.per_class_recall[k][cls]
            row.append("" if r is None else repr(r))
        writer.writerow(row)
    return buf.getvalue()


def recall_bar_chart_svg(
    report: EvalReport,
    vocab: PredicateVocabulary,
    partition: ClassPartition,
    k: int | None = None,
) -> str:
    """Per-class recall bars at one K, ordered by descending train frequency,
    bars colored by head/body/tail membership."""
    if k is None:
        k = report.ks[-1]
    if k not in report.per_class_recall:
        raise ValueError(f"report has no K={k}")
    recalls = report.per_class_recall[k]
    order = sorted(range(vocab.m), key=lambda i: (-vocab.train_counts[i], i))

    bar_w, gap, height, pad_l, pad_b, pad_t = 14, 2, 240, 46, 52, 24
    width = pad_l + vocab.m * (bar_w + gap) + 16
    total_h = height + pad_b + pad_t
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}" '
        f'viewBox="0 0 {width} {total_h}">',
        f'<text x="{pad_l}" y="16" font-family="monospace" font-size="12">'
        f"per-class recall@{k} (classes ordered by training frequency)</text>",
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{pad_t + height}" '
        f'stroke="#333" stroke-width="1"/>',
        f'<line x1="{pad_l}" y1="{pad_t + height}" x2="{width - 8}" '
        f'y2="{pad_t + height}" stroke="#333" stroke-width="1"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        y = pad_t + height * (1.0 - frac)
        parts.append(
            f'<text x="{pad_l - 6}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-family="monospace" font-size="10">{frac:.1f}</text>'
        )
    for pos, cls in enumerate(order):
        x = pad_l + 2 + pos * (bar_w + gap)
        group = partition.group_of(cls)
        value = recalls[cls]
        if value is None:
            parts.append(
                f'<rect x="{x}" y="{pad_t + height - 2}" width="{bar_w}" height="2" '
                f'fill="#cccccc"><title>{vocab.names[cls]}: absent</title></rect>'
            )
        else:
            h = height * value
            parts.append(
                f'<rect x="{x}" y="{pad_t + height - h:.2f}" width="{bar_w}" '
                f'height="{h:.2f}" fill="{GROUP_COLORS[group]}">'
                f"<title>{vocab.names[cls]}: {value:.4f}</title></rect>"
            )
        parts.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{pad_t + height + 10}" '
            f'text-anchor="middle" font-family="monospace" font-size="6">{cls}</text>'
        )
    legend_x = pad_l
    for i, group in enumerate(("head", "body", "tail")):
        x = legend_x + i * 90
        y = pad_t + height + 24
        parts.append(
            f'<rect x="{x}" y="{y}" width="10" height="10" fill="{GROUP_COLORS[group]}"/>'
            f'<text x="{x + 14}" y="{y + 9}" font-family="monospace" font-size="10">{group}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def ablation_markdown(rows: Sequence[dict], ks: Sequence[int]) -> str:
    """Paper-style table: one row per grid cell with mR@/R@ at the two
    largest Ks and their Mean. Failed cells print the error instead."""
    lo, hi = (ks[-2], ks[-1]) if len(ks) >= 2 else (ks[-1], ks[-1])
    lines = [
        f"| config | mR@{lo}/{hi} | R@{lo}/{hi} | Mean |",
        "|---|---|---|---|",
    ]
    for row in rows:
        label = row["label"]
        if row.get("error"):
            lines.append(f"| {label} | failed: {row['error']} | - | - |")
            continue
        rep: EvalReport = row["report"]
        mr = f"{format_percent(rep.mean_recall_at[lo])} / {format_percent(rep.mean_recall_at[hi])}"
        rr = f"{format_percent(rep.recall_at[lo])} / {format_percent(rep.recall_at[hi])}"
        mean = f"{round_half_up(rep.mean_metric, 1):.1f}"
        lines.append(f"| {label} | {mr} | {rr} | {mean} |")
    return "\n".join(lines) + "\n"


def class_histogram_text(vocab: PredicateVocabulary, width: int = 50) -> str:
    """Text histogram of training counts, descending."""
    order = sorted(range(vocab.m), key=lambda i: (-vocab.train_counts[i], i))
    peak = max(max(vocab.train_counts), 1)
    name_w = max(len(n) for n in vocab.names)
    lines = []
    for cls in order:
        count = vocab.train_counts[cls]
        bar = "#" * max(1 if count else 0, round(width * count / peak))
        lines.append(f"{vocab.names[cls]:<{name_w}} {count:>7d} {bar}")
    return "\n".join(lines) + "\n"
