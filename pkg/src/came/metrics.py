"""Unbiased evaluation for predicate classification: Recall@K, mean
Recall@K, the R/mR balance mean, variance-over-mean of per-class recalls,
and head/body/tail group recalls. Object pairs are given (PredCls setting).

All ratios are computed in exact rational arithmetic (``fractions.Fraction``)
and converted to floats only at the report boundary, so results are
bit-reproducible and admit exact comparison against brute-force oracles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .data import ClassPartition, PredicateVocabulary, RelationInstance, partition_classes
from .model import CameConfig, CameParams, _forward_batch, inference_scores

PREDICTION_RECORD_FIELDS = {"image_id", "pair_id", "scores"}
GROUP_NAMES = ("head", "body", "tail")


@dataclass
class ImagePredictions:
    """Ground truth and scores for one image's object pairs."""

    image_id: int
    gt_triplets: list[tuple[int, int]]          # (pair_id, predicate_id)
    scored: dict[int, np.ndarray]               # pair_id -> (m,) scores

    def validate(self, m: int) -> None:
        for pair_id, pred in self.gt_triplets:
            if pair_id not in self.scored:
                raise ValueError(
                    f"image {self.image_id}: gt pair {pair_id} has no score vector"
                )
            if not 0 <= pred < m:
                raise ValueError(
                    f"image {self.image_id}: gt predicate {pred} out of range for m={m}"
                )
        for pair_id, scores in self.scored.items():
            if scores.shape != (m,):
                raise ValueError(
                    f"image {self.image_id}: pair {pair_id} has {scores.size} scores, "
                    f"expected {m}"
                )


def top_k_triplets(
    image: ImagePredictions, k: int, graph_constraint: bool
) -> list[tuple[int, int]]:
    """The image's top-K candidate (pair, predicate) triplets.

    Under the graph constraint each pair contributes only its single
    best-scoring predicate. Candidates sort by score descending with ties
    broken by (pair id, predicate id) ascending.
    """
    pair_ids: list[int] = []
    pred_ids: list[int] = []
    scores: list[float] = []
    for pair_id in sorted(image.scored):
        vec = image.scored[pair_id]
        if graph_constraint:
            best = int(np.argmax(vec))     # first max = lowest predicate id
            pair_ids.append(pair_id)
            pred_ids.append(best)
            scores.append(float(vec[best]))
        else:
            pair_ids.extend([pair_id] * vec.size)
            pred_ids.extend(range(vec.size))
            scores.extend(float(v) for v in vec)
    order = np.lexsort(
        (np.asarray(pred_ids), np.asarray(pair_ids), -np.asarray(scores))
    )[:k]
    return [(pair_ids[i], pred_ids[i]) for i in order]


@dataclass(frozen=True)
class RecallResult:
    value: float
    exact: Fraction
    per_image: dict[int, Fraction]
    images_excluded: int


@dataclass(frozen=True)
class MeanRecallResult:
    value: float
    exact: Fraction
    per_class: tuple[Fraction | None, ...]   # None for classes absent from gt


@dataclass(frozen=True)
class VarOverMeanResult:
    value: float       # percentage scale (ratio * 100)
    exact: Fraction
    zero_mean: bool


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")


def recall_at_k(
    predictions: Sequence[ImagePredictions], k: int, graph_constraint: bool = True
) -> RecallResult:
    """Mean over images of (gt triplets hit in the top-K) / (gt triplets).

    Images without ground truth are excluded from the mean and counted.
    """
    _check_k(k)
    per_image: dict[int, Fraction] = {}
    excluded = 0
    for image in predictions:
        if not image.gt_triplets:
            excluded += 1
            continue
        hits = set(top_k_triplets(image, k, graph_constraint))
        matched = sum(1 for triplet in set(image.gt_triplets) if triplet in hits)
        per_image[image.image_id] = Fraction(matched, len(set(image.gt_triplets)))
    if per_image:
        exact = Fraction(sum(per_image.values()), len(per_image))
    else:
        exact = Fraction(0)
    return RecallResult(float(exact), exact, per_image, excluded)


def mean_recall_at_k(
    predictions: Sequence[ImagePredictions],
    k: int,
    m: int,
    graph_constraint: bool = True,
) -> MeanRecallResult:
    """Per-class recall over the whole prediction set, averaged uniformly
    over the classes present in ground truth."""
    _check_k(k)
    total = [0] * m
    matched = [0] * m
    for image in predictions:
        if not image.gt_triplets:
            continue
        hits = set(top_k_triplets(image, k, graph_constraint))
        for triplet in set(image.gt_triplets):
            total[triplet[1]] += 1
            if triplet in hits:
                matched[triplet[1]] += 1
    per_class = tuple(
        Fraction(matched[cls], total[cls]) if total[cls] else None for cls in range(m)
    )
    present = [r for r in per_class if r is not None]
    exact = Fraction(sum(present), len(present)) if present else Fraction(0)
    return MeanRecallResult(float(exact), exact, per_class)


def mean_metric(r_lo: float, r_hi: float, mr_lo: float, mr_hi: float) -> float:
    """Arithmetic mean of R@K_lo/K_hi and mR@K_lo/K_hi on the percent scale."""
    values = (r_lo, r_hi, mr_lo, mr_hi)
    for v in values:
        if not 0.0 <= v <= 100.0:
            raise ValueError(f"mean_metric inputs must be in [0, 100], got {v}")
    return sum(values) / 4.0


def var_over_mean(per_class: Sequence[Fraction | None]) -> VarOverMeanResult:
    """Population variance of present-class recalls over their mean, x100.

    Recalls live on [0, 1]; the ratio is reported as a percentage. A zero
    mean is defined as 0 and flagged.
    """
    present = [r for r in per_class if r is not None]
    if not present:
        raise ValueError("var_over_mean needs at least one present class")
    n = len(present)
    mean = Fraction(sum(present), n)
    if mean == 0:
        return VarOverMeanResult(0.0, Fraction(0), True)
    var = Fraction(sum((r - mean) ** 2 for r in present), n)
    exact = var / mean * 100
    return VarOverMeanResult(float(exact), exact, False)


def group_mean_recall(
    per_class: Sequence[Fraction | None], partition: ClassPartition
) -> dict[str, Fraction | None]:
    """Mean present-class recall within head/body/tail; absent groups None."""
    m = len(per_class)
    covered = len(partition.head) + len(partition.body) + len(partition.tail)
    if covered != m:
        raise ValueError(f"partition covers {covered} classes, recalls have {m}")
    out: dict[str, Fraction | None] = {}
    for name, members in (
        ("head", partition.head),
        ("body", partition.body),
        ("tail", partition.tail),
    ):
        present = [per_class[cls] for cls in members if per_class[cls] is not None]
        out[name] = Fraction(sum(present), len(present)) if present else None
    return out


@dataclass
class EvalReport:
    """Every metric at every K, floats only (exact internals discarded)."""

    ks: tuple[int, ...]
    graph_constraint: bool
    recall_at: dict[int, float]
    mean_recall_at: dict[int, float]
    per_class_recall: dict[int, list[float | None]]
    mean_metric: float
    var_over_mean: dict[int, float]
    var_over_mean_zero_flag: dict[int, bool]
    group_recall: dict[int, dict[str, float | None]]
    images_evaluated: int = 0
    images_excluded: int = 0

    def to_json(self) -> str:
        """Deterministic single-document serialization (stable key order)."""
        doc = {
            "ks": list(self.ks),
            "graph_constraint": self.graph_constraint,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "mean_recall_at": {str(k): v for k, v in self.mean_recall_at.items()},
            "per_class_recall": {
                str(k): v for k, v in self.per_class_recall.items()
            },
            "mean_metric": self.mean_metric,
            "var_over_mean": {str(k): v for k, v in self.var_over_mean.items()},
            "var_over_mean_zero_flag": {
                str(k): v for k, v in self.var_over_mean_zero_flag.items()
            },
            "group_recall": {str(k): v for k, v in self.group_recall.items()},
            "images_evaluated": self.images_evaluated,
            "images_excluded": self.images_excluded,
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def evaluate_predictions(
    predictions: Sequence[ImagePredictions],
    m: int,
    ks: Sequence[int] = (5, 10, 20),
    partition: ClassPartition | None = None,
    graph_constraint: bool = True,
) -> EvalReport:
    """All metrics at each K for an explicit prediction set.

    The report's single mean metric uses the two largest Ks as the
    desk-scale analog of R/mR@50/100 (percent scale).
    """
    ks = tuple(sorted(set(int(k) for k in ks)))
    if not ks:
        raise ValueError("need at least one K")
    seen_ids = set()
    for image in predictions:
        if image.image_id in seen_ids:
            raise ValueError(f"duplicate image id {image.image_id} in predictions")
        seen_ids.add(image.image_id)
        image.validate(m)
    recall_results: dict[int, RecallResult] = {}
    mean_results: dict[int, MeanRecallResult] = {}
    for k in ks:
        recall_results[k] = recall_at_k(predictions, k, graph_constraint)
        mean_results[k] = mean_recall_at_k(predictions, k, m, graph_constraint)

    vom: dict[int, float] = {}
    vom_flag: dict[int, bool] = {}
    groups: dict[int, dict[str, float | None]] = {}
    for k in ks:
        per_class = mean_results[k].per_class
        if any(r is not None for r in per_class):
            res = var_over_mean(per_class)
            vom[k], vom_flag[k] = res.value, res.zero_mean
        else:
            vom[k], vom_flag[k] = 0.0, True
        if partition is not None:
            g = group_mean_recall(per_class, partition)
            groups[k] = {name: None if v is None else float(v) for name, v in g.items()}

    hi = ks[-1]
    lo = ks[-2] if len(ks) >= 2 else ks[-1]
    mm = mean_metric(
        float(recall_results[lo].exact * 100),
        float(recall_results[hi].exact * 100),
        float(mean_results[lo].exact * 100),
        float(mean_results[hi].exact * 100),
    )
    any_result = next(iter(recall_results.values()))
    return EvalReport(
        ks=ks,
        graph_constraint=graph_constraint,
        recall_at={k: r.value for k, r in recall_results.items()},
        mean_recall_at={k: r.value for k, r in mean_results.items()},
        per_class_recall={
            k: [None if r is None else float(r) for r in mean_results[k].per_class]
            for k in ks
        },
        mean_metric=mm,
        var_over_mean=vom,
        var_over_mean_zero_flag=vom_flag,
        group_recall=groups,
        images_evaluated=len(any_result.per_image),
        images_excluded=any_result.images_excluded,
    )


def predictions_from_instances(
    params: CameParams,
    config: CameConfig,
    instances: Sequence[RelationInstance],
) -> list[ImagePredictions]:
    """Run the model over instances and group scores by image."""
    if not instances:
        return []
    ordered = sorted(instances, key=lambda r: (r.image_id, r.pair_id))
    X = np.stack([inst.x for inst in ordered])
    C = np.stack([inst.c for inst in ordered])
    scores = inference_scores(_forward_batch(params, config, X, C), config)
    by_image: dict[int, ImagePredictions] = {}
    for inst, vec in zip(ordered, scores):
        img = by_image.get(inst.image_id)
        if img is None:
            img = ImagePredictions(inst.image_id, [], {})
            by_image[inst.image_id] = img
        img.gt_triplets.append((inst.pair_id, inst.label))
        img.scored[inst.pair_id] = vec
    return [by_image[i] for i in sorted(by_image)]


def evaluate(
    params: CameParams,
    config: CameConfig,
    instances: Sequence[RelationInstance],
    vocabulary: PredicateVocabulary,
    ks: Sequence[int] = (5, 10, 20),
    partition: ClassPartition | None = None,
    graph_constraint: bool = True,
) -> EvalReport:
    """Forward every instance in a split, then score all metrics at each K."""
    if partition is None:
        partition = partition_classes(vocabulary)
    predictions = predictions_from_instances(params, config, instances)
    return evaluate_predictions(
        predictions, vocabulary.m, ks=ks, partition=partition,
        graph_constraint=graph_constraint,
    )


def top1_accuracy(
    params: CameParams, config: CameConfig, instances: Sequence[RelationInstance]
) -> float:
    """Fraction of pairs whose highest-scoring predicate is the ground truth."""
    if not instances:
        raise ValueError("no instances")
    X = np.stack([inst.x for inst in instances])
    C = np.stack([inst.c for inst in instances])
    scores = inference_scores(_forward_batch(params, config, X, C), config)
    labels = np.asarray([inst.label for inst in instances])
    return float(np.mean(scores.argmax(axis=1) == labels))


# ---------------------------------------------------------------------------
# prediction dumps (external-model evaluation)
# ---------------------------------------------------------------------------

def save_prediction_dump(predictions: Sequence[ImagePredictions], path) -> None:
    """Line-delimited records {image_id, pair_id, gt_label?, scores}."""
    with open(path, "w", encoding="utf-8") as fh:
        for image in sorted(predictions, key=lambda p: p.image_id):
            gt = dict(image.gt_triplets)
            for pair_id in sorted(image.scored):
                record = {
                    "image_id": image.image_id,
                    "pair_id": pair_id,
                    "scores": [float(v) for v in image.scored[pair_id]],
                }
                if pair_id in gt:
                    record["gt_label"] = gt[pair_id]
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_prediction_dump(path) -> tuple[list[ImagePredictions], int]:
    """Parse a prediction dump; returns (predictions, m).

    Pairs without gt_label contribute candidates but no ground truth.
    """
    by_image: dict[int, ImagePredictions] = {}
    m: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: malformed record: {exc}") from exc
            fields = set(rec) - {"gt_label"}
            if not isinstance(rec, dict) or fields != PREDICTION_RECORD_FIELDS:
                raise ValueError(
                    f"line {lineno}: record must have fields "
                    f"{sorted(PREDICTION_RECORD_FIELDS)} (+ optional gt_label)"
                )
            image_id, pair_id = rec["image_id"], rec["pair_id"]
            if not isinstance(image_id, int) or not isinstance(pair_id, int):
                raise ValueError(f"line {lineno}: image_id and pair_id must be integers")
            scores = np.asarray(rec["scores"], dtype=np.float64)
            if scores.ndim != 1 or scores.size == 0:
                raise ValueError(f"line {lineno}: scores must be a non-empty vector")
            if m is None:
                m = scores.size
            elif scores.size != m:
                raise ValueError(
                    f"line {lineno}: {scores.size} scores, expected {m} as in earlier records"
                )
            img = by_image.setdefault(image_id, ImagePredictions(image_id, [], {}))
            if pair_id in img.scored:
                raise ValueError(
                    f"line {lineno}: duplicate pair {pair_id} in image {image_id}"
                )
            img.scored[pair_id] = scores
            if "gt_label" in rec:
                gt = rec["gt_label"]
                if not isinstance(gt, int) or not 0 <= gt < m:
                    raise ValueError(f"line {lineno}: gt_label {gt!r} out of range")
                img.gt_triplets.append((pair_id, gt))
    if m is None:
        raise ValueError("prediction dump contains no records")
    return [by_image[i] for i in sorted(by_image)], m
