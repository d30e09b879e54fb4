"""Independent brute-force reimplementation of the evaluation metrics in
exact rational arithmetic. Deliberately naive: full candidate enumeration,
tuple-key sorting, pure-Python counting. The production metrics must agree
bitwise with these on random small instances.
"""

from fractions import Fraction

import numpy as np

from came.data import ClassPartition
from came.metrics import ImagePredictions


def oracle_topk(image: ImagePredictions, k: int, graph_constraint: bool):
    cands = []
    for pair_id, vec in image.scored.items():
        m = len(vec)
        if graph_constraint:
            best = min(range(m), key=lambda j: (-vec[j], j))
            cands.append((float(vec[best]), pair_id, best))
        else:
            cands.extend((float(vec[j]), pair_id, j) for j in range(m))
    ranked = sorted(cands, key=lambda t: (-t[0], t[1], t[2]))
    return [(p, j) for (_, p, j) in ranked[:k]]


def oracle_recall(predictions, k, graph_constraint):
    per_image = []
    for image in predictions:
        gt = set(image.gt_triplets)
        if not gt:
            continue
        hits = set(oracle_topk(image, k, graph_constraint))
        per_image.append(Fraction(len(gt & hits), len(gt)))
    if not per_image:
        return Fraction(0)
    return sum(per_image, Fraction(0)) / len(per_image)


def oracle_per_class(predictions, k, m, graph_constraint):
    total = [0] * m
    matched = [0] * m
    for image in predictions:
        gt = set(image.gt_triplets)
        hits = set(oracle_topk(image, k, graph_constraint))
        for pair_id, cls in gt:
            total[cls] += 1
            if (pair_id, cls) in hits:
                matched[cls] += 1
    return [
        Fraction(matched[c], total[c]) if total[c] > 0 else None for c in range(m)
    ]


def oracle_mean_recall(predictions, k, m, graph_constraint):
    per_class = oracle_per_class(predictions, k, m, graph_constraint)
    present = [r for r in per_class if r is not None]
    if not present:
        return Fraction(0), per_class
    return sum(present, Fraction(0)) / len(present), per_class


def oracle_var_over_mean(per_class):
    present = [r for r in per_class if r is not None]
    mean = sum(present, Fraction(0)) / len(present)
    if mean == 0:
        return Fraction(0), True
    var = sum(((r - mean) ** 2 for r in present), Fraction(0)) / len(present)
    return var / mean * 100, False


def oracle_group_recall(per_class, partition: ClassPartition):
    out = {}
    for name, members in (("head", partition.head), ("body", partition.body), ("tail", partition.tail)):
        vals = [per_class[c] for c in members if per_class[c] is not None]
        out[name] = sum(vals, Fraction(0)) / len(vals) if vals else None
    return out


def random_small_instance(rng: np.random.Generator) -> tuple[list[ImagePredictions], int]:
    """<=5 images, <=6 pairs, <=8 classes; discretized scores to force ties;
    occasional gt-free images and pairs without ground truth."""
    m = int(rng.integers(2, 9))
    n_images = int(rng.integers(1, 6))
    predictions = []
    for image_id in range(n_images):
        n_pairs = int(rng.integers(1, 7))
        scored = {}
        gt = []
        for pair_id in range(n_pairs):
            scored[pair_id] = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=m)
            if rng.random() < 0.85:
                gt.append((pair_id, int(rng.integers(0, m))))
            if rng.random() < 0.15:   # occasional second gt predicate on a pair
                gt.append((pair_id, int(rng.integers(0, m))))
        predictions.append(ImagePredictions(image_id, gt, scored))
    return predictions, m
