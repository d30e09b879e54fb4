"""Synthetic long-tailed relation datasets, feature-dump ingestion, and
predicate vocabulary management (head/body/tail partition).

A dataset is a flat list of relation instances per split. Each instance is
one subject-object pair: a pair feature vector x, a context feature vector c,
the ground-truth predicate id, and its (image_id, pair_id) address used by
the PredCls-style evaluation.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import largest_remainder, make_rng, derive_seed

HEAD_FRACTION = 0.3
BODY_FRACTION = 0.4

DUMP_HEADER_FIELDS = {"m", "d_x", "d_c", "names"}
DUMP_RECORD_FIELDS = {"split", "image_id", "x", "c", "label"}
SPLIT_NAMES = ("train", "val", "test")


class DumpFormatError(ValueError):
    """Malformed or schema-inconsistent feature dump; message carries the line."""


def default_names(m: int) -> tuple[str, ...]:
    width = max(2, len(str(m - 1)))
    return tuple(f"predicate_{i:0{width}d}" for i in range(m))


@dataclass(frozen=True)
class PredicateVocabulary:
    names: tuple[str, ...]
    train_counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.train_counts):
            raise ValueError(
                f"{len(self.names)} names vs {len(self.train_counts)} counts"
            )
        if any(c < 0 for c in self.train_counts):
            raise ValueError("train_counts must be non-negative")

    @property
    def m(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class ClassPartition:
    """Head/body/tail split of class ids by descending training frequency."""

    head: tuple[int, ...]
    body: tuple[int, ...]
    tail: tuple[int, ...]

    def __post_init__(self):
        groups = (set(self.head), set(self.body), set(self.tail))
        total = len(self.head) + len(self.body) + len(self.tail)
        union = groups[0] | groups[1] | groups[2]
        if len(union) != total:
            raise ValueError("head/body/tail groups must be disjoint")
        if union != set(range(total)):
            raise ValueError("head/body/tail must cover exactly the class ids 0..m-1")

    def group_of(self, class_id: int) -> str:
        if class_id in self.head:
            return "head"
        if class_id in self.body:
            return "body"
        return "tail"


@dataclass(frozen=True)
class RelationInstance:
    image_id: int
    pair_id: int
    x: np.ndarray
    c: np.ndarray
    label: int


@dataclass
class DatasetSplit:
    train: list[RelationInstance]
    val: list[RelationInstance]
    test: list[RelationInstance]
    vocabulary: PredicateVocabulary

    @property
    def d_x(self) -> int:
        return self._any_instance().x.size

    @property
    def d_c(self) -> int:
        return self._any_instance().c.size

    def _any_instance(self) -> RelationInstance:
        for part in (self.train, self.val, self.test):
            if part:
                return part[0]
        raise ValueError("dataset has no instances")

    def split(self, name: str) -> list[RelationInstance]:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def empirical_counts(instances: Sequence[RelationInstance], m: int) -> tuple[int, ...]:
    counts = [0] * m
    for inst in instances:
        counts[inst.label] += 1
    return tuple(counts)


def zipf_counts(m: int, s: float, total: int) -> list[int]:
    """Per-class counts proportional to 1/rank^s, summing exactly to total.

    Largest-remainder rounding; every class gets at least one instance
    (units taken from the most populous classes if needed).
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if s < 0:
        raise ValueError(f"zipf exponent must be >= 0, got {s}")
    if total < m:
        raise ValueError(f"total ({total}) must be >= m ({m})")
    weights = 1.0 / np.arange(1, m + 1, dtype=np.float64) ** s
    counts = largest_remainder(weights, total)
    while np.any(counts == 0):
        zero = int(np.argmax(counts == 0))
        counts[zero] = 1
        counts[int(np.argmax(counts))] -= 1
    return [int(c) for c in counts]


def partition_classes(vocab: PredicateVocabulary) -> ClassPartition:
    """First ceil(0.3m) classes by descending count => head, next ceil(0.4m)
    => body, remainder => tail (15/20/15 at m = 50). Ties break by class id.
    """
    m = vocab.m
    if m < 3:
        raise ValueError(f"partition needs at least 3 classes, got {m}")
    order = sorted(range(m), key=lambda i: (-vocab.train_counts[i], i))
    n_head = math.ceil(HEAD_FRACTION * m)
    n_body = min(math.ceil(BODY_FRACTION * m), m - n_head)
    return ClassPartition(
        head=tuple(order[:n_head]),
        body=tuple(order[n_head : n_head + n_body]),
        tail=tuple(order[n_head + n_body :]),
    )


def _instances_for_counts(
    counts: Sequence[int],
    prototypes: np.ndarray,
    context_map: np.ndarray,
    buckets: np.ndarray,
    noise_sigma: float,
    pairs_per_image: int,
    rng: np.random.Generator,
) -> list[RelationInstance]:
    labels = np.repeat(np.arange(len(counts)), counts)
    rng.shuffle(labels)
    d_x = prototypes.shape[1]
    d_c = context_map.shape[0]
    instances = []
    for idx, label in enumerate(labels):
        label = int(label)
        x = prototypes[label].copy()
        ctx_in = np.concatenate([prototypes[label], _bucket_onehot(buckets[label])])
        c = context_map @ ctx_in
        if noise_sigma > 0:
            x += rng.normal(0.0, noise_sigma, d_x)
            c += rng.normal(0.0, noise_sigma, d_c)
        instances.append(
            RelationInstance(
                image_id=idx // pairs_per_image,
                pair_id=idx % pairs_per_image,
                x=x,
                c=c,
                label=label,
            )
        )
    return instances


def _bucket_onehot(bucket: int) -> np.ndarray:
    onehot = np.zeros(3)
    onehot[bucket] = 1.0
    return onehot


def generate_synthetic(
    m: int = 50,
    s: float = 1.2,
    total: int = 20000,
    d_x: int = 32,
    d_c: int = 16,
    noise_sigma: float = 0.75,
    seed: int = 0,
    pairs_per_image: int = 12,
    val_fraction: float = 0.1,
    test_fraction: float = 0.2,
) -> DatasetSplit:
    """Long-tailed synthetic relation data.

    One prototype per class on the unit sphere; x = prototype + N(0, sigma^2)
    noise. The context feature is a fixed linear map of (prototype,
    frequency-bucket one-hot) plus the same noise, so context carries real
    predicate signal for the expert-weighting gate to exploit. ``total`` is
    the train-split size; val/test are extra Zipf-shaped draws of
    val_fraction/test_fraction times that, each covering every class.
    """
    if d_x < 2 or d_c < 2:
        raise ValueError("feature dims must be >= 2")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if pairs_per_image < 1:
        raise ValueError("pairs_per_image must be >= 1")

    proto_rng = make_rng(derive_seed(seed, 0))
    prototypes = proto_rng.normal(size=(m, d_x))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
    context_map = proto_rng.normal(size=(d_c, d_x + 3)) / np.sqrt(d_x + 3)

    train_counts = zipf_counts(m, s, total)
    # bucket by the head/body/tail partition of the train counts
    vocab = PredicateVocabulary(default_names(m), tuple(train_counts))
    partition = partition_classes(vocab)
    buckets = np.zeros(m, dtype=np.int64)
    for cid in partition.body:
        buckets[cid] = 1
    for cid in partition.tail:
        buckets[cid] = 2

    parts: dict[str, list[RelationInstance]] = {}
    fractions = {"train": None, "val": val_fraction, "test": test_fraction}
    for split_idx, name in enumerate(SPLIT_NAMES):
        if name == "train":
            counts = train_counts
        else:
            frac = fractions[name]
            if frac <= 0:
                parts[name] = []
                continue
            counts = zipf_counts(m, s, max(m, round(total * frac)))
        rng = make_rng(derive_seed(seed, 1 + split_idx))
        parts[name] = _instances_for_counts(
            counts, prototypes, context_map, buckets, noise_sigma, pairs_per_image, rng
        )
    return DatasetSplit(parts["train"], parts["val"], parts["test"], vocab)


def stratified_split(
    instances: Sequence[RelationInstance],
    fractions: Sequence[float],
    seed: int,
    names: Sequence[str] | None = None,
) -> DatasetSplit:
    """Split instances per class in the given (train[, val[, test]]) fractions.

    Largest-remainder allocation per class after a seeded shuffle. A class
    with fewer instances than split parts goes entirely to train (warned).
    """
    fr = [float(f) for f in fractions]
    if not fr or len(fr) > 3:
        raise ValueError("fractions must have 1 to 3 entries (train, val, test)")
    if any(f <= 0 for f in fr):
        raise ValueError("fractions must be positive")
    if abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fr)}")
    if not instances:
        raise ValueError("no instances to split")

    m = max(inst.label for inst in instances) + 1
    if names is None:
        names = default_names(m)
    elif len(names) < m:
        raise ValueError(f"{len(names)} names but labels reach {m - 1}")

    by_class: dict[int, list[RelationInstance]] = {}
    for inst in sorted(instances, key=lambda r: (r.image_id, r.pair_id)):
        by_class.setdefault(inst.label, []).append(inst)

    rng = make_rng(seed)
    parts: list[list[RelationInstance]] = [[], [], []]
    for label in sorted(by_class):
        members = by_class[label]
        if len(members) < len(fr):
            warnings.warn(
                f"class {label} has {len(members)} instance(s), fewer than "
                f"{len(fr)} splits; assigning all to train",
                stacklevel=2,
            )
            parts[0].extend(members)
            continue
        order = rng.permutation(len(members))
        alloc = largest_remainder(fr, len(members))
        start = 0
        for part_idx, size in enumerate(alloc):
            for j in order[start : start + size]:
                parts[part_idx].append(members[int(j)])
            start += size

    vocab = PredicateVocabulary(
        tuple(names[:m]) if len(names) > m else tuple(names),
        empirical_counts(parts[0], m),
    )
    return DatasetSplit(parts[0], parts[1], parts[2], vocab)


def save_feature_dump(dataset: DatasetSplit, path) -> None:
    """Line-delimited dump: a header object, then one record per instance.

    Records are written in canonical (split, image_id, pair_id) order so a
    save/load round trip is byte-stable.
    """
    header = {
        "m": dataset.vocabulary.m,
        "d_x": dataset.d_x,
        "d_c": dataset.d_c,
        "names": list(dataset.vocabulary.names),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for split_name in SPLIT_NAMES:
            for inst in sorted(
                dataset.split(split_name), key=lambda r: (r.image_id, r.pair_id)
            ):
                record = {
                    "split": split_name,
                    "image_id": inst.image_id,
                    "x": [float(v) for v in inst.x],
                    "c": [float(v) for v in inst.c],
                    "label": inst.label,
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _parse_header(line: str) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DumpFormatError(f"line 1: malformed header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != DUMP_HEADER_FIELDS:
        raise DumpFormatError(
            f"line 1: header must have exactly the fields {sorted(DUMP_HEADER_FIELDS)}"
        )
    m, d_x, d_c, names = header["m"], header["d_x"], header["d_c"], header["names"]
    if not (isinstance(m, int) and m >= 1):
        raise DumpFormatError(f"line 1: m must be a positive integer, got {m!r}")
    if not all(isinstance(d, int) and d >= 1 for d in (d_x, d_c)):
        raise DumpFormatError("line 1: d_x and d_c must be positive integers")
    if not (isinstance(names, list) and len(names) == m):
        raise DumpFormatError(f"line 1: names must list exactly m={m} labels")
    return header


def load_feature_dump(path) -> DatasetSplit:
    """Parse a feature dump; recomputes vocabulary counts from train records.

    Raises DumpFormatError with the offending line number on malformed
    records, unknown fields, dimension mismatches, or out-of-range labels.
    Pair ids are assigned by record order within each (split, image).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DumpFormatError("line 1: empty file, expected a header object")
    header = _parse_header(lines[0])
    m, d_x, d_c = header["m"], header["d_x"], header["d_c"]

    parts: dict[str, list[RelationInstance]] = {name: [] for name in SPLIT_NAMES}
    pair_counters: dict[tuple[str, int], int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DumpFormatError(f"line {lineno}: malformed record: {exc}") from exc
        if not isinstance(rec, dict) or set(rec) != DUMP_RECORD_FIELDS:
            raise DumpFormatError(
                f"line {lineno}: record must have exactly the fields "
                f"{sorted(DUMP_RECORD_FIELDS)}"
            )
        split, image_id, label = rec["split"], rec["image_id"], rec["label"]
        if split not in SPLIT_NAMES:
            raise DumpFormatError(f"line {lineno}: unknown split {split!r}")
        if not isinstance(image_id, int):
            raise DumpFormatError(f"line {lineno}: image_id must be an integer")
        if not isinstance(label, int) or not 0 <= label < m:
            raise DumpFormatError(
                f"line {lineno}: label {label!r} out of range for m={m}"
            )
        x = np.asarray(rec["x"], dtype=np.float64)
        c = np.asarray(rec["c"], dtype=np.float64)
        if x.shape != (d_x,):
            raise DumpFormatError(f"line {lineno}: x has {x.size} values, expected {d_x}")
        if c.shape != (d_c,):
            raise DumpFormatError(f"line {lineno}: c has {c.size} values, expected {d_c}")
        key = (split, image_id)
        pair_id = pair_counters.get(key, 0)
        pair_counters[key] = pair_id + 1
        parts[split].append(
            RelationInstance(image_id=image_id, pair_id=pair_id, x=x, c=c, label=label)
        )
    if not parts["train"]:
        raise DumpFormatError("dump contains no train records")
    vocab = PredicateVocabulary(tuple(header["names"]), empirical_counts(parts["train"], m))
    return DatasetSplit(parts["train"], parts["val"], parts["test"], vocab)
