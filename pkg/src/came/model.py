"""The mixture-of-experts head: shared encoder, expert classifiers,
context-driven expert weighting, per-predicate expert weighting, and the two
ensembles (plain average and context-weighted), with hand-derived backprop.

Shapes, for pair feature dim d_x, context dim d_c, hidden width h, m
predicate classes and n experts:

    shared.W   (h, d_x)      y_s = tanh(shared.W x + shared.b)
    expert{i}  (m, h), (m,)  y_i = expert_i(y_s)                 per expert
    ew_gate.W  (n, d_c)      beta = softmax(ew_gate.W c + b)     expert weights
    edge.W     (h, h + d_c)  y_e = edge.W [y_s; c] + edge.b      edge embedding
    pw_gate.W  (m n, h)      S = reshape(pw_gate.W y_e + b, (m, n))
                             r[j] = softmax(gamma * S[j])        per predicate

The trace of a forward pass retains every intermediate needed by backprop.
Batched variants (prefixed ``_``) carry a leading batch axis and are the
training fast path; the public single-instance operations are the reference
formulas they are tested against.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import PredicateVocabulary, RelationInstance
from .numerics import make_rng, derive_seed, require_finite, softmax_rows, stable_softmax

CHECKPOINT_MAGIC = b"CAMECKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class CameConfig:
    num_experts: int = 3
    hidden_dim: int = 64
    pw_temperature: float = 0.25
    ew_enabled: bool = True
    pw_enabled: bool = True

    def __post_init__(self):
        if not 1 <= self.num_experts <= 8:
            raise ValueError(f"num_experts must be in [1, 8], got {self.num_experts}")
        if self.hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if not 0.0 <= self.pw_temperature <= 10.0:
            raise ValueError(
                f"pw_temperature must be in [0, 10], got {self.pw_temperature}"
            )

    def to_dict(self) -> dict:
        return {
            "num_experts": self.num_experts,
            "hidden_dim": self.hidden_dim,
            "pw_temperature": self.pw_temperature,
            "ew_enabled": self.ew_enabled,
            "pw_enabled": self.pw_enabled,
        }


class CameParams:
    """All trainable tensors, keyed by group name in a fixed canonical order.

    The canonical order (shared, expert0..expert{n-1}, ew_gate, edge, pw_gate;
    W before b) defines the flattened-vector layout used by finite-difference
    checks and the checkpoint byte layout.
    """

    def __init__(self, tensors: dict[str, np.ndarray], d_x: int, d_c: int, m: int):
        self.tensors = tensors
        self.d_x = d_x
        self.d_c = d_c
        self.m = m

    @property
    def num_experts(self) -> int:
        return sum(1 for name in self.tensors if name.endswith(".W") and name.startswith("expert"))

    @property
    def hidden_dim(self) -> int:
        return self.tensors["shared.W"].shape[0]

    def names(self) -> list[str]:
        return list(self.tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "CameParams":
        return CameParams(
            {k: v.copy() for k, v in self.tensors.items()}, self.d_x, self.d_c, self.m
        )

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def from_vector(self, vec: np.ndarray) -> "CameParams":
        if vec.size != self.num_parameters():
            raise ValueError(f"vector has {vec.size} entries, expected {self.num_parameters()}")
        out = {}
        offset = 0
        for name, v in self.tensors.items():
            out[name] = vec[offset : offset + v.size].reshape(v.shape).copy()
            offset += v.size
        return CameParams(out, self.d_x, self.d_c, self.m)

    def validate_finite(self) -> None:
        for name, v in self.tensors.items():
            require_finite(v, name)


def zero_grads(params: CameParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(v) for name, v in params.tensors.items()}


def init_params(
    config: CameConfig, d_x: int, d_c: int, m: int, seed: int
) -> CameParams:
    """Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per tensor.

    Tensors are drawn in canonical order from one stream, so experts start
    distinct and symmetry breaks.
    """
    h, n = config.hidden_dim, config.num_experts
    rng = make_rng(derive_seed(seed, 0xCA))
    tensors: dict[str, np.ndarray] = {}

    def draw(name: str, shape: tuple[int, ...], fan_in: int) -> None:
        bound = 1.0 / np.sqrt(fan_in)
        tensors[name] = rng.uniform(-bound, bound, shape)

    draw("shared.W", (h, d_x), d_x)
    draw("shared.b", (h,), d_x)
    for i in range(n):
        draw(f"expert{i}.W", (m, h), h)
        draw(f"expert{i}.b", (m,), h)
    draw("ew_gate.W", (n, d_c), d_c)
    draw("ew_gate.b", (n,), d_c)
    draw("edge.W", (h, h + d_c), h + d_c)
    draw("edge.b", (h,), h + d_c)
    draw("pw_gate.W", (m * n, h), h)
    draw("pw_gate.b", (m * n,), h)
    return CameParams(tensors, d_x, d_c, m)


# ---------------------------------------------------------------------------
# single-instance reference operations
# ---------------------------------------------------------------------------

def shared_forward(params: CameParams, x) -> np.ndarray:
    """Shared encoder: tanh(W x + b)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.d_x,):
        raise ValueError(f"pair feature has shape {x.shape}, expected ({params.d_x},)")
    return np.tanh(params["shared.W"] @ x + params["shared.b"])


def expert_forward(params: CameParams, y_s, index: int) -> np.ndarray:
    """Affine classifier of expert ``index`` (0-based); experts share nothing."""
    n = params.num_experts
    if not 0 <= index < n:
        raise ValueError(f"expert index {index} out of range for {n} experts")
    y_s = np.asarray(y_s, dtype=np.float64)
    return params[f"expert{index}.W"] @ y_s + params[f"expert{index}.b"]


def moe_average(expert_logits) -> np.ndarray:
    """Elementwise mean of per-expert logits."""
    y = np.asarray(expert_logits, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] < 1:
        raise ValueError(f"expected (n, m) logits with n >= 1, got shape {y.shape}")
    return y.mean(axis=0)


def expert_weights(params: CameParams, c) -> np.ndarray:
    """Context gate: softmax(W c + b), one weight per expert."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (params.d_c,):
        raise ValueError(f"context feature has shape {c.shape}, expected ({params.d_c},)")
    return stable_softmax(params["ew_gate.W"] @ c + params["ew_gate.b"])


def edge_embedding(params: CameParams, y_s, c) -> np.ndarray:
    """Edge/context embedding feeding predicate weighting: affine([y_s; c])."""
    joint = np.concatenate([np.asarray(y_s, dtype=np.float64), np.asarray(c, dtype=np.float64)])
    return params["edge.W"] @ joint + params["edge.b"]


def predicate_weights(params: CameParams, y_e, gamma: float) -> np.ndarray:
    """Per-predicate weights over experts: rows softmax(gamma * S[j]).

    gamma = 0 gives uniform rows; larger gamma sharpens the per-predicate
    preference among experts.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    y_e = np.asarray(y_e, dtype=np.float64)
    scores = params["pw_gate.W"] @ y_e + params["pw_gate.b"]
    n = params.num_experts
    return softmax_rows(gamma * scores.reshape(params.m, n), axis=1)


def came_ensemble(expert_logits, r) -> np.ndarray:
    """Weighted ensemble (1/n) sum_i r[:, i] * y_i."""
    y = np.asarray(expert_logits, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError(f"expected (n, m) logits, got shape {y.shape}")
    n, m = y.shape
    if r.shape != (m, n):
        raise ValueError(f"r has shape {r.shape}, expected ({m}, {n})")
    return (r * y.T).sum(axis=1) / n


# ---------------------------------------------------------------------------
# traces and the batched fast path
# ---------------------------------------------------------------------------

@dataclass
class ForwardTrace:
    """All intermediates of one forward pass, retained for backprop."""

    x: np.ndarray
    c: np.ndarray
    y_s: np.ndarray
    y_e: np.ndarray
    y_experts: np.ndarray   # (n, m)
    beta: np.ndarray        # (n,)
    r: np.ndarray           # (m, n)
    y_moe: np.ndarray
    y_came: np.ndarray


@dataclass
class BatchTrace:
    X: np.ndarray           # (B, d_x)
    C: np.ndarray           # (B, d_c)
    Ys: np.ndarray          # (B, h)
    Ye: np.ndarray          # (B, h)
    Y: np.ndarray           # (n, B, m)
    Beta: np.ndarray        # (B, n)
    R: np.ndarray           # (B, m, n)
    Ymoe: np.ndarray        # (B, m)
    Ycame: np.ndarray       # (B, m)


def _forward_batch(params: CameParams, config: CameConfig, X: np.ndarray, C: np.ndarray) -> BatchTrace:
    n, m, h = config.num_experts, params.m, params.hidden_dim
    bsz = X.shape[0]
    if X.shape != (bsz, params.d_x) or C.shape != (bsz, params.d_c):
        raise ValueError(
            f"batch shapes {X.shape}/{C.shape} do not match dims "
            f"({params.d_x}/{params.d_c})"
        )
    if params.num_experts != n:
        raise ValueError(f"params carry {params.num_experts} experts, config says {n}")

    Ys = np.tanh(X @ params["shared.W"].T + params["shared.b"])
    Y = np.stack(
        [Ys @ params[f"expert{i}.W"].T + params[f"expert{i}.b"] for i in range(n)]
    )
    if config.ew_enabled:
        Beta = softmax_rows(C @ params["ew_gate.W"].T + params["ew_gate.b"], axis=1)
    else:
        Beta = np.full((bsz, n), 1.0 / n)
    Ye = np.concatenate([Ys, C], axis=1) @ params["edge.W"].T + params["edge.b"]
    if config.pw_enabled:
        S = (Ye @ params["pw_gate.W"].T + params["pw_gate.b"]).reshape(bsz, m, n)
        R = softmax_rows(config.pw_temperature * S, axis=2)
    else:
        R = np.full((bsz, m, n), 1.0 / n)
    Ymoe = Y.mean(axis=0)
    Ycame = (R * Y.transpose(1, 2, 0)).sum(axis=2) / n
    return BatchTrace(X=X, C=C, Ys=Ys, Ye=Ye, Y=Y, Beta=Beta, R=R, Ymoe=Ymoe, Ycame=Ycame)


def _backward_batch(
    params: CameParams,
    config: CameConfig,
    trace: BatchTrace,
    d_experts: np.ndarray | None = None,   # (n, B, m)
    d_beta: np.ndarray | None = None,      # (B, n)
    d_came: np.ndarray | None = None,      # (B, m)
) -> dict[str, np.ndarray]:
    """Accumulate parameter gradients from any mix of upstream seeds.

    d_experts seeds land on per-expert logits, d_beta on the gate output
    (propagated through its softmax), d_came on the weighted ensemble
    (propagated through the per-predicate softmax rows when enabled).
    """
    n, m = config.num_experts, params.m
    h = params.hidden_dim
    bsz = trace.X.shape[0]
    grads = zero_grads(params)
    dY = np.zeros_like(trace.Y) if d_experts is None else d_experts.copy()
    dYs = np.zeros_like(trace.Ys)

    if d_came is not None:
        # y_came = (1/n) sum_i r[:, i] * y_i
        dY += trace.R.transpose(2, 0, 1) * d_came[None, :, :] / n
        if config.pw_enabled:
            dR = trace.Y.transpose(1, 2, 0) * d_came[:, :, None] / n
            inner = (trace.R * dR).sum(axis=2, keepdims=True)
            dS = config.pw_temperature * (trace.R * dR - trace.R * inner)
            dSflat = dS.reshape(bsz, m * n)
            grads["pw_gate.W"] += dSflat.T @ trace.Ye
            grads["pw_gate.b"] += dSflat.sum(axis=0)
            dYe = dSflat @ params["pw_gate.W"]
            joint = np.concatenate([trace.Ys, trace.C], axis=1)
            grads["edge.W"] += dYe.T @ joint
            grads["edge.b"] += dYe.sum(axis=0)
            dYs += (dYe @ params["edge.W"])[:, :h]

    if d_beta is not None and config.ew_enabled:
        inner = (trace.Beta * d_beta).sum(axis=1, keepdims=True)
        dU = trace.Beta * (d_beta - inner)
        grads["ew_gate.W"] += dU.T @ trace.C
        grads["ew_gate.b"] += dU.sum(axis=0)

    for i in range(n):
        grads[f"expert{i}.W"] += dY[i].T @ trace.Ys
        grads[f"expert{i}.b"] += dY[i].sum(axis=0)
        dYs += dY[i] @ params[f"expert{i}.W"]

    dA = (1.0 - trace.Ys**2) * dYs
    grads["shared.W"] += dA.T @ trace.X
    grads["shared.b"] += dA.sum(axis=0)
    return grads


def forward(params: CameParams, config: CameConfig, instance: RelationInstance) -> ForwardTrace:
    """Full forward pass for one instance.

    With expert weighting disabled beta is uniform 1/n; with predicate
    weighting disabled every r row is uniform 1/n. Deterministic: identical
    params and instance give a bit-identical trace.
    """
    x = np.asarray(instance.x, dtype=np.float64)
    c = np.asarray(instance.c, dtype=np.float64)
    bt = _forward_batch(params, config, x[None, :], c[None, :])
    return ForwardTrace(
        x=x,
        c=c,
        y_s=bt.Ys[0],
        y_e=bt.Ye[0],
        y_experts=bt.Y[:, 0, :],
        beta=bt.Beta[0],
        r=bt.R[0],
        y_moe=bt.Ymoe[0],
        y_came=bt.Ycame[0],
    )


def backward(
    params: CameParams,
    config: CameConfig,
    trace: ForwardTrace,
    d_experts: np.ndarray | None = None,   # (n, m)
    d_beta: np.ndarray | None = None,      # (n,)
    d_came: np.ndarray | None = None,      # (m,)
) -> dict[str, np.ndarray]:
    """Single-instance backprop; see _backward_batch for the seed semantics."""
    bt = BatchTrace(
        X=trace.x[None, :],
        C=trace.c[None, :],
        Ys=trace.y_s[None, :],
        Ye=trace.y_e[None, :],
        Y=trace.y_experts[:, None, :],
        Beta=trace.beta[None, :],
        R=trace.r[None, :, :],
        Ymoe=trace.y_moe[None, :],
        Ycame=trace.y_came[None, :],
    )
    return _backward_batch(
        params,
        config,
        bt,
        d_experts=None if d_experts is None else np.asarray(d_experts)[:, None, :],
        d_beta=None if d_beta is None else np.asarray(d_beta)[None, :],
        d_came=None if d_came is None else np.asarray(d_came)[None, :],
    )


def inference_scores(trace: ForwardTrace | BatchTrace, config: CameConfig) -> np.ndarray:
    """Scores used for prediction: the weighted ensemble when predicate
    weighting is on, otherwise the plain expert average."""
    if isinstance(trace, BatchTrace):
        return trace.Ycame if config.pw_enabled else trace.Ymoe
    return trace.y_came if config.pw_enabled else trace.y_moe


# ---------------------------------------------------------------------------
# checkpoint io
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    """Optimizer and progress state carried inside checkpoints for resume."""

    step: int
    epoch: int
    velocities: dict[str, np.ndarray]


@dataclass
class Checkpoint:
    params: CameParams
    config: CameConfig
    vocabulary: PredicateVocabulary
    train_state: TrainState | None


def save_checkpoint(
    path,
    params: CameParams,
    config: CameConfig,
    vocabulary: PredicateVocabulary,
    train_state: TrainState | None = None,
) -> None:
    """Binary checkpoint: magic, version, JSON header, float64-LE tensor data.

    Layout: 8-byte magic ``CAMECKPT``, uint32-LE version, uint64-LE header
    length, UTF-8 JSON header (sorted keys), then each tensor's C-order
    float64 little-endian bytes in manifest order (parameters, then optional
    velocity tensors). Identical inputs produce identical bytes.
    """
    manifest = [[name, list(t.shape)] for name, t in params.tensors.items()]
    header = {
        "config": config.to_dict(),
        "dims": {"d_x": params.d_x, "d_c": params.d_c, "m": params.m},
        "tensors": manifest,
        "train_state": None,
        "vocabulary": {
            "names": list(vocabulary.names),
            "train_counts": list(vocabulary.train_counts),
        },
    }
    blobs = [params.tensors[name] for name, _ in manifest]
    if train_state is not None:
        vel_manifest = [[name, list(t.shape)] for name, t in train_state.velocities.items()]
        header["train_state"] = {
            "step": train_state.step,
            "epoch": train_state.epoch,
            "velocity_tensors": vel_manifest,
        }
        blobs.extend(train_state.velocities[name] for name, _ in vel_manifest)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(np.ascontiguousarray(blob, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", raw, 12)
    header = json.loads(raw[20 : 20 + header_len].decode("utf-8"))
    offset = 20 + header_len

    def read_tensors(manifest) -> dict[str, np.ndarray]:
        nonlocal offset
        out = {}
        for name, shape in manifest:
            size = int(np.prod(shape)) if shape else 1
            nbytes = size * 8
            arr = np.frombuffer(raw, dtype="<f8", count=size, offset=offset)
            out[name] = arr.reshape(shape).astype(np.float64).copy()
            offset += nbytes
        return out

    dims = header["dims"]
    params = CameParams(read_tensors(header["tensors"]), dims["d_x"], dims["d_c"], dims["m"])
    config = CameConfig(**header["config"])
    vocab = PredicateVocabulary(
        tuple(header["vocabulary"]["names"]),
        tuple(header["vocabulary"]["train_counts"]),
    )
    state = None
    if header["train_state"] is not None:
        ts = header["train_state"]
        state = TrainState(
            step=ts["step"],
            epoch=ts["epoch"],
            velocities=read_tensors(ts["velocity_tensors"]),
        )
    return Checkpoint(params=params, config=config, vocabulary=vocab, train_state=state)
