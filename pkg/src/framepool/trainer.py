"""Training harness: epoch-budgeted loops, periodic GAP evaluation, phases,
and checksummed checkpoints.

Epoch accounting is literal: after s steps with batch size b on n videos the
epoch fraction is s*b/n, and the loop runs while that fraction is below the
budget, so a run always stops within one batch of its budget.  Shuffling
draws a fresh full permutation per epoch from a counter-based generator keyed
by (seed, epoch index): any step of any epoch can be reproduced without
replaying the steps before it, which is what makes checkpoint resume exact.

Checkpoint container ("VPCK"): u32 version, length-prefixed JSON metadata,
then length-prefixed named float arrays, then CRC-32 over everything before
it.  The CRC is verified before any parsing.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .featureio import VideoRecord
from .losses import HuberParams, multilabel_loss
from .metrics import GapConfig, gap
from .netmodel import Model, ModelConfig, init_model, model_backward, model_forward, parameter_arrays
from .optim import AdamState, adam_step, init_adam_state, sgd_step
from .schedule import ScheduleParams, SLOW_ANNEAL, lr_at

CHECKPOINT_MAGIC = b"VPCK"
CHECKPOINT_VERSION = 1
OPTIMIZER_KINDS = ("adam", "sgd")

# curve rows are (epoch, split, gap, loss, lr) with split in {train, val}
CurveRow = tuple[float, str, float, float, float]


class CheckpointFormatError(ValueError):
    """Corrupted, truncated, or wrong-version checkpoint bytes."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int
    epoch_budget: float = 2.5
    eval_every: float = 0.25
    seed: int = 0
    schedule: ScheduleParams = SLOW_ANNEAL
    loss: HuberParams = HuberParams()
    optimizer: str = "adam"
    gap_top_n: int = 20

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.epoch_budget > 0:
            raise ValueError(f"epoch_budget must be > 0, got {self.epoch_budget}")
        if not self.eval_every > 0:
            raise ValueError(f"eval_every must be > 0, got {self.eval_every}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.optimizer not in OPTIMIZER_KINDS:
            raise ValueError(f"optimizer must be one of {OPTIMIZER_KINDS}")
        self.schedule.validate()
        self.loss.validate()


@dataclass
class PhasePlan:
    phases: list[tuple[Sequence[VideoRecord], float]]  # (dataset, epoch budget)

    def validate(self) -> None:
        if not self.phases:
            raise ValueError("phase plan is empty")
        for i, (records, budget) in enumerate(self.phases):
            if len(records) == 0:
                raise ValueError(f"phase {i}: empty dataset")
            if not budget > 0:
                raise ValueError(f"phase {i}: epoch budget must be > 0, got {budget}")


@dataclass
class TrainResult:
    model: Model
    curve: list[CurveRow]
    opt_state: AdamState | None
    global_step: int
    epoch_fraction: float


def steps_per_epoch(num_videos: int, batch_size: int) -> int:
    if num_videos < 1 or batch_size < 1:
        raise ValueError("num_videos and batch_size must both be >= 1")
    return -(-num_videos // batch_size)


def epoch_permutation(seed: int, epoch: int, num_videos: int) -> np.ndarray:
    """Full shuffle for one epoch, addressable without replaying prior epochs."""
    key = np.array([seed, epoch], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.permutation(num_videos)


def _targets(records: Sequence[VideoRecord], vocab_size: int) -> np.ndarray:
    out = np.zeros((len(records), vocab_size))
    for i, record in enumerate(records):
        out[i, record.labels] = 1.0
    return out


def dedupe_by_id(records: Sequence[VideoRecord]) -> list[VideoRecord]:
    # duplicated training sets repeat ids; evaluation scores each video once
    seen = set()
    out = []
    for record in records:
        if record.id not in seen:
            seen.add(record.id)
            out.append(record)
    return out


def evaluate(records: Sequence[VideoRecord], model: Model, loss_params: HuberParams,
             batch_size: int = 128, top_n: int = 20) -> tuple[float, float]:
    """(GAP, mean loss) over the unique videos of a record list."""
    records = dedupe_by_id(records)
    if not records:
        raise ValueError("nothing to evaluate")
    vocab = model.config.vocab_size
    all_probs = []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        probs, _ = model_forward([r.frames for r in chunk], model)
        all_probs.append(probs)
    probs = np.vstack(all_probs)
    loss, _ = multilabel_loss(probs, _targets(records, vocab), loss_params)
    predictions = [(r.id, list(zip(range(vocab), row))) for r, row in zip(records, probs)]
    truth = {r.id: r.labels for r in records}
    return gap(predictions, truth, GapConfig(n=top_n)), loss


def train(records: Sequence[VideoRecord], val_records: Sequence[VideoRecord],
          model: Model, config: TrainConfig, *, opt_state: AdamState | None = None,
          start_step: int = 0, epoch_offset: float = 0.0) -> TrainResult:
    """Budgeted training loop; optional state/step arguments support resume
    and phase chaining without changing the step-for-step behavior."""
    config.validate()
    n = len(records)
    if n == 0:
        raise ValueError("empty training dataset")
    if len(val_records) == 0:
        raise ValueError("empty validation dataset")
    width = records[0].frames.shape[1]
    if width != model.config.feature_dim:
        raise ValueError(
            f"dataset feature width {width} != model feature_dim {model.config.feature_dim}"
        )

    b = config.batch_size
    spe = steps_per_epoch(n, b)
    if config.optimizer == "adam" and opt_state is None:
        opt_state = init_adam_state(model)

    def fraction(steps: int) -> float:
        return steps * b / n

    step = start_step
    curve: list[CurveRow] = []
    next_eval = config.eval_every * (math.floor(fraction(step) / config.eval_every) + 1)
    last_eval_step = step

    def emit_eval() -> None:
        nonlocal last_eval_step
        f = fraction(step)
        lr = lr_at(f, config.schedule)
        train_gap, train_loss = evaluate(records, model, config.loss,
                                         batch_size=max(b, 128), top_n=config.gap_top_n)
        val_gap, val_loss = evaluate(val_records, model, config.loss,
                                     batch_size=max(b, 128), top_n=config.gap_top_n)
        curve.append((epoch_offset + f, "train", train_gap, train_loss, lr))
        curve.append((epoch_offset + f, "val", val_gap, val_loss, lr))
        last_eval_step = step

    while fraction(step) < config.epoch_budget:
        epoch = step // spe
        perm = epoch_permutation(config.seed, epoch, n)
        for chunk_start in range((step % spe) * b, n, b):
            if fraction(step) >= config.epoch_budget:
                break
            idx = perm[chunk_start:chunk_start + b]
            batch = [records[i].frames for i in idx]
            targets = _targets([records[i] for i in idx], model.config.vocab_size)

            lr = lr_at(fraction(step), config.schedule)
            probs, cache = model_forward(batch, model)
            loss, dprobs = multilabel_loss(probs, targets, config.loss)
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at step {step}, epoch {fraction(step):.4f}"
                )
            grads = model_backward(dprobs, cache)
            if config.optimizer == "adam":
                adam_step(model, grads, opt_state, lr)
            else:
                sgd_step(model, grads, lr)
            step += 1

            f = fraction(step)
            if f >= next_eval:
                emit_eval()
                while next_eval <= f:
                    next_eval += config.eval_every

    if step > last_eval_step or not curve:
        emit_eval()
    return TrainResult(model=model, curve=curve, opt_state=opt_state,
                       global_step=step, epoch_fraction=fraction(step))


def train_phases(plan: PhasePlan, val_records: Sequence[VideoRecord], model: Model,
                 config: TrainConfig) -> TrainResult:
    """Sequential phases sharing model and optimizer state.

    Each phase restarts step accounting and the lr schedule on its own
    dataset; curve epochs are offset by the fractions already trained so the
    concatenated curve plots as one timeline.
    """
    plan.validate()
    config.validate()
    opt_state = init_adam_state(model) if config.optimizer == "adam" else None
    offset = 0.0
    curve: list[CurveRow] = []
    result = None
    for phase_records, budget in plan.phases:
        phase_config = TrainConfig(
            batch_size=config.batch_size, epoch_budget=budget,
            eval_every=config.eval_every, seed=config.seed, schedule=config.schedule,
            loss=config.loss, optimizer=config.optimizer, gap_top_n=config.gap_top_n,
        )
        result = train(phase_records, val_records, model, phase_config,
                       opt_state=opt_state, epoch_offset=offset)
        curve.extend(result.curve)
        offset += result.epoch_fraction
    return TrainResult(model=model, curve=curve, opt_state=opt_state,
                       global_step=result.global_step, epoch_fraction=offset)


def curve_csv(curve: Sequence[CurveRow]) -> str:
    lines = ["epoch,split,gap,loss,lr"]
    for epoch, split, gap_value, loss, lr in curve:
        lines.append(f"{epoch:.6f},{split},{gap_value:.8f},{loss:.8f},{lr:.10g}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    meta: dict
    arrays: list[tuple[str, np.ndarray]] = field(default_factory=list)


def make_checkpoint(model: Model, opt_state: AdamState | None, global_step: int,
                    epoch_fraction: float, config: TrainConfig) -> Checkpoint:
    meta = {
        "model_config": asdict(model.config),
        "optimizer": {"kind": config.optimizer},
        "global_step": global_step,
        "epoch_fraction": epoch_fraction,
        "rng": {"scheme": "philox(seed, epoch)", "seed": config.seed},
    }
    arrays = list(parameter_arrays(model))
    if opt_state is not None:
        meta["optimizer"].update({"step": opt_state.step, "beta1": opt_state.beta1,
                                  "beta2": opt_state.beta2, "eps": opt_state.eps})
        arrays += [(f"adam.m.{k}", v) for k, v in opt_state.m.items()]
        arrays += [(f"adam.v.{k}", v) for k, v in opt_state.v.items()]
    return Checkpoint(meta=meta, arrays=arrays)


def restore_checkpoint(cp: Checkpoint) -> tuple[Model, AdamState | None, int, float]:
    """(model, optimizer state, global step, epoch fraction) from a checkpoint."""
    config = ModelConfig(**cp.meta["model_config"])
    model = init_model(config, seed=0)
    values = dict(cp.arrays)
    for name, arr in parameter_arrays(model):
        arr[:] = values[name]
    opt = cp.meta["optimizer"]
    state = None
    if opt["kind"] == "adam":
        state = AdamState(beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"],
                          step=opt["step"])
        for name, value in values.items():
            if name.startswith("adam.m."):
                state.m[name[len("adam.m."):]] = value.copy()
            elif name.startswith("adam.v."):
                state.v[name[len("adam.v."):]] = value.copy()
    return model, state, cp.meta["global_step"], cp.meta["epoch_fraction"]


_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def checkpoint_bytes(cp: Checkpoint) -> bytes:
    meta_blob = json.dumps(cp.meta, sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
             struct.pack("<I", len(meta_blob)), meta_blob,
             struct.pack("<I", len(cp.arrays))]
    for name, arr in cp.arrays:
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            raise ValueError(f"array {name}: unsupported dtype {arr.dtype}")
        name_blob = name.encode()
        parts.append(struct.pack("<H", len(name_blob)))
        parts.append(name_blob)
        parts.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def checkpoint_from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < 16:
        raise CheckpointFormatError("file too short to be a checkpoint")
    body, crc_stored = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) != crc_stored:  # checked before any parsing
        raise CheckpointFormatError("checksum mismatch, file corrupted or truncated")
    if body[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic {body[:4]!r}")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", body, 8)
    offset = 12
    meta = json.loads(body[offset:offset + meta_len].decode())
    offset += meta_len
    (n_arrays,) = struct.unpack_from("<I", body, offset)
    offset += 4
    arrays = []
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<H", body, offset)
        offset += 2
        name = body[offset:offset + name_len].decode()
        offset += name_len
        code, ndim = struct.unpack_from("<BB", body, offset)
        offset += 2
        if code not in _CODE_DTYPES:
            raise CheckpointFormatError(f"array {name}: unknown dtype code {code}")
        shape = struct.unpack_from(f"<{ndim}I", body, offset)
        offset += 4 * ndim
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(body[offset:offset + nbytes], dtype=dtype).reshape(shape)
        offset += nbytes
        arrays.append((name, arr.astype(arr.dtype.newbyteorder("="))))
    if offset != len(body):
        raise CheckpointFormatError("trailing bytes after last array")
    return Checkpoint(meta=meta, arrays=arrays)


def save_checkpoint(path: str, cp: Checkpoint) -> None:
    with open(path, "wb") as sink:
        sink.write(checkpoint_bytes(cp))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as source:
        return checkpoint_from_bytes(source.read())
