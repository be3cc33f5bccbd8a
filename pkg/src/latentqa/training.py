"""SGD training loop, checkpoint files and checkpoint selection."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Example, Vocabulary
from .objective import EncodedExample, TrainConfig, approx_marginal_ll, compute_gradients
from .scorer import EncoderConfig, ParamStore

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"LQACKPT\x00"
CHECKPOINT_VERSION = 1


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 over the first ``warmup_fraction`` of steps, then constant."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = cfg.warmup_fraction * total_steps
    if warm <= 0 or step >= warm:
        return cfg.learning_rate
    return cfg.learning_rate * step / warm


def config_hash(*configs) -> str:
    blob = json.dumps([asdict(c) for c in configs], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Checkpoint:
    step: int
    arrays: dict[str, np.ndarray]
    metrics: dict[str, float] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def params(self, template: ParamStore) -> ParamStore:
        return ParamStore({k: a.copy() for k, a in self.arrays.items()}, template.vocab, template.config)


@dataclass
class TrainHistory:
    steps: list[int] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "objectives": [round(float(x), 10) for x in self.objectives],
            "checkpoints": [{"step": c.step, **c.metrics} for c in self.checkpoints],
        }


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_good: Checkpoint | None):
        super().__init__(message)
        self.last_good = last_good


def select_checkpoint(history: TrainHistory | Sequence[dict], criterion: str = "answer_f1") -> int:
    """Index of the best checkpoint: max F1/EM or min NLL, earliest on ties."""
    rows = history.checkpoints if isinstance(history, TrainHistory) else history
    if not rows:
        raise ValueError("no checkpoints to select from")
    if criterion not in ("answer_f1", "answer_em", "nll"):
        raise ValueError(f"unknown selection criterion {criterion!r}")
    vals = [(r.metrics if isinstance(r, Checkpoint) else r)[criterion] for r in rows]
    sign = 1.0 if criterion == "nll" else -1.0
    return min(range(len(vals)), key=lambda i: (sign * vals[i], i))


# ---------------------------------------------------------------------------
# checkpoint files
#
# layout: magic, u32 header length, UTF-8 JSON header, then every array as
# little-endian float32 in header order.


def save_checkpoint(path: str | Path, params: ParamStore, manifest: dict | None = None) -> None:
    names = list(params.arrays)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "manifest": manifest or {},
        "encoder": asdict(params.config),
        "vocab": params.vocab.to_list(),
        "arrays": [{"name": k, "shape": list(params.arrays[k].shape)} for k in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(params.arrays[k], dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    off = 12 + hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arrays[spec["name"]] = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32)
        off += 4 * count
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    params = ParamStore(arrays, Vocabulary.from_list(header["vocab"]), EncoderConfig(**header["encoder"]))
    return params, header["manifest"]


# ---------------------------------------------------------------------------
# training


def dev_metrics(params: ParamStore, dev: Sequence[Example], cfg: TrainConfig) -> dict[str, float]:
    from .evaluation import evaluate

    report = evaluate(params, dev, cfg)
    nll = -np.mean([approx_marginal_ll(params, ex, cfg) for ex in dev])
    return {
        "answer_f1": round(report.overall.answer_f1, 10),
        "answer_em": round(report.overall.answer_em, 10),
        "nll": round(float(nll), 10),
    }


def train(params: ParamStore, train_set: Sequence[Example], dev_set: Sequence[Example], cfg: TrainConfig,
          out_dir: str | Path | None = None, selection: str = "answer_f1"):
    """Plain SGD on the mean negative approximate marginal log-likelihood.

    Returns ``(final_params, history, best_checkpoint)``. Parameters are kept
    in their storage dtype; updates are computed in float64.
    """
    if not train_set or not dev_set:
        raise ValueError("train and dev sets must be non-empty")
    params = params.copy()
    encoded = [EncodedExample(params, ex, cfg) for ex in train_set]
    rng = np.random.default_rng(cfg.seed)
    per_epoch = -(-len(encoded) // cfg.batch_size)
    total = cfg.epochs * per_epoch
    history = TrainHistory()
    manifest_base = {"config_hash": config_hash(params.config, cfg), "seed": cfg.seed}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def checkpoint(step):
        metrics = dev_metrics(params, dev_set, cfg)
        ck = Checkpoint(step, {k: a.copy() for k, a in params.arrays.items()}, metrics,
                        {**manifest_base, "step": step, "metrics": metrics})
        history.checkpoints.append(ck)
        if out is not None:
            save_checkpoint(out / f"step{step:07d}.ckpt", params, ck.manifest)
        log.info("step %d dev %s", step, metrics)
        return ck

    last_good = None
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(encoded))
        for b in range(0, len(order), cfg.batch_size):
            batch = [encoded[i] for i in order[b:b + cfg.batch_size]]
            try:
                obj = compute_gradients(params, batch, cfg)
            except (FloatingPointError, ValueError) as err:
                raise TrainingDiverged(f"step {step}: {err}", last_good) from err
            if not np.isfinite(obj):
                raise TrainingDiverged(f"step {step}: objective is {obj}", last_good)
            lr = lr_at(step, total, cfg)
            for k, a in params.arrays.items():
                params.arrays[k] = (a - lr * params.grads[k]).astype(a.dtype)
            bad = [k for k, a in params.arrays.items() if not np.isfinite(a).all()]
            if bad:
                raise TrainingDiverged(f"step {step}: non-finite parameters in {', '.join(bad)}", last_good)
            step += 1
            history.steps.append(step)
            history.objectives.append(obj)
            if step % cfg.checkpoint_every == 0:
                last_good = checkpoint(step)
    if not history.checkpoints or history.checkpoints[-1].step != step:
        checkpoint(step)
    best = history.checkpoints[select_checkpoint(history, selection)]
    return params, history, best
