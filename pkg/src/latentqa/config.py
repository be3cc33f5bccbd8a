"""Flat run configuration: TOML file values overridden by command-line flags."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import tomli

from .objective import TrainConfig
from .scorer import EncoderConfig
from .synth import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # encoder
    embedding_dim: int = 128
    mlp_hidden: int = 32
    decoder_hidden: int = 128
    slice_len: int = 3
    init_scale: float = 0.5
    # training
    learning_rate: float = 0.3
    warmup_fraction: float = 0.10
    epochs: int = 20
    batch_size: int = 8
    k_doc: int = 10
    k_sent: int = 9
    max_rationale_sentences: int = 4
    doc_set_size: int = 2
    contiguous: bool = False
    independent_docs: bool = False
    checkpoint_every: int = 100
    max_answer_len: int = 8
    selection: str = "answer_f1"
    # synthetic corpus
    n_train: int = 800
    n_dev: int = 200
    n_docs_per_example: int = 6
    n_distractors: int = 4
    sentences_per_doc: int = 3
    entity_vocab_size: int = 200
    bridge_fraction: float = 0.5
    n_planted: int = 0
    # io
    seed: int = 0
    out: str | None = None
    train_path: str | None = None
    dev_path: str | None = None
    eval_path: str | None = None
    checkpoint: str | None = None
    format: str = "hotpot_distractor"
    external_endpoint: str | None = None
    external_timeout: float = 10.0

    def __post_init__(self):
        if self.selection not in ("answer_f1", "answer_em", "nll"):
            raise ConfigError(f"selection must be answer_f1, answer_em or nll, got {self.selection!r}")
        if self.format not in ("hotpot_distractor", "eraser"):
            raise ConfigError(f"format must be hotpot_distractor or eraser, got {self.format!r}")
        if self.n_planted < 0:
            raise ConfigError("n_planted must be >= 0")
        try:
            self.encoder_config()
            self.train_config()
            self.synth_config(self.n_train, self.seed)
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.embedding_dim, self.mlp_hidden, self.decoder_hidden, self.slice_len,
                             self.init_scale, self.seed)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def synth_config(self, n_examples: int, seed: int) -> SynthConfig:
        return SynthConfig(n_examples, self.n_docs_per_example, self.n_distractors, self.sentences_per_doc,
                           self.entity_vocab_size, self.bridge_fraction, seed)

    def estimator_params(self) -> dict:
        enc = {k: v for k, v in dataclasses.asdict(self.encoder_config()).items() if k != "seed"}
        tr = {k: v for k, v in dataclasses.asdict(self.train_config()).items() if k != "seed"}
        return {**enc, **tr, "selection": self.selection, "random_state": self.seed}


_PATH_KEYS = ("out", "train_path", "dev_path", "eval_path", "checkpoint")


def _check_type(key: str, value: Any, annotation: str):
    base = annotation.replace(" | None", "")
    if value is None:
        if "None" in annotation:
            return None
        raise ConfigError(f"config key {key!r} may not be empty")
    if base == "bool":
        ok = isinstance(value, bool)
    elif base == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif base == "float":
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"config key {key!r} expects {base}, got {type(value).__name__} {value!r}")
    return value


def parse_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Merge a flat TOML file with ``overrides`` (flags win). Unknown keys are errors.

    Relative paths inside the file resolve against the file's directory.
    """
    known = {f.name: f.type for f in fields(RunConfig)}
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            raw = tomli.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except tomli.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from None
        for key, value in raw.items():
            if isinstance(value, dict):
                raise ConfigError(f"{path}: config is flat; {key!r} is a table")
            if key not in known:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            value = _check_type(key, value, known[key])
            if key in _PATH_KEYS and value is not None and not Path(value).is_absolute():
                value = str(path.parent / value)
            values[key] = value
    for key, value in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if value is not None:
            values[key] = _check_type(key, value, known[key])
    return RunConfig(**values)


REQUIRED = {
    "synth": ("out",),
    "train": ("out", "train_path", "dev_path"),
    "eval": ("out", "checkpoint", "eval_path"),
    "predict": ("out", "checkpoint", "eval_path"),
    "gradcheck": ("out",),
    "shortcuts": ("out", "checkpoint", "eval_path"),
}


def require(cfg: RunConfig, command: str) -> None:
    """Raise if ``command`` lacks a required key or a referenced input is missing."""
    for key in REQUIRED[command]:
        if getattr(cfg, key) is None:
            raise ConfigError(f"`{command}` needs {key!r} (config key or --{key.replace('_', '-')})")
    for key in REQUIRED[command]:
        if key != "out" and not Path(getattr(cfg, key)).exists():
            raise ConfigError(f"{key} {getattr(cfg, key)!r} does not exist")
