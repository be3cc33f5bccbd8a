"""Command-line entry point: ``latentqa {synth,train,eval,predict,gradcheck,shortcuts}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .answer import ExternalServiceError, external_generate
from .config import REQUIRED, ConfigError, RunConfig, parse_config, require
from .data import DatasetError, detokenize, dump_dataset, load_dataset
from .estimator import LatentRationaleQA
from .evaluation import dump_predictions
from .gradcheck import standard_checks
from .prompts import render_prompt
from .synth import synth_generate, synth_shortcuts
from .training import TrainingDiverged, config_hash

log = logging.getLogger("latentqa")

# flag -> config key
_FLAGS = {
    "seed": "seed",
    "out": "out",
    "k_doc": "k_doc",
    "k_sent": "k_sent",
    "max_rationale": "max_rationale_sentences",
    "external_endpoint": "external_endpoint",
    "learning_rate": "learning_rate",
    "epochs": "epochs",
    "train": "train_path",
    "dev": "dev_path",
    "data": "eval_path",
    "checkpoint": "checkpoint",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentqa", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat TOML config file")
    common.add_argument("--out", help="output directory (every file is written below it)")
    common.add_argument("--seed", type=int)
    common.add_argument("--independent-docs", action="store_true", default=None,
                        help="score document sets as products of independent document scores")
    common.add_argument("--k-doc", type=int)
    common.add_argument("--k-sent", type=int)
    common.add_argument("--max-rationale", type=int, help="maximum rationale sentences per document")
    common.add_argument("--contiguous", action="store_true", default=None,
                        help="only allow contiguous sentence rationales")
    common.add_argument("--external-endpoint", help="answer generation service URL (predict only)")
    common.add_argument("--learning-rate", type=float)
    common.add_argument("--epochs", type=int)
    common.add_argument("--train", help="training dataset file")
    common.add_argument("--dev", help="development dataset file")
    common.add_argument("--data", help="dataset file to evaluate or predict on")
    common.add_argument("--checkpoint", help="model checkpoint file")
    helps = {
        "synth": "write synthetic train/dev corpora",
        "train": "train a model and keep the best checkpoint",
        "eval": "write a metrics report",
        "predict": "write one prediction record per example",
        "gradcheck": "compare gradients with central differences",
        "shortcuts": "list examples answered right from a wrong rationale",
    }
    for name in REQUIRED:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def config_from_args(args) -> RunConfig:
    overrides = {key: getattr(args, flag) for flag, key in _FLAGS.items()}
    overrides["independent_docs"] = args.independent_docs
    overrides["contiguous"] = args.contiguous
    for flag in ("out", "train", "dev", "data", "checkpoint"):
        if getattr(args, flag) is not None:
            overrides[_FLAGS[flag]] = str(Path(getattr(args, flag)).resolve())
    return parse_config(args.config, overrides)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load(cfg: RunConfig, path: str):
    return load_dataset(path, cfg.format)


def _estimator(cfg: RunConfig) -> LatentRationaleQA:
    params = cfg.estimator_params()
    enc_keys = ("embedding_dim", "mlp_hidden", "decoder_hidden", "slice_len", "init_scale")
    return LatentRationaleQA.from_checkpoint(cfg.checkpoint, **{k: v for k, v in params.items() if k not in enc_keys})


def cmd_synth(cfg: RunConfig, out: Path) -> None:
    train = synth_generate(cfg.synth_config(cfg.n_train, cfg.seed), "train")
    dev = synth_generate(cfg.synth_config(cfg.n_dev, cfg.seed + 1), "dev")
    out.mkdir(parents=True, exist_ok=True)
    dump_dataset(train, out / "train.json")
    dump_dataset(dev, out / "dev.json")
    for tag in ("bridge", "comparison"):
        dump_dataset([ex for ex in dev if ex.reasoning_tag == tag], out / f"dev_{tag}.json")
    if cfg.n_planted:
        dump_dataset(synth_shortcuts(cfg.synth_config(cfg.n_planted, cfg.seed + 2), cfg.n_planted),
                     out / "planted.json")


def cmd_train(cfg: RunConfig, out: Path) -> None:
    train, dev = _load(cfg, cfg.train_path), _load(cfg, cfg.dev_path)
    est = LatentRationaleQA(**cfg.estimator_params())
    est.fit(train, dev=dev, out_dir=out / "checkpoints")
    est.save(out / "best.ckpt")
    history = est.history_.to_dict()
    history["best_step"] = est.best_step_
    history["config_hash"] = config_hash(cfg)
    _write(out / "history.json", _json(history))


def cmd_eval(cfg: RunConfig, out: Path) -> None:
    report = _estimator(cfg).evaluate(_load(cfg, cfg.eval_path))
    _write(out / "metrics.json", report.to_json())


def cmd_predict(cfg: RunConfig, out: Path) -> None:
    est = _estimator(cfg)
    examples = _load(cfg, cfg.eval_path)
    preds = est.predict(examples)
    text = dump_predictions(preds)
    if cfg.external_endpoint:
        lines = []
        for ex, p in zip(examples, preds):
            sents = [ex.documents[i].sentences[j] for i, j in sorted(p.sentences)]
            prompt, _ = render_prompt(ex.task, detokenize(ex.question), " ".join(detokenize(s) for s in sents),
                                      [(detokenize(t), ok) for t, ok in ex.answer.choices] or None)
            gen = external_generate(cfg.external_endpoint, prompt, cfg.max_answer_len, cfg.external_timeout)
            rec = p.to_record()
            rec["answer"] = gen.text
            rec["logprobs"]["answer"] = sum(gen.token_logprobs) if gen.trainable else None
            rec["answer_source"] = "external"
            lines.append(json.dumps(rec, sort_keys=True) + "\n")
        text = "".join(lines)
    _write(out / "predictions.jsonl", text)


def cmd_gradcheck(cfg: RunConfig, out: Path) -> int:
    results = standard_checks(cfg.seed)
    report = {name: r.to_dict() for name, r in results.items()}
    report["max_rel_error"] = max(r.max_rel_error for r in results.values())
    report["passed"] = all(r.passed for r in results.values())
    _write(out / "gradcheck.json", _json(report))
    print(f"max relative error {report['max_rel_error']:.3e} ({'pass' if report['passed'] else 'FAIL'})")
    return 0 if report["passed"] else 1


def cmd_shortcuts(cfg: RunConfig, out: Path) -> None:
    _write(out / "shortcuts.json", _estimator(cfg).find_shortcuts(_load(cfg, cfg.eval_path)).to_json())


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "shortcuts": cmd_shortcuts,
}


def run(command: str, cfg: RunConfig) -> int:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    require(cfg, command)
    status = COMMANDS[command](cfg, Path(cfg.out))
    return 0 if status is None else status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return run(args.command, cfg)
    except ConfigError as err:
        print(f"latentqa: config error: {err}", file=sys.stderr)
        return 2
    except (DatasetError, ExternalServiceError, TrainingDiverged, ValueError, OSError, KeyError) as err:
        print(f"latentqa {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
