"""Inference, rationale and answer metrics, per-tag reports and the shortcut filter."""

from __future__ import annotations

import json
import logging
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence


from .answer import AnswerTargets, _decoder_forward, answer_forward, answer_targets, greedy_decode, predict_choices
from .data import BQA, EQA, Example, detokenize
from .objective import EncodedExample, TrainConfig, _doc_forward, _sent_forward
from .scorer import ParamStore, doc_set_distribution
from .sets import SetDistribution, SubsetSpace, top_k, top_k_product

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Prediction:
    example_id: str
    doc_set: tuple[int, ...]
    rationale: tuple[tuple[int, ...], ...]  # one subset per member of doc_set
    answer_tokens: tuple[str, ...] = ()
    choice_picks: tuple[int, ...] = ()  # BQA: one index; MCQ: 0 = "correct" per choice
    doc_logprob: float = 0.0
    rationale_logprob: float = 0.0
    answer_logprob: float = 0.0
    truncated: bool = False

    @property
    def sentences(self) -> frozenset[tuple[int, int]]:
        return frozenset((i, j) for i, sub in zip(self.doc_set, self.rationale) for j in sub)

    def to_record(self) -> dict:
        return {
            "id": self.example_id,
            "doc_set": list(self.doc_set),
            "rationale": [[i, j] for i, j in sorted(self.sentences)],
            "answer": detokenize(self.answer_tokens),
            "choice_picks": list(self.choice_picks),
            "logprobs": {
                "doc": round(self.doc_logprob, 10),
                "rationale": round(self.rationale_logprob, 10),
                "answer": round(self.answer_logprob, 10),
            },
            "truncated": self.truncated,
        }


def predict(params: ParamStore, example: Example | EncodedExample, cfg: TrainConfig) -> Prediction:
    """Best document set, then the best rationale within it, then the answer."""
    enc = example if isinstance(example, EncodedExample) else EncodedExample(params, example, cfg)
    ex = enc.example
    doc = _doc_forward(params, enc, cfg)
    best_d = top_k(doc.dist, 1)[0]
    dists = [_sent_forward(params, enc, i).dist for i in best_d.structure]
    best_z = top_k_product(dists, 1)[0]
    d, z = best_d.structure, best_z.structure
    sents = enc.rationale_sentences(d, z)
    bag = enc.context_bag(d, z)
    toks, picks, truncated = (), (), False
    if ex.task == EQA:
        out, truncated = greedy_decode(params, ex.question, sents, cfg.max_answer_len, EQA)
        toks = tuple(out)
        ids = tuple(params.vocab.encode(toks)) + (params.vocab.eos,)
        ans_lp = float(_decoder_forward(params, [bag], [(0, ids)]).seq_lp[0])
    else:
        picks = tuple(predict_choices(params, ex.question, sents, ex.answer))
        groups = answer_targets(params, ex.answer).groups
        chosen = AnswerTargets(tuple((opts, k) for (opts, _), k in zip(groups, picks)))
        ans_lp = float(answer_forward(params, [bag], chosen).logp[0])
    return Prediction(ex.id, d, z, toks, picks, best_d.log_prob, best_z.log_prob, ans_lp, truncated)


# ---------------------------------------------------------------------------
# metrics


def set_f1(pred: Iterable, gold: Iterable) -> float:
    p, g = set(pred), set(gold)
    if not p and not g:
        return 1.0
    inter = len(p & g)
    if inter == 0:
        return 0.0
    prec, rec = inter / len(p), inter / len(g)
    return 2 * prec * rec / (prec + rec)


def sentence_f1(pred, gold) -> float:
    """Set F1 over ``(doc, sentence)`` pairs."""
    return set_f1(pred, gold)


def document_f1(pred, gold) -> float:
    return set_f1(pred, gold)


_ARTICLES = {"a", "an", "the"}
_PUNCT = set(string.punctuation)


def normalize_answer(tokens: str | Sequence[str]) -> list[str]:
    """Lowercase, drop punctuation and the articles a/an/the."""
    if isinstance(tokens, str):
        tokens = tokens.split()
    out = []
    for t in tokens:
        t = "".join(ch for ch in t.lower() if ch not in _PUNCT)
        for w in t.split():
            if w not in _ARTICLES:
                out.append(w)
    return out


def answer_token_f1_em(pred: str | Sequence[str], gold: str | Sequence[str]) -> tuple[float, int]:
    """Bag-of-tokens F1 (with multiplicity) and exact match after normalization."""
    p, g = normalize_answer(pred), normalize_answer(gold)
    em = int(p == g)
    if not p or not g:
        return float(em), em
    common = sum((Counter(p) & Counter(g)).values())
    if common == 0:
        return 0.0, em
    prec, rec = common / len(p), common / len(g)
    return 2 * prec * rec / (prec + rec), em


def answer_scores(pred: Prediction, ex: Example) -> tuple[float, int]:
    if ex.task == EQA:
        return answer_token_f1_em(pred.answer_tokens, ex.answer.text)
    if ex.task == BQA:
        gold = 0 if ex.answer.label == "supported" else 1
        em = int(pred.choice_picks == (gold,))
        return float(em), em
    # MCQ: set F1 over choices predicted correct vs truly correct
    picked = {k for k, p in enumerate(pred.choice_picks) if p == 0}
    truth = {k for k, (_, ok) in enumerate(ex.answer.choices) if ok}
    return set_f1(picked, truth), int(picked == truth)


@dataclass
class GroupMetrics:
    count: int = 0
    answer_f1: float = 0.0
    answer_em: float = 0.0
    sentence_f1: float = 0.0
    doc_f1: float = 0.0

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "answer_f1": round(self.answer_f1, 10),
            "answer_em": round(self.answer_em, 10),
            "sentence_f1": round(self.sentence_f1, 10),
            "doc_f1": round(self.doc_f1, 10),
        }


@dataclass
class MetricsReport:
    overall: GroupMetrics
    by_tag: dict[str, GroupMetrics] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"overall": self.overall.to_dict(),
                "by_tag": {k: self.by_tag[k].to_dict() for k in sorted(self.by_tag)}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_FIELDS = ("answer_f1", "answer_em", "sentence_f1", "doc_f1")


def _aggregate(rows: Sequence[dict]) -> GroupMetrics:
    g = GroupMetrics(count=len(rows))
    for f in _FIELDS:
        # fsum keeps the mean independent of example order
        setattr(g, f, math.fsum(r[f] for r in rows) / len(rows) if rows else 0.0)
    return g


def score_prediction(pred: Prediction, ex: Example) -> dict:
    f1, em = answer_scores(pred, ex)
    gold_s = ex.gold_rationale if ex.gold_rationale is not None else frozenset()
    gold_d = ex.gold_docs if ex.gold_docs is not None else frozenset()
    return {
        "answer_f1": f1,
        "answer_em": float(em),
        "sentence_f1": sentence_f1(pred.sentences, gold_s),
        "doc_f1": document_f1(pred.doc_set, gold_d),
    }


def report_from_predictions(preds: Sequence[Prediction], examples: Sequence[Example]) -> MetricsReport:
    if not examples:
        raise ValueError("cannot evaluate an empty example list")
    rows = [score_prediction(p, ex) for p, ex in zip(preds, examples)]
    groups: dict[str, list[dict]] = {}
    for r, ex in zip(rows, examples):
        if ex.reasoning_tag:
            groups.setdefault(ex.reasoning_tag, []).append(r)
    return MetricsReport(_aggregate(rows), {k: _aggregate(v) for k, v in groups.items()})


def evaluate(params: ParamStore, examples: Sequence[Example], cfg: TrainConfig,
             return_predictions: bool = False):
    preds = [predict(params, ex, cfg) for ex in examples]
    report = report_from_predictions(preds, examples)
    return (report, preds) if return_predictions else report


def dump_predictions(preds: Sequence[Prediction]) -> str:
    return "".join(json.dumps(p.to_record(), sort_keys=True) + "\n" for p in preds)


def indep_doc_distribution(params: ParamStore, question, documents, set_size: int,
                           slice_len: int | None = None) -> SetDistribution:
    """Sets scored as the sum of singleton scores, i.e. a renormalized product
    of per-document probabilities."""
    if not 1 <= set_size <= len(documents):
        raise ValueError(f"set_size {set_size} must lie in [1, {len(documents)}]")
    space = SubsetSpace(len(documents), set_size, set_size)
    sl = params.config.slice_len if slice_len is None else slice_len
    return doc_set_distribution(params, question, documents, space, sl, independent=True)


# ---------------------------------------------------------------------------
# shortcut filter


@dataclass
class ShortcutReport:
    flagged: list[str]
    skipped: int
    checked: int

    def to_json(self) -> str:
        return json.dumps({"flagged": self.flagged, "skipped": self.skipped, "checked": self.checked},
                          indent=2, sort_keys=True) + "\n"


def is_shortcut(pred: Prediction, ex: Example) -> bool:
    """Right answer, wrong rationale, exactly one predicted document is gold."""
    _, em = answer_scores(pred, ex)
    return bool(em) and pred.sentences != ex.gold_rationale and len(set(pred.doc_set) & ex.gold_docs) == 1


def find_shortcuts(params: ParamStore, examples: Sequence[Example], cfg: TrainConfig) -> ShortcutReport:
    flagged, skipped, checked = [], 0, 0
    for ex in examples:
        if ex.gold_docs is None or ex.gold_rationale is None:
            skipped += 1
            continue
        checked += 1
        if is_shortcut(predict(params, ex, cfg), ex):
            flagged.append(ex.id)
    if skipped:
        log.warning("find_shortcuts: skipped %d example(s) without gold annotations", skipped)
    return ShortcutReport(flagged, skipped, checked)
