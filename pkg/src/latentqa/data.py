"""Corpus types, tokenization, vocabulary and dataset (de)serialization."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BQA, MCQ, EQA = "bqa", "mcq", "eqa"
TASKS = (BQA, MCQ, EQA)
BRIDGE, COMPARISON = "bridge", "comparison"
SUPPORTED, REFUTED = "supported", "refuted"

_TOKEN_RE = re.compile(r"\[[A-Z]+\]|\w+|[^\w\s]")


class DatasetError(ValueError):
    """A record could not be turned into an :class:`Example`."""


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it into words and punctuation marks.

    Bracketed upper-case markers such as ``[SEP]`` are kept as single tokens.

    >>> tokenize("March 19, 2017")
    ['march', '19', ',', '2017']
    """
    out = []
    for tok in _TOKEN_RE.findall(text):
        out.append(tok if tok.startswith("[") and len(tok) > 2 else tok.lower())
    return out


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


@dataclass(frozen=True)
class Document:
    title: str
    sentences: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.sentences:
            raise DatasetError(f"document {self.title!r} has no sentences")
        for j, sent in enumerate(self.sentences):
            if not sent:
                raise DatasetError(f"document {self.title!r} sentence {j} is empty")

    @classmethod
    def from_text(cls, title: str, sentences: Iterable[str]) -> "Document":
        return cls(title, tuple(tuple(tokenize(s)) for s in sentences))

    def __len__(self):
        return len(self.sentences)


@dataclass(frozen=True)
class AnswerSpec:
    """Task-dependent answer.

    ``label`` is used by BQA, ``choices`` (text tokens, truth flag) by MCQ and
    ``text`` by EQA.
    """

    task: str
    label: str | None = None
    choices: tuple[tuple[tuple[str, ...], bool], ...] = ()
    text: tuple[str, ...] = ()

    def __post_init__(self):
        if self.task not in TASKS:
            raise DatasetError(f"unknown task {self.task!r}")
        if self.task == BQA and self.label not in (SUPPORTED, REFUTED):
            raise DatasetError(f"BQA label must be supported/refuted, got {self.label!r}")
        if self.task == MCQ and len(self.choices) < 2:
            raise DatasetError("MCQ answer needs at least two choices")
        if self.task == EQA and not self.text:
            raise DatasetError("EQA answer text is empty")


@dataclass(frozen=True)
class Example:
    id: str
    question: tuple[str, ...]
    documents: tuple[Document, ...]
    answer: AnswerSpec
    gold_docs: frozenset[int] | None = None
    gold_rationale: frozenset[tuple[int, int]] | None = None
    reasoning_tag: str | None = None
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.question:
            raise DatasetError(f"{self.id}: question is empty")
        if not self.documents:
            raise DatasetError(f"{self.id}: no documents")
        n = len(self.documents)
        if self.gold_docs is not None:
            for i in self.gold_docs:
                if not 0 <= i < n:
                    raise DatasetError(f"{self.id}: gold_docs index {i} out of range [0, {n})")
        if self.gold_rationale is not None:
            for i, j in self.gold_rationale:
                if not 0 <= i < n:
                    raise DatasetError(f"{self.id}: gold_rationale document {i} out of range")
                if not 0 <= j < len(self.documents[i]):
                    raise DatasetError(
                        f"{self.id}: gold_rationale sentence {j} out of range for document {i}"
                    )
                if self.gold_docs is not None and i not in self.gold_docs:
                    raise DatasetError(f"{self.id}: gold_rationale uses non-gold document {i}")

    @property
    def task(self) -> str:
        return self.answer.task


# ---------------------------------------------------------------------------
# vocabulary

PAD, UNK, BOS, EOS, SEP = "[PAD]", "[UNK]", "[BOS]", "[EOS]", "[SEP]"
SPECIALS = (PAD, UNK, BOS, EOS, SEP)


class Vocabulary:
    """Closed token <-> id mapping. Unknown input tokens map to ``[UNK]``."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        for tok in SPECIALS:
            self.add(tok)
        for tok in tokens:
            self.add(tok)

    def add(self, tok: str) -> int:
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def encode(self, tokens: Iterable[str]) -> list[int]:
        unk = self.stoi[UNK]
        return [self.stoi.get(t, unk) for t in tokens]

    def encode_strict(self, tokens: Iterable[str]) -> list[int]:
        ids = []
        for t in tokens:
            if t not in self.stoi:
                raise KeyError(f"token {t!r} is not in the vocabulary")
            ids.append(self.stoi[t])
        return ids

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    @property
    def eos(self) -> int:
        return self.stoi[EOS]

    @property
    def bos(self) -> int:
        return self.stoi[BOS]

    @classmethod
    def build(cls, examples: Iterable[Example], extra: Iterable[str] = ()) -> "Vocabulary":
        from .prompts import template_tokens

        vocab = cls(template_tokens())
        for tok in extra:
            vocab.add(tok)
        for ex in examples:
            for tok in ex.question:
                vocab.add(tok)
            for doc in ex.documents:
                for sent in doc.sentences:
                    for tok in sent:
                        vocab.add(tok)
            for tok in ex.answer.text:
                vocab.add(tok)
            for text, _ in ex.answer.choices:
                for tok in text:
                    vocab.add(tok)
        return vocab

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "Vocabulary":
        vocab = cls()
        for tok in tokens:
            vocab.add(tok)
        if vocab.itos != list(tokens):
            raise ValueError("token list does not start with the special tokens")
        return vocab


# ---------------------------------------------------------------------------
# JSON schema

def _require(rec: dict, key: str, rid: str, typ):
    if key not in rec:
        raise DatasetError(f"record {rid}: missing field {key!r}")
    val = rec[key]
    if not isinstance(val, typ):
        raise DatasetError(f"record {rid}: field {key!r} has type {type(val).__name__}")
    return val


def _parse_answer(rec: dict, task: str, rid: str) -> AnswerSpec:
    ans = rec.get("answer")
    try:
        if task == BQA:
            if not isinstance(ans, str):
                raise DatasetError(f"record {rid}: field 'answer' must be a string for bqa")
            return AnswerSpec(BQA, label=ans.strip().lower())
        if task == MCQ:
            if not isinstance(ans, list):
                raise DatasetError(f"record {rid}: field 'answer' must be a list for mcq")
            choices = []
            for c in ans:
                if isinstance(c, dict):
                    text, flag = c.get("text"), c.get("correct")
                else:
                    text, flag = c
                if not isinstance(text, str) or not isinstance(flag, bool):
                    raise DatasetError(f"record {rid}: malformed mcq choice {c!r} in field 'answer'")
                choices.append((tuple(tokenize(text)), flag))
            return AnswerSpec(MCQ, choices=tuple(choices))
        if not isinstance(ans, str):
            raise DatasetError(f"record {rid}: field 'answer' must be a string for eqa")
        return AnswerSpec(EQA, text=tuple(tokenize(ans)))
    except DatasetError as err:
        if str(err).startswith("record "):
            raise
        raise DatasetError(f"record {rid}: field 'answer': {err}") from None


def example_from_record(rec: dict) -> Example:
    if not isinstance(rec, dict):
        raise DatasetError(f"record is not an object: {rec!r:.60}")
    rid = str(rec.get("id", rec.get("_id", "?")))
    question = _require(rec, "question", rid, str)
    task = str(rec.get("task", EQA)).lower()
    if task not in TASKS:
        raise DatasetError(f"record {rid}: field 'task' has unknown value {task!r}")
    docs_raw = _require(rec, "documents", rid, list)
    docs = []
    for k, d in enumerate(docs_raw):
        if not isinstance(d, dict) or not isinstance(d.get("sentences"), list):
            raise DatasetError(f"record {rid}: field 'documents[{k}]' is malformed")
        try:
            docs.append(Document.from_text(str(d.get("title", "")), d["sentences"]))
        except DatasetError as err:
            raise DatasetError(f"record {rid}: field 'documents[{k}]': {err}") from None
    gold_docs = rec.get("gold_docs")
    gold_rat = rec.get("gold_rationale")
    try:
        return Example(
            id=rid,
            question=tuple(tokenize(question)),
            documents=tuple(docs),
            answer=_parse_answer(rec, task, rid),
            gold_docs=None if gold_docs is None else frozenset(int(i) for i in gold_docs),
            gold_rationale=(
                None if gold_rat is None else frozenset((int(i), int(j)) for i, j in gold_rat)
            ),
            reasoning_tag=rec.get("reasoning_tag"),
        )
    except DatasetError as err:
        if str(err).startswith("record "):
            raise
        raise DatasetError(f"record {rid}: {err}") from None


def _hotpot_to_record(rec: dict) -> dict:
    """Map public HotpotQA distractor field names onto the native schema."""
    rid = str(rec.get("_id", rec.get("id", "?")))
    if "context" not in rec:
        raise DatasetError(f"record {rid}: missing field 'context'")
    titles, documents = [], []
    for item in rec["context"]:
        title, sents = item
        titles.append(title)
        documents.append({"title": title, "sentences": [s for s in sents if s.strip()]})
    index = {t: i for i, t in enumerate(titles)}
    gold_docs, gold_rat = set(), set()
    for title, sent_idx in rec.get("supporting_facts", []):
        if title not in index:
            raise DatasetError(f"record {rid}: field 'supporting_facts' names unknown title {title!r}")
        gold_docs.add(index[title])
        gold_rat.add((index[title], int(sent_idx)))
    tag = rec.get("type")
    return {
        "id": rid,
        "question": rec.get("question"),
        "task": EQA,
        "documents": documents,
        "answer": rec.get("answer"),
        "gold_docs": sorted(gold_docs) if gold_docs else None,
        "gold_rationale": sorted(gold_rat) if gold_rat else None,
        "reasoning_tag": tag if tag in (BRIDGE, COMPARISON) else None,
    }


def load_dataset(path: str | Path, format: str = "hotpot_distractor") -> list[Example]:
    """Read a JSON array of records. ``format`` is ``hotpot_distractor`` or ``eraser``."""
    if format not in ("hotpot_distractor", "eraser"):
        raise ValueError(f"unknown dataset format {format!r}")
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return []
    records = json.loads(text)
    if not isinstance(records, list):
        raise DatasetError("dataset file must hold a top-level array")
    out = []
    for rec in records:
        if format == "hotpot_distractor" and isinstance(rec, dict) and "context" in rec:
            rec = _hotpot_to_record(rec)
        out.append(example_from_record(rec))
    return out


def example_to_record(ex: Example) -> dict:
    ans = ex.answer
    if ans.task == BQA:
        answer = ans.label
    elif ans.task == MCQ:
        answer = [{"text": detokenize(t), "correct": f} for t, f in ans.choices]
    else:
        answer = detokenize(ans.text)
    rec = {
        "id": ex.id,
        "question": detokenize(ex.question),
        "task": ans.task,
        "documents": [
            {"title": d.title, "sentences": [detokenize(s) for s in d.sentences]}
            for d in ex.documents
        ],
        "answer": answer,
    }
    if ex.gold_docs is not None:
        rec["gold_docs"] = sorted(ex.gold_docs)
    if ex.gold_rationale is not None:
        rec["gold_rationale"] = [list(p) for p in sorted(ex.gold_rationale)]
    if ex.reasoning_tag is not None:
        rec["reasoning_tag"] = ex.reasoning_tag
    return rec


def dump_dataset(examples: Iterable[Example], path: str | Path) -> None:
    records = [example_to_record(ex) for ex in examples]
    Path(path).write_text(json.dumps(records, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
