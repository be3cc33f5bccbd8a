"""Deterministic synthetic multi-hop corpora.

Bridge: the question names entity A and a relation; A's document links A to a
bridge entity B, and B's document states the asked attribute of B (the
answer). Distractors state the same attribute of other entities, so B's
document is only identifiable through the link.

Comparison: the question names A and B and asks which value of an attribute
they share. Each gold document lists two values for its entity and exactly
one value is common to both, so neither document alone determines the answer.

Every example draws its entities and values without replacement, so no
distractor ever mentions a gold entity or completes a chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import BRIDGE, COMPARISON, EQA, AnswerSpec, Document, Example

RELATIONS = ("director", "founder", "author", "captain", "mayor", "coach")
BRIDGE_ATTRIBUTES = ("nationality", "hometown", "employer", "religion")
COMPARISON_ATTRIBUTES = ("genres", "languages", "colors")
FILLER_WORDS = (
    "widely", "known", "region", "history", "visitors", "often", "recent", "years",
    "public", "local", "records", "many", "people", "describe", "quiet", "famous",
    "early", "later", "changed", "remains", "popular", "among", "critics", "debated",
)
N_VALUES = 30

_CONS = "bcdfghjklmnprstvz"
_VOWS = "aeiou"


def _names(count: int, prefix: str, rng: np.random.Generator) -> list[str]:
    out, seen = [], set()
    while len(out) < count:
        syl = rng.integers(2, 4)
        name = prefix + "".join(_CONS[rng.integers(len(_CONS))] + _VOWS[rng.integers(len(_VOWS))] for _ in range(syl))
        if name not in seen:
            seen.add(name)
            out.append(name)
    return out


def _entity_word_count(entity_vocab_size: int) -> int:
    return max(8, math.ceil(2 * math.sqrt(entity_vocab_size)))


def entity_names(entity_vocab_size: int) -> list[tuple[str, str]]:
    """Two-token entity names drawn from a small syllable-word inventory.

    Every name is a distinct ordered pair of distinct words, so many entities
    share individual tokens; an answer cannot be recalled from one token of
    the question.
    """
    n_words = _entity_word_count(entity_vocab_size)
    words = _names(n_words, "", np.random.default_rng(1234))
    pairs = [(a, b) for a in words for b in words if a != b]
    pick = np.random.default_rng(1235).choice(len(pairs), size=entity_vocab_size, replace=False)
    return [pairs[i] for i in pick]


def value_names(count: int = N_VALUES) -> list[str]:
    return _names(count, "q", np.random.default_rng(4321))


@dataclass
class SynthConfig:
    n_examples: int = 100
    n_docs_per_example: int = 6
    n_distractors: int = 4
    sentences_per_doc: int = 3
    entity_vocab_size: int = 200
    bridge_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_docs_per_example < 2:
            raise ValueError("need at least two documents per example")
        if self.n_distractors != self.n_docs_per_example - 2:
            raise ValueError("n_distractors must equal n_docs_per_example - 2")
        if not 0.0 <= self.bridge_fraction <= 1.0:
            raise ValueError("bridge_fraction must lie in [0, 1]")
        if self.sentences_per_doc < 1 or self.n_examples < 0:
            raise ValueError("sentences_per_doc must be >= 1 and n_examples >= 0")


def _fact(subject_attr: str, entity: tuple[str, ...], obj: tuple[str, ...] | str) -> tuple[str, ...]:
    obj = (obj,) if isinstance(obj, str) else obj
    return ("the", subject_attr, "of", *entity, "is", *obj, ".")


def _filler(rng) -> tuple[str, ...]:
    words = rng.choice(len(FILLER_WORDS), size=4, replace=False)
    return ("it",) + tuple(FILLER_WORDS[w] for w in words) + (".",)


class _Builder:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.check_entities(cfg.n_docs_per_example + 1)
        if N_VALUES < cfg.n_distractors + 3:
            raise ValueError("value pool too small for the requested number of distractors")
        self.entities = entity_names(cfg.entity_vocab_size)
        self.values = value_names()
        self.rng = np.random.default_rng(cfg.seed)

    def check_entities(self, needed: int):
        """Each example draws ``needed`` token-disjoint two-word names."""
        words = _entity_word_count(self.cfg.entity_vocab_size)
        if self.cfg.entity_vocab_size < needed or words < 2 * needed:
            raise ValueError(
                f"entity_vocab_size={self.cfg.entity_vocab_size} cannot keep {self.cfg.n_distractors} "
                f"distractors disjoint from the gold chain ({needed} entities per example need "
                f"{2 * needed} distinct name words, the pool has {words})"
            )

    def pick(self, pool, k):
        return [pool[i] for i in self.rng.choice(len(pool), size=k, replace=False)]

    def pick_entities(self, k, exclude=()):
        """``k`` entities sharing no token with each other or with ``exclude``."""
        used = {t for e in exclude for t in e}
        out = []
        for i in self.rng.permutation(len(self.entities)):
            e = self.entities[int(i)]
            if used.isdisjoint(e):
                out.append(e)
                used.update(e)
                if len(out) == k:
                    return out
        raise ValueError(f"cannot draw {k} token-disjoint entities from {len(self.entities)} names")

    def new_fillers(self):
        """Filler sentences shared by every document of the next example, so
        documents differ only in their fact sentence."""
        self.fillers = [_filler(self.rng) for _ in range(self.cfg.sentences_per_doc - 1)]

    def doc(self, entity, fact):
        """A document titled ``entity`` with ``fact`` at a random position among the shared fillers."""
        title = " ".join(entity)
        pos = int(self.rng.integers(self.cfg.sentences_per_doc))
        sents = list(self.fillers)
        sents.insert(pos, fact)
        return Document(title, tuple(sents)), pos

    def assemble(self, eid, question, gold_docs, distractors, answer, tag, meta=None):
        """Shuffle gold documents (with fact positions) among distractors."""
        docs = [(d, pos, True) for d, pos in gold_docs] + [(d, pos, False) for d, pos in distractors]
        order = self.rng.permutation(len(docs))
        shuffled = [docs[i] for i in order]
        gold = frozenset(k for k, (_, _, g) in enumerate(shuffled) if g)
        rationale = frozenset((k, pos) for k, (_, pos, g) in enumerate(shuffled) if g)
        return Example(
            id=eid,
            question=tuple(question),
            documents=tuple(d for d, _, _ in shuffled),
            answer=AnswerSpec(EQA, text=(answer,)),
            gold_docs=gold,
            gold_rationale=rationale,
            reasoning_tag=tag,
            meta=meta or {},
        )

    def bridge(self, eid):
        self.new_fillers()
        nd = self.cfg.n_distractors
        a, b, *others = self.pick_entities(2 + nd)
        rel = RELATIONS[self.rng.integers(len(RELATIONS))]
        attr = BRIDGE_ATTRIBUTES[self.rng.integers(len(BRIDGE_ATTRIBUTES))]
        v, *wrong = self.pick(self.values, 1 + nd)
        question = ("what", "is", "the", attr, "of", "the", rel, "of", *a, "?")
        gold = [self.doc(a, _fact(rel, a, b)), self.doc(b, _fact(attr, b, v))]
        distractors = [self.doc(c, _fact(attr, c, w)) for c, w in zip(others, wrong)]
        return self.assemble(eid, question, gold, distractors, v, BRIDGE, {"entities": (" ".join(a), " ".join(b))})

    def comparison(self, eid):
        self.new_fillers()
        nd = self.cfg.n_distractors
        a, b, *others = self.pick_entities(2 + nd)
        attr = COMPARISON_ATTRIBUTES[self.rng.integers(len(COMPARISON_ATTRIBUTES))]
        shared, va, vb, *wrong = self.pick(self.values, 3 + nd)
        question = ("which", attr, "do", *a, "and", *b, "have", "in", "common", "?")

        def listing(e, own):
            first, second = (shared, own) if self.rng.random() < 0.5 else (own, shared)
            return ("the", attr, "of", *e, "are", first, "and", second, ".")

        gold = [self.doc(a, listing(a, va)), self.doc(b, listing(b, vb))]
        distractors = []
        for c, w in zip(others, wrong):
            dattr = BRIDGE_ATTRIBUTES[self.rng.integers(len(BRIDGE_ATTRIBUTES))]
            distractors.append(self.doc(c, _fact(dattr, c, w)))
        return self.assemble(eid, question, gold, distractors, shared, COMPARISON, {"entities": (" ".join(a), " ".join(b))})

    def shortcut(self, eid):
        """Bridge-shaped example whose annotated first hop is a dead end.

        The question entity's document links to an entity no other document
        mentions. A distractor links a different entity to the answer
        document, so the answer is reachable through exactly one gold
        document. Other distractors state the asked attribute, as in
        ordinary bridge examples.
        """
        self.new_fillers()
        nd = self.cfg.n_distractors
        a, b, b_alt, decoy, *rest = self.pick_entities(3 + nd)
        rel = RELATIONS[self.rng.integers(len(RELATIONS))]
        attr = BRIDGE_ATTRIBUTES[self.rng.integers(len(BRIDGE_ATTRIBUTES))]
        v, *wrong = self.pick(self.values, nd)
        question = ("what", "is", "the", attr, "of", "the", rel, "of", *a, "?")
        gold = [self.doc(a, _fact(rel, a, b_alt)), self.doc(b, _fact(attr, b, v))]
        distractors = [self.doc(decoy, _fact(rel, decoy, b))]
        distractors += [self.doc(c, _fact(attr, c, w)) for c, w in zip(rest, wrong)]
        return self.assemble(eid, question, gold, distractors, v, BRIDGE, {"planted_shortcut": True})


def synth_generate(cfg: SynthConfig, prefix: str = "synth") -> list[Example]:
    """Generate ``cfg.n_examples`` examples; identical configs give identical corpora."""
    builder = _Builder(cfg)
    n_bridge = int(round(cfg.bridge_fraction * cfg.n_examples))
    kinds = [BRIDGE] * n_bridge + [COMPARISON] * (cfg.n_examples - n_bridge)
    kinds = [kinds[i] for i in builder.rng.permutation(len(kinds))]
    out = []
    for k, kind in enumerate(kinds):
        eid = f"{prefix}-{k:05d}"
        out.append(builder.bridge(eid) if kind == BRIDGE else builder.comparison(eid))
    return out


def synth_shortcuts(cfg: SynthConfig, n: int, prefix: str = "planted") -> list[Example]:
    """``n`` planted single-document-answerable examples."""
    builder = _Builder(cfg)
    return [builder.shortcut(f"{prefix}-{k:05d}") for k in range(n)]
