"""Approximate and exact marginal likelihood over (document set, rationale) pairs.

    log p(y | x) ~= log sum_{d in S^k} sum_{z in S_d^k} p(d | x) prod_i p(z_i | d_i, x) p(y | z, x)

``S^k`` holds the k most probable document sets and ``S_d^k`` the k most
probable sentence-subset tuples for document set ``d``. Candidate membership
is treated as fixed when differentiating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .answer import AnswerTargets, answer_backward, answer_forward, answer_targets
from .data import Example
from .prompts import prompt_input_tokens
from .scorer import (
    Bag,
    DocSetCache,
    ParamStore,
    SentenceSetCache,
    doc_set_backward,
    doc_set_forward,
    encode,
    sentence_set_backward,
    sentence_set_forward,
)
from .sets import Candidate, SubsetSpace, log_sum_exp, top_k, top_k_product

EXACT_CAP = 10_000


@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    warmup_fraction: float = 0.10
    epochs: int = 5
    batch_size: int = 8
    k_doc: int = 10
    k_sent: int = 9
    max_rationale_sentences: int = 4
    doc_set_size: int = 2
    contiguous: bool = False
    independent_docs: bool = False
    seed: int = 0
    checkpoint_every: int = 100
    max_answer_len: int = 8

    def __post_init__(self):
        for name in ("epochs", "batch_size", "k_doc", "k_sent", "max_rationale_sentences",
                     "doc_set_size", "checkpoint_every", "max_answer_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1]")


class EncodedExample:
    """Token ids and subset spaces for one example under a fixed vocabulary."""

    def __init__(self, params: ParamStore, ex: Example, cfg: TrainConfig):
        self.example = ex
        self.q_ids = encode(params, ex.question)
        self.sent_ids = [[encode(params, s) for s in d.sentences] for d in ex.documents]
        n_docs = len(ex.documents)
        size = min(cfg.doc_set_size, n_docs)
        self.doc_space = SubsetSpace(n_docs, size, size)
        self.sent_spaces = [
            SubsetSpace.clipped(len(d), 1, cfg.max_rationale_sentences, cfg.contiguous)
            for d in ex.documents
        ]
        # prompt tokens besides the rationale; the context is a bag so order is irrelevant
        self.prompt_ids = encode(params, prompt_input_tokens(ex.task, ex.question, []))
        self._targets = None
        self._params = params

    @property
    def targets(self) -> AnswerTargets:
        if self._targets is None:
            self._targets = answer_targets(self._params, self.example.answer)
        return self._targets

    def rationale_sentences(self, doc_set, rationale) -> list:
        docs = self.example.documents
        return [docs[i].sentences[j] for i, sub in zip(doc_set, rationale) for j in sub]

    def context_bag(self, doc_set, rationale) -> Bag:
        ids = list(self.prompt_ids)
        for i, sub in zip(doc_set, rationale):
            for j in sub:
                ids.extend(self.sent_ids[i][j])
        return Bag.mean(ids)


def encode_example(params: ParamStore, ex: Example, cfg: TrainConfig) -> EncodedExample:
    return EncodedExample(params, ex, cfg)


@dataclass
class _Joint:
    """Scored (d, z) candidates for one example plus everything needed for backward."""

    doc: DocSetCache
    sents: dict[int, SentenceSetCache]
    doc_idx: list[int]
    doc_sets: list[tuple]
    rationales: list[tuple]
    sent_idx: list[tuple]
    ans: object
    joint: np.ndarray

    @property
    def value(self) -> float:
        return log_sum_exp(self.joint)


def _doc_forward(params, enc: EncodedExample, cfg: TrainConfig) -> DocSetCache:
    return doc_set_forward(params, enc.q_ids, enc.sent_ids, enc.doc_space,
                           params.config.slice_len, cfg.independent_docs)


def _sent_forward(params, enc: EncodedExample, i: int) -> SentenceSetCache:
    return sentence_set_forward(params, enc.q_ids, enc.sent_ids[i], enc.sent_spaces[i])


def _score_candidates(params, enc, doc, sents, pairs) -> _Joint:
    """``pairs`` is a list of (doc-set candidate, rationale candidate)."""
    doc_idx, doc_sets, rats, sidx, prior = [], [], [], [], []
    for dc, zc in pairs:
        doc_idx.append(dc.index[0])
        doc_sets.append(dc.structure)
        rats.append(zc.structure)
        sidx.append(zc.index)
        prior.append(dc.log_prob + zc.log_prob)
    bags = [enc.context_bag(d, z) for d, z in zip(doc_sets, rats)]
    ans = answer_forward(params, bags, enc.targets)
    joint = np.asarray(prior) + ans.logp
    return _Joint(doc, sents, doc_idx, doc_sets, rats, sidx, ans, joint)


def _approx_forward(params, enc: EncodedExample, cfg: TrainConfig) -> _Joint:
    doc = _doc_forward(params, enc, cfg)
    sents: dict[int, SentenceSetCache] = {}
    pairs = []
    for dc in top_k(doc.dist, cfg.k_doc):
        for i in dc.structure:
            if i not in sents:
                sents[i] = _sent_forward(params, enc, i)
        for zc in top_k_product([sents[i].dist for i in dc.structure], cfg.k_sent):
            pairs.append((dc, zc))
    if not pairs:
        raise ValueError(f"{enc.example.id}: no valid candidates")
    return _score_candidates(params, enc, doc, sents, pairs)


def _exact_forward(params, enc: EncodedExample, cfg: TrainConfig, cap: int = EXACT_CAP) -> _Joint:
    import itertools

    doc = _doc_forward(params, enc, cfg)
    total = sum(math.prod(enc.sent_spaces[i].count() for i in d) for d in doc.subsets)
    if total > cap:
        raise ValueError(f"{enc.example.id}: {total} (d, z) configurations exceed the cap {cap}")
    sents = {i: _sent_forward(params, enc, i) for i in range(len(enc.sent_ids))}
    pairs = []
    for di, d in enumerate(doc.subsets):
        dc = Candidate(d, float(doc.dist.log_probs[di]), (di,))
        ds = [sents[i].dist for i in d]
        for idx in itertools.product(*(range(len(x)) for x in ds)):
            lp = float(sum(x.log_probs[k] for x, k in zip(ds, idx)))
            pairs.append((dc, Candidate(tuple(x.subsets[k] for x, k in zip(ds, idx)), lp, idx)))
    return _score_candidates(params, enc, doc, sents, pairs)


def _backward(params, j: _Joint, scale: float):
    """Accumulate ``scale * d(value)/dθ`` into ``params.grads``."""
    w = np.exp(j.joint - j.value) * scale
    g_doc = np.zeros(len(j.doc.subsets))
    np.add.at(g_doc, j.doc_idx, w)
    doc_set_backward(params, j.doc, g_doc)
    g_sent = {i: np.zeros(len(c.subsets)) for i, c in j.sents.items()}
    for wc, d, idx in zip(w, j.doc_sets, j.sent_idx):
        for i, k in zip(d, idx):
            g_sent[i][k] += wc
    for i, c in j.sents.items():
        if g_sent[i].any():
            sentence_set_backward(params, c, g_sent[i])
    answer_backward(params, j.ans, w)


def _as_encoded(params, example, cfg) -> EncodedExample:
    return example if isinstance(example, EncodedExample) else EncodedExample(params, example, cfg)


# ---------------------------------------------------------------------------
# public contract


def joint_logprob(params: ParamStore, example, doc_set: Sequence[int],
                  rationale: Sequence[Sequence[int]] | Mapping[int, Sequence[int]],
                  cfg: TrainConfig | None = None) -> float:
    """log p(d | x) + sum_i log p(z_i | d_i, x) + log p(y | z, x) for one configuration.

    ``rationale`` gives one sentence subset per selected document, either
    aligned with ``doc_set`` or keyed by document index.
    """
    cfg = cfg or TrainConfig()
    enc = _as_encoded(params, example, cfg)
    doc_set = tuple(sorted(doc_set))
    if isinstance(rationale, Mapping):
        rationale = [rationale[i] for i in doc_set]
    rationale = tuple(tuple(sorted(s)) for s in rationale)
    doc = _doc_forward(params, enc, cfg)
    if doc_set not in doc.subsets:
        raise ValueError(f"document set {doc_set} is not valid for this example")
    lp = float(doc.dist.log_probs[doc.subsets.index(doc_set)])
    for i, sub in zip(doc_set, rationale):
        dist = _sent_forward(params, enc, i).dist
        if sub not in dist.subsets:
            raise ValueError(f"sentence subset {sub} is not valid for document {i}")
        lp += float(dist.log_probs[dist.subsets.index(sub)])
    bag = enc.context_bag(doc_set, rationale)
    return lp + float(answer_forward(params, [bag], enc.targets).logp[0])


def approx_marginal_ll(params: ParamStore, example, cfg: TrainConfig) -> float:
    return _approx_forward(params, _as_encoded(params, example, cfg), cfg).value


def exact_marginal_ll(params: ParamStore, example, cfg: TrainConfig | None = None, cap: int = EXACT_CAP) -> float:
    cfg = cfg or TrainConfig()
    return _exact_forward(params, _as_encoded(params, example, cfg), cfg, cap).value


def compute_gradients(params: ParamStore, batch: Sequence, cfg: TrainConfig) -> float:
    """Fill ``params.grads`` with the gradient of the mean negative approximate
    marginal log-likelihood over ``batch`` and return that objective."""
    if not batch:
        raise ValueError("empty batch")
    params.zero_grad()
    scale = -1.0 / len(batch)
    total = 0.0
    for ex in batch:
        j = _approx_forward(params, _as_encoded(params, ex, cfg), cfg)
        total += j.value
        _backward(params, j, scale)
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter array {name!r}")
    return -total / len(batch)
