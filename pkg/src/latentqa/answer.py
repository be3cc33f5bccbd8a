"""Answer generation p(y | z, x): a small autoregressive decoder over a bag context.

Next-token logits are ``U tanh(W [context; emb(prev)])`` where the context is
the mean token embedding of the rendered prompt input. BQA and MCQ answers
are scored by teacher-forcing each rendered label string and normalizing
across the alternatives.
"""

from __future__ import annotations

import json
import os
import socket
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import BQA, EQA, MCQ, REFUTED, SUPPORTED, AnswerSpec, tokenize
from .prompts import bqa_label_output, mcq_choice_output, prompt_input_tokens
from .scorer import Bag, ParamStore, encode


@dataclass(frozen=True)
class AnswerTargets:
    """Alternatives to teacher-force. Each group holds option id-sequences
    (each ending in EOS) and the index of the true option. A group with a
    single option is scored unnormalized (free-form generation)."""

    groups: tuple[tuple[tuple[tuple[int, ...], ...], int], ...]


def answer_targets(params: ParamStore, answer: AnswerSpec) -> AnswerTargets:
    vocab = params.vocab
    eos = vocab.eos

    def seq(tokens):
        return tuple(vocab.encode_strict(tokens)) + (eos,)

    if answer.task == EQA:
        return AnswerTargets((((seq(answer.text),), 0),))
    if answer.task == BQA:
        opts = tuple(seq(tokenize(bqa_label_output(lab))) for lab in (SUPPORTED, REFUTED))
        return AnswerTargets(((opts, 0 if answer.label == SUPPORTED else 1),))
    groups = []
    for text, ok in answer.choices:
        t = " ".join(text)
        opts = (seq(tokenize(mcq_choice_output(t, True))), seq(tokenize(mcq_choice_output(t, False))))
        groups.append((opts, 0 if ok else 1))
    return AnswerTargets(tuple(groups))


def context_bag(params: ParamStore, task: str, question, rationale_sentences) -> Bag:
    if not rationale_sentences:
        raise ValueError("the answer model needs a non-empty rationale")
    return Bag.mean(encode(params, prompt_input_tokens(task, question, rationale_sentences)))


@dataclass
class _DecoderCache:
    ctx_bags: list[Bag]
    ctx: np.ndarray
    ctx_idx: np.ndarray
    prev: np.ndarray
    target: np.ndarray
    seq_idx: np.ndarray
    X: np.ndarray
    H: np.ndarray
    P: np.ndarray  # softmax over vocab per step
    seq_lp: np.ndarray


def _decoder_forward(params: ParamStore, ctx_bags: Sequence[Bag], items) -> _DecoderCache:
    """``items`` is a list of ``(ctx_index, target_ids)``; returns per-item log-probs."""
    E = params["token_embeddings"]
    W = np.asarray(params["dec_w"], dtype=np.float64)
    U = np.asarray(params["dec_u"], dtype=np.float64)
    ctx = np.stack([b.forward(E) for b in ctx_bags])
    bos = params.vocab.bos
    ci, pv, tg, si = [], [], [], []
    for k, (c, target) in enumerate(items):
        prev = (bos,) + tuple(target[:-1])
        ci.extend([c] * len(target))
        pv.extend(prev)
        tg.extend(target)
        si.extend([k] * len(target))
    ci, pv, tg, si = (np.asarray(a, dtype=np.int64) for a in (ci, pv, tg, si))
    X = np.concatenate([ctx[ci], E[pv].astype(np.float64)], axis=1)
    H = np.tanh(X @ W.T)
    logits = H @ U.T
    m = logits.max(axis=1, keepdims=True)
    Z = np.exp(logits - m)
    s = Z.sum(axis=1, keepdims=True)
    P = Z / s
    step_lp = (logits - m - np.log(s))[np.arange(len(tg)), tg]
    seq_lp = np.bincount(si, weights=step_lp, minlength=len(items))
    return _DecoderCache(list(ctx_bags), ctx, ci, pv, tg, si, X, H, P, seq_lp)


def _decoder_backward(params: ParamStore, cache: _DecoderCache, g_seq: np.ndarray):
    W = np.asarray(params["dec_w"], dtype=np.float64)
    U = np.asarray(params["dec_u"], dtype=np.float64)
    n = params.dim
    g_step = g_seq[cache.seq_idx]
    dlogits = -cache.P * g_step[:, None]
    dlogits[np.arange(len(cache.target)), cache.target] += g_step
    params.grads["dec_u"] += dlogits.T @ cache.H
    dA = (dlogits @ U) * (1.0 - cache.H ** 2)
    params.grads["dec_w"] += dA.T @ cache.X
    dX = dA @ W
    gE = params.grads["token_embeddings"]
    np.add.at(gE, cache.prev, dX[:, n:])
    g_ctx = np.zeros_like(cache.ctx)
    np.add.at(g_ctx, cache.ctx_idx, dX[:, :n])
    for b, g in zip(cache.ctx_bags, g_ctx):
        b.backward(gE, g)


@dataclass
class AnswerCache:
    dec: _DecoderCache
    targets: AnswerTargets
    n_ctx: int
    logp: np.ndarray  # per context, log p(y | z, x)


def answer_forward(params: ParamStore, ctx_bags: Sequence[Bag], targets: AnswerTargets) -> AnswerCache:
    items = []
    for c in range(len(ctx_bags)):
        for opts, _ in targets.groups:
            for o in opts:
                items.append((c, o))
    dec = _decoder_forward(params, ctx_bags, items)
    lp = dec.seq_lp.reshape(len(ctx_bags), -1)
    out = np.zeros(len(ctx_bags))
    col = 0
    for opts, gold in targets.groups:
        block = lp[:, col:col + len(opts)]
        if len(opts) == 1:
            out += block[:, 0]
        else:
            m = block.max(axis=1, keepdims=True)
            out += block[:, gold] - (m[:, 0] + np.log(np.exp(block - m).sum(axis=1)))
        col += len(opts)
    return AnswerCache(dec, targets, len(ctx_bags), out)


def answer_backward(params: ParamStore, cache: AnswerCache, g: np.ndarray):
    lp = cache.dec.seq_lp.reshape(cache.n_ctx, -1)
    g_items = np.zeros_like(lp)
    col = 0
    for opts, gold in cache.targets.groups:
        k = len(opts)
        if k == 1:
            g_items[:, col] = g
        else:
            block = lp[:, col:col + k]
            p = np.exp(block - block.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            g_items[:, col:col + k] = -p * g[:, None]
            g_items[:, col + gold] += g
        col += k
    _decoder_backward(params, cache.dec, g_items.reshape(-1))


def answer_logprob(params: ParamStore, question, rationale_sentences, answer: AnswerSpec | Sequence[str]) -> float:
    """log p(answer | rationale, question). A bare token sequence is treated as an EQA answer."""
    if not isinstance(answer, AnswerSpec):
        answer = AnswerSpec(EQA, text=tuple(answer))
    targets = answer_targets(params, answer)
    bag = context_bag(params, answer.task, question, rationale_sentences)
    return float(answer_forward(params, [bag], targets).logp[0])


def next_token_logprobs(params: ParamStore, ctx: np.ndarray, prev_id: int) -> np.ndarray:
    E = params["token_embeddings"]
    W = np.asarray(params["dec_w"], dtype=np.float64)
    U = np.asarray(params["dec_u"], dtype=np.float64)
    x = np.concatenate([ctx, E[prev_id].astype(np.float64)])
    logits = U @ np.tanh(W @ x)
    m = logits.max()
    return logits - m - np.log(np.exp(logits - m).sum())


def greedy_decode(params: ParamStore, question, rationale_sentences, max_len: int = 8, task: str = EQA):
    """Argmax decoding. Returns ``(tokens, truncated)``; ties go to the lowest token id."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ctx = context_bag(params, task, question, rationale_sentences).forward(params["token_embeddings"])
    vocab = params.vocab
    prev, out = vocab.bos, []
    for _ in range(max_len):
        tok = int(np.argmax(next_token_logprobs(params, ctx, prev)))
        if tok == vocab.eos:
            return vocab.decode(out), False
        out.append(tok)
        prev = tok
    return vocab.decode(out), True


def choice_normalize(choice_logprobs: Sequence[float]):
    """Softmax over alternatives; returns ``(probabilities, argmax_index)``."""
    lp = np.asarray(choice_logprobs, dtype=np.float64)
    if lp.size < 2 or not np.all(np.isfinite(lp)):
        raise ValueError("need at least two finite log-probabilities")
    p = np.exp(lp - lp.max())
    p /= p.sum()
    return p, int(np.argmax(lp))


def predict_choices(params: ParamStore, question, rationale_sentences, answer: AnswerSpec):
    """Per-group normalized choice for BQA (one group) or MCQ (one group per choice)."""
    targets = answer_targets(params, answer)
    bag = context_bag(params, answer.task, question, rationale_sentences)
    items = [(0, o) for opts, _ in targets.groups for o in opts]
    lp = _decoder_forward(params, [bag], items).seq_lp
    picks, col = [], 0
    for opts, _ in targets.groups:
        _, idx = choice_normalize(lp[col:col + len(opts)])
        picks.append(idx)
        col += len(opts)
    return picks


# ---------------------------------------------------------------------------
# external generation service


class ExternalServiceError(RuntimeError):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class ExternalTimeoutError(ExternalServiceError):
    pass


class ExternalResponseError(ExternalServiceError):
    pass


TOKEN_ENV = "LATENTQA_GENERATOR_TOKEN"


@dataclass(frozen=True)
class Generation:
    text: str
    tokens: list[str]
    token_logprobs: list[float] | None

    @property
    def trainable(self) -> bool:
        return self.token_logprobs is not None


def external_generate(endpoint: str, prompt: str, max_tokens: int = 16, timeout: float = 10.0) -> Generation:
    """POST ``{"prompt", "max_tokens"}`` and parse ``{"text", "token_logprobs"?}``."""
    body = json.dumps({"prompt": prompt, "max_tokens": max_tokens}).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(TOKEN_ENV)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    req = urllib.request.Request(endpoint, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as err:
        raise ExternalServiceError(f"generation service returned HTTP {err.code}", status=err.code) from None
    except (socket.timeout, TimeoutError) as err:
        raise ExternalTimeoutError(f"generation service timed out after {timeout}s") from err
    except urllib.error.URLError as err:
        if isinstance(err.reason, (socket.timeout, TimeoutError)):
            raise ExternalTimeoutError(f"generation service timed out after {timeout}s") from err
        raise ExternalServiceError(f"generation service unreachable: {err.reason}") from err
    try:
        payload = json.loads(raw.decode("utf-8"))
        text = payload["text"]
        if not isinstance(text, str):
            raise TypeError("text is not a string")
        lps = payload.get("token_logprobs")
        if lps is not None:
            lps = [float(x) for x in lps]
    except (ValueError, KeyError, TypeError) as err:
        raise ExternalResponseError(f"malformed generation response: {err}") from None
    return Generation(text, tokenize(text), lps)


def external_generate_many(endpoint: str, prompts: Sequence[str], max_tokens: int = 16,
                           timeout: float = 10.0, max_concurrency: int = 4) -> list[Generation]:
    with ThreadPoolExecutor(max_workers=max(1, max_concurrency)) as pool:
        return list(pool.map(lambda p: external_generate(endpoint, p, max_tokens, timeout), prompts))
