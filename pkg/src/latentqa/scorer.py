"""Parameter store and the document/sentence set scorers.

Every embedding in this model is a weighted bag of token-embedding rows, so
forward passes are ``weights @ E[ids]`` and backward passes scatter the
upstream gradient back onto the same rows. Each scorer below exposes a plain
forward function (the public contract) and a ``*_forward``/``*_backward``
pair used by the training objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Document, Vocabulary
from .sets import SetDistribution, Subset, SubsetSpace, enumerate_subsets, log_normalize

PARAM_NAMES = ("token_embeddings", "mlp_w1", "mlp_w2", "score_vector", "dec_w", "dec_u")


@dataclass
class EncoderConfig:
    embedding_dim: int = 32
    mlp_hidden: int = 32
    decoder_hidden: int = 32
    slice_len: int = 3
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("embedding_dim", "mlp_hidden", "decoder_hidden", "slice_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")


@dataclass
class ParamStore:
    """Named parameter arrays, their gradient buffers, and the vocabulary they index."""

    arrays: dict[str, np.ndarray]
    vocab: Vocabulary
    config: EncoderConfig = field(default_factory=EncoderConfig)
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.grads:
            self.zero_grad()

    def __getitem__(self, name):
        return self.arrays[name]

    @property
    def dim(self) -> int:
        return self.arrays["token_embeddings"].shape[1]

    def zero_grad(self):
        self.grads = {k: np.zeros(a.shape, dtype=np.float64) for k, a in self.arrays.items()}

    def copy(self) -> "ParamStore":
        return ParamStore({k: a.copy() for k, a in self.arrays.items()}, self.vocab, self.config)

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({k: a.astype(dtype) for k, a in self.arrays.items()}, self.vocab, self.config)

    def check_finite(self):
        for k, a in self.arrays.items():
            if not np.all(np.isfinite(a)):
                raise FloatingPointError(f"parameter array {k!r} has non-finite entries")


def init_params(cfg: EncoderConfig, vocab: Vocabulary | int, dtype=np.float32) -> ParamStore:
    """Uniform(-init_scale, init_scale) initialization from a seeded generator."""
    if isinstance(vocab, int):
        if vocab < 1:
            raise ValueError("vocab_size must be >= 1")
        vocab = Vocabulary([f"tok{i}" for i in range(max(0, vocab - len(Vocabulary())))])
    size = len(vocab)
    if size < 1:
        raise ValueError("vocab_size must be >= 1")
    n, h, hd = cfg.embedding_dim, cfg.mlp_hidden, cfg.decoder_hidden
    shapes = {
        "token_embeddings": (size, n),
        "mlp_w1": (h, 3 * n),
        "mlp_w2": (1, h),
        "score_vector": (n,),
        "dec_w": (hd, 2 * n),
        "dec_u": (size, hd),
    }
    rng = np.random.default_rng(cfg.seed)
    s = cfg.init_scale
    arrays = {k: rng.uniform(-s, s, size=shape).astype(dtype) for k, shape in shapes.items()}
    return ParamStore(arrays, vocab, cfg)


# ---------------------------------------------------------------------------
# bags of token rows


@dataclass(frozen=True)
class Bag:
    """Embedding = sum_k weights[k] * E[ids[k]]."""

    ids: np.ndarray
    weights: np.ndarray

    @classmethod
    def mean(cls, ids: Sequence[int]) -> "Bag":
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            return cls(ids, np.zeros(0))
        return cls(ids, np.full(ids.size, 1.0 / ids.size))

    @classmethod
    def average(cls, bags: Sequence["Bag"]) -> "Bag":
        w = 1.0 / len(bags)
        return cls(
            np.concatenate([b.ids for b in bags]),
            np.concatenate([b.weights * w for b in bags]),
        )

    def __add__(self, other: "Bag") -> "Bag":
        return Bag(np.concatenate([self.ids, other.ids]), np.concatenate([self.weights, other.weights]))

    def forward(self, E: np.ndarray) -> np.ndarray:
        if self.ids.size == 0:
            return np.zeros(E.shape[1])
        return self.weights @ E[self.ids].astype(np.float64)

    def backward(self, grad_E: np.ndarray, g: np.ndarray):
        if self.ids.size:
            np.add.at(grad_E, self.ids, np.outer(self.weights, g))


def _check_ids(params: ParamStore, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= len(params.vocab)):
        raise IndexError("token id outside the vocabulary")
    return ids


def embed_tokens(params: ParamStore, ids: Sequence[int]) -> np.ndarray:
    """Mean of token-embedding rows; the zero vector for an empty sequence."""
    return Bag.mean(_check_ids(params, ids)).forward(params["token_embeddings"])


def encode(params: ParamStore, tokens: Sequence[str]) -> list[int]:
    return params.vocab.encode(tokens)


# ---------------------------------------------------------------------------
# sentence sets


def marker_bags(q_ids, sent_ids) -> list[Bag]:
    q = Bag.mean(q_ids)
    return [q + Bag.mean(s) for s in sent_ids]


def sentence_marker_embeddings(params: ParamStore, question: Sequence[str], document: Document) -> list[np.ndarray]:
    """One question-conditioned vector per sentence: emb(question) + emb(sentence)."""
    q_ids = encode(params, question)
    E = params["token_embeddings"]
    return [b.forward(E) for b in marker_bags(q_ids, [encode(params, s) for s in document.sentences])]


def subset_score(params: ParamStore, marker_embs: Sequence[np.ndarray], subset: Sequence[int]) -> float:
    if len(subset) == 0:
        raise ValueError("cannot score an empty subset")
    emb = np.mean([marker_embs[j] for j in subset], axis=0)
    return float(np.asarray(params["score_vector"], dtype=np.float64) @ emb)


def averaging_matrix(subsets: Sequence[Subset], n_items: int) -> np.ndarray:
    A = np.zeros((len(subsets), n_items))
    for r, s in enumerate(subsets):
        A[r, list(s)] = 1.0 / len(s)
    return A


@dataclass
class SentenceSetCache:
    bags: list[Bag]
    markers: np.ndarray  # [sentences, n]
    subsets: tuple[Subset, ...]
    A: np.ndarray  # [subsets, sentences]
    dist: SetDistribution


def sentence_set_forward(params: ParamStore, q_ids, sent_ids, space: SubsetSpace) -> SentenceSetCache:
    bags = marker_bags(q_ids, sent_ids)
    E = params["token_embeddings"]
    markers = np.stack([b.forward(E) for b in bags])
    subsets = tuple(enumerate_subsets(space))
    A = averaging_matrix(subsets, len(sent_ids))
    scores = A @ (markers @ np.asarray(params["score_vector"], dtype=np.float64))
    return SentenceSetCache(bags, markers, subsets, A, SetDistribution(space, subsets, log_normalize(scores)))


def sentence_set_backward(params: ParamStore, cache: SentenceSetCache, g_logp: np.ndarray):
    """Accumulate d(sum g_logp * log p)/dθ for one document's sentence-set distribution."""
    p = np.exp(cache.dist.log_probs)
    g_scores = g_logp - p * g_logp.sum()
    g_marker_score = cache.A.T @ g_scores  # d/d(v . marker_j)
    v = np.asarray(params["score_vector"], dtype=np.float64)
    params.grads["score_vector"] += g_marker_score @ cache.markers
    gE = params.grads["token_embeddings"]
    for j, b in enumerate(cache.bags):
        if g_marker_score[j] != 0.0:
            b.backward(gE, g_marker_score[j] * v)


def sentence_set_distribution(params: ParamStore, question, document: Document, space: SubsetSpace) -> SetDistribution:
    q_ids = encode(params, question)
    return sentence_set_forward(params, q_ids, [encode(params, s) for s in document.sentences], space).dist


# ---------------------------------------------------------------------------
# documents and document sets


def doc_bag(q_ids, sent_ids, slice_len: int) -> Bag:
    """Average over consecutive ``slice_len``-sentence slices of mean(question + slice)."""
    slices = []
    for i in range(0, len(sent_ids), slice_len):
        toks = list(q_ids)
        for s in sent_ids[i:i + slice_len]:
            toks.extend(s)
        slices.append(Bag.mean(toks))
    return Bag.average(slices)


def doc_embedding(params: ParamStore, question, document: Document, slice_len: int) -> np.ndarray:
    q_ids = encode(params, question)
    bag = doc_bag(q_ids, [encode(params, s) for s in document.sentences], slice_len)
    return bag.forward(params["token_embeddings"])


def set_features(emb: np.ndarray, subsets: Sequence[Subset]) -> tuple[np.ndarray, np.ndarray]:
    """MLP inputs for each document set.

    Pairs (ascending index order) use ``[e_a, e_b, |e_a - e_b|]``. Any other
    set size is reduced to one summed embedding ``s`` and fed as ``[s, s, 0]``,
    which for singletons is ``[e, e, 0]``.
    Returns the feature matrix and, per row, the sign of ``e_a - e_b`` (zeros
    for non-pairs).
    """
    n = emb.shape[1]
    X = np.zeros((len(subsets), 3 * n))
    sign = np.zeros((len(subsets), n))
    for r, s in enumerate(subsets):
        if len(s) == 2:
            a, b = emb[s[0]], emb[s[1]]
            diff = a - b
            X[r] = np.concatenate([a, b, np.abs(diff)])
            sign[r] = np.sign(diff)
        else:
            tot = emb[list(s)].sum(axis=0)
            X[r, :n] = tot
            X[r, n:2 * n] = tot
    return X, sign


@dataclass
class DocSetCache:
    bags: list[Bag]
    emb: np.ndarray
    subsets: tuple[Subset, ...]
    X: np.ndarray
    sign: np.ndarray
    pre: np.ndarray
    dist: SetDistribution
    independent: bool = False


def mlp_forward(params: ParamStore, X: np.ndarray):
    W1 = np.asarray(params["mlp_w1"], dtype=np.float64)
    W2 = np.asarray(params["mlp_w2"], dtype=np.float64)
    pre = X @ W1.T
    return (np.maximum(pre, 0.0) @ W2.T)[:, 0], pre


def mlp_backward(params: ParamStore, X, pre, g_out) -> np.ndarray:
    W1 = np.asarray(params["mlp_w1"], dtype=np.float64)
    W2 = np.asarray(params["mlp_w2"], dtype=np.float64)
    relu = np.maximum(pre, 0.0)
    params.grads["mlp_w2"] += (g_out @ relu)[None, :]
    g_pre = np.outer(g_out, W2[0]) * (pre > 0)
    params.grads["mlp_w1"] += g_pre.T @ X
    return g_pre @ W1


def doc_set_forward(params: ParamStore, q_ids, doc_sent_ids, space: SubsetSpace, slice_len: int,
                    independent: bool = False) -> DocSetCache:
    E = params["token_embeddings"]
    bags = [doc_bag(q_ids, sents, slice_len) for sents in doc_sent_ids]
    emb = np.stack([b.forward(E) for b in bags])
    subsets = tuple(enumerate_subsets(space))
    if independent:
        singles = tuple((i,) for i in range(len(bags)))
        X, sign = set_features(emb, singles)
        s, pre = mlp_forward(params, X)
        scores = np.array([s[list(sub)].sum() for sub in subsets])
    else:
        X, sign = set_features(emb, subsets)
        scores, pre = mlp_forward(params, X)
    dist = SetDistribution(space, subsets, log_normalize(scores))
    return DocSetCache(bags, emb, subsets, X, sign, pre, dist, independent)


def doc_set_backward(params: ParamStore, cache: DocSetCache, g_logp: np.ndarray):
    p = np.exp(cache.dist.log_probs)
    g_scores = g_logp - p * g_logp.sum()
    if cache.independent:
        g_rows = np.zeros(len(cache.bags))
        for gs, sub in zip(g_scores, cache.subsets):
            g_rows[list(sub)] += gs
        rows = tuple((i,) for i in range(len(cache.bags)))
    else:
        g_rows, rows = g_scores, cache.subsets
    gX = mlp_backward(params, cache.X, cache.pre, g_rows)
    n = cache.emb.shape[1]
    g_emb = np.zeros_like(cache.emb)
    for r, s in enumerate(rows):
        if len(s) == 2:
            gd = gX[r, 2 * n:] * cache.sign[r]
            g_emb[s[0]] += gX[r, :n] + gd
            g_emb[s[1]] += gX[r, n:2 * n] - gd
        else:
            g_emb[list(s)] += gX[r, :n] + gX[r, n:2 * n]
    gE = params.grads["token_embeddings"]
    for b, g in zip(cache.bags, g_emb):
        b.backward(gE, g)


def doc_set_distribution(params: ParamStore, question, documents: Sequence[Document], space: SubsetSpace,
                         slice_len: int = 3, independent: bool = False) -> SetDistribution:
    q_ids = encode(params, question)
    sents = [[encode(params, s) for s in d.sentences] for d in documents]
    return doc_set_forward(params, q_ids, sents, space, slice_len, independent).dist
