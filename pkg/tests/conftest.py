import numpy as np
import pytest

from latentqa.data import EQA, AnswerSpec, Document, Example, Vocabulary
from latentqa.scorer import EncoderConfig, init_params

WORDS = ("ada", "york", "born", "river", "city", "old", "market", "ouse", "wrote", "code", "leeds", "north")


def random_example(rng, n_docs=3, max_sents=4, eid="ex", tag=None, fixed_sents=None):
    docs = []
    for d in range(n_docs):
        n = fixed_sents or int(rng.integers(1, max_sents + 1))
        sents = tuple(tuple(WORDS[i] for i in rng.integers(len(WORDS), size=int(rng.integers(2, 5))))
                      for _ in range(n))
        docs.append(Document(f"d{d}", sents))
    question = tuple(WORDS[i] for i in rng.integers(len(WORDS), size=3)) + ("?",)
    answer = (WORDS[int(rng.integers(len(WORDS)))],)
    return Example(eid, question, tuple(docs), AnswerSpec(EQA, text=answer), reasoning_tag=tag)


def small_params(examples, dim=4, hidden=3, seed=0, dtype=np.float64, scale=0.5):
    vocab = Vocabulary.build(examples)
    cfg = EncoderConfig(embedding_dim=dim, mlp_hidden=hidden, decoder_hidden=hidden, slice_len=2,
                        init_scale=scale, seed=seed)
    return init_params(cfg, vocab, dtype=dtype)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
