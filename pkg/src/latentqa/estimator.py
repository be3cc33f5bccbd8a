"""scikit-learn style wrapper around the latent-rationale QA model."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .data import Example, Vocabulary
from .evaluation import MetricsReport, Prediction, evaluate, find_shortcuts, predict
from .objective import TrainConfig
from .scorer import EncoderConfig, ParamStore, init_params
from .training import load_checkpoint, save_checkpoint, train


def check_examples(X, name: str = "X", require_gold: bool = False) -> list[Example]:
    """Validate a non-empty sequence of :class:`Example` objects."""
    if isinstance(X, (str, bytes)) or not hasattr(X, "__iter__"):
        raise TypeError(f"{name} must be a sequence of Example objects, got {type(X).__name__}")
    out = list(X)
    if not out:
        raise ValueError(f"{name} is empty")
    for k, ex in enumerate(out):
        if not isinstance(ex, Example):
            raise TypeError(f"{name}[{k}] is {type(ex).__name__}, expected Example")
        if require_gold and (ex.gold_docs is None or ex.gold_rationale is None):
            raise ValueError(f"{name}[{k}] ({ex.id}) lacks gold annotations")
    return out


class LatentRationaleQA(BaseEstimator):
    """Jointly selects document sets and rationales and generates answers.

    Rationales are latent: ``fit`` never reads gold documents or sentences.
    ``dev`` (passed to ``fit``) drives checkpoint selection; without it the
    training set is used.
    """

    def __init__(self, embedding_dim=128, mlp_hidden=32, decoder_hidden=128, slice_len=3, init_scale=0.5,
                 learning_rate=0.3, warmup_fraction=0.10, epochs=20, batch_size=8, k_doc=10, k_sent=9,
                 max_rationale_sentences=4, doc_set_size=2, contiguous=False, independent_docs=False,
                 checkpoint_every=100, max_answer_len=8, selection="answer_f1", random_state=0):
        self.embedding_dim = embedding_dim
        self.mlp_hidden = mlp_hidden
        self.decoder_hidden = decoder_hidden
        self.slice_len = slice_len
        self.init_scale = init_scale
        self.learning_rate = learning_rate
        self.warmup_fraction = warmup_fraction
        self.epochs = epochs
        self.batch_size = batch_size
        self.k_doc = k_doc
        self.k_sent = k_sent
        self.max_rationale_sentences = max_rationale_sentences
        self.doc_set_size = doc_set_size
        self.contiguous = contiguous
        self.independent_docs = independent_docs
        self.checkpoint_every = checkpoint_every
        self.max_answer_len = max_answer_len
        self.selection = selection
        self.random_state = random_state

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.embedding_dim, self.mlp_hidden, self.decoder_hidden, self.slice_len,
                             self.init_scale, int(self.random_state))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, warmup_fraction=self.warmup_fraction, epochs=self.epochs,
            batch_size=self.batch_size, k_doc=self.k_doc, k_sent=self.k_sent,
            max_rationale_sentences=self.max_rationale_sentences, doc_set_size=self.doc_set_size,
            contiguous=self.contiguous, independent_docs=self.independent_docs, seed=int(self.random_state),
            checkpoint_every=self.checkpoint_every, max_answer_len=self.max_answer_len,
        )

    def fit(self, X, y=None, dev=None, out_dir: str | Path | None = None):
        X = check_examples(X)
        dev = check_examples(dev, "dev") if dev is not None else X
        if self.selection not in ("answer_f1", "answer_em", "nll"):
            raise ValueError(f"selection must be answer_f1, answer_em or nll, got {self.selection!r}")
        cfg = self.train_config()
        vocab = Vocabulary.build(X + list(dev))
        params = init_params(self.encoder_config(), vocab)
        final, history, best = train(params, X, dev, cfg, out_dir, self.selection)
        self.params_ = best.params(final)
        self.history_ = history
        self.best_step_ = best.step
        self.vocabulary_ = vocab
        return self

    @classmethod
    def from_checkpoint(cls, path: str | Path, **overrides) -> "LatentRationaleQA":
        params, manifest = load_checkpoint(path)
        enc = params.config
        est = cls(embedding_dim=enc.embedding_dim, mlp_hidden=enc.mlp_hidden, decoder_hidden=enc.decoder_hidden,
                  slice_len=enc.slice_len, init_scale=enc.init_scale, random_state=enc.seed)
        est.set_params(**{k: v for k, v in manifest.get("train_config", {}).items() if k in est.get_params()})
        est.set_params(**overrides)
        est.params_ = params
        est.vocabulary_ = params.vocab
        est.best_step_ = manifest.get("step")
        return est

    def save(self, path: str | Path) -> None:
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.params_, {"step": self.best_step_, "train_config": self.get_params()})

    def _params(self) -> ParamStore:
        try:
            check_is_fitted(self, "params_")
        except NotFittedError:
            raise NotFittedError("this estimator is not fitted; call fit or from_checkpoint first") from None
        return self.params_

    def predict(self, X) -> list[Prediction]:
        params, cfg = self._params(), self.train_config()
        return [predict(params, ex, cfg) for ex in check_examples(X)]

    def evaluate(self, X) -> MetricsReport:
        return evaluate(self._params(), check_examples(X, require_gold=True), self.train_config())

    def score(self, X, y=None) -> float:
        """Mean answer F1."""
        return float(self.evaluate(X).overall.answer_f1)

    def find_shortcuts(self, X):
        return find_shortcuts(self._params(), check_examples(X), self.train_config())

    def decision_function(self, X) -> np.ndarray:
        """Joint log-probability of each predicted (documents, rationale, answer) triple."""
        return np.array([p.doc_logprob + p.rationale_logprob + p.answer_logprob for p in self.predict(X)])
