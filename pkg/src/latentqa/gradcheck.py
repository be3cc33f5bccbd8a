"""Central-difference verification of the hand-written gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EQA, AnswerSpec, Document, Example, Vocabulary
from .objective import TrainConfig, compute_gradients
from .scorer import EncoderConfig, ParamStore, init_params


@dataclass
class GradcheckResult:
    per_array: dict[str, float]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max(self.per_array.values())

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def to_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "per_array": dict(sorted(self.per_array.items())),
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(max |a|, max |n|); 0 when both vanish."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


_TINY_DOCS = (
    Document("ada", (("ada", "was", "born", "in", "york", "."), ("she", "wrote", "code", "."))),
    Document("york", (("york", "lies", "on", "the", "ouse", "."), ("it", "is", "old", "."))),
    Document("leeds", (("leeds", "has", "a", "market", "."), ("trains", "stop", "there", "."))),
)


def tiny_instance(seed: int = 0, n_docs: int = 2, embedding_dim: int = 4,
                  hidden: int = 3) -> tuple[ParamStore, list[Example]]:
    """An example with ``n_docs`` (2 or 3) two-sentence documents and float64 parameters."""
    if not 2 <= n_docs <= len(_TINY_DOCS):
        raise ValueError(f"n_docs must be 2 or 3, got {n_docs}")
    ex = Example(
        id="tiny",
        question=("where", "was", "ada", "born", "?"),
        documents=_TINY_DOCS[:n_docs],
        answer=AnswerSpec(EQA, text=("york",)),
    )
    vocab = Vocabulary.build([ex])
    cfg = EncoderConfig(embedding_dim=embedding_dim, mlp_hidden=hidden, decoder_hidden=hidden,
                        slice_len=1, init_scale=0.5, seed=seed)
    return init_params(cfg, vocab, dtype=np.float64), [ex]


def gradient_check(params: ParamStore, batch, cfg: TrainConfig | None = None, h: float = 1e-4,
                   tolerance: float = 1e-4) -> GradcheckResult:
    """Compare ``compute_gradients`` against central differences on every entry.

    Parameters must be stored in float64; perturbing float32 storage would
    swamp ``h`` with rounding error.
    """
    cfg = cfg or TrainConfig(doc_set_size=2, k_doc=100, k_sent=100)
    for k, a in params.arrays.items():
        if a.dtype != np.float64:
            raise TypeError(f"gradient check needs float64 parameters; {k!r} is {a.dtype}")
    params = params.copy()
    compute_gradients(params, batch, cfg)
    analytic = {k: g.copy() for k, g in params.grads.items()}
    errors = {}
    for name, arr in params.arrays.items():
        numeric = np.zeros_like(arr)
        flat, nflat = arr.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = compute_gradients(params, batch, cfg)
            flat[i] = old - h
            down = compute_gradients(params, batch, cfg)
            flat[i] = old
            nflat[i] = (up - down) / (2 * h)
        errors[name] = relative_error(analytic[name], numeric)
    return GradcheckResult(errors, tolerance)


def standard_checks(seed: int = 0, h: float = 1e-4, tolerance: float = 1e-4) -> dict[str, GradcheckResult]:
    """Two documents scored as singletons (every array gets a non-zero
    gradient, the document normalizer included) and three documents scored as
    pairs (exercises the ``|e_a - e_b|`` block)."""
    out = {}
    for name, n_docs, size in (("two_docs_singletons", 2, 1), ("three_docs_pairs", 3, 2)):
        params, batch = tiny_instance(seed, n_docs)
        cfg = TrainConfig(doc_set_size=size, k_doc=100, k_sent=100)
        out[name] = gradient_check(params, batch, cfg, h, tolerance)
    return out
