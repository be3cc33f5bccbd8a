"""Latent-rationale multi-hop question answering trained by top-k marginal likelihood."""

from .answer import answer_logprob, choice_normalize, external_generate, greedy_decode
from .data import AnswerSpec, Document, Example, Vocabulary, load_dataset, tokenize
from .estimator import LatentRationaleQA
from .evaluation import (
    MetricsReport,
    Prediction,
    answer_token_f1_em,
    document_f1,
    evaluate,
    find_shortcuts,
    indep_doc_distribution,
    predict,
    sentence_f1,
)
from .objective import TrainConfig, approx_marginal_ll, compute_gradients, exact_marginal_ll, joint_logprob
from .prompts import render_prompt
from .scorer import EncoderConfig, ParamStore, doc_set_distribution, init_params
from .sets import SetDistribution, SubsetSpace, brute_force_product, enumerate_subsets, top_k, top_k_product
from .synth import SynthConfig, synth_generate, synth_shortcuts
from .training import load_checkpoint, lr_at, save_checkpoint, select_checkpoint, train

__version__ = "0.1.0"
