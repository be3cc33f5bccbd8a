import itertools
import math

import numpy as np
import pytest

from latentqa.answer import answer_logprob
from latentqa.data import EQA, AnswerSpec, Document, Example
from latentqa.gradcheck import gradient_check, relative_error, standard_checks, tiny_instance
from latentqa.objective import (
    TrainConfig, approx_marginal_ll, compute_gradients, exact_marginal_ll, joint_logprob,
)
from latentqa.scorer import doc_set_distribution, sentence_set_distribution
from latentqa.sets import SubsetSpace, enumerate_subsets

from conftest import random_example, small_params

FULL = TrainConfig(k_doc=10_000, k_sent=10_000)


def _instance(seed, n_docs=3, max_sents=4, size=2):
    rng = np.random.default_rng(seed)
    ex = random_example(rng, n_docs=n_docs, max_sents=max_sents)
    return small_params([ex], seed=seed), ex, TrainConfig(k_doc=10_000, k_sent=10_000, doc_set_size=size)


def _nested_loop_marginal(params, ex, cfg):
    """Independent re-enumeration from the public component distributions."""
    n = len(ex.documents)
    size = min(cfg.doc_set_size, n)
    ddist = doc_set_distribution(params, ex.question, ex.documents, SubsetSpace(n, size, size),
                                 params.config.slice_len)
    terms = []
    for d in enumerate_subsets(SubsetSpace(n, size, size)):
        spaces = [SubsetSpace.clipped(len(ex.documents[i]), 1, cfg.max_rationale_sentences) for i in d]
        sdists = [sentence_set_distribution(params, ex.question, ex.documents[i], sp) for i, sp in zip(d, spaces)]
        for z in itertools.product(*(enumerate_subsets(sp) for sp in spaces)):
            lp = ddist.log_prob(d) + sum(sd.log_prob(s) for sd, s in zip(sdists, z))
            sents = [ex.documents[i].sentences[j] for i, s in zip(d, z) for j in s]
            terms.append(lp + answer_logprob(params, ex.question, sents, ex.answer))
    m = max(terms)
    return m + math.log(sum(math.exp(t - m) for t in terms))


@pytest.mark.parametrize("seed", range(6))
def test_exact_matches_nested_loop(seed):
    params, ex, cfg = _instance(seed)
    assert exact_marginal_ll(params, ex, cfg) == pytest.approx(_nested_loop_marginal(params, ex, cfg), abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_covering_k_equals_exact(seed):
    params, ex, cfg = _instance(100 + seed)
    assert abs(approx_marginal_ll(params, ex, cfg) - exact_marginal_ll(params, ex, cfg)) < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_monotone_in_k_and_bounded_by_exact(seed):
    params, ex, _ = _instance(200 + seed)
    exact = exact_marginal_ll(params, ex, FULL)
    grid = [[approx_marginal_ll(params, ex, TrainConfig(k_doc=kd, k_sent=ks)) for ks in (1, 2, 5, 40, 300)]
            for kd in (1, 2, 3)]
    grid = np.array(grid)
    assert np.all(np.diff(grid, axis=0) >= -1e-12)
    assert np.all(np.diff(grid, axis=1) >= -1e-12)
    assert np.all(grid <= exact + 1e-12)


def test_single_doc_single_sentence_exact_is_joint():
    ex = Example("one", ("q", "?"), (Document("d", (("a", "b"),)),), AnswerSpec(EQA, text=("a",)))
    params = small_params([ex])
    cfg = TrainConfig(doc_set_size=1)
    assert exact_marginal_ll(params, ex, cfg) == pytest.approx(joint_logprob(params, ex, (0,), [(0,)], cfg), abs=1e-12)


def test_joint_is_sum_of_components():
    params, ex, cfg = _instance(3)
    n = len(ex.documents)
    d = (0, 2)
    z = [(0,), (0,)]
    ddist = doc_set_distribution(params, ex.question, ex.documents, SubsetSpace(n, 2, 2), params.config.slice_len)
    manual = ddist.log_prob(d)
    for i, s in zip(d, z):
        sp = SubsetSpace.clipped(len(ex.documents[i]), 1, cfg.max_rationale_sentences)
        manual += sentence_set_distribution(params, ex.question, ex.documents[i], sp).log_prob(s)
    sents = [ex.documents[i].sentences[0] for i in d]
    manual += answer_logprob(params, ex.question, sents, ex.answer)
    assert joint_logprob(params, ex, d, z, cfg) == pytest.approx(manual, abs=1e-12)
    assert joint_logprob(params, ex, d, {0: (0,), 2: (0,)}, cfg) == pytest.approx(manual, abs=1e-12)


def test_two_doc_hand_assembled_product():
    """2 docs x 2 sentences: p(d) = 1, so the joint is p(z1) p(z2) p(y|z)."""
    params, (ex,) = tiny_instance(4)
    cfg = TrainConfig(doc_set_size=2)
    z = [(0, 1), (1,)]
    p = 1.0
    for i, s in zip((0, 1), z):
        sd = sentence_set_distribution(params, ex.question, ex.documents[i], SubsetSpace(2, 1, 2))
        p *= math.exp(sd.log_prob(s))
    sents = [ex.documents[0].sentences[0], ex.documents[0].sentences[1], ex.documents[1].sentences[1]]
    p *= math.exp(answer_logprob(params, ex.question, sents, ex.answer))
    assert math.exp(joint_logprob(params, ex, (0, 1), z, cfg)) == pytest.approx(p, rel=1e-10)


def test_invalid_configuration_rejected():
    params, ex, cfg = _instance(1)
    with pytest.raises(ValueError):
        joint_logprob(params, ex, (0, 0), [(0,), (0,)], cfg)
    with pytest.raises(ValueError):
        joint_logprob(params, ex, (0, 1), [(9,), (0,)], cfg)
    with pytest.raises(ValueError):
        exact_marginal_ll(params, ex, cfg, cap=3)


def test_train_config_validation():
    for kw in ({"k_doc": 0}, {"learning_rate": 0.0}, {"warmup_fraction": 1.5}, {"batch_size": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_gradcheck_every_array():
    for name, result in standard_checks(0).items():
        assert result.passed, (name, result.per_array)
    # the check is not vacuous: every array receives a non-zero gradient
    params, batch = tiny_instance(0)
    compute_gradients(params, batch, TrainConfig(doc_set_size=1, k_doc=100, k_sent=100))
    assert all(np.abs(g).max() > 0 for g in params.grads.values())


def test_gradcheck_rejects_float32():
    params, batch = tiny_instance(0)
    with pytest.raises(TypeError):
        gradient_check(params.astype(np.float32), batch)


def test_relative_error():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.2])) == pytest.approx(0.2 / 2.2)


def test_symmetric_case_has_zero_score_vector_gradient():
    params, ex, cfg = _instance(9)
    params.arrays["score_vector"][:] = 0
    params.arrays["mlp_w2"][:] = 0
    params.arrays["dec_w"][:] = 0
    compute_gradients(params, [ex], cfg)
    np.testing.assert_allclose(params.grads["score_vector"], 0.0, atol=1e-12)


def test_doubling_batch_keeps_mean_gradient():
    rng = np.random.default_rng(5)
    exs = [random_example(rng, eid=f"e{k}") for k in range(3)]
    params = small_params(exs, seed=5)
    cfg = TrainConfig(k_doc=2, k_sent=3)
    obj1 = compute_gradients(params, exs, cfg)
    g1 = {k: g.copy() for k, g in params.grads.items()}
    obj2 = compute_gradients(params, exs + exs, cfg)
    assert obj1 == pytest.approx(obj2, abs=1e-12)
    for k in g1:
        np.testing.assert_allclose(params.grads[k], g1[k], atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_small_step_does_not_decrease_objective(seed):
    rng = np.random.default_rng(50 + seed)
    ex = random_example(rng)
    params = small_params([ex], seed=seed)
    cfg = TrainConfig(k_doc=2, k_sent=4)
    before = approx_marginal_ll(params, ex, cfg)
    compute_gradients(params, [ex], cfg)
    for k in params.arrays:
        params.arrays[k] = params.arrays[k] - 1e-6 * params.grads[k]
    assert approx_marginal_ll(params, ex, cfg) >= before - 1e-12


def test_non_finite_gradient_names_array(monkeypatch):
    import latentqa.objective as obj

    params, ex, cfg = _instance(2)
    real = obj.answer_backward

    def poisoned(p, cache, g):
        real(p, cache, g)
        p.grads["dec_u"][0, 0] = np.inf

    monkeypatch.setattr(obj, "answer_backward", poisoned)
    with pytest.raises(FloatingPointError, match="dec_u"):
        compute_gradients(params, [ex], cfg)


def test_non_finite_parameters_and_empty_batch():
    params, ex, cfg = _instance(2)
    with pytest.raises(ValueError):
        compute_gradients(params, [], cfg)
    params.arrays["mlp_w1"][0, 0] = np.nan
    with pytest.raises(ValueError):
        compute_gradients(params, [ex], cfg)
