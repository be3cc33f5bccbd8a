import numpy as np
import pytest

from latentqa.data import Vocabulary
from latentqa.objective import TrainConfig
from latentqa.scorer import EncoderConfig, init_params
from latentqa.synth import SynthConfig, synth_generate
from latentqa.training import (
    Checkpoint, TrainHistory, TrainingDiverged, load_checkpoint, lr_at, save_checkpoint, select_checkpoint, train,
)
from latentqa.evaluation import predict


def test_lr_schedule():
    cfg = TrainConfig(learning_rate=0.4, warmup_fraction=0.1)
    assert lr_at(0, 100, cfg) == 0.0
    assert lr_at(5, 100, cfg) == pytest.approx(0.2)
    assert lr_at(10, 100, cfg) == 0.4
    assert lr_at(100, 100, cfg) == 0.4
    assert lr_at(0, 100, TrainConfig(learning_rate=0.4, warmup_fraction=0.0)) == 0.4
    with pytest.raises(ValueError):
        lr_at(101, 100, cfg)


def test_select_checkpoint():
    rows = [{"answer_f1": f, "answer_em": 0.0, "nll": n} for f, n in ((0.5, 3.0), (0.9, 2.0), (0.7, 1.0))]
    assert select_checkpoint(rows, "answer_f1") == 1
    assert select_checkpoint(rows, "nll") == 2
    assert select_checkpoint(rows[:1]) == 0
    assert select_checkpoint([{"answer_f1": 0.8}, {"answer_f1": 0.8}]) == 0
    assert select_checkpoint(rows, "answer_em") == 0
    with pytest.raises(ValueError):
        select_checkpoint([])
    with pytest.raises(ValueError):
        select_checkpoint(rows, "bleu")


def _small_setup(n=40, epochs=2, seed=0, **kw):
    data = synth_generate(SynthConfig(n_examples=n, seed=seed))
    dev = synth_generate(SynthConfig(n_examples=10, seed=seed + 1))
    vocab = Vocabulary.build(data + dev)
    params = init_params(EncoderConfig(embedding_dim=16, mlp_hidden=8, decoder_hidden=16, init_scale=0.5), vocab)
    cfg = TrainConfig(learning_rate=0.3, epochs=epochs, batch_size=8, k_doc=3, k_sent=3, checkpoint_every=5, **kw)
    return params, data, dev, cfg


def test_checkpoint_round_trip(tmp_path):
    params, data, dev, cfg = _small_setup(n=8, epochs=1)
    save_checkpoint(tmp_path / "c.ckpt", params, {"step": 3, "note": "x"})
    loaded, manifest = load_checkpoint(tmp_path / "c.ckpt")
    assert manifest == {"step": 3, "note": "x"}
    for k in params.arrays:
        assert loaded[k].dtype == np.float32
        assert loaded[k].tobytes() == params[k].tobytes()
    assert loaded.vocab.to_list() == params.vocab.to_list()
    assert loaded.config == params.config
    assert [predict(loaded, ex, cfg) for ex in dev] == [predict(params, ex, cfg) for ex in dev]


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad")


def test_train_is_deterministic_and_writes_checkpoints(tmp_path):
    params, data, dev, cfg = _small_setup()
    _, h1, best1 = train(params, data, dev, cfg, tmp_path / "run")
    _, h2, best2 = train(params, data, dev, cfg)
    assert h1.to_dict() == h2.to_dict()
    assert best1.step == best2.step
    assert all(b > a for a, b in zip(h1.steps, h1.steps[1:]))
    files = sorted(p.name for p in (tmp_path / "run").iterdir())
    assert files == [f"step{c.step:07d}.ckpt" for c in h1.checkpoints]
    assert {"answer_f1", "answer_em", "nll"} <= set(h1.checkpoints[0].metrics)


def test_training_reduces_objective():
    params, data, dev, cfg = _small_setup(n=200, epochs=5)
    _, history, _ = train(params, data, dev, cfg)
    per_epoch = len(history.steps) // 5
    first = np.mean(history.objectives[:per_epoch])
    last = np.mean(history.objectives[-per_epoch:])
    assert last < first


def test_divergence_aborts_with_last_good(monkeypatch):
    import latentqa.training as tr

    params, data, dev, _ = _small_setup(n=16, epochs=3)
    cfg = TrainConfig(learning_rate=0.1, epochs=3, batch_size=8, k_doc=3, k_sent=3, checkpoint_every=2)
    real, calls = tr.compute_gradients, []

    def flaky(p, batch, c):
        calls.append(1)
        return float("nan") if len(calls) == 4 else real(p, batch, c)

    monkeypatch.setattr(tr, "compute_gradients", flaky)
    with pytest.raises(TrainingDiverged, match="step 3") as err:
        train(params, data, dev, cfg)
    assert err.value.last_good.step == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_parameters_abort(monkeypatch):
    import latentqa.training as tr

    params, data, dev, _ = _small_setup(n=16, epochs=1)
    cfg = TrainConfig(learning_rate=0.1, epochs=1, batch_size=8, k_doc=3, k_sent=3)

    real = tr.compute_gradients

    def poisoned(p, batch, c):
        out = real(p, batch, c)
        p.grads["dec_u"][0, 0] = np.inf
        return out

    monkeypatch.setattr(tr, "compute_gradients", poisoned)
    with pytest.raises(TrainingDiverged, match="dec_u") as err:
        train(params, data, dev, cfg)
    assert err.value.last_good is None


def test_empty_sets_rejected():
    params, data, dev, cfg = _small_setup(n=8, epochs=1)
    with pytest.raises(ValueError):
        train(params, [], dev, cfg)


def test_history_to_dict():
    h = TrainHistory([1, 2], [3.0, 2.0], [])
    assert h.to_dict() == {"steps": [1, 2], "objectives": [3.0, 2.0], "checkpoints": []}
