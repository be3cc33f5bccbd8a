import json

import pytest

from latentqa.cli import main
from latentqa.config import ConfigError, RunConfig, parse_config, require

SMALL = """
embedding_dim = 8
mlp_hidden = 4
decoder_hidden = 8
epochs = 1
k_doc = 3
k_sent = 3
n_train = 24
n_dev = 8
checkpoint_every = 5
"""


def _cfg(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


def test_flag_overrides_file(tmp_path):
    path = _cfg(tmp_path, "learning_rate = 0.1\nepochs = 3\n")
    cfg = parse_config(path, {"learning_rate": 0.01})
    assert cfg.learning_rate == 0.01 and cfg.epochs == 3
    assert parse_config(path, {"learning_rate": None}).learning_rate == 0.1


def test_unknown_key_is_named(tmp_path):
    with pytest.raises(ConfigError, match="lerning_rate"):
        parse_config(_cfg(tmp_path, "lerning_rate = 0.1\n"))
    with pytest.raises(ConfigError, match="table"):
        parse_config(_cfg(tmp_path, "[train]\nepochs = 1\n"))


def test_type_mismatch(tmp_path):
    with pytest.raises(ConfigError, match="epochs"):
        parse_config(_cfg(tmp_path, 'epochs = "many"\n'))
    with pytest.raises(ConfigError, match="contiguous"):
        parse_config(_cfg(tmp_path, "contiguous = 1\n"))
    assert parse_config(_cfg(tmp_path, "learning_rate = 1\n")).learning_rate == 1.0


def test_invalid_component_values():
    with pytest.raises(ConfigError):
        RunConfig(k_doc=0)
    with pytest.raises(ConfigError):
        RunConfig(bridge_fraction=2.0)
    with pytest.raises(ConfigError):
        RunConfig(selection="loss")


def test_missing_file_and_required_keys(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(tmp_path / "nope.toml")
    with pytest.raises(ConfigError, match="train_path"):
        require(RunConfig(out=str(tmp_path)), "train")
    cfg = RunConfig(out=str(tmp_path), train_path=str(tmp_path / "x.json"), dev_path=str(tmp_path / "x.json"))
    with pytest.raises(ConfigError, match="does not exist"):
        require(cfg, "train")


def test_relative_paths_resolve_against_config(tmp_path):
    sub = tmp_path / "conf"
    sub.mkdir()
    cfg = parse_config(_cfg(sub, 'train_path = "data/train.json"\n'))
    assert cfg.train_path == str(sub / "data" / "train.json")


def test_cli_missing_train_path_exits_nonzero(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "o")]) == 2
    assert "train_path" in capsys.readouterr().err


def test_cli_bad_dataset_reports_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code = main(["train", "--out", str(tmp_path / "o"), "--train", str(bad), "--dev", str(bad)])
    assert code == 1
    assert "latentqa train" in capsys.readouterr().err


def _pipeline(tmp_path, name):
    conf = _cfg(tmp_path, SMALL)
    out = tmp_path / name
    base = ["--config", str(conf), "--out", str(out), "--seed", "3"]
    assert main(["synth", *base]) == 0
    assert main(["train", *base, "--train", str(out / "train.json"), "--dev", str(out / "dev.json")]) == 0
    ck = str(out / "best.ckpt")
    data = str(out / "dev.json")
    assert main(["eval", *base, "--checkpoint", ck, "--data", data]) == 0
    return out


def test_pipeline_outputs_and_determinism(tmp_path):
    before = set(tmp_path.iterdir())
    a = _pipeline(tmp_path, "a")
    b = _pipeline(tmp_path, "b")
    # nothing written outside the two output directories (plus the config file)
    assert set(tmp_path.iterdir()) - before == {a, b, tmp_path / "run.toml"}
    report = json.loads((a / "metrics.json").read_text())
    assert set(report) == {"overall", "by_tag"} and report["overall"]["count"] == 8
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
    assert {"train.json", "dev.json", "dev_bridge.json", "dev_comparison.json", "best.ckpt",
            "history.json", "checkpoints", "metrics.json"} <= {p.name for p in a.iterdir()}
    history = json.loads((a / "history.json").read_text())
    assert history["best_step"] in [c["step"] for c in history["checkpoints"]]

    conf = str(tmp_path / "run.toml")
    common = ["--config", conf, "--checkpoint", str(a / "best.ckpt"), "--data", str(a / "dev.json")]
    assert main(["predict", *common, "--out", str(a / "p")]) == 0
    lines = (a / "p" / "predictions.jsonl").read_text().splitlines()
    assert len(lines) == 8 and all("doc_set" in json.loads(line) for line in lines)
    assert main(["eval", *common, "--out", str(a / "indep"), "--independent-docs"]) == 0
    assert json.loads((a / "indep" / "metrics.json").read_text())["overall"]["count"] == 8
    assert main(["shortcuts", *common, "--out", str(a / "s")]) == 0
    assert set(json.loads((a / "s" / "shortcuts.json").read_text())) == {"flagged", "skipped", "checked"}


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "gradcheck.json").read_text())
    assert report["passed"] and report["max_rel_error"] < 1e-4
    assert "pass" in capsys.readouterr().out
