import time

import pytest

from advre.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from advre.config import RunConfig, from_env, load_config, parse_text
from advre.corpus import RelationSchema, Vocabulary, load_corpus
from advre.encoders import load_checkpoint
from advre.errors import ConfigError

TINY = """\
# tiny pipeline for tests
n_relations = 3
n_entity_pairs = 120
vocab_size = 400
n_entities = 60
k_w = 8
k_h = 16
max_len = 40
pretrain_epochs = 3
epochs = 4
promotion_period = 2
batch_conf = 16
batch_unconf = 16
p_at_n = 5,10
inspect_k = 2
"""

PIPELINE = ("gen-data", "pretrain", "train", "eval", "inspect")


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def _run(cfg_file, out, *extra):
    for cmd in PIPELINE:
        assert main([cmd, "--config", str(cfg_file), "--out", str(out), *extra]) == EXIT_OK, cmd


def test_parse_text_and_round_trip(tmp_path):
    cfg = load_config(None, environ={})
    assert cfg == RunConfig()
    path = tmp_path / "echo.cfg"
    path.write_text(RunConfig(seed=4, k_h=12, clip_norm=5.0).to_text())
    assert load_config(path, environ={}) == RunConfig(seed=4, k_h=12, clip_norm=5.0)


def test_parse_text_errors():
    with pytest.raises(ConfigError, match="unknown"):
        parse_text("colour = red")
    with pytest.raises(ConfigError, match=":1:"):
        parse_text("seed 3")
    with pytest.raises(ConfigError):
        parse_text("seed = three")


def test_env_overrides_file(cfg_file):
    assert from_env({"ADVRE_NOISE_RATE": "0.1", "OTHER": "x"}) == {"noise_rate": 0.1}
    cfg = load_config(cfg_file, environ={"ADVRE_EPOCHS": "7"}, seed=9)
    assert (cfg.epochs, cfg.n_relations, cfg.seed) == (7, 3, 9)


def test_config_validates_sub_configs():
    with pytest.raises(ConfigError):
        RunConfig(noise_rate=1.0)
    with pytest.raises(ConfigError):
        RunConfig(m=2)
    with pytest.raises(ConfigError):
        RunConfig(p_at_n="a,b")


def test_gen_data_round_trip(cfg_file, tmp_path):
    out = tmp_path / "run"
    assert main(["gen-data", "--config", str(cfg_file), "--out", str(out)]) == EXIT_OK
    schema = RelationSchema.load(out / "data" / "relations.txt")
    vocab = Vocabulary.load(out / "data" / "vocab.txt")
    train = load_corpus(out / "data" / "train.jsonl", max_len=40, n_relations=len(schema),
                        vocab_size=len(vocab))
    assert len(schema) == 4 and len(train) > 0
    assert (out / "config.gen-data.txt").exists()


def test_gen_data_is_seeded(cfg_file, tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--config", str(cfg_file), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    for f in ("train.jsonl", "test.jsonl", "vocab.txt", "relations.txt"):
        assert (tmp_path / "a" / "data" / f).read_bytes() == (tmp_path / "b" / "data" / f).read_bytes()


def test_invalid_noise_rate_exits_nonzero(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("ADVRE_NOISE_RATE", "1.0")
    assert main(["gen-data", "--out", str(tmp_path / "run")]) == EXIT_USAGE
    assert "noise_rate" in capsys.readouterr().err


def test_refuses_overwrite_without_force(cfg_file, tmp_path, capsys):
    out = str(tmp_path / "run")
    assert main(["gen-data", "--config", str(cfg_file), "--out", out]) == EXIT_OK
    assert main(["gen-data", "--config", str(cfg_file), "--out", out]) == EXIT_USAGE
    assert "--force" in capsys.readouterr().err
    assert main(["gen-data", "--config", str(cfg_file), "--out", out, "--force"]) == EXIT_OK


def test_eval_without_training_names_train(cfg_file, tmp_path, capsys):
    out = str(tmp_path / "run")
    main(["gen-data", "--config", str(cfg_file), "--out", out])
    assert main(["eval", "--config", str(cfg_file), "--out", out]) == EXIT_USAGE
    assert "advre train" in capsys.readouterr().err


def test_train_without_pretrain_names_pretrain(cfg_file, tmp_path, capsys):
    out = str(tmp_path / "run")
    main(["gen-data", "--config", str(cfg_file), "--out", out])
    assert main(["train", "--config", str(cfg_file), "--out", out]) == EXIT_USAGE
    assert "advre pretrain" in capsys.readouterr().err


def test_usage_errors_exit_one():
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["train", "--arch", "lstm"])
    assert exc.value.code == EXIT_USAGE


def test_corrupt_data_is_runtime_error(cfg_file, tmp_path):
    out = tmp_path / "run"
    main(["gen-data", "--config", str(cfg_file), "--out", str(out)])
    (out / "data" / "train.jsonl").write_text("{broken\n")
    assert main(["pretrain", "--config", str(cfg_file), "--out", str(out)]) == EXIT_RUNTIME


def test_full_pipeline_outputs_and_budget(cfg_file, tmp_path):
    out = tmp_path / "run"
    start = time.perf_counter()
    _run(cfg_file, out, "--arch", "cnn")
    assert time.perf_counter() - start < 300
    for name in ("pretrain.ckpt", "train.ckpt", "split.json", "metrics.csv", "pr_curve.csv",
                 "p_at_n.csv", "noise_auc.csv", "inspect.txt"):
        assert (out / name).exists(), name
    params, meta = load_checkpoint(out / "train.ckpt")
    assert params.config.arch == "CNN" and meta["epoch"] == 4
    assert (out / "metrics.csv").read_text().splitlines()[0] == "epoch,L_D,L_S,n_confident,promoted"
    assert "[" in (out / "inspect.txt").read_text()


def test_pipeline_is_byte_reproducible(cfg_file, tmp_path):
    _run(cfg_file, tmp_path / "a")
    _run(cfg_file, tmp_path / "b")
    for name in ("metrics.csv", "pr_curve.csv", "p_at_n.csv", "noise_auc.csv", "train.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_echoed_config_reproduces_run(cfg_file, tmp_path):
    _run(cfg_file, tmp_path / "a")
    echoed = tmp_path / "a" / "config.train.txt"
    _run(echoed, tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
