import json

import pytest

from clh3g.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, ExperimentConfig, resolve_config, run
from clh3g.errors import ConfigError

FAST = ["--model.d_model", "8", "--model.n_heads", "2", "--model.d_ff", "16", "--model.n_layers", "1",
        "--model.max_positions", "40", "--train.total_steps", "4", "--train.validate_every", "2",
        "--train.batch_size", "4", "--train.max_article_len", "32", "--train.max_headline_len", "8",
        "--train.beam_size", "2"]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert run(["synth", "--authors", "4", "--articles", "6", "--val-size", "4", "--test-size", "4",
                "--seed", "3", "--out-dir", str(out)]) == EXIT_OK
    return out


def _train(corpus_dir, out, *extra):
    return run(["train", "--corpus", str(corpus_dir / "corpus.jsonl"), "--out-dir", str(out), *FAST, *extra])


class TestConfigResolution:
    def test_defaults(self):
        assert resolve_config(None, {}) == ExperimentConfig()

    def test_precedence(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"train": {"cl_lambda": 0.5, "seed": 7}, "model": {"fusion": {"use_concat_fusion": False}}}))
        cfg = resolve_config(str(path), {"train.cl_lambda": "0.25"})
        assert cfg.train.cl_lambda == 0.25 and cfg.train.seed == 7
        assert cfg.model.fusion.use_concat_fusion is False
        assert cfg.model.d_model == ExperimentConfig().model.d_model

    @pytest.mark.parametrize("flags,field", [({"train.batch_size": "x"}, "train.batch_size"),
                                             ({"model.fusion.use_pointer": "maybe"}, "model.fusion.use_pointer"),
                                             ({"train.cl_lambda": "-1"}, "cl_lambda")])
    def test_errors_name_field(self, flags, field):
        with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
            resolve_config(None, flags)

    def test_unknown_key_in_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"train": {"learning_rate": 1}}))
        with pytest.raises(ConfigError, match="train.learning_rate"):
            resolve_config(str(path), {})

    def test_unknown_section(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"optim": {}}))
        with pytest.raises(ConfigError):
            resolve_config(str(path), {})

    def test_round_trip(self):
        cfg = resolve_config(None, {"model.pointer_scoring": "linear", "style.steps": "5"})
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


class TestExitCodes:
    def test_usage(self):
        assert run([]) == EXIT_USAGE
        assert run(["train", "--no-such-flag"]) == EXIT_USAGE

    def test_bad_value(self, tmp_path):
        assert run(["train", "--train.batch_size", "many", "--out-dir", str(tmp_path / "x")]) == EXIT_CONFIG

    def test_config_checked_before_filesystem(self, tmp_path):
        out = tmp_path / "never"
        assert run(["train", "--train.cl_lambda", "-0.5", "--out-dir", str(out)]) == EXIT_CONFIG
        assert not out.exists()

    def test_missing_corpus(self, tmp_path):
        assert run(["train", "--corpus", str(tmp_path / "none.jsonl"), "--out-dir", str(tmp_path)]) == EXIT_CONFIG

    def test_corrupt_checkpoint(self, tmp_path, corpus_dir):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint")
        assert run(["generate", "--checkpoint", str(bad), "--corpus", str(corpus_dir / "corpus.jsonl")]) == EXIT_RUNTIME

    def test_help(self, capsys):
        assert run(["--help"]) == EXIT_OK
        assert "synth" in capsys.readouterr().out


class TestPipeline:
    def test_synth_outputs(self, corpus_dir):
        assert (corpus_dir / "corpus.jsonl").exists() and (corpus_dir / "split.json").exists()
        manifest = json.loads((corpus_dir / "synth_manifest.json").read_text())
        assert set(manifest["hashes"]) == {"corpus", "split"}

    def test_train_generate_evaluate(self, corpus_dir, tmp_path):
        run_dir = tmp_path / "run"
        assert _train(corpus_dir, run_dir) == EXIT_OK
        for name in ("best.ckpt", "last.ckpt", "report.jsonl", "final_report.json", "config.json",
                     "train_manifest.json"):
            assert (run_dir / name).exists(), name
        corpus = str(corpus_dir / "corpus.jsonl")
        assert run(["generate", "--run-dir", str(run_dir), "--corpus", corpus]) == EXIT_OK
        gens = run_dir / "generations_test.jsonl"
        assert len(gens.read_text().splitlines()) == 4
        assert run(["evaluate", "--generations", str(gens), "--corpus", corpus, "--style",
                    "--style.steps", "10"]) == EXIT_OK
        result = json.loads((run_dir / "generations_test_metrics.json").read_text())
        assert set(result) == {"metrics", "style", "style_classifier_val_accuracy"}
        assert result["metrics"]["n_samples"] == 4

    def test_identical_runs_byte_identical(self, corpus_dir, tmp_path):
        for name in ("a", "b"):
            assert _train(corpus_dir, tmp_path / name) == EXIT_OK
        for f in ("report.jsonl", "final_report.json", "best.ckpt", "last.ckpt", "config.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
        ma = json.loads((tmp_path / "a" / "train_manifest.json").read_text())
        mb = json.loads((tmp_path / "b" / "train_manifest.json").read_text())
        assert ma["hashes"] == mb["hashes"] and ma["config"] == mb["config"]

    def test_resume(self, corpus_dir, tmp_path):
        assert _train(corpus_dir, tmp_path / "r") == EXIT_OK
        assert _train(corpus_dir, tmp_path / "r", "--resume", str(tmp_path / "r" / "last.ckpt")) == EXIT_OK

    def test_ablate_lambda(self, corpus_dir, tmp_path, capsys):
        out = tmp_path / "abl"
        assert run(["ablate", "--grid", "lambda", "--lambdas", "0,0.1", "--corpus", str(corpus_dir / "corpus.jsonl"),
                    "--out-dir", str(out), *FAST]) == EXIT_OK
        rows = json.loads((out / "ablation.json").read_text())["rows"]
        assert [r["cl_lambda"] for r in rows] == [0.0, 0.1]
        assert (out / "lambda_bleu.csv").read_text().startswith("name,lambda,bleu\n")
        assert "CLH3G lambda=0.1" in capsys.readouterr().out

    def test_ablate_bad_lambdas(self, corpus_dir, tmp_path):
        assert run(["ablate", "--grid", "lambda", "--lambdas", "0,x", "--corpus",
                    str(corpus_dir / "corpus.jsonl"), "--out-dir", str(tmp_path)]) == EXIT_CONFIG

    def test_data_dir_env(self, corpus_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("CLH3G_DATA_DIR", str(tmp_path))
        assert run(["synth", "--authors", "2", "--articles", "3", "--val-size", "1", "--test-size", "1"]) == EXIT_OK
        assert (tmp_path / "corpus.jsonl").exists()
