from pathlib import Path

import pytest
from pydantic import ValidationError

from config import ConfigError, RunConfig, get_settings, load_run_config, parse_overrides

DEFAULT_TOML = Path(__file__).resolve().parent.parent / "configs" / "default.toml"


class TestOverrides:
    def test_nested_values_are_typed(self):
        tree = parse_overrides(["train.lr=1e-3", "cot.multi_turn=false", "judge.model=gpt-4o", 'bev.adapter="pool"'])
        assert tree == {
            "train": {"lr": 0.001},
            "cot": {"multi_turn": False},
            "judge": {"model": "gpt-4o"},
            "bev": {"adapter": "pool"},
        }

    def test_malformed(self):
        with pytest.raises(ConfigError):
            parse_overrides(["train.lr"])
        with pytest.raises(ConfigError):
            parse_overrides(["train..lr=1"])

    def test_conflicting(self):
        with pytest.raises(ConfigError):
            parse_overrides(["train=1", "train.lr=2"])


class TestLoad:
    def test_defaults(self):
        cfg = load_run_config()
        assert cfg.world.n_scenes == 256
        assert cfg.align.k == 4
        assert cfg.judge.kind == "mock"
        assert cfg.eval.max_failure_rate == 0.5

    def test_default_file_matches_defaults(self):
        assert load_run_config(DEFAULT_TOML) == RunConfig()

    def test_toml_and_set(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[train]\nepochs = 3\nlr = 0.01\n\n[world]\nseed = 5\n")
        cfg = load_run_config(path, ["train.lr=0.002"])
        assert cfg.train.epochs == 3
        assert cfg.train.lr == 0.002
        assert cfg.world.seed == 5
        assert cfg.train.batch_size == 4

    def test_environment_beats_file(self, tmp_path, monkeypatch):
        path = tmp_path / "run.toml"
        path.write_text("[train]\nepochs = 3\n")
        monkeypatch.setenv("RDA_TRAIN__EPOCHS", "7")
        assert load_run_config(path).train.epochs == 7
        assert load_run_config(path, ["train.epochs=9"]).train.epochs == 9

    def test_unknown_key(self):
        with pytest.raises(ValidationError):
            load_run_config(None, ["train.learning_rate=0.1"])

    def test_unknown_section_in_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[optimizer]\nlr = 1\n")
        with pytest.raises(ValidationError):
            load_run_config(path)

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            load_run_config(None, ["eval.max_failure_rate=2.0"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "absent.toml")

    def test_invalid_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[train\n")
        with pytest.raises(ConfigError):
            load_run_config(path)


class TestResolved:
    def test_model_config_from_sections(self):
        cfg = load_run_config(None, ["model.width=32", "model.n_heads=2"])
        model = cfg.model.resolve(vocab_size=100, visual_layout=(64, 16))
        assert (model.width, model.n_heads, model.vocab_size) == (32, 2, 100)
        assert (model.n_visual_tokens, model.visual_token_dim) == (64, 16)

    def test_derived_options(self):
        cfg = load_run_config(None, ["cot.prediction=false", "bev.resolution_m=2.0"])
        assert not cfg.cot.options.prediction
        assert cfg.bev.spec.size == 16
        assert cfg.eval.ego_dims == (4.084, 1.730)

    def test_settings_cached(self):
        assert get_settings() is get_settings()
        assert get_settings().JUDGE_API_KEY_ENV
