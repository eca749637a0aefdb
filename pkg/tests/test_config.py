import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmtlab import config
from dmtlab.config import ExperimentConfig, apply_overrides, dump_config, load_config, parse_config_text
from dmtlab.errors import ConfigError


class TestDefaults:
    def test_valid(self):
        ExperimentConfig().validate()

    def test_published_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.run.iterations == 5
        assert cfg.run.alpha_schedule == (0.2, 0.4, 0.6, 0.8, 1.0)
        assert cfg.loss.gamma1 == cfg.loss.gamma2
        assert cfg.train.batch_ratio == 7

    def test_task_dependent(self):
        cfg = ExperimentConfig()
        assert cfg.epochs_per_iteration == 30 and cfg.ramp_gamma and cfg.selection_kind == "global"
        assert cfg.batch_units == 64
        cfg.run.task = "pixel"
        assert cfg.epochs_per_iteration == 5 and not cfg.ramp_gamma and cfg.selection_kind == "class_balanced"
        assert cfg.batch_units == 8

    def test_lr_mode(self):
        cfg = ExperimentConfig()
        assert cfg.lr_mode(True) == "poly" and cfg.lr_mode(False) == "cosine"
        cfg.train.lr_schedule = "constant"
        assert cfg.lr_mode(True) == "constant"


class TestOverrides:
    def test_types(self):
        cfg = apply_overrides(ExperimentConfig(), {
            "loss.gamma1": "3", "train.mixup": "true", "run.alpha_schedule": "0.5,1.0",
            "run.iterations": "2", "model.hidden": "8", "run.ablation": "cbst"})
        assert cfg.loss.gamma1 == 3.0 and cfg.train.mixup is True
        assert cfg.run.alpha_schedule == (0.5, 1.0) and cfg.model.hidden == (8,)
        cfg.validate()

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            apply_overrides(ExperimentConfig(), {"loss.gama1": "3"})

    @pytest.mark.parametrize("key,value", [
        ("loss.gamma1", "abc"), ("loss.gamma1", "nan"), ("train.epochs", "1.5"), ("train.mixup", "maybe")])
    def test_bad_values(self, key, value):
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), {key: value})

    @pytest.mark.parametrize("overrides", [
        {"run.task": "regression"},
        {"run.ablation": "magic"},
        {"run.alpha_schedule": "0.2,0.4"},
        {"run.alpha_schedule": "0.4,0.2,0.6,0.8,1.0"},
        {"run.alpha_schedule": "0.2,0.4,0.6,0.8,0.9"},
        {"loss.gamma2": "-1"},
        {"loss.variant": "fancy"},
        {"train.batch_size": "63"},
        {"train.lr": "0"},
        {"corrupt.iterations": "6"},
        {"corrupt.mode": "sideways"},
        {"online.threshold": "1.5"},
        {"orchestrate.init_mode": "random"},
    ])
    def test_validation_rejects(self, overrides):
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), overrides).validate()


class TestFiles:
    def test_parse_comments(self):
        got = parse_config_text("# header\nloss.gamma1 = 4  # inline\n\ntrain.epochs=3\n")
        assert got == {"loss.gamma1": "4", "train.epochs": "3"}

    def test_parse_error_line(self):
        with pytest.raises(ConfigError, match=":2:"):
            parse_config_text("a.b=1\njunk\n")

    def test_load_then_override(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("loss.gamma1=2\nloss.gamma2=2\n")
        cfg = load_config(path, {"loss.gamma2": "3"})
        assert cfg.loss.gamma1 == 2.0 and cfg.loss.gamma2 == 3.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "none.cfg")

    def test_dump_round_trip(self, tmp_path):
        cfg = apply_overrides(ExperimentConfig(), {"loss.gamma1": "1.5", "train.eval_ema": "1"})
        path = tmp_path / "d.cfg"
        path.write_text(dump_config(cfg))
        assert load_config(path) == cfg

    def test_registry_covers_sections(self):
        reg = config.registry()
        assert len(reg) == sum(len(config.fields(cls)) for cls in config.SECTIONS.values())
        assert reg["loss.gamma1"][1] == 5.0 and reg["loss.gamma1"][2]

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 50, allow_nan=False), st.integers(1, 500), st.sampled_from(["standard", "naive", "flip"]))
    def test_dump_load_property(self, gamma, epochs, variant):
        cfg = apply_overrides(ExperimentConfig(), {"loss.gamma1": gamma, "train.epochs": epochs, "loss.variant": variant})
        reparsed = apply_overrides(ExperimentConfig(), parse_config_text(dump_config(cfg)))
        assert reparsed == cfg
