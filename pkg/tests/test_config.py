import pytest

from kan_ausculta.config import (
    PRESETS,
    RunConfig,
    apply_overrides,
    config_echo,
    load_config,
    parse_config_file,
)


class TestDefaults:
    def test_paper_default_hyperparameters(self):
        cfg = RunConfig()
        assert cfg.model.lstm_hidden == 64
        assert cfg.model.dropout == 0.3
        assert cfg.model.kan_hidden == 32
        assert cfg.model.grid_size == 3
        assert cfg.model.spline_order == 3
        assert cfg.focal.alpha == 0.75
        assert cfg.focal.gamma == 2.19
        assert cfg.optim.lr_stage2 == 3e-3
        assert cfg.optim.weight_decay == 1e-3
        assert cfg.train.batch_size == 64
        assert cfg.train.stage2_max_epochs == 30
        assert cfg.train.early_stop_patience == 7
        assert cfg.sched.factor == 0.5
        assert cfg.sched.patience == 4
        assert cfg.train.stage1_epochs == 7
        assert cfg.train.stage1_majority_cap == 50
        assert cfg.folds == 5
        assert cfg.augment.base_probability == 0.095
        assert cfg.augment.noise_level == 2.17e-5
        assert cfg.augment.max_shift_fraction == 0.15
        assert cfg.augment.pitch_range_semitones == 2.0
        assert cfg.augment.class_probability["URTI"] == 0.6
        assert cfg.smote.k == 5
        assert cfg.smote.target_ratio == 0.5
        assert cfg.model.base_branch is False


class TestConfigFile:
    def test_parse_and_apply(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            """
            # comment line
            focal.gamma = 1.5
            lstm.hidden = 32          # trailing comment
            augment.prob.URTI = 0.8
            smote.target.Bronchiolitis = 40
            train.two_stage = false
            """
        )
        cfg = apply_overrides(RunConfig(), parse_config_file(path))
        assert cfg.focal.gamma == 1.5
        assert cfg.model.lstm_hidden == 32
        assert cfg.augment.class_probability["URTI"] == 0.8
        assert cfg.smote.target_counts["Bronchiolitis"] == 40
        assert cfg.train.two_stage is False

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            apply_overrides(RunConfig(), {"focal.delta": "1.0"})

    def test_per_class_alpha_resolves_to_vector(self):
        cfg = apply_overrides(RunConfig(), {"focal.alpha.URTI": "0.9"})
        fp = cfg.focal.resolve(("Healthy", "COPD", "URTI"))
        assert fp.alpha_per_class is not None
        assert fp.alpha_per_class[2] == 0.9
        assert fp.alpha_per_class[0] == 0.75
        # no overrides: scalar form untouched
        assert RunConfig().focal.resolve(("a", "b")).alpha_per_class is None

    def test_bad_value_rejected(self):
        with pytest.raises(ValueError):
            apply_overrides(RunConfig(), {"folds": "many"})

    def test_invalid_field_value_rejected(self):
        with pytest.raises(ValueError):
            apply_overrides(RunConfig(), {"lstm.dropout": "1.5"})

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("this is not a key-value line\n")
        with pytest.raises(ValueError, match="expected 'key = value'"):
            parse_config_file(path)


class TestPresets:
    def test_full_activates_all_techniques(self):
        cfg = load_config(preset="full")
        assert cfg.focal.gamma == 2.19 and cfg.focal.alpha == 0.75
        assert cfg.augment.enabled and cfg.smote.enabled and cfg.train.two_stage

    def test_baseline_is_plain_cross_entropy(self):
        cfg = load_config(preset="baseline_ce")
        assert cfg.focal.alpha == 1.0 and cfg.focal.gamma == 0.0
        assert not cfg.augment.enabled
        assert not cfg.smote.enabled
        assert not cfg.train.two_stage

    @pytest.mark.parametrize("preset", sorted(PRESETS))
    def test_presets_differ_from_full_only_on_documented_switches(self, preset):
        full = config_echo(load_config(preset="full"))
        other = config_echo(load_config(preset=preset))
        documented = set(PRESETS[preset]) | set(PRESETS["full"]) | {"preset"}
        changed = {k for k in full if full[k] != other[k]}
        key_map = {
            "focal.alpha": "focal.alpha",
            "focal.gamma": "focal.gamma",
            "augment.enabled": "augment.enabled",
            "smote.enabled": "smote.enabled",
            "train.two_stage": "train.two_stage",
            "preset": "preset",
        }
        assert changed <= {key_map[k] for k in documented if k in key_map}

    def test_unknown_preset_rejected(self):
        with pytest.raises(ValueError):
            load_config(preset="does_not_exist")

    def test_explicit_overrides_beat_preset(self):
        cfg = load_config(preset="baseline_ce", overrides={"seed": 9, "folds": 3})
        assert cfg.seed == 9 and cfg.folds == 3


class TestEcho:
    def test_echo_is_flat_and_complete(self):
        echo = config_echo(RunConfig())
        assert echo["focal.gamma"] == 2.19
        assert echo["model.lstm_hidden"] == 64
        assert echo["augment.class_probability.URTI"] == 0.6
        assert all(isinstance(k, str) for k in echo)
