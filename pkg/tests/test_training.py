import dataclasses

import numpy as np
import pytest

from conftest import make_small_dataset
from kan_ausculta.config import load_config
from kan_ausculta.errors import ContractViolation
from kan_ausculta.features import AudioSignal, FeatureConfig
from kan_ausculta.imbalance import SmoteConfig, augment_signal, smote_resample
from kan_ausculta.report import export, load_report
from kan_ausculta.training import (
    ArrayFeatureSource,
    AudioFeatureSource,
    Scaler,
    compute_metric_bundle,
    run_cv,
)


def fast_config(**overrides):
    base = {
        "seed": 11,
        "folds": 2,
        "train.stage2_max_epochs": 4,
        "train.stage1_epochs": 2,
        "train.batch_size": 16,
        "lstm.hidden": 6,
        "kan.hidden": 6,
    }
    base.update(overrides)
    return load_config(preset="full", overrides=base)


@pytest.fixture(scope="module")
def small_run():
    index, features = make_small_dataset()
    source = ArrayFeatureSource([r.path for r in index.rows], features)
    cfg = fast_config()
    report, artifacts = run_cv(cfg, index, source)
    return cfg, index, source, report, artifacts


class TestScaler:
    def test_zscore_transform(self):
        rng = np.random.default_rng(0)
        features = rng.normal(loc=3.0, scale=2.0, size=(200, 5))
        scaler = Scaler.fit(features)
        transformed = scaler.transform(features)
        np.testing.assert_allclose(transformed.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(transformed.std(axis=0), 1.0, atol=1e-12)

    def test_constant_feature_does_not_blow_up(self):
        features = np.ones((10, 3))
        scaler = Scaler.fit(features)
        out = scaler.transform(features)
        assert np.all(np.isfinite(out))

    def test_validation_row_rejected(self):
        with pytest.raises(ContractViolation):
            Scaler.fit(np.zeros((3, 2)), split_tags=["train", "val", "train"])


class TestLeakageGuards:
    """A poisoned validation row must trip every train-only path."""

    def test_augmentation_guard(self):
        sig = AudioSignal(np.sin(np.arange(4000) / 10.0), 22050)
        from kan_ausculta.imbalance import AugmentConfig

        with pytest.raises(ContractViolation):
            augment_signal(sig, 0, AugmentConfig(), np.random.default_rng(0),
                           split_tag="val")

    def test_smote_guard(self):
        features = np.zeros((4, 3))
        labels = np.array([0, 0, 1, 1])
        with pytest.raises(ContractViolation):
            smote_resample(features, labels, SmoteConfig(),
                           split_tags=["train", "val", "train", "train"])

    def test_scaler_guard(self):
        with pytest.raises(ContractViolation):
            Scaler.fit(np.zeros((2, 2)), split_tags=["val", "train"])

    def test_epoch_features_guard(self):
        index, features = make_small_dataset()
        source = ArrayFeatureSource([r.path for r in index.rows], features)
        # ArrayFeatureSource skips augmentation entirely; the audio source
        # enforces the guard
        audio_source = AudioFeatureSource(FeatureConfig())
        rows = [dataclasses.replace(index.rows[0], split="val")]
        from kan_ausculta.imbalance import AugmentConfig

        with pytest.raises(ContractViolation):
            audio_source.epoch_features(rows, np.random.default_rng(0),
                                        AugmentConfig(base_probability=1.0),
                                        index.class_names)


class TestRunCv:
    def test_report_shape(self, small_run):
        cfg, index, _, report, artifacts = small_run
        assert len(report.folds) == cfg.folds
        assert len(artifacts) == cfg.folds
        assert report.class_names == list(index.class_names)
        assert report.d_feat == 8
        assert sum(report.fold_sizes) == len(index)
        assert not report.incomplete
        for fold in report.folds:
            assert 1 <= fold.best_epoch <= fold.epochs_run
            assert len(fold.history) == fold.epochs_run
        assert 0.0 <= report.pooled.macro_f1 <= 1.0

    def test_deterministic_given_seed(self, small_run):
        cfg, index, source, report, _ = small_run
        again, _ = run_cv(cfg, index, source)
        assert again.to_dict() == report.to_dict()

    def test_seed_changes_report(self, small_run):
        cfg, index, source, report, _ = small_run
        other_cfg = fast_config(seed=99)
        other, _ = run_cv(other_cfg, index, source)
        assert other.to_dict() != report.to_dict()

    def test_oof_pool_covers_every_sample(self, small_run):
        cfg, index, _, report, _ = small_run
        pooled_support = sum(row["support"] for row in report.pooled.per_class)
        assert pooled_support == len(index)

    def test_two_stage_skipped_for_baseline(self):
        index, features = make_small_dataset()
        source = ArrayFeatureSource([r.path for r in index.rows], features)
        cfg = load_config(preset="baseline_ce", overrides={
            "seed": 5, "folds": 2, "train.stage2_max_epochs": 3,
            "lstm.hidden": 4, "kan.hidden": 4,
        })
        report, _ = run_cv(cfg, index, source)
        assert report.config["train.two_stage"] is False
        assert len(report.folds) == 2

    def test_empty_index_rejected(self, small_run):
        cfg, _, source, _, _ = small_run
        from kan_ausculta.dataset import DatasetIndex

        with pytest.raises(ValueError):
            run_cv(cfg, DatasetIndex(rows=[], class_names=("a",)), source)


class TestMetricBundle:
    def test_bundle_fields_plain_python(self):
        rng = np.random.default_rng(3)
        y = rng.integers(0, 3, size=60)
        probs = rng.random((60, 3))
        probs /= probs.sum(axis=1, keepdims=True)
        bundle = compute_metric_bundle(y, probs, ("a", "b", "c"))
        assert isinstance(bundle.accuracy, float)
        assert isinstance(bundle.confusion[0][0], int)
        assert {row["name"] for row in bundle.per_class} == {"a", "b", "c"}
        assert bundle.calibration["ece"] >= 0


class TestExportRoundTrip:
    def test_report_json_round_trips_to_equality(self, small_run, tmp_path):
        _, _, _, report, artifacts = small_run
        from kan_ausculta.kan import export_splines

        dump = export_splines(artifacts[0].model.kan, 9)
        written = export(report, tmp_path, spline_dump=dump)
        names = {p.split("/")[-1] for p in written}
        assert names == {
            "report.json", "confusion.csv", "per_class.csv", "folds.csv",
            "calibration.csv", "splines.csv",
        }
        loaded = load_report(tmp_path / "report.json")
        assert loaded == report

    def test_folds_csv_has_k_rows_plus_summary(self, small_run, tmp_path):
        cfg, _, _, report, _ = small_run
        export(report, tmp_path)
        lines = (tmp_path / "folds.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + cfg.folds + 2  # header + folds + mean/std
        assert lines[-2].startswith("mean,")
        assert lines[-1].startswith("std,")

    def test_confusion_csv_row_sums_match_support(self, small_run, tmp_path):
        _, index, _, report, _ = small_run
        export(report, tmp_path)
        lines = (tmp_path / "confusion.csv").read_text().strip().splitlines()[1:]
        supports = {row["name"]: row["support"] for row in report.pooled.per_class}
        for line in lines:
            cells = line.split(",")
            assert sum(int(v) for v in cells[1:]) == supports[cells[0]]

    def test_splines_csv_structure(self, small_run, tmp_path):
        _, _, _, report, artifacts = small_run
        from kan_ausculta.kan import export_splines

        dump = export_splines(artifacts[0].model.kan, 5)
        export(report, tmp_path, spline_dump=dump)
        lines = (tmp_path / "splines.csv").read_text().strip().splitlines()
        assert lines[0] == "layer,out_index,in_index,x,phi"
        assert len(lines) == 1 + len(dump.curves) * 5

    def test_unwritable_path_fails_without_partials(self, small_run, tmp_path):
        _, _, _, report, _ = small_run
        from kan_ausculta.errors import DataError

        target = tmp_path / "blocked"
        target.write_text("a file, not a directory")
        with pytest.raises(DataError):
            export(report, target)


class TestAudioFeatureSourceCaching:
    def test_base_features_cached_and_deterministic(self, tmp_path):
        import scipy.io.wavfile

        from kan_ausculta.dataset import DatasetIndex, IndexRow

        rng = np.random.default_rng(0)
        paths = []
        for k in range(3):
            path = tmp_path / f"{k}_x.wav"
            scipy.io.wavfile.write(path, 22050,
                                   (0.4 * rng.normal(size=6000)).astype(np.float32))
            paths.append(str(path))
        rows = [IndexRow(path=p, patient_id=str(k), label=0, split="train")
                for k, p in enumerate(paths)]
        index = DatasetIndex(rows=rows, class_names=("only",))
        source = AudioFeatureSource(FeatureConfig())
        a = source.base_features(index.rows)
        b = source.base_features(index.rows)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (3, source.d_feat)
