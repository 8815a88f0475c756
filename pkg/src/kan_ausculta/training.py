"""Per-fold two-stage training and cross-validated evaluation.

One fold runs:

1. optional stage 1: pre-train on every minority-class training row plus
   a capped random sample of the majority class;
2. stage 2 epochs: (re-)augment training audio, extract features, optional
   SMOTE, fit a z-score scaler on the processed training features only,
   mini-batch updates with focal loss + AdamW, validate, step the plateau
   scheduler and the early stopper (which snapshots the best model and its
   scaler);
3. return the best snapshot; its validation probabilities join the pooled
   out-of-fold arrays that produce the headline metrics.

Leakage guards: validation rows never reach augmentation, SMOTE, or
scaler fitting; each of those paths raises ContractViolation when handed
a validation-tagged row.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, config_echo
from .dataset import DatasetIndex
from .errors import ContractViolation, TrainingAbort
from .evalkit import (
    average_precision,
    calibration_bins,
    classification_metrics,
    confusion,
    roc_auc_ovr,
    stratified_kfold,
)
from .features import AudioSignal, default_layout, extract, preprocess, read_wav
from .imbalance import apply_transforms, build_stage1_subset, smote_resample
from .model import (
    build_model,
    grads_to_dict,
    model_backward,
    model_forward,
    parameters,
    restore_parameters,
    snapshot_parameters,
    softmax,
)
from .optim import (
    EarlyStopState,
    FocalParams,
    SchedulerState,
    adamw_init,
    adamw_step,
    early_stop,
    focal_loss_batch,
    plateau_step,
)

__all__ = [
    "Scaler",
    "ArrayFeatureSource",
    "AudioFeatureSource",
    "MetricBundle",
    "FoldReport",
    "RunReport",
    "FoldArtifacts",
    "compute_metric_bundle",
    "run_cv",
]

log = logging.getLogger(__name__)

REPORT_VERSION = 1


@dataclass
class Scaler:
    """Per-feature z-score fit on training rows only (enforced via tags)."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features, split_tags=None) -> "Scaler":
        if split_tags is not None and any(tag == "val" for tag in split_tags):
            raise ContractViolation("scaler fitting received a validation-tagged row")
        features = np.asarray(features, dtype=float)
        return cls(
            mean=features.mean(axis=0),
            scale=np.maximum(features.std(axis=0), 1e-8),
        )

    def transform(self, features) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.mean) / self.scale


class ArrayFeatureSource:
    """Pre-extracted feature matrix keyed by row path (cache files, synthetic data)."""

    can_augment = False

    def __init__(self, paths, matrix, fingerprint: str | None = None):
        matrix = np.asarray(matrix, dtype=float)
        if len(paths) != matrix.shape[0]:
            raise ValueError("paths and matrix disagree on the row count")
        self._by_path = {path: matrix[i] for i, path in enumerate(paths)}
        if fingerprint is None:
            fingerprint = "array-" + hashlib.sha256(matrix.tobytes()).hexdigest()[:16]
        self.fingerprint = fingerprint
        self.d_feat = matrix.shape[1]
        self._warned = False

    def base_features(self, rows) -> np.ndarray:
        return np.stack([self._by_path[row.path] for row in rows])

    def epoch_features(self, rows, rng, augment_cfg, class_names) -> np.ndarray:
        if not self._warned:
            log.warning("feature source has no audio; time-domain augmentation skipped")
            self._warned = True
        return self.base_features(rows)


class AudioFeatureSource:
    """Extract features from WAV files, caching the non-augmented baseline."""

    can_augment = True

    def __init__(self, feature_config, cache: dict | None = None):
        self.layout = default_layout(feature_config)
        self.fingerprint = self.layout.fingerprint
        self.d_feat = self.layout.dim
        self._cache = dict(cache) if cache else {}

    def _extract_path(self, path) -> np.ndarray:
        raw = read_wav(path)
        return extract(preprocess(raw, self.layout.config), self.layout).values

    def base_row(self, path) -> np.ndarray:
        if path not in self._cache:
            self._cache[path] = self._extract_path(path)
        return self._cache[path]

    def base_features(self, rows) -> np.ndarray:
        return np.stack([self.base_row(row.path) for row in rows])

    def epoch_features(self, rows, rng, augment_cfg, class_names) -> np.ndarray:
        """Per-epoch augmented extraction; unchanged signals reuse the cache.

        The probability gate is drawn per row in row order so the stream is
        deterministic; only rows whose gate fires pay for re-extraction.
        """
        out = np.empty((len(rows), self.d_feat))
        for i, row in enumerate(rows):
            if row.split == "val":
                raise ContractViolation("augmentation path received a validation row")
            name = class_names[row.label]
            if rng.random() < augment_cfg.probability_for(name):
                raw = read_wav(row.path)
                augmented = AudioSignal(
                    samples=apply_transforms(
                        np.asarray(raw.samples, dtype=float),
                        raw.sample_rate,
                        augment_cfg,
                        rng,
                        class_name=name,
                    ),
                    sample_rate=raw.sample_rate,
                )
                out[i] = extract(preprocess(augmented, self.layout.config), self.layout).values
            else:
                out[i] = self.base_row(row.path)
        return out


# ----------------------------------------------------------------------------
# report structures (plain-python values so JSON round-trips to equality)


@dataclass
class MetricBundle:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    per_class: list  # dicts: name, precision, recall, f1, support, auc, ap
    confusion: list
    confusion_normalized: list
    auc_macro: float | None
    calibration: dict  # bin_confidence, bin_accuracy, bin_count, ece

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricBundle":
        return cls(**data)


@dataclass
class FoldReport:
    fold: int
    val_size: int
    best_epoch: int
    epochs_run: int
    macro_f1: float
    accuracy: float
    history: list  # dicts: epoch, train_loss, val_macro_f1, lr
    metrics: MetricBundle

    def to_dict(self) -> dict:
        data = dict(self.__dict__)
        data["metrics"] = self.metrics.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "FoldReport":
        data = dict(data)
        data["metrics"] = MetricBundle.from_dict(data["metrics"])
        return cls(**data)


@dataclass
class RunReport:
    version: int
    config: dict
    seed: int
    class_names: list
    d_feat: int
    fingerprint: str
    fold_sizes: list
    folds: list  # FoldReport
    incomplete: list  # dicts: fold, error
    summary: dict  # fold-level mean/std rows
    pooled: MetricBundle
    best_fold: int
    spline_dump: str = "splines.csv"  # artifact holding the best fold's edge curves

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config": self.config,
            "seed": self.seed,
            "class_names": self.class_names,
            "d_feat": self.d_feat,
            "fingerprint": self.fingerprint,
            "fold_sizes": self.fold_sizes,
            "folds": [f.to_dict() for f in self.folds],
            "incomplete": self.incomplete,
            "summary": self.summary,
            "pooled": self.pooled.to_dict(),
            "best_fold": self.best_fold,
            "spline_dump": self.spline_dump,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        data = dict(data)
        data["folds"] = [FoldReport.from_dict(f) for f in data["folds"]]
        data["pooled"] = MetricBundle.from_dict(data["pooled"])
        return cls(**data)


@dataclass
class FoldArtifacts:
    fold: int
    model: object
    scaler: Scaler


def compute_metric_bundle(y_true, probs, class_names, n_bins: int = 10) -> MetricBundle:
    y_true = np.asarray(y_true, dtype=int)
    probs = np.asarray(probs, dtype=float)
    n_classes = len(class_names)
    preds = probs.argmax(axis=1)
    cm = confusion(y_true, preds, n_classes)
    metrics = classification_metrics(cm)
    auc_per_class, auc_macro = roc_auc_ovr(y_true, probs)
    ap_per_class = average_precision(y_true, probs)
    calib = calibration_bins(y_true, probs, n_bins)

    per_class = [
        {
            "name": class_names[c],
            "precision": float(metrics.precision[c]),
            "recall": float(metrics.recall[c]),
            "f1": float(metrics.f1[c]),
            "support": int(metrics.support[c]),
            "auc": auc_per_class[c],
            "ap": ap_per_class[c],
        }
        for c in range(n_classes)
    ]
    return MetricBundle(
        accuracy=metrics.accuracy,
        macro_precision=metrics.macro_precision,
        macro_recall=metrics.macro_recall,
        macro_f1=metrics.macro_f1,
        weighted_precision=metrics.weighted_precision,
        weighted_recall=metrics.weighted_recall,
        weighted_f1=metrics.weighted_f1,
        per_class=per_class,
        confusion=[[int(v) for v in row] for row in cm.counts],
        confusion_normalized=[[float(v) for v in row] for row in cm.normalized],
        auc_macro=auc_macro,
        calibration={
            "bin_confidence": [float(v) for v in calib.bin_confidence],
            "bin_accuracy": [float(v) for v in calib.bin_accuracy],
            "bin_count": [int(v) for v in calib.bin_count],
            "ece": calib.ece,
        },
    )


# ----------------------------------------------------------------------------
# training loops


def _train_one_epoch(model, params, features, labels, fp, opt_state, batch_size, rng):
    order = rng.permutation(len(features))
    total = 0.0
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        logits, cache = model_forward(model, features[idx], training=True, rng=rng)
        loss, grad_logits = focal_loss_batch(softmax(logits), labels[idx], fp)
        grads = grads_to_dict(model_backward(model, cache, grad_logits))
        adamw_step(params, grads, opt_state)
        total += loss * len(idx)
    return total / len(order)


def _predict(model, features) -> np.ndarray:
    logits, _ = model_forward(model, features, training=False)
    return softmax(logits)


def _macro_f1(y_true, probs, n_classes) -> float:
    cm = confusion(y_true, probs.argmax(axis=1), n_classes)
    return classification_metrics(cm).macro_f1


def _focal_params(cfg: RunConfig, class_names) -> FocalParams:
    return cfg.focal.resolve(tuple(class_names))


def _run_fold(cfg: RunConfig, fold_idx: int, tagged: DatasetIndex, source, seed_seq):
    class_names = tagged.class_names
    n_classes = len(class_names)
    streams = seed_seq.spawn(6)
    rng_init, rng_stage1, rng_train, rng_aug, rng_smote, _ = (
        np.random.default_rng(s) for s in streams
    )

    train_rows = [row for row in tagged.rows if row.split == "train"]
    val_rows = [row for row in tagged.rows if row.split == "val"]
    y_train = np.array([row.label for row in train_rows], dtype=int)
    y_val = np.array([row.label for row in val_rows], dtype=int)

    model = build_model(
        d_feat=source.d_feat,
        class_count=n_classes,
        rng=rng_init,
        lstm_hidden=cfg.model.lstm_hidden,
        dropout_rate=cfg.model.dropout,
        kan_hidden=cfg.model.kan_hidden,
        grid_size=cfg.model.grid_size,
        spline_order=cfg.model.spline_order,
        domain=(cfg.model.domain_min, cfg.model.domain_max),
        kan_init_scale=cfg.model.init_scale or None,
        kan_base_branch=cfg.model.base_branch,
    )
    params = parameters(model)
    fp = _focal_params(cfg, class_names)

    X_val = source.base_features(val_rows)

    if cfg.train.two_stage:
        counts = np.bincount(y_train, minlength=n_classes)
        majority = int(counts.argmax())
        stage1 = build_stage1_subset(
            DatasetIndex(rows=train_rows, class_names=class_names),
            majority,
            cap=cfg.train.stage1_majority_cap,
            rng=rng_stage1,
        )
        X_s1 = source.base_features(stage1.rows)
        y_s1 = stage1.labels()
        scaler_s1 = Scaler.fit(X_s1, [row.split for row in stage1.rows])
        X_s1 = scaler_s1.transform(X_s1)
        opt_s1 = adamw_init(
            params,
            cfg.optim.lr_stage1,
            beta1=cfg.optim.beta1,
            beta2=cfg.optim.beta2,
            eps=cfg.optim.eps,
            weight_decay=cfg.optim.weight_decay,
        )
        for _ in range(cfg.train.stage1_epochs):
            _train_one_epoch(
                model, params, X_s1, y_s1, fp, opt_s1, cfg.train.batch_size, rng_stage1
            )

    opt = adamw_init(
        params,
        cfg.optim.lr_stage2,
        beta1=cfg.optim.beta1,
        beta2=cfg.optim.beta2,
        eps=cfg.optim.eps,
        weight_decay=cfg.optim.weight_decay,
    )
    sched = SchedulerState(
        lr=cfg.optim.lr_stage2,
        factor=cfg.sched.factor,
        patience=cfg.sched.patience,
        threshold=cfg.sched.threshold,
        min_lr=cfg.sched.min_lr,
    )
    stopper = EarlyStopState(
        patience=cfg.train.early_stop_patience,
        threshold=cfg.train.early_stop_threshold,
    )

    history = []
    static_augmented = None
    train_tags = [row.split for row in train_rows]
    for epoch in range(1, cfg.train.stage2_max_epochs + 1):
        if cfg.augment.enabled and source.can_augment:
            if cfg.augment.per_epoch or static_augmented is None:
                X_train = source.epoch_features(train_rows, rng_aug, cfg.augment, class_names)
                if not cfg.augment.per_epoch:
                    static_augmented = X_train
            else:
                X_train = static_augmented
        else:
            X_train = source.base_features(train_rows)

        if cfg.smote.enabled:
            X_proc, y_proc = smote_resample(
                X_train,
                y_train,
                cfg.smote,
                rng=rng_smote,
                split_tags=train_tags,
                class_names=class_names,
            )
        else:
            X_proc, y_proc = X_train, y_train

        scaler = Scaler.fit(X_proc, ["train"] * len(X_proc))
        opt.lr = sched.lr
        train_loss = _train_one_epoch(
            model, params, scaler.transform(X_proc), y_proc, fp, opt, cfg.train.batch_size, rng_train
        )

        probs_val = _predict(model, scaler.transform(X_val))
        val_f1 = _macro_f1(y_val, probs_val, n_classes)
        plateau_step(sched, val_f1)
        stop = early_stop(
            stopper, val_f1, snapshot=(snapshot_parameters(model), scaler), epoch=epoch
        )
        history.append(
            {"epoch": epoch, "train_loss": float(train_loss), "val_macro_f1": float(val_f1), "lr": float(sched.lr)}
        )
        log.debug("fold %d epoch %d: loss %.4f val macro-F1 %.4f", fold_idx, epoch, train_loss, val_f1)
        if stop:
            break

    best_params, best_scaler = stopper.best_snapshot
    restore_parameters(model, best_params)
    probs_val = _predict(model, best_scaler.transform(X_val))

    bundle = compute_metric_bundle(y_val, probs_val, class_names, cfg.calibration_bins)
    report = FoldReport(
        fold=fold_idx,
        val_size=len(val_rows),
        best_epoch=stopper.best_epoch,
        epochs_run=len(history),
        macro_f1=bundle.macro_f1,
        accuracy=bundle.accuracy,
        history=history,
        metrics=bundle,
    )
    return report, probs_val, FoldArtifacts(fold=fold_idx, model=model, scaler=best_scaler)


def run_cv(cfg: RunConfig, index: DatasetIndex, source=None):
    """Cross-validate per the two-stage recipe; returns (RunReport, artifacts).

    Fully reproducible given (config, seed, dataset bytes). A failing fold
    is recorded in ``report.incomplete`` and excluded from pooling; the run
    aborts only if every fold fails.
    """
    if len(index) == 0:
        raise ValueError("empty dataset index")
    if source is None:
        source = AudioFeatureSource(cfg.features)

    labels = index.labels()
    assignment = stratified_kfold(labels, cfg.folds, cfg.seed)
    seed_root = np.random.SeedSequence(cfg.seed)
    fold_seeds = seed_root.spawn(cfg.folds)

    n = len(index)
    n_classes = index.class_count
    oof_probs = np.full((n, n_classes), np.nan)
    oof_mask = np.zeros(n, dtype=bool)

    fold_reports = []
    artifacts = []
    incomplete = []
    for fold in range(cfg.folds):
        tagged = index.with_folds(assignment.fold_of, fold)
        try:
            report, probs_val, art = _run_fold(cfg, fold, tagged, source, fold_seeds[fold])
        except ContractViolation:
            raise  # leakage guards are bugs in the caller, never swallowed
        except Exception as exc:  # noqa: BLE001 - fold-level diagnostic barrier
            log.error("fold %d aborted: %s", fold, exc)
            incomplete.append({"fold": fold, "error": f"{type(exc).__name__}: {exc}"})
            continue
        fold_reports.append(report)
        artifacts.append(art)
        val_positions = assignment.val_positions(fold)
        oof_probs[val_positions] = probs_val
        oof_mask[val_positions] = True

    if not fold_reports:
        raise TrainingAbort("all folds failed; see the incomplete list in the logs")

    pooled = compute_metric_bundle(
        labels[oof_mask], oof_probs[oof_mask], index.class_names, cfg.calibration_bins
    )
    fold_f1 = np.array([r.macro_f1 for r in fold_reports])
    fold_acc = np.array([r.accuracy for r in fold_reports])
    fold_wf1 = np.array([r.metrics.weighted_f1 for r in fold_reports])
    summary = {
        "macro_f1_mean": float(fold_f1.mean()),
        "macro_f1_std": float(fold_f1.std()),
        "accuracy_mean": float(fold_acc.mean()),
        "accuracy_std": float(fold_acc.std()),
        "weighted_f1_mean": float(fold_wf1.mean()),
        "weighted_f1_std": float(fold_wf1.std()),
    }
    best_fold = int(fold_f1.argmax())

    report = RunReport(
        version=REPORT_VERSION,
        config=config_echo(cfg),
        seed=cfg.seed,
        class_names=list(index.class_names),
        d_feat=source.d_feat,
        fingerprint=source.fingerprint,
        fold_sizes=[int((assignment.fold_of == f).sum()) for f in range(cfg.folds)],
        folds=fold_reports,
        incomplete=incomplete,
        summary=summary,
        pooled=pooled,
        best_fold=fold_reports[best_fold].fold,
    )
    return report, artifacts
