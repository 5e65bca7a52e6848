"""Optimization loop, speaker-disjoint cross-validation and regression metrics."""
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from sklearn.metrics import r2_score, root_mean_squared_error

from helpers.core import BAND_ORDER, SCALE_MAX, TARGET_KINDS, observation_key, severity_band
from helpers.errors import ConfigError, DataError, InputError, UndefinedMetricError, ValidationError
from helpers.misc import make_rng, parallel_map
from helpers.papi import PAPI_FEATURES
from helpers.lips import LIP_FEATURES
from helpers.vgan import batch_loss, gradients, init_params, predict_batch


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and protocol settings."""

    target_kind: str = "total"
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    k_folds: int = 10
    validation_fraction: float = 0.0

    def __post_init__(self):
        if self.target_kind not in TARGET_KINDS:
            raise ConfigError(f"unknown target kind '{self.target_kind}'")
        if self.k_folds < 2:
            raise ConfigError("k-folds must be at least 2")
        if self.learning_rate < 0:
            raise ConfigError("learning-rate must not be negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch-size >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigError("Adam betas must lie in [0, 1) and eps must be positive")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError("validation-fraction must lie in [0, 1)")


@dataclass(eq=False)
class GroupDataset:
    """Stacked group features with per-subject scores of every kind."""

    group_ids: List[str]
    subject_ids: np.ndarray
    papi: np.ndarray
    lips: Optional[np.ndarray]
    scores: Dict[str, Dict[str, float]]
    target_kind: str = "total"

    def __len__(self):
        return len(self.group_ids)

    @property
    def targets(self):
        """Target of every group for the current kind."""
        return np.array([self.scores[s][self.target_kind] for s in self.subject_ids], dtype=np.float64)

    @property
    def scale_max(self):
        return float(SCALE_MAX[self.target_kind])

    def band(self, subject_id):
        """Severity band of a subject from its total score."""
        return severity_band(self.scores[subject_id]["total"])

    def with_target(self, kind):
        """Same groups regressed on another score kind."""
        missing = sorted(s for s in set(self.subject_ids) if kind not in self.scores[s])
        if missing:
            raise ValidationError(f"subjects without a {kind} score: {', '.join(missing)}")
        return replace(self, target_kind=kind)

    def subset(self, mask):
        """Groups selected by a boolean mask."""
        index = np.flatnonzero(mask)
        return GroupDataset(
            [self.group_ids[i] for i in index],
            self.subject_ids[index],
            self.papi[index],
            None if self.lips is None else self.lips[index],
            self.scores,
            self.target_kind,
        )

    def for_subjects(self, subjects):
        """Groups of the given subjects."""
        return self.subset(np.isin(self.subject_ids, list(subjects)))


def stack_groups(refs, papi_frame, lip_frame=None, need_lips=True):
    """Stack the feature rows named by group references; returns (group ids, subject ids, papi, lips)."""

    def index(frame):
        keys = [observation_key(r, s, e) for r, s, e in zip(frame["recording_id"], frame["start"], frame["end"])]
        return dict(zip(keys, range(len(keys))))

    papi_index = index(papi_frame)
    papi_values = papi_frame[list(PAPI_FEATURES)].to_numpy(dtype=np.float64)
    lip_index = lip_values = None
    if need_lips:
        if lip_frame is None:
            raise InputError("lip features are required but no lip table was given")
        lip_index = index(lip_frame)
        lip_values = lip_frame[list(LIP_FEATURES)].to_numpy(dtype=np.float64)

    papi, lips, subjects, group_ids = [], [], [], []
    for ref in refs:
        rows = []
        for key in ref.members:
            if key not in papi_index:
                raise InputError(f"group {ref.group_id}: observation {key} has no acoustic features")
            rows.append(papi_index[key])
        papi.append(papi_values[rows])
        if need_lips:
            lip_rows = []
            for key in ref.members:
                if key not in lip_index or np.isnan(lip_values[lip_index[key]]).any():
                    raise InputError(f"group {ref.group_id}: observation {key} has no lip features")
                lip_rows.append(lip_index[key])
            lips.append(lip_values[lip_rows])
        subjects.append(ref.subject_id)
        group_ids.append(ref.group_id)

    if not group_ids:
        raise DataError("no groups to build a dataset from")
    return group_ids, np.array(subjects), np.array(papi), np.array(lips) if need_lips else None


def build_dataset(refs, papi_frame, lip_frame, manifest, target_kind="total", need_lips=True):
    """Group features with the manifest scores of their subjects."""

    group_ids, subjects, papi, lips = stack_groups(refs, papi_frame, lip_frame, need_lips)
    scores = {s.subject_id: dict(s.fda_scores) for s in manifest.subjects}
    for subject in set(subjects):
        if subject not in scores:
            raise ValidationError(f"group subject '{subject}' is not in the manifest")
    return GroupDataset(group_ids, subjects, papi, lips, scores).with_target(target_kind)


@dataclass(frozen=True)
class AdamState:
    """Step count and moment estimates."""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, grads, state, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update; returns (new params, new state)."""

    beta1, beta2 = betas
    step = state.step + 1
    new_params, new_m, new_v = OrderedDict(), {}, {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None or grad.shape != value.shape:
            raise InputError(f"gradient for '{name}' missing or of shape {None if grad is None else grad.shape}, expected {value.shape}")
        m = beta1 * state.m.get(name, np.zeros_like(value)) + (1 - beta1) * grad
        v = beta2 * state.v.get(name, np.zeros_like(value)) + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1**step)
        v_hat = v / (1 - beta2**step)
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(step, new_m, new_v)


def _stats(values):
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


def fit_standardization(dataset, config):
    """Z-score statistics from training groups only."""

    stats = {}
    papi_mean, papi_std = _stats(dataset.papi.reshape(-1, dataset.papi.shape[-1]))
    stats["papi.mean"], stats["papi.std"] = papi_mean, papi_std
    if dataset.lips is not None and config.uses_lips:
        lip_mean, lip_std = _stats(dataset.lips.reshape(-1, dataset.lips.shape[-1]))
    else:
        lip_mean, lip_std = np.zeros(config.visual_in), np.ones(config.visual_in)
    stats["lip.mean"], stats["lip.std"] = lip_mean, lip_std
    target_mean, target_std = _stats(dataset.targets.reshape(-1, 1))
    stats["target.mean"], stats["target.std"] = target_mean, target_std
    return stats


def _lips_for(dataset, config):
    return dataset.lips if config.uses_lips else None


def split_validation(dataset, fraction, seed):
    """Hold out a speaker-disjoint share of subjects."""

    subjects = sorted(set(dataset.subject_ids))
    count = int(round(len(subjects) * fraction))
    if count < 1 or count >= len(subjects):
        return dataset, None
    rng = make_rng(seed, 7)
    held = set(subjects[i] for i in rng.permutation(len(subjects))[:count])
    mask = np.isin(dataset.subject_ids, sorted(held))
    return dataset.subset(~mask), dataset.subset(mask)


def train(dataset, config, model_config, logger=None, validation=None):
    """Fit a model; returns (model, history of per-epoch losses)."""

    if len(dataset) == 0:
        raise DataError("empty training set")
    if validation is None and config.validation_fraction > 0:
        dataset, validation = split_validation(dataset, config.validation_fraction, config.seed)

    model = init_params(model_config, config.seed, dataset.target_kind, dataset.scale_max)
    model.standardization = fit_standardization(dataset, model_config)
    lips = _lips_for(dataset, model_config)
    targets = dataset.targets

    rng = make_rng(config.seed, 1)
    state = AdamState()
    history = {"train_loss": [], "validation_loss": []}
    best = (np.inf, None)
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for first in range(0, len(order), config.batch_size):
            batch = order[first : first + config.batch_size]
            loss, grads = gradients(
                model, dataset.papi[batch], None if lips is None else lips[batch], targets[batch]
            )
            model.params, state = adam_step(
                model.params, grads, state, config.learning_rate, (config.beta1, config.beta2), config.eps
            )
            total += loss * len(batch)
        history["train_loss"].append(total / len(order))

        if validation is not None and len(validation):
            val_loss = batch_loss(model, validation.papi, _lips_for(validation, model_config), validation.targets)
            history["validation_loss"].append(val_loss)
            if val_loss < best[0]:
                best = (val_loss, OrderedDict((k, v.copy()) for k, v in model.params.items()))
        if logger and (epoch + 1) % 10 == 0:
            logger.debug(f"Epoch {epoch + 1}/{config.epochs} training loss {history['train_loss'][-1]:.5f}")

    if best[1] is not None:
        model.params = best[1]
    return model, history


def rmse(ys, predictions):
    """Root mean squared error."""

    ys = np.asarray(ys, dtype=np.float64)
    if ys.size == 0:
        raise DataError("rmse of an empty set")
    return float(root_mean_squared_error(ys, np.asarray(predictions, dtype=np.float64)))


def r2(ys, predictions):
    """Coefficient of determination; undefined when every target is equal."""

    ys = np.asarray(ys, dtype=np.float64)
    if ys.size == 0:
        raise DataError("r2 of an empty set")
    if np.all(ys == ys[0]):
        raise UndefinedMetricError("r2 is undefined for constant targets")
    return float(r2_score(ys, np.asarray(predictions, dtype=np.float64)))


def aggregate_subject(subject_ids, predictions):
    """Unweighted mean prediction per subject, ordered by subject id."""

    frame = pd.DataFrame({"subject_id": list(subject_ids), "prediction": np.asarray(predictions, dtype=np.float64)})
    means = frame.groupby("subject_id", sort=True)["prediction"].mean()
    return OrderedDict((str(k), float(v)) for k, v in means.items())


def _subject_metrics(subject_scores, truth, logger=None):
    subjects = list(subject_scores)
    ys = [truth[s] for s in subjects]
    preds = [subject_scores[s] for s in subjects]
    try:
        r2_subject = r2(ys, preds)
    except UndefinedMetricError as err:
        if logger:
            logger.warning(f"Subject-level r2 skipped: {err}")
        r2_subject = None
    return rmse(ys, preds), r2_subject


def evaluate(model, dataset, logger=None):
    """Group- and subject-level metrics of a model on a dataset."""

    if len(dataset) == 0:
        raise DataError("empty evaluation set")
    predictions = predict_batch(model, dataset.papi, _lips_for(dataset, model.config))
    targets = dataset.targets
    subject_scores = aggregate_subject(dataset.subject_ids, predictions)
    truth = {s: dataset.scores[s][dataset.target_kind] for s in subject_scores}
    rmse_subject, r2_subject = _subject_metrics(subject_scores, truth, logger)
    return {
        "n_groups": len(dataset),
        "n_subjects": len(subject_scores),
        "rmse_group": rmse(targets, predictions),
        "rmse_subject": rmse_subject,
        "r2_subject": r2_subject,
        "nrmse_subject": rmse_subject / dataset.scale_max,
        "predictions": predictions,
        "subject_scores": subject_scores,
    }


def kfold_speakers(subject_ids, k, seed=0, bands=None):
    """Partition subjects into k folds, dealing each severity band round-robin after a seeded shuffle."""

    subjects = sorted(set(subject_ids))
    if len(subjects) < k:
        raise DataError(f"{len(subjects)} subjects cannot fill {k} folds")

    rng = make_rng(seed, 3)
    if bands:
        strata = [[s for s in subjects if bands[s] == band] for band in BAND_ORDER]
        strata = [stratum for stratum in strata if stratum]
    else:
        strata = [subjects]

    folds = [[] for _ in range(k)]
    position = 0
    for stratum in strata:
        for i in rng.permutation(len(stratum)):
            folds[position % k].append(stratum[i])
            position += 1
    return [sorted(fold) for fold in folds]


@dataclass
class EvalReport:
    """Per-fold and pooled metrics with loss curves and out-of-fold predictions."""

    target_kind: str
    scale_max: float
    folds: List[dict] = field(default_factory=list)
    pooled: dict = field(default_factory=dict)
    loss_curves: List[dict] = field(default_factory=list)
    predictions: List[dict] = field(default_factory=list)

    def to_dict(self):
        """JSON-ready summary (predictions go to CSV)."""
        return {
            "target_kind": self.target_kind,
            "scale_max": self.scale_max,
            "folds": self.folds,
            "pooled": self.pooled,
        }

    def folds_frame(self):
        """Per-fold metrics table."""
        columns = ["fold", "n_groups", "n_subjects", "rmse_group", "rmse_subject", "r2_subject", "nrmse_subject"]
        return pd.DataFrame([{c: fold[c] for c in columns} for fold in self.folds], columns=columns)

    def loss_frame(self):
        """Long-format loss curves: fold, epoch, train_loss, validation_loss."""
        rows = []
        for fold, curves in enumerate(self.loss_curves):
            for epoch, loss in enumerate(curves["train_loss"], start=1):
                val = curves["validation_loss"][epoch - 1] if len(curves["validation_loss"]) >= epoch else None
                rows.append({"fold": fold, "epoch": epoch, "train_loss": loss, "validation_loss": val})
        return pd.DataFrame(rows, columns=["fold", "epoch", "train_loss", "validation_loss"])

    def predictions_frame(self):
        """Out-of-fold group predictions."""
        return pd.DataFrame(
            self.predictions, columns=["fold", "group_id", "subject_id", "target", "prediction"]
        )


def _fold_job(job):
    """Train and evaluate one fold (module-level for worker processes)."""

    fold, train_set, test_set, config, model_config = job
    model, history = train(train_set, config, model_config)
    return fold, evaluate(model, test_set), history


def cross_validate(dataset, config, model_config, logger=None, jobs=1):
    """Speaker-disjoint k-fold cross-validation."""

    bands = {s: dataset.band(s) for s in set(dataset.subject_ids)}
    folds = kfold_speakers(dataset.subject_ids, config.k_folds, config.seed, bands)

    jobs_list = []
    for fold, test_subjects in enumerate(folds):
        test_mask = np.isin(dataset.subject_ids, test_subjects)
        train_set, test_set = dataset.subset(~test_mask), dataset.subset(test_mask)
        if set(train_set.subject_ids) & set(test_set.subject_ids):
            raise ValidationError(f"fold {fold}: subject in both training and test data")
        jobs_list.append((fold, train_set, test_set, config, model_config))

    if logger:
        logger.info(
            f"Cross-validating {len(dataset)} groups of {len(bands)} subjects in {config.k_folds} folds "
            f"(target {dataset.target_kind})"
        )
    results = parallel_map(logger, _fold_job, jobs_list, jobs)

    report = EvalReport(dataset.target_kind, dataset.scale_max)
    all_predictions = np.empty(len(dataset))
    for (fold, _, test_set, _, _), (_, metrics, history) in zip(jobs_list, results):
        report.folds.append(
            {
                "fold": fold,
                "test_subjects": sorted(set(test_set.subject_ids)),
                **{key: metrics[key] for key in ("n_groups", "n_subjects", "rmse_group", "rmse_subject", "r2_subject", "nrmse_subject")},
            }
        )
        report.loss_curves.append(history)
        mask = np.isin(dataset.subject_ids, report.folds[-1]["test_subjects"])
        all_predictions[mask] = metrics["predictions"]
        for group_id, subject, target, prediction in zip(
            test_set.group_ids, test_set.subject_ids, test_set.targets, metrics["predictions"]
        ):
            report.predictions.append(
                {"fold": fold, "group_id": group_id, "subject_id": str(subject), "target": float(target), "prediction": float(prediction)}
            )
        if logger:
            logger.info(
                f"Fold {fold}: subject RMSE {metrics['rmse_subject']:.3f}, group RMSE {metrics['rmse_group']:.3f}"
            )

    subject_scores = aggregate_subject(dataset.subject_ids, all_predictions)
    truth = {s: dataset.scores[s][dataset.target_kind] for s in subject_scores}
    rmse_subject, r2_subject = _subject_metrics(subject_scores, truth, logger)
    report.pooled = {
        "n_groups": len(dataset),
        "n_subjects": len(subject_scores),
        "rmse_group": rmse(dataset.targets, all_predictions),
        "rmse_subject": rmse_subject,
        "r2_subject": r2_subject,
        "nrmse_subject": rmse_subject / dataset.scale_max,
    }
    return report


MODALITIES = ("audio", "visual", "bimodal")


def modality_config(model_config, modality):
    """Model configuration restricted to one modality."""

    return replace(
        model_config,
        audio_only=modality == "audio",
        visual_only=modality == "visual",
    )


def compare_modalities(dataset, config, model_config, kinds=("total",), logger=None, jobs=1):
    """Cross-validated subject-level metrics per (target kind, modality)."""

    rows = []
    for kind in kinds:
        subset = dataset.with_target(kind)
        kind_config = replace(config, target_kind=kind)
        for modality in MODALITIES:
            report = cross_validate(subset, kind_config, modality_config(model_config, modality), logger, jobs)
            rows.append(
                {
                    "target_kind": kind,
                    "modality": modality,
                    "rmse_subject": report.pooled["rmse_subject"],
                    "r2_subject": report.pooled["r2_subject"],
                    "nrmse_subject": report.pooled["nrmse_subject"],
                }
            )
    return pd.DataFrame(rows, columns=["target_kind", "modality", "rmse_subject", "r2_subject", "nrmse_subject"])
