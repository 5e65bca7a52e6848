import numpy as np
import pandas as pd
import pytest

from helpers.augment import GroupRef
from helpers.core import DatasetManifest, SeverityBand, SubjectRecord, observation_key
from helpers.errors import ConfigError, DataError, InputError, UndefinedMetricError, ValidationError
from helpers.lips import LIP_FEATURES
from helpers.papi import PAPI_FEATURES
from helpers.training import (
    AdamState,
    GroupDataset,
    TrainConfig,
    adam_step,
    aggregate_subject,
    build_dataset,
    compare_modalities,
    cross_validate,
    evaluate,
    fit_standardization,
    kfold_speakers,
    r2,
    rmse,
    split_validation,
    stack_groups,
    train,
)
from helpers.vgan import VganConfig

SMALL = VganConfig(
    shared_dim=4, n_heads=1, head_dim=4, dense_dims=(8, 4), visual_dims=(8, 4), fusion_dim=4, final_dim=4
)
TOTALS = (116, 100, 90, 80, 70, 60, 50, 40)


def dataset(groups_per_subject=5, seed=0, totals=TOTALS):
    """Groups whose first acoustic and lip feature carry the subject's total score."""

    rng = np.random.default_rng(seed)
    subjects = [f"S{i + 1:03d}" for i in range(len(totals))]
    scores = {s: {"total": float(t), "lips": float(round(t / 116 * 20))} for s, t in zip(subjects, totals)}
    ids, subject_ids, papi, lips = [], [], [], []
    for s in subjects:
        signal = (scores[s]["total"] - 80.0) / 20.0
        for g in range(groups_per_subject):
            ids.append(f"{s}-zip-{g:05d}")
            subject_ids.append(s)
            p = rng.normal(scale=0.1, size=(6, 20))
            p[:, 0] += signal
            l = rng.normal(scale=0.1, size=(6, 10))
            l[:, 0] += signal
            papi.append(p)
            lips.append(l)
    return GroupDataset(ids, np.array(subject_ids), np.array(papi), np.array(lips), scores)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(k_folds=1)
    with pytest.raises(ConfigError):
        TrainConfig(target_kind="voice")
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1.0)
    assert TrainConfig(learning_rate=0.0).learning_rate == 0.0


def test_rmse_and_r2():
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(np.sqrt(12.5))
    assert r2([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0
    with pytest.raises(UndefinedMetricError):
        r2([5.0, 5.0], [4.0, 6.0])
    with pytest.raises(DataError):
        rmse([], [])


def test_aggregate_subject_is_mean():
    scores = aggregate_subject(["b", "a", "b"], [1.0, 5.0, 3.0])
    assert list(scores) == ["a", "b"]
    assert scores["b"] == 2.0


def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -1.0])}
    grads = {"w": np.array([0.5, -2.0])}
    new, state = adam_step(params, grads, AdamState(), lr=0.1)
    assert new["w"] == pytest.approx([0.9, -0.9])
    assert state.step == 1
    with pytest.raises(InputError):
        adam_step(params, {"w": np.zeros(3)}, state)


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0])}
    new, _ = adam_step(params, {"w": np.zeros(1)}, AdamState())
    assert new["w"].tolist() == [1.0]


def test_kfold_speakers_partition():
    subjects = [f"S{i}" for i in range(23)]
    folds = kfold_speakers(subjects, 5, seed=3)
    assert sorted(s for fold in folds for s in fold) == sorted(subjects)
    assert max(map(len, folds)) - min(map(len, folds)) <= 1
    assert folds == kfold_speakers(subjects, 5, seed=3)
    assert folds != kfold_speakers(subjects, 5, seed=4)
    with pytest.raises(DataError):
        kfold_speakers(subjects[:3], 5)


def test_kfold_speakers_stratifies_bands():
    bands = {f"S{i}": band for i, band in enumerate([SeverityBand.MILD] * 4 + [SeverityBand.SEVERE] * 4)}
    for fold in kfold_speakers(list(bands), 4, bands=bands):
        assert sorted(bands[s].value for s in fold) == ["Mild", "Severe"]


def test_dataset_targets_and_subsets():
    data = dataset()
    assert data.targets[0] == 116.0
    assert data.band("S008") is SeverityBand.SEVERE
    lips = data.with_target("lips")
    assert lips.scale_max == 20.0
    assert len(data.for_subjects(["S001", "S002"])) == 10
    with pytest.raises(ValidationError):
        data.with_target("jaw")


def test_fit_standardization_uses_given_groups():
    data = dataset()
    stats = fit_standardization(data, SMALL)
    assert stats["target.mean"][0] == pytest.approx(np.mean(TOTALS))
    assert stats["papi.std"].shape == (20,)
    assert np.all(stats["papi.std"] > 0)
    audio = fit_standardization(data, VganConfig(audio_only=True))
    assert audio["lip.std"].tolist() == [1.0] * 10


def test_split_validation_is_speaker_disjoint():
    train_set, held = split_validation(dataset(), 0.25, seed=0)
    assert len(set(held.subject_ids)) == 2
    assert not set(held.subject_ids) & set(train_set.subject_ids)
    same, none = split_validation(dataset(), 0.0, seed=0)
    assert none is None and len(same) == 40


def test_train_reduces_loss():
    config = TrainConfig(epochs=30, batch_size=8, learning_rate=1e-2)
    model, history = train(dataset(), config, SMALL)
    assert len(history["train_loss"]) == 30
    assert history["train_loss"][-1] < 0.5 * history["train_loss"][0]
    assert model.target_kind == "total"


def test_train_with_zero_learning_rate_keeps_init():
    from helpers.vgan import init_params

    config = TrainConfig(epochs=2, batch_size=8, learning_rate=0.0)
    model, _ = train(dataset(), config, SMALL)
    initial = init_params(SMALL, config.seed)
    for name, value in initial.params.items():
        assert np.array_equal(model.params[name], value)


def test_train_with_validation_tracks_loss():
    config = TrainConfig(epochs=5, batch_size=8, learning_rate=1e-2, validation_fraction=0.25)
    _, history = train(dataset(), config, SMALL)
    assert len(history["validation_loss"]) == 5


def test_train_is_deterministic():
    config = TrainConfig(epochs=3, batch_size=8, learning_rate=1e-2)
    a, _ = train(dataset(), config, SMALL)
    b, _ = train(dataset(), config, SMALL)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])


def test_evaluate_reports_undefined_r2(logger, caplog):
    data = dataset(totals=(80, 80))
    model, _ = train(data, TrainConfig(epochs=1), SMALL)
    metrics = evaluate(model, data, logger)
    assert metrics["r2_subject"] is None
    assert metrics["n_subjects"] == 2
    assert "r2 skipped" in caplog.text


def test_cross_validate_is_speaker_disjoint():
    data = dataset()
    config = TrainConfig(epochs=5, batch_size=8, learning_rate=1e-2, k_folds=4)
    report = cross_validate(data, config, SMALL)
    assert len(report.folds) == 4
    tested = [s for fold in report.folds for s in fold["test_subjects"]]
    assert sorted(tested) == sorted(set(data.subject_ids))
    frame = report.predictions_frame()
    assert len(frame) == len(data)
    for fold in report.folds:
        rows = frame[frame["fold"] == fold["fold"]]
        assert set(rows["subject_id"]) == set(fold["test_subjects"])
    assert report.pooled["nrmse_subject"] == pytest.approx(report.pooled["rmse_subject"] / 116.0)
    loss = report.loss_frame()
    assert len(loss) == 4 * 5
    assert loss["validation_loss"].isna().all()
    assert list(report.folds_frame()["fold"]) == [0, 1, 2, 3]


def test_cross_validate_in_worker_processes_matches_serial():
    data = dataset(groups_per_subject=2)
    config = TrainConfig(epochs=2, batch_size=8, k_folds=2)
    serial = cross_validate(data, config, SMALL)
    parallel = cross_validate(data, config, SMALL, jobs=2)
    assert serial.pooled == parallel.pooled


def test_compare_modalities_table():
    data = dataset(groups_per_subject=2)
    config = TrainConfig(epochs=2, batch_size=8, k_folds=2)
    table = compare_modalities(data, config, SMALL, kinds=("total", "lips"))
    assert list(table["modality"]) == ["audio", "visual", "bimodal"] * 2
    assert list(table["target_kind"]) == ["total"] * 3 + ["lips"] * 3
    assert (table.loc[table["target_kind"] == "lips", "nrmse_subject"] * 20.0).tolist() == pytest.approx(
        table.loc[table["target_kind"] == "lips", "rmse_subject"].tolist()
    )


def _frames():
    rows = [("R1", 0.1 * k, 0.1 * k + 0.05) for k in range(6)]
    papi = pd.DataFrame(
        [{"subject_id": "S1", "recording_id": r, "start": s, "end": e, **{f: float(k) for f in PAPI_FEATURES}}
         for k, (r, s, e) in enumerate(rows)]
    )
    lips = pd.DataFrame(
        [{"subject_id": "S1", "recording_id": r, "start": s, "end": e, "flags": "", **{f: 1.0 for f in LIP_FEATURES}}
         for r, s, e in rows]
    )
    ref = GroupRef("S1-zip-00000", "S1", tuple(observation_key(*row) for row in rows))
    return papi, lips, ref


def test_stack_groups_orders_members():
    papi, lips, ref = _frames()
    group_ids, subjects, papi_array, lip_array = stack_groups([ref], papi, lips)
    assert group_ids == ["S1-zip-00000"]
    assert papi_array.shape == (1, 6, 20)
    assert papi_array[0, :, 0].tolist() == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    assert lip_array.shape == (1, 6, 10)
    _, _, _, none = stack_groups([ref], papi, None, need_lips=False)
    assert none is None


def test_stack_groups_errors():
    papi, lips, ref = _frames()
    with pytest.raises(InputError, match="no acoustic features"):
        stack_groups([ref], papi.iloc[1:], lips)
    lips.loc[2, LIP_FEATURES[0]] = np.nan
    with pytest.raises(InputError, match="no lip features"):
        stack_groups([ref], papi, lips)
    with pytest.raises(InputError):
        stack_groups([ref], papi, None)
    with pytest.raises(DataError):
        stack_groups([], papi, None, need_lips=False)


def test_build_dataset_needs_manifest_subjects():
    papi, lips, ref = _frames()
    manifest = DatasetManifest((SubjectRecord("S1", {"total": 90.0}),), ())
    data = build_dataset([ref], papi, lips, manifest)
    assert data.targets.tolist() == [90.0]
    with pytest.raises(ValidationError, match="not in the manifest"):
        build_dataset([ref], papi, lips, DatasetManifest((SubjectRecord("S2", {"total": 90.0}),), ()))


@pytest.mark.slow
def test_lips_add_information_the_audio_lacks():
    rng = np.random.default_rng(4)
    audio_part = rng.permutation(np.linspace(-0.6, 0.6, 16))
    lip_part = rng.permutation(np.linspace(-1.2, 1.2, 16))
    totals = np.round(80.0 + 20.0 * (audio_part + lip_part), 6)
    data = dataset(groups_per_subject=6, totals=tuple(totals))
    for g, subject in enumerate(data.subject_ids):
        k = int(subject[1:]) - 1
        data.papi[g, :, 0] = audio_part[k] + rng.normal(scale=0.05, size=6)
        data.lips[g, :, 0] = lip_part[k] + rng.normal(scale=0.05, size=6)
    config = TrainConfig(epochs=150, batch_size=16, learning_rate=5e-3, k_folds=4)
    table = compare_modalities(data, config, SMALL, kinds=("total",)).set_index("modality")
    assert table.loc["bimodal", "rmse_subject"] <= table.loc["audio", "rmse_subject"]
