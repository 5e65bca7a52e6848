#!/usr/bin/env python3
"""Vowel graph attention pipeline for dysarthria severity regression."""
import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from helpers.augment import (
    balance_by_severity,
    build_groups,
    categorize,
    groups_from_dict,
    groups_to_dict,
)
from helpers.config import load_config
from helpers.core import TARGET_KINDS, load_manifest, observation_key, severity_band, validate_manifest
from helpers.errors import DataError, InputError, LoadError, UsageError, ValidationError, VganError
from helpers.extract import (
    extract_features,
    gmm_training_frames,
    observations_from_table,
    read_feature_table,
    segment_recording,
    write_features,
)
from helpers.gmm import gmm_fit, gmm_from_dict, gmm_to_dict
from helpers.ingest import deserialize_model, serialize_model
from helpers.logging import Logger, NotificationHandler
from helpers.misc import ensure_dir, read_json_text, write_frame, write_json
from helpers.plotting import plot_loss_curves, plot_score_scatter
from helpers.synth import gen_corpus
from helpers.training import (
    build_dataset,
    compare_modalities,
    cross_validate,
    evaluate,
    stack_groups,
    train,
)
from helpers.vgan import forward_batch, predict_batch

program = Path(__file__).stem


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser raising UsageError instead of exiting."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    """Command line of every subcommand."""

    parser = ArgumentParser(prog="vgan", description="Vowel graph attention toolkit for dysarthria assessment.")
    parser.add_argument("-d", "--datadir", help="data directory to use", type=str)
    parser.add_argument("--config", help="config file (default <datadir>/vgan.ini)", type=str)
    parser.add_argument("--seed", help="random seed for every seeded step", type=int)
    parser.add_argument("--jobs", help="worker processes for per-subject and per-fold work", type=int)
    commands = parser.add_subparsers(dest="command", metavar="command", parser_class=ArgumentParser)
    commands.required = True

    synth = commands.add_parser("synth", help="generate a synthetic corpus")
    synth.add_argument("--subjects", type=int, help="number of subjects")
    synth.add_argument("--repetitions", type=int, help="recordings per subject")
    synth.add_argument("--lip-independence", type=float, help="share of lip severity drawn independently")
    synth.add_argument("--out", required=True, help="corpus directory")

    extract = commands.add_parser("extract", help="manifest to PAPI, lip and vowel-space tables")
    extract.add_argument("--manifest", required=True)
    extract.add_argument("--out", help="feature directory")

    fit = commands.add_parser("fit-gmm", help="fit vowel and other mixtures on annotated recordings")
    fit.add_argument("--manifest", required=True)
    fit.add_argument("--components", type=int)
    fit.add_argument("--max-iter", type=int)
    fit.add_argument("--out", help="GMM JSON file")

    segment = commands.add_parser("segment", help="detect vowel intervals with a fitted GMM")
    segment.add_argument("--manifest", required=True)
    segment.add_argument("--gmm", help="GMM JSON file")
    segment.add_argument("--out", required=True, help="TextGrid directory")

    augment = commands.add_parser("augment", help="build vowel groups from a feature table")
    augment.add_argument("--features", help="feature directory")
    augment.add_argument("--manifest", help="manifest, needed with --balance")
    augment.add_argument("--mode", choices=("zip", "random"))
    augment.add_argument("--n", type=int, help="groups per subject in random mode")
    augment.add_argument("--balance", action="store_true", default=None, help="balance severity bands")
    augment.add_argument("--audio-only", action="store_true", help="keep observations without lip features")
    augment.add_argument("--out", help="group manifest file")

    for name, text in (("train", "cross-validate and fit a model"), ("eval", "evaluate a model or compare modalities")):
        sub = commands.add_parser(name, help=text)
        sub.add_argument("--features", help="feature directory")
        sub.add_argument("--groups", help="group manifest file")
        sub.add_argument("--manifest", required=True)
        sub.add_argument("--target", choices=TARGET_KINDS)
        sub.add_argument("--epochs", type=int)
        sub.add_argument("--batch-size", type=int)
        sub.add_argument("--lr", type=float)
        sub.add_argument("--k-folds", type=int)
        modality = sub.add_mutually_exclusive_group()
        modality.add_argument("--audio-only", action="store_true")
        modality.add_argument("--visual-only", action="store_true")
        sub.add_argument("--out", help="report directory")
        if name == "train":
            sub.add_argument("--no-cv", action="store_true", help="only fit the final model")
            sub.add_argument("--model", help="model file to write")
        else:
            sub.add_argument("--model", help="model file to evaluate")
            sub.add_argument("--compare-modalities", action="store_true")
            sub.add_argument("--targets", help="comma separated score kinds for --compare-modalities")

    predict = commands.add_parser("predict", help="score groups with a model")
    predict.add_argument("--model", required=True)
    predict.add_argument("--features", help="feature directory")
    predict.add_argument("--groups", help="group manifest file")
    predict.add_argument("--group-id", action="append", help="only these groups (repeatable)")
    predict.add_argument("--out", help="CSV file (default stdout)")

    export = commands.add_parser("export-embeddings", help="fused embeddings with labels")
    export.add_argument("--model", required=True)
    export.add_argument("--features", help="feature directory")
    export.add_argument("--groups", help="group manifest file")
    export.add_argument("--manifest", required=True)
    export.add_argument("--out", help="CSV file")
    return parser


def _override(block, **values):
    """Replace fields whose flag was given."""

    return replace(block, **{key: value for key, value in values.items() if value is not None})


def _features_dir(args, datadir, config):
    return args.features or os.path.join(datadir, config.paths.features_dir)


def _groups_file(args, datadir, config):
    return getattr(args, "groups", None) or os.path.join(datadir, config.paths.features_dir, "groups.json")


def _read_tables(features_dir, need_lips):
    papi = read_feature_table(os.path.join(features_dir, "papi.csv"))
    lips_file = os.path.join(features_dir, "lips.csv")
    lips = None
    if need_lips:
        if not os.path.isfile(lips_file):
            raise InputError(f"lip table '{lips_file}' not found")
        lips = read_feature_table(lips_file)
    return papi, lips


def _read_groups(path):
    try:
        return groups_from_dict(json.loads(read_json_text(path)))
    except json.JSONDecodeError as err:
        raise ValidationError(f"group manifest '{path}' is not valid JSON: {err.msg}") from None


def _load_model(path, config):
    """Read a model; hyper-dimensions must match the configuration, variant switches come from the file."""

    try:
        document = json.loads(read_json_text(path))
    except json.JSONDecodeError as err:
        raise LoadError(f"model '{path}' is not valid JSON: {err.msg}") from None
    dims = document.get("dims", {}) if isinstance(document, dict) else {}
    variant = {key: dims[key] for key in ("audio_only", "visual_only", "acoustic_branches", "fusion") if key in dims}
    return deserialize_model(document, expected_config=replace(config.vgan, **variant))


def command_synth(args, config, logger, datadir):
    settings = _override(
        config.synth,
        subjects=args.subjects,
        repetitions=args.repetitions,
        lip_independence=args.lip_independence,
    )
    manifest = gen_corpus(settings.subjects, config.settings.seed, args.out, settings, logger, config.settings.jobs)
    problems = validate_manifest(manifest)
    for problem in problems:
        logger.warning(problem)
    logger.info(
        f"Synthesized {len(manifest.subjects)} subjects and {len(manifest.recordings)} recordings in '{args.out}'",
        True,
    )


def command_extract(args, config, logger, datadir):
    manifest = load_manifest(args.manifest)
    problems = validate_manifest(manifest)
    if problems:
        raise ValidationError(f"manifest has {len(problems)} problem(s), first: {problems[0]}")
    out_dir = args.out or os.path.join(datadir, config.paths.features_dir)
    papi, lips, space = extract_features(manifest, config, logger, config.settings.jobs)
    write_features(out_dir, papi, lips, space)
    flagged = int((papi["flags"].fillna("") != "").sum())
    logger.info(f"Extracted {len(papi)} observations to '{out_dir}' ({flagged} with substituted values)")


def command_fit_gmm(args, config, logger, datadir):
    manifest = load_manifest(args.manifest)
    settings = _override(config.gmm, components=args.components, max_iter=args.max_iter)
    vowel_frames, other_frames = gmm_training_frames(manifest, config.paths, settings, logger)
    seed = config.settings.seed
    mixtures = []
    for name, frames in (("vowel", vowel_frames), ("other", other_frames)):
        logger.info(f"Fitting the {name} mixture on {len(frames)} frames")
        mixture, history = gmm_fit(frames, settings.components, settings.max_iter, seed, settings.tol, settings.reg, logger)
        mixtures.append(mixture)
    out = args.out or os.path.join(datadir, config.paths.models_dir, "gmm.json")
    write_json(out, gmm_to_dict(mixtures[0], mixtures[1], settings))
    logger.info(f"Wrote GMM to '{out}'")


def command_segment(args, config, logger, datadir):
    manifest = load_manifest(args.manifest)
    gmm_file = args.gmm or os.path.join(datadir, config.paths.models_dir, "gmm.json")
    vowel, other, settings = gmm_from_dict(json.loads(read_json_text(gmm_file)), config.gmm)
    ensure_dir(args.out)
    for recording in manifest.recordings:
        text, count = segment_recording(manifest, recording, vowel, other, config.paths, settings)
        with open(os.path.join(args.out, f"{recording.recording_id}.TextGrid"), "w", encoding="utf-8", newline="\n") as outfile:
            outfile.write(text)
        logger.debug(f"Recording {recording.recording_id}: {count} vowel intervals")
    logger.info(f"Segmented {len(manifest.recordings)} recordings into '{args.out}'")


def command_augment(args, config, logger, datadir):
    settings = _override(config.augment, mode=args.mode, n=args.n, balance=args.balance)
    features_dir = _features_dir(args, datadir, config)
    need_lips = config.vgan.uses_lips and not args.audio_only
    papi, lips = _read_tables(features_dir, need_lips)
    observations = observations_from_table(papi)
    if need_lips:
        missing = {
            observation_key(row.recording_id, row.start, row.end)
            for row in lips.itertuples(index=False)
            if "missing" in str(row.flags)
        }
        if missing:
            logger.warning(f"Skipping {len(missing)} observations without lip features")
            observations = [observation for observation in observations if observation.key not in missing]

    seed = config.settings.seed
    groups, skipped = [], {}
    for subject_id in sorted({observation.subject_id for observation in observations}):
        categories = categorize([observation for observation in observations if observation.subject_id == subject_id])
        skipped[subject_id] = categories.skipped
        subject_groups = build_groups(categories, settings.mode, settings.n, seed, None, settings.shuffle)
        logger.debug(f"Subject {subject_id}: categories {categories.sizes()}, {len(subject_groups)} groups")
        groups.extend(subject_groups)

    if settings.balance:
        if not args.manifest:
            raise UsageError("--balance needs --manifest for the total scores")
        manifest = load_manifest(args.manifest)
        totals = {subject.subject_id: subject.fda_scores["total"] for subject in manifest.subjects}
        groups = balance_by_severity(groups, totals, seed, settings.balance_factor)

    out = args.out or _groups_file(args, datadir, config)
    write_json(out, groups_to_dict(groups, settings.mode, seed, skipped))
    logger.info(f"Wrote {len(groups)} groups of {len(skipped)} subjects to '{out}'")


def _train_settings(args, config):
    train_config = _override(
        config.train,
        target_kind=args.target,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        k_folds=args.k_folds,
    )
    model_config = config.vgan
    if args.audio_only or args.visual_only:
        model_config = replace(model_config, audio_only=args.audio_only, visual_only=args.visual_only)
    return train_config, model_config


def _dataset(args, config, datadir, target_kind, model_config):
    manifest = load_manifest(args.manifest)
    papi, lips = _read_tables(_features_dir(args, datadir, config), model_config.uses_lips)
    refs = _read_groups(_groups_file(args, datadir, config))
    return build_dataset(refs, papi, lips, manifest, target_kind, model_config.uses_lips)


def _report_dir(args, datadir, config):
    return args.out or os.path.join(datadir, config.paths.reports_dir)


def command_train(args, config, logger, datadir):
    train_config, model_config = _train_settings(args, config)
    dataset = _dataset(args, config, datadir, train_config.target_kind, model_config)
    out_dir = _report_dir(args, datadir, config)
    jobs = config.settings.jobs

    if not args.no_cv:
        report = cross_validate(dataset, train_config, model_config, logger, jobs)
        write_json(os.path.join(out_dir, "report.json"), report.to_dict())
        write_frame(os.path.join(out_dir, "folds.csv"), report.folds_frame())
        write_frame(os.path.join(out_dir, "loss.csv"), report.loss_frame())
        write_frame(os.path.join(out_dir, "predictions.csv"), report.predictions_frame())
        plot_loss_curves(report.loss_frame(), os.path.join(out_dir, "loss_curves.svg"))
        pooled = report.pooled
        r2_text = "undefined" if pooled["r2_subject"] is None else f"{pooled['r2_subject']:.3f}"
        logger.info(
            f"Cross-validation ({dataset.target_kind}): subject RMSE {pooled['rmse_subject']:.3f}, "
            f"R2 {r2_text}, normalized RMSE {pooled['nrmse_subject']:.4f}",
            True,
        )

    model, history = train(dataset, train_config, model_config, logger)
    model_file = args.model or os.path.join(datadir, config.paths.models_dir, "model.json")
    write_json(model_file, serialize_model(model))
    if args.no_cv:
        frame = pd.DataFrame(
            {
                "fold": -1,
                "epoch": np.arange(1, len(history["train_loss"]) + 1),
                "train_loss": history["train_loss"],
                "validation_loss": history["validation_loss"] or None,
            }
        )
        write_frame(os.path.join(out_dir, "loss.csv"), frame)
        plot_loss_curves(frame, os.path.join(out_dir, "loss_curves.svg"))
    logger.info(f"Wrote model with {model.n_params()} parameters to '{model_file}'")


def command_eval(args, config, logger, datadir):
    out_dir = _report_dir(args, datadir, config)
    train_config, model_config = _train_settings(args, config)

    if args.compare_modalities:
        kinds = tuple(kind.strip() for kind in (args.targets or train_config.target_kind).split(",") if kind.strip())
        unknown = [kind for kind in kinds if kind not in TARGET_KINDS]
        if unknown:
            raise UsageError(f"unknown target kind(s): {', '.join(unknown)}")
        dataset = _dataset(args, config, datadir, kinds[0], replace(model_config, audio_only=False, visual_only=False))
        table = compare_modalities(dataset, train_config, model_config, kinds, logger, config.settings.jobs)
        write_frame(os.path.join(out_dir, "modalities.csv"), table)
        for row in table.itertuples(index=False):
            logger.info(f"{row.target_kind} {row.modality}: RMSE {row.rmse_subject:.3f}, normalized {row.nrmse_subject:.4f}")
        return

    if not args.model:
        raise UsageError("eval needs --model or --compare-modalities")
    model = _load_model(args.model, config)
    dataset = _dataset(args, config, datadir, model.target_kind, model.config)
    metrics = evaluate(model, dataset, logger)
    truth = {s: dataset.scores[s][dataset.target_kind] for s in metrics["subject_scores"]}
    report = {key: value for key, value in metrics.items() if key not in ("predictions", "subject_scores")}
    report.update(target_kind=dataset.target_kind, scale_max=dataset.scale_max, subjects=metrics["subject_scores"])
    write_json(os.path.join(out_dir, "eval.json"), report)
    write_frame(
        os.path.join(out_dir, "eval_predictions.csv"),
        pd.DataFrame(
            {
                "group_id": dataset.group_ids,
                "subject_id": dataset.subject_ids,
                "target": dataset.targets,
                "prediction": metrics["predictions"],
            }
        ),
    )
    plot_score_scatter(
        list(truth.values()),
        list(metrics["subject_scores"].values()),
        dataset.scale_max,
        os.path.join(out_dir, "score_scatter.svg"),
        dataset.target_kind,
    )
    logger.info(f"Evaluation ({dataset.target_kind}): subject RMSE {metrics['rmse_subject']:.3f}", True)


def command_predict(args, config, logger, datadir):
    model = _load_model(args.model, config)
    refs = _read_groups(_groups_file(args, datadir, config))
    if args.group_id:
        wanted = set(args.group_id)
        unknown = sorted(wanted - {ref.group_id for ref in refs})
        if unknown:
            raise ValidationError(f"unknown group id '{unknown[0]}'")
        refs = [ref for ref in refs if ref.group_id in wanted]
    papi, lips = _read_tables(_features_dir(args, datadir, config), model.config.uses_lips)
    group_ids, subjects, papi_array, lip_array = stack_groups(refs, papi, lips, model.config.uses_lips)
    frame = pd.DataFrame(
        {"group_id": group_ids, "subject_id": subjects, "prediction": predict_batch(model, papi_array, lip_array)}
    )
    if args.out:
        write_frame(args.out, frame)
    else:
        sys.stdout.write(frame.to_csv(index=False, lineterminator="\n"))


def command_export_embeddings(args, config, logger, datadir):
    model = _load_model(args.model, config)
    dataset = _dataset(args, config, datadir, model.target_kind, model.config)
    traces = forward_batch(model, dataset.papi, dataset.lips)
    embeddings = np.array([trace.fused_embedding for trace in traces])
    frame = pd.DataFrame(
        {
            "group_id": dataset.group_ids,
            "subject_id": dataset.subject_ids,
            "target": dataset.targets,
            "band": [severity_band(dataset.scores[s]["total"]).value for s in dataset.subject_ids],
        }
    )
    columns = pd.DataFrame(embeddings, columns=[f"e{i}" for i in range(embeddings.shape[1])])
    out = args.out or os.path.join(_report_dir(args, datadir, config), "embeddings.csv")
    write_frame(out, pd.concat([frame, columns], axis=1))
    logger.info(f"Wrote {len(frame)} embeddings of width {embeddings.shape[1]} to '{out}'")


COMMANDS = {
    "synth": command_synth,
    "extract": command_extract,
    "fit-gmm": command_fit_gmm,
    "segment": command_segment,
    "augment": command_augment,
    "train": command_train,
    "eval": command_eval,
    "predict": command_predict,
    "export-embeddings": command_export_embeddings,
}


def _setup(args):
    """Config, timezone, notifications and logging of one run."""

    datadir = args.datadir or os.getcwd()
    config, created = load_config(args.config or os.path.join(datadir, f"{program}.ini"))
    settings = _override(config.settings, seed=args.seed, jobs=args.jobs)
    config = replace(config, settings=settings, train=replace(config.train, seed=settings.seed))

    # Handle timezone
    if hasattr(time, "tzset"):
        os.environ["TZ"] = settings.timezone
        time.tzset()

    notification = NotificationHandler(program, settings.notifications, json.dumps(list(settings.notify_urls)))
    logger = Logger(datadir, program, notification, settings.logrotate, settings.debug, settings.notifications)
    if created:
        logger.info(f"Created default config file '{args.config or os.path.join(datadir, program + '.ini')}'")
    return config, logger, notification, datadir


def _failed(err, logger, notification):
    """Log and print one error line; returns its exit code."""

    message = " ".join(str(err).split())
    if logger:
        logger.error(f"{type(err).__name__}: {message}", True)
        notification.send_notification()
    sys.stderr.write(f"vgan: error code={err.exit_code} type={type(err).__name__} message={message}\n")
    return err.exit_code


def run(argv=None):
    """Run one subcommand; returns the process exit code."""

    logger = notification = None
    try:
        args = build_parser().parse_args(argv)
        config, logger, notification, datadir = _setup(args)
        COMMANDS[args.command](args, config, logger, datadir)
        notification.send_notification()
        return 0
    except OSError as err:
        return _failed(DataError(f"{err.filename or 'file'}: {err.strerror}"), logger, notification)
    except VganError as err:
        return _failed(err, logger, notification)
    finally:
        if notification:
            notification.wait()
        if logger:
            logger.close()


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
