"""Manifest-driven feature extraction, GMM frame collection and automatic vowel segmentation."""
import os
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
import pandas as pd

from helpers import acoustics
from helpers.core import VOWEL_ORDER, SyllableObservation
from helpers.errors import MeasurementError, VganError
from helpers.gmm import detect_vowel_intervals, split_frames
from helpers.ingest import (
    gop_key,
    parse_segments_csv,
    parse_textgrid,
    read_gop_csv,
    read_landmarks_csv,
    read_wav,
    serialize_textgrid,
    tier_by_name,
)
from helpers.lips import lip_feature_vector, lip_table
from helpers.misc import parallel_map, read_json_text, write_frame
from helpers.papi import assemble_papi, papi_table, subject_formant_set

VOWEL_SPACE_COLUMNS = (
    "subject_id",
    "vowel",
    "n",
    "f1_hz",
    "f2_hz",
    "f3_hz",
    "bark_radius",
    "bark_f1",
    "bark_f2",
    "bark_f3_minus_f2",
)


def read_segments(path, syllable_tier="syllables"):
    """Tiers of a TextGrid, or one tier named `syllable_tier` from a start,end,label CSV."""

    text = read_json_text(path)
    if path.lower().endswith(".csv"):
        return [parse_segments_csv(text, syllable_tier)]
    return parse_textgrid(text)


def _vowel_span(syllable, vowel_tier):
    """First labelled vowel interval overlapping the syllable, clipped to it."""

    if vowel_tier is None:
        return None, None
    for interval in vowel_tier.labelled():
        start, end = max(interval.start, syllable.start), min(interval.end, syllable.end)
        if start < end:
            return start, end
    return None, None


@dataclass
class RecordingData:
    """Audio, observations and optional landmark track of one recording."""

    recording_id: str
    audio: object
    observations: List[SyllableObservation]
    landmarks: Optional[object] = None
    warnings: List[str] = field(default_factory=list)


def load_recording(manifest, recording, paths, lip_map):
    """Read the media of one manifest recording into observations."""

    warnings = []
    audio = read_wav(manifest.path(recording.audio_path))
    tiers = read_segments(manifest.path(recording.segment_path), paths.syllable_tier)
    syllables = tier_by_name(tiers, paths.syllable_tier)
    vowels = next((tier for tier in tiers if tier.name == paths.vowel_tier), None)

    gop = {}
    if recording.gop_path:
        gop = read_gop_csv(read_json_text(manifest.path(recording.gop_path)))

    landmarks = None
    if recording.landmark_path:
        landmark_file = manifest.path(recording.landmark_path)
        if os.path.isfile(landmark_file):
            landmarks = read_landmarks_csv(read_json_text(landmark_file), lip_map, recording.fps)
        else:
            warnings.append(f"Recording {recording.recording_id}: landmark file '{recording.landmark_path}' missing")

    observations = []
    for syllable in syllables.labelled():
        vowel_start, vowel_end = _vowel_span(syllable, vowels)
        gop_vowel, gop_consonant = gop.get(gop_key(recording.recording_id, syllable.start, syllable.end), (None, None))
        observations.append(
            SyllableObservation(
                subject_id=recording.subject_id,
                recording_id=recording.recording_id,
                start=syllable.start,
                end=syllable.end,
                syllable_text=syllable.label.strip(),
                audio_ref=recording.audio_path,
                landmark_ref=recording.landmark_path,
                gop_vowel=gop_vowel,
                gop_consonant=gop_consonant,
                vowel_start=vowel_start,
                vowel_end=vowel_end,
            )
        )
    return RecordingData(recording.recording_id, audio, observations, landmarks, warnings)


def _extract_subject(job):
    """Features of every observation of one subject (module-level for worker processes)."""

    manifest, subject_id, config = job
    warnings = []
    recordings = [
        load_recording(manifest, recording, config.paths, config.lips)
        for recording in manifest.recordings
        if recording.subject_id == subject_id
    ]

    # Formant means of every observation feed the subject vowel space
    measurements = []
    for data in recordings:
        warnings.extend(data.warnings)
        for obs in data.observations:
            start, end = obs.vowel_interval
            try:
                stats = acoustics.formant_stats(acoustics.lpc_formants(data.audio.segment(start, end), config.dsp))
            except MeasurementError as err:
                warnings.append(f"Observation {obs.key}: formants unavailable ({err})")
                continue
            measurements.append((obs.vowel_classes, (stats["F1"]["mean"], stats["F2"]["mean"], stats["F3"]["mean"])))

    try:
        formant_set = subject_formant_set((vowels, (f1, f2)) for vowels, (f1, f2, _) in measurements)
    except VganError as err:
        warnings.append(f"Subject {subject_id}: vowel space unavailable ({err})")
        formant_set = None

    observations, papi_vectors, lip_vectors = [], [], []
    for data in recordings:
        for obs in data.observations:
            papi = assemble_papi(obs, data.audio, obs.vowel_interval, formant_set, config.papi, config.dsp)
            if papi.flags - {"gop"}:
                warnings.append(f"Observation {obs.key}: default values for {', '.join(sorted(papi.flags))}")
            lip = None
            if data.landmarks is not None:
                try:
                    lip = lip_feature_vector(data.landmarks, obs.vowel_interval)
                except MeasurementError as err:
                    warnings.append(f"Observation {obs.key}: lip features unavailable ({err})")
            observations.append(obs)
            papi_vectors.append(papi)
            lip_vectors.append(lip)

    return observations, papi_vectors, lip_vectors, _vowel_space_rows(subject_id, measurements), warnings


def _vowel_space_rows(subject_id, measurements):
    rows = []
    for vowel in VOWEL_ORDER:
        values = [formants for vowels, formants in measurements if vowels == frozenset([vowel])]
        if not values:
            continue
        f1, f2, f3 = np.mean(values, axis=0)
        b1, b2, b3 = acoustics.bark_vowel_space_3d(f1, f2, f3)
        rows.append(
            {
                "subject_id": subject_id,
                "vowel": vowel.value,
                "n": len(values),
                "f1_hz": float(f1),
                "f2_hz": float(f2),
                "f3_hz": float(f3),
                "bark_radius": acoustics.bark_vowel_radius(f1, f2),
                "bark_f1": b1,
                "bark_f2": b2,
                "bark_f3_minus_f2": b3,
            }
        )
    return rows


def extract_features(manifest, config, logger=None, jobs=1):
    """PAPI, lip and vowel-space tables of a manifest, one worker job per subject."""

    subject_ids = sorted({recording.subject_id for recording in manifest.recordings})
    results = parallel_map(logger, _extract_subject, [(manifest, s, config) for s in subject_ids], jobs)

    observations, papi_vectors, lip_vectors, space_rows = [], [], [], []
    for subject_id, (obs, papi, lips, rows, warnings) in zip(subject_ids, results):
        for warning in warnings:
            if logger:
                logger.warning(warning)
        observations.extend(obs)
        papi_vectors.extend(papi)
        lip_vectors.extend(lips)
        space_rows.extend(rows)
        if logger:
            logger.debug(f"Subject {subject_id}: {len(obs)} observations")

    return (
        papi_table(observations, papi_vectors),
        lip_table(observations, lip_vectors),
        pd.DataFrame(space_rows, columns=list(VOWEL_SPACE_COLUMNS)),
    )


def write_features(out_dir, papi_frame, lip_frame, space_frame):
    """Write papi.csv, lips.csv and vowel_space.csv."""

    write_frame(os.path.join(out_dir, "papi.csv"), papi_frame)
    write_frame(os.path.join(out_dir, "lips.csv"), lip_frame)
    write_frame(os.path.join(out_dir, "vowel_space.csv"), space_frame)


def read_feature_table(path):
    """Read a feature CSV so observation keys match the written values exactly."""

    frame = pd.read_csv(
        path,
        float_precision="round_trip",
        dtype={"subject_id": str, "recording_id": str, "syllable": str, "vowel_classes": str, "flags": str},
    )
    for column in ("syllable", "vowel_classes", "flags"):
        if column in frame:
            frame[column] = frame[column].fillna("")
    return frame


def observations_from_table(frame):
    """SyllableObservations keyed like the rows of a feature table."""

    observations = []
    for row in frame.itertuples(index=False):
        vowels = frozenset(v for v in VOWEL_ORDER if v.value in str(row.vowel_classes))
        observations.append(
            SyllableObservation(
                subject_id=str(row.subject_id),
                recording_id=str(row.recording_id),
                start=float(row.start),
                end=float(row.end),
                syllable_text=str(row.syllable),
                vowel_classes=vowels,
            )
        )
    return observations


def gmm_training_frames(manifest, paths, settings, logger=None):
    """Frames inside vowel-tier intervals and the remaining frames of every recording."""

    vowel_frames, other_frames = [], []
    for recording in manifest.recordings:
        audio = read_wav(manifest.path(recording.audio_path))
        tiers = read_segments(manifest.path(recording.segment_path), paths.syllable_tier)
        try:
            vowels = tier_by_name(tiers, paths.vowel_tier)
        except VganError:
            if logger:
                logger.warning(f"Recording {recording.recording_id}: no '{paths.vowel_tier}' tier, skipped")
            continue
        inside, outside = split_frames(audio, vowels, settings)
        vowel_frames.append(inside)
        other_frames.append(outside)
    dim = settings.dim
    return (
        np.concatenate(vowel_frames) if vowel_frames else np.empty((0, dim)),
        np.concatenate(other_frames) if other_frames else np.empty((0, dim)),
    )


def segment_recording(manifest, recording, gmm_vowel, gmm_other, paths, settings):
    """TextGrid text with the syllable tier (when annotated) and detected vowel intervals."""

    audio = read_wav(manifest.path(recording.audio_path))
    detected = detect_vowel_intervals(audio, gmm_vowel, gmm_other, settings.min_duration, settings)
    tiers = []
    segment_file = manifest.path(recording.segment_path)
    if os.path.isfile(segment_file):
        existing = read_segments(segment_file, paths.syllable_tier)
        tiers = [tier for tier in existing if tier.name == paths.syllable_tier]
    tiers.append(replace(detected, name=paths.vowel_tier))
    return serialize_textgrid(tiers, 0.0, audio.duration), len(detected.intervals)
