"""Severity-controlled synthetic corpus: resonator vowels, mouth landmark tracks, scores."""
import os
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import signal

from helpers.acoustics import PulseSequence
from helpers.core import (
    SCALE_MAX,
    SUB_ITEMS,
    VOWEL_ORDER,
    DatasetManifest,
    RecordingRecord,
    SubjectRecord,
    VowelClass,
    manifest_to_dict,
)
from helpers.errors import ConfigError, RangeError, ValidationError
from helpers.ingest import (
    AudioBuffer,
    LandmarkSequence,
    LipIndexMap,
    SegmentInterval,
    SegmentTier,
    serialize_gop_csv,
    serialize_landmarks_csv,
    serialize_textgrid,
    write_wav,
)
from helpers.misc import ensure_dir, make_rng, parallel_map, write_json

JITTER_SCALE = 0.03
SHIMMER_SCALE = 0.06
CENTRALIZATION_SCALE = 0.6
SLOWDOWN_SCALE = 0.5

# Conventional adult values, not measurements
DEFAULT_FORMANTS = (
    (800.0, 1250.0, 2600.0),
    (550.0, 900.0, 2600.0),
    (500.0, 1350.0, 2500.0),
    (300.0, 2300.0, 3000.0),
    (350.0, 750.0, 2500.0),
    (300.0, 1850.0, 2300.0),
)
DEFAULT_BANDWIDTHS = (100.0, 120.0, 150.0)
# Peak inner-lip opening and lip-width change in pixels
DEFAULT_MOUTH = (
    (30.0, 2.0),
    (22.0, -12.0),
    (18.0, 6.0),
    (8.0, 10.0),
    (10.0, -14.0),
    (9.0, -12.0),
)
SYLLABLES = ("a", "o", "e", "yi", "wu", "yu")

N_POINTS = 68
MOUTH_CENTRE = (320.0, 400.0)
REST_WIDTH = 50.0
LIP_THICKNESS = 6.0
BASE_RISE = 0.06


def _table(rows, width, what):
    rows = tuple(tuple(float(v) for v in row) for row in rows)
    if len(rows) != len(VOWEL_ORDER) or any(len(row) != width for row in rows):
        raise ConfigError(f"{what} needs {len(VOWEL_ORDER)} rows of {width} values")
    return rows


@dataclass(frozen=True)
class SynthSettings:
    """Corpus layout and the vowel tables, rows in (a, o, e, i, u, ü) order."""

    subjects: int = 20
    repetitions: int = 3
    sample_rate: int = 16000
    f0: float = 100.0
    syllable_duration: float = 0.3
    gap: float = 0.15
    vowel_margin: float = 0.02
    fps: float = 30.0
    noise_floor: float = 1e-4
    source_tilt: float = 0.97
    lip_independence: float = 0.0
    formants: Tuple[Tuple[float, ...], ...] = DEFAULT_FORMANTS
    bandwidths: Tuple[float, ...] = DEFAULT_BANDWIDTHS
    mouth: Tuple[Tuple[float, ...], ...] = DEFAULT_MOUTH

    def __post_init__(self):
        object.__setattr__(self, "formants", _table(self.formants, 3, "formants"))
        object.__setattr__(self, "mouth", _table(self.mouth, 2, "mouth"))
        object.__setattr__(self, "bandwidths", tuple(float(b) for b in self.bandwidths))
        if len(self.bandwidths) != 3 or min(self.bandwidths) <= 0:
            raise ConfigError("bandwidths needs 3 positive values")
        for vowel, (f1, f2, f3) in zip(VOWEL_ORDER, self.formants):
            if not 0 < f1 < f2 < f3 < self.sample_rate / 2:
                raise ConfigError(f"formants of {vowel.value} must satisfy 0 < F1 < F2 < F3 < Nyquist")
        if self.subjects < 2 or self.repetitions < 1:
            raise ConfigError("synth needs at least 2 subjects and 1 repetition")
        if self.syllable_duration < 0.1 or self.gap < 0 or self.fps < 10:
            raise ConfigError("syllable-duration must be >= 0.1 s, gap >= 0 and fps >= 10")
        if not 0 <= self.vowel_margin < self.syllable_duration / 4:
            raise ConfigError("vowel-margin must be non-negative and small against the syllable")
        if not 0 <= self.lip_independence <= 1:
            raise ConfigError("lip-independence must lie in [0, 1]")
        if self.f0 <= 0 or self.noise_floor < 0:
            raise ConfigError("f0 must be positive and noise-floor non-negative")
        if not 0 <= self.source_tilt < 1:
            raise ConfigError("source-tilt must lie in [0, 1)")

    def formant_table(self):
        """Vowel to (F1, F2, F3)."""
        return dict(zip(VOWEL_ORDER, self.formants))

    def mouth_table(self):
        """Vowel to (opening, width change)."""
        return dict(zip(VOWEL_ORDER, self.mouth))


@dataclass(frozen=True)
class SynthProfile:
    """Severity, voice and vowel tables of one synthetic speaker."""

    severity: float
    f0: float = 100.0
    formants: Dict = None
    bandwidths: Tuple[float, ...] = DEFAULT_BANDWIDTHS
    mouth: Dict = None
    seed: int = 0
    sample_rate: int = 16000
    lip_severity: Optional[float] = None
    source_tilt: float = 0.97

    def __post_init__(self):
        if not 0 <= self.severity <= 1:
            raise RangeError(f"severity {self.severity} outside [0, 1]")
        if self.lip_severity is not None and not 0 <= self.lip_severity <= 1:
            raise RangeError(f"lip severity {self.lip_severity} outside [0, 1]")
        if not 0 <= self.source_tilt < 1:
            raise RangeError(f"source tilt {self.source_tilt} outside [0, 1)")
        if self.formants is None:
            object.__setattr__(self, "formants", dict(zip(VOWEL_ORDER, DEFAULT_FORMANTS)))
        if self.mouth is None:
            object.__setattr__(self, "mouth", dict(zip(VOWEL_ORDER, DEFAULT_MOUTH)))
        for vowel in VOWEL_ORDER:
            f1, f2, f3 = self.centralized(vowel)
            if not 0 < f1 < f2 < f3:
                raise ValidationError(f"centralized formants of {vowel.value} lose their order")

    @classmethod
    def from_settings(cls, severity, settings, seed=0, lip_severity=None):
        return cls(
            severity,
            settings.f0,
            settings.formant_table(),
            settings.bandwidths,
            settings.mouth_table(),
            seed,
            settings.sample_rate,
            lip_severity,
            settings.source_tilt,
        )

    @property
    def jitter_level(self):
        return self.severity * JITTER_SCALE

    @property
    def shimmer_level(self):
        return self.severity * SHIMMER_SCALE

    @property
    def centralization(self):
        return self.severity * CENTRALIZATION_SCALE

    @property
    def lip_level(self):
        """Severity driving the mouth model."""
        return self.severity if self.lip_severity is None else self.lip_severity

    @property
    def lip_slowdown(self):
        return self.lip_level * SLOWDOWN_SCALE

    def centralized(self, vowel):
        """Formants pulled towards the centroid of the table by the centralization factor."""

        centroid = np.mean([self.formants[v] for v in VOWEL_ORDER], axis=0)
        canon = np.asarray(self.formants[vowel], dtype=np.float64)
        return tuple(canon + self.centralization * (centroid - canon))


def _vowel(vowel):
    return vowel if isinstance(vowel, VowelClass) else VowelClass.parse(vowel)


def _unit_steps(draws, count):
    """Centre `draws` and scale their first `count` values to a mean absolute successive difference of 1."""

    draws = draws - draws[:count].mean()
    steps = np.abs(np.diff(draws[:count])).mean() if count > 1 else 0.0
    return draws / steps if steps > 0 else draws


def glottal_pulses(vowel, profile, duration_s):
    """Pulse sample positions, amplitudes and the realized period/amplitude sequence.

    Local jitter and shimmer of the realized sequence equal the profile's levels up to sample rounding.
    """

    vowel = _vowel(vowel)
    fs = profile.sample_rate
    n_samples = int(round(duration_s * fs))
    rng = make_rng(profile.seed, vowel.index)
    count = int(duration_s * profile.f0 * 2) + 2
    period = 1.0 / profile.f0
    inside = max(int((duration_s - 0.5 * period) * profile.f0), 1)
    # Same draws at every severity
    eps = _unit_steps(rng.standard_normal(count), inside)
    eta = _unit_steps(rng.standard_normal(count), inside)

    periods = np.maximum(period * (1.0 + profile.jitter_level * eps), 0.5 * period)
    amplitudes = np.maximum(1.0 + profile.shimmer_level * eta, 0.05)
    onsets = 0.5 * period + np.concatenate([[0.0], np.cumsum(periods[:-1])])
    positions = np.round(onsets * fs).astype(int)
    keep = positions < n_samples
    positions, amplitudes = positions[keep], amplitudes[keep]

    truth = PulseSequence(np.diff(positions) / fs, amplitudes[:-1])
    return positions, amplitudes, truth


def resonator(x, frequency, bandwidth, sample_rate):
    """Second-order digital resonator with unity gain at DC."""

    dt = 1.0 / sample_rate
    c = -np.exp(-2.0 * np.pi * bandwidth * dt)
    b = 2.0 * np.exp(-np.pi * bandwidth * dt) * np.cos(2.0 * np.pi * frequency * dt)
    a = 1.0 - b - c
    return signal.lfilter([a], [1.0, -b, -c], x)


def synth_vowel(vowel, profile, duration_s):
    """Perturbed glottal impulse train through three cascaded formant resonators, peak 0.5."""

    vowel = _vowel(vowel)
    if duration_s < 0.1:
        raise RangeError(f"synthetic vowels need at least 0.1 s, got {duration_s}")

    positions, amplitudes, _ = glottal_pulses(vowel, profile, duration_s)
    y = np.zeros(int(round(duration_s * profile.sample_rate)))
    y[positions] = amplitudes
    # Glottal roll-off, undone by a matching pre-emphasis
    y = signal.lfilter([1.0], [1.0, -profile.source_tilt], y)
    for frequency, bandwidth in zip(profile.centralized(vowel), profile.bandwidths):
        y = resonator(y, frequency, bandwidth, profile.sample_rate)
    return AudioBuffer(0.5 * y / np.max(np.abs(y)), profile.sample_rate)


def _envelope(times, start, end, rise):
    """Open-hold-close mouth envelope in [0, 1]."""

    opening = np.clip((times - start) / rise, 0.0, 1.0) * np.clip((end - times) / rise, 0.0, 1.0)
    return np.sin(0.5 * np.pi * opening) ** 2


def _face_points():
    """Static non-mouth points on an oval."""

    angles = np.linspace(0.0, 2.0 * np.pi, 48, endpoint=False)
    return np.column_stack([320.0 + 150.0 * np.cos(angles), 330.0 + 190.0 * np.sin(angles)])


def _mouth_points(opening, width):
    """Points 48..67 of the 68-point layout for one frame."""

    cx, cy = MOUTH_CENTRE
    half = width / 2.0
    outer = opening / 2.0 + LIP_THICKNESS
    rel = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) / 3.0
    points = np.empty((20, 2))
    points[0] = (cx - half, cy)
    points[1:6] = np.column_stack([cx + half * rel, cy - outer * (1.0 - rel**2)])
    points[6] = (cx + half, cy)
    points[7:12] = np.column_stack([cx - half * rel, cy + outer * (1.0 - rel**2)])
    inner_half = half - 4.0
    inner_rel = np.array([-1.0, 0.0, 1.0]) / 3.0
    points[12] = (cx - inner_half, cy)
    points[13:16] = np.column_stack([cx + inner_half * inner_rel, cy - opening / 2.0 * (1.0 - inner_rel**2)])
    points[16] = (cx + inner_half, cy)
    points[17:20] = np.column_stack([cx - inner_half * inner_rel, cy + opening / 2.0 * (1.0 - inner_rel**2)])
    return points


def mouth_track(times, spans, profile, fps):
    """Landmark frames for syllable spans given as (start, end, vowel)."""

    times = np.asarray(times, dtype=np.float64)
    shrink = 1.0 - 0.5 * profile.lip_level
    rise_base = BASE_RISE / (1.0 - profile.lip_slowdown)
    opening = np.zeros(len(times))
    width = np.full(len(times), REST_WIDTH)
    for start, end, vowel in spans:
        vowel = _vowel(vowel)
        amplitude, width_change = profile.mouth[vowel]
        envelope = _envelope(times, start, end, min(rise_base, 0.4 * (end - start)))
        opening += amplitude * shrink * envelope
        width += width_change * shrink * envelope

    face = _face_points()
    points = np.empty((len(times), N_POINTS, 2))
    for i in range(len(times)):
        points[i, :48] = face
        points[i, 48:] = _mouth_points(opening[i], width[i])

    tremor = 0.5 * profile.lip_level
    if tremor > 0:
        rng = make_rng(profile.seed, 97)
        points[:, 48:] += tremor * rng.standard_normal((len(times), 20, 2))
    return LandmarkSequence(fps, times, points, LipIndexMap())


def synth_landmarks(vowel, profile, duration_s, fps=30.0):
    """Mouth track of one vowel held for `duration_s`."""

    if fps < 10:
        raise RangeError(f"landmark fps must be at least 10, got {fps}")
    times = np.arange(int(np.floor(duration_s * fps)) + 1) / fps
    return mouth_track(times, [(0.0, duration_s, _vowel(vowel))], profile, fps)


def severity_scores(severity, factors):
    """Total and sub-item scores for a severity, `factors` maps sub-item kind to u in [0, 1]."""

    if not 0 <= severity <= 1:
        raise RangeError(f"severity {severity} outside [0, 1]")
    scores = {"total": float(round(116 - 79 * severity))}
    for kind in SUB_ITEMS:
        scores[kind] = float(round(SCALE_MAX[kind] * (1 - severity * (0.6 + 0.3 * factors[kind]))))
    return scores


def syllable_layout(settings):
    """(syllable start, syllable end, vowel, syllable text) of one recording, and its duration."""

    layout = []
    t = settings.gap
    for vowel, text in zip(VOWEL_ORDER, SYLLABLES):
        start, end = round(t, 6), round(t + settings.syllable_duration, 6)
        layout.append((start, end, vowel, text))
        t = end + settings.gap
    return layout, round(t, 6)


def _padded_tier(name, intervals, xmax):
    """Interval tier covering [0, xmax] with blank fillers."""

    filled = []
    previous = 0.0
    for interval in intervals:
        if interval.start > previous:
            filled.append(SegmentInterval(previous, interval.start, ""))
        filled.append(interval)
        previous = interval.end
    if previous < xmax:
        filled.append(SegmentInterval(previous, xmax, ""))
    return SegmentTier(name, tuple(filled), 0.0, xmax)


def _gop(rng, severity):
    return (
        round(float(-(0.5 + 3.0 * severity) + 0.1 * rng.standard_normal()), 4),
        round(float(-(0.8 + 2.5 * severity) + 0.1 * rng.standard_normal()), 4),
    )


def write_recording(out_dir, recording_id, subject_id, profile, settings, seed):
    """Render one recording and its sidecars; returns the manifest record."""

    layout, duration = syllable_layout(settings)
    fs = settings.sample_rate
    rng = make_rng(seed, 5)
    samples = settings.noise_floor * rng.standard_normal(int(round(duration * fs)))
    syllables, vowels, gop_rows = [], [], []
    for start, end, vowel, text in layout:
        audio = synth_vowel(vowel, profile, end - start)
        first = int(round(start * fs))
        samples[first : first + len(audio.samples)] += audio.samples
        syllables.append(SegmentInterval(start, end, text))
        vowels.append(SegmentInterval(round(start + settings.vowel_margin, 6), round(end - settings.vowel_margin, 6), vowel.value))
        gop_rows.append((recording_id, start, end, *_gop(rng, profile.severity)))

    paths = {
        "audio_path": f"audio/{recording_id}.wav",
        "segment_path": f"textgrid/{recording_id}.TextGrid",
        "landmark_path": f"landmarks/{recording_id}.csv",
        "gop_path": f"gop/{recording_id}.csv",
    }
    for relpath in paths.values():
        ensure_dir(os.path.dirname(os.path.join(out_dir, relpath)))

    write_wav(os.path.join(out_dir, paths["audio_path"]), AudioBuffer(samples, fs))
    tiers = [_padded_tier("syllables", syllables, duration), _padded_tier("vowels", vowels, duration)]
    times = np.arange(int(np.floor(duration * settings.fps)) + 1) / settings.fps
    track = mouth_track(times, [(s, e, v) for s, e, v, _ in layout], profile, settings.fps)
    for key, text in (
        ("segment_path", serialize_textgrid(tiers, 0.0, duration)),
        ("landmark_path", serialize_landmarks_csv(track)),
        ("gop_path", serialize_gop_csv(gop_rows)),
    ):
        with open(os.path.join(out_dir, paths[key]), "w", encoding="utf-8", newline="\n") as outfile:
            outfile.write(text)

    return RecordingRecord(recording_id, subject_id, fps=settings.fps, **paths)


def _write_subject(job):
    """Render every recording of one subject (module-level for worker processes)."""

    out_dir, subject_id, severity, lip_severity, settings, seed = job
    records = []
    for rep in range(settings.repetitions):
        recording_id = f"{subject_id}-R{rep + 1:02d}"
        rec_seed = int(make_rng(seed, rep).integers(0, 2**31 - 1))
        profile = SynthProfile.from_settings(severity, settings, rec_seed, lip_severity)
        records.append(write_recording(out_dir, recording_id, subject_id, profile, settings, rec_seed))
    return records


def gen_corpus(n_subjects, seed, out_dir, settings=SynthSettings(), logger=None, jobs=1, severities=None):
    """Write a synthetic corpus and its manifest.json; returns the manifest."""

    if n_subjects < 2:
        raise RangeError(f"a corpus needs at least 2 subjects, got {n_subjects}")
    if severities is None:
        severities = make_rng(seed, 0).uniform(0.0, 1.0, size=n_subjects)
    severities = np.asarray(severities, dtype=np.float64)
    if len(severities) != n_subjects:
        raise ValidationError(f"{len(severities)} severities given for {n_subjects} subjects")

    factors = dict(zip(SUB_ITEMS, make_rng(seed, 1).uniform(0.0, 1.0, size=len(SUB_ITEMS))))
    draws = make_rng(seed, 2).uniform(0.0, 1.0, size=n_subjects)
    lam = settings.lip_independence

    ensure_dir(out_dir)
    subjects, jobs_list = [], []
    for i, severity in enumerate(severities):
        subject_id = f"S{i + 1:03d}"
        severity = float(severity)
        lip_severity = (1 - lam) * severity + lam * float(draws[i])
        subjects.append(SubjectRecord(subject_id, severity_scores((severity + lip_severity) / 2, factors)))
        subject_seed = int(make_rng(seed, 3, i).integers(0, 2**31 - 1))
        jobs_list.append(
            (out_dir, subject_id, severity, lip_severity if lam > 0 else None, settings, subject_seed)
        )

    if logger:
        logger.info(f"Synthesizing {n_subjects} subjects with {settings.repetitions} recordings each in '{out_dir}'")
    recordings = [record for records in parallel_map(logger, _write_subject, jobs_list, jobs) for record in records]

    manifest = DatasetManifest(tuple(subjects), tuple(recordings), os.path.abspath(out_dir))
    write_json(os.path.join(out_dir, "manifest.json"), manifest_to_dict(manifest))
    return manifest

