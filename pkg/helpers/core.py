"""Domain types shared by every helper: vowels, observations, groups, scores, manifests."""
import json
import os
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

from helpers.errors import ParseError, RangeError, ValidationError
from helpers.misc import resolve_path


class VowelClass(Enum):
    """Mandarin cardinal vowels, V is ü."""

    A = "a"
    O = "o"
    E = "e"
    I = "i"
    U = "u"
    V = "v"

    @property
    def index(self):
        """Node index in the fixed (a, o, e, i, u, ü) order."""
        return VOWEL_ORDER.index(self)

    @classmethod
    def parse(cls, text):
        """Accept 'a'..'v', 'ü' or the member name."""
        text = str(text).strip()
        if text in ("ü", "u:"):
            return cls.V
        try:
            return cls(text.lower())
        except ValueError:
            try:
                return cls[text.upper()]
            except KeyError:
                raise RangeError(f"unknown vowel '{text}'") from None


VOWEL_ORDER = (VowelClass.A, VowelClass.O, VowelClass.E, VowelClass.I, VowelClass.U, VowelClass.V)

TARGET_KINDS = (
    "total",
    "lips",
    "reflex",
    "jaw",
    "laryngeal",
    "respiration",
    "velum",
    "tongue",
    "intelligibility",
)

SCALE_MAX = {
    "total": 116,
    "lips": 20,
    "reflex": 12,
    "jaw": 8,
    "laryngeal": 16,
    "respiration": 8,
    "velum": 12,
    "tongue": 24,
    "intelligibility": 16,
}

SUB_ITEMS = TARGET_KINDS[1:]


@dataclass(frozen=True)
class FdaTarget:
    """Regression target: total FDA score or one sub-item score."""

    kind: str
    value: float
    scale_max: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SCALE_MAX:
            raise RangeError(f"unknown target kind '{self.kind}'")
        if self.scale_max is None:
            object.__setattr__(self, "scale_max", float(SCALE_MAX[self.kind]))
        elif float(self.scale_max) != SCALE_MAX[self.kind]:
            raise RangeError(
                f"scale_max {self.scale_max} does not match {self.kind} scale {SCALE_MAX[self.kind]}"
            )
        if not 0 <= self.value <= self.scale_max:
            raise RangeError(f"{self.kind} score {self.value} outside [0, {self.scale_max:g}]")


class SeverityBand(Enum):
    """Severity bands over the total FDA score."""

    NORMAL = "Normal"
    MILD = "Mild"
    MODERATE = "Moderate"
    SEVERE = "Severe"

    @property
    def severity(self):
        """0 for Normal up to 3 for Severe."""
        return BAND_ORDER.index(self)

    @property
    def interval(self):
        """Closed total-score interval."""
        return BAND_INTERVALS[self]


BAND_ORDER = (SeverityBand.NORMAL, SeverityBand.MILD, SeverityBand.MODERATE, SeverityBand.SEVERE)

BAND_INTERVALS = {
    SeverityBand.NORMAL: (116, 116),
    SeverityBand.MILD: (87, 115),
    SeverityBand.MODERATE: (58, 86),
    SeverityBand.SEVERE: (37, 57),
}


def severity_band(total):
    """Return the band containing a total FDA score in [37, 116]."""

    if not 37 <= total <= 116:
        raise RangeError(f"total FDA score {total} outside [37, 116]")
    if total >= 116:
        return SeverityBand.NORMAL
    if total >= 87:
        return SeverityBand.MILD
    if total >= 58:
        return SeverityBand.MODERATE
    return SeverityBand.SEVERE


_TONE_MARKS = re.compile(r"[\u0300-\u036f]")
_IMPLICIT_UE = re.compile(r"^([jqxy])u")


def normalize_pinyin(text):
    """Lowercase, strip tones, map ü/u:/v to 'v' and expand the implicit ü of ju/qu/xu/yu."""

    text = text.strip().lower()
    text = text.replace("u:", "v").replace("ü", "v")
    # ǖ ǘ ǚ ǜ decompose to u + diaeresis + tone
    text = unicodedata.normalize("NFD", text).replace("u\u0308", "v")
    text = _TONE_MARKS.sub("", text)
    text = re.sub(r"[0-9]", "", text)
    return _IMPLICIT_UE.sub(r"\1v", text)


def vowel_classes(text):
    """Return the vowel classes whose letter the normalized syllable contains."""

    normalized = normalize_pinyin(text)
    return frozenset(vowel for vowel in VOWEL_ORDER if vowel.value in normalized)


@dataclass(frozen=True)
class SyllableObservation:
    """One syllable of one recording."""

    subject_id: str
    recording_id: str
    start: float
    end: float
    syllable_text: str
    vowel_classes: frozenset = None
    audio_ref: Optional[str] = None
    landmark_ref: Optional[str] = None
    gop_vowel: Optional[float] = None
    gop_consonant: Optional[float] = None
    vowel_start: Optional[float] = None
    vowel_end: Optional[float] = None

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValidationError(
                f"observation {self.recording_id} has invalid span [{self.start}, {self.end}]"
            )
        if self.vowel_classes is None:
            object.__setattr__(self, "vowel_classes", vowel_classes(self.syllable_text))
        else:
            object.__setattr__(self, "vowel_classes", frozenset(self.vowel_classes))

    @property
    def key(self):
        """Stable identifier of the observation."""
        return observation_key(self.recording_id, self.start, self.end)

    @property
    def vowel_interval(self):
        """Vowel span, the whole syllable when no vowel span is annotated."""
        if self.vowel_start is None or self.vowel_end is None:
            return (self.start, self.end)
        return (self.vowel_start, self.vowel_end)


def observation_key(recording_id, start, end):
    """Key an observation by recording and span."""

    return f"{recording_id}|{float(start)!r}|{float(end)!r}"


@dataclass(frozen=True)
class VowelGroup:
    """One sample of the vowel sample space: one observation per cardinal vowel."""

    subject_id: str
    members: Tuple[SyllableObservation, ...]
    target: Optional[FdaTarget] = None
    group_id: Optional[str] = None

    def __post_init__(self):
        members = tuple(self.members)
        if len(members) != len(VOWEL_ORDER):
            raise ValidationError(f"vowel group needs 6 members, got {len(members)}")
        for vowel, member in zip(VOWEL_ORDER, members):
            if vowel not in member.vowel_classes:
                raise ValidationError(
                    f"member '{member.syllable_text}' does not contain vowel {vowel.value}"
                )
            if member.subject_id != self.subject_id:
                raise ValidationError(
                    f"member of subject {member.subject_id} in group of subject {self.subject_id}"
                )
        object.__setattr__(self, "members", members)

    def member(self, vowel):
        """Member for one vowel."""
        return self.members[vowel.index]


@dataclass(frozen=True)
class SubjectRecord:
    """Subject entry of a dataset manifest."""

    subject_id: str
    fda_scores: Dict[str, float] = field(default_factory=dict)

    def target(self, kind):
        """FdaTarget of one kind."""
        if kind not in self.fda_scores:
            raise ValidationError(f"subject {self.subject_id} has no {kind} score")
        return FdaTarget(kind, float(self.fda_scores[kind]))


@dataclass(frozen=True)
class RecordingRecord:
    """Recording entry of a dataset manifest."""

    recording_id: str
    subject_id: str
    audio_path: str
    segment_path: str
    landmark_path: Optional[str] = None
    fps: Optional[float] = None
    gop_path: Optional[str] = None


@dataclass(frozen=True)
class DatasetManifest:
    """Subjects, recordings and the directory relative paths resolve against."""

    subjects: Tuple[SubjectRecord, ...]
    recordings: Tuple[RecordingRecord, ...]
    base_dir: str = "."

    def subject(self, subject_id):
        """Look up a subject."""
        for subject in self.subjects:
            if subject.subject_id == subject_id:
                return subject
        raise ValidationError(f"unknown subject '{subject_id}'")

    def path(self, relpath):
        """Resolve a manifest path."""
        return resolve_path(self.base_dir, relpath)


def manifest_to_dict(manifest):
    """Serialize a manifest to its JSON structure."""

    return {
        "subjects": [
            {"subject_id": s.subject_id, "fda_scores": dict(s.fda_scores)} for s in manifest.subjects
        ],
        "recordings": [
            {
                key: value
                for key, value in (
                    ("recording_id", r.recording_id),
                    ("subject_id", r.subject_id),
                    ("audio_path", r.audio_path),
                    ("segment_path", r.segment_path),
                    ("landmark_path", r.landmark_path),
                    ("fps", r.fps),
                    ("gop_path", r.gop_path),
                )
                if value is not None
            }
            for r in manifest.recordings
        ],
    }


def parse_manifest(text, base_dir="."):
    """Parse a manifest JSON document."""

    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(f"manifest is not valid JSON: {err.msg} (column {err.colno})", err.lineno)

    if not isinstance(data, dict):
        raise ParseError("manifest must be a JSON object")

    subjects = []
    for i, entry in enumerate(data.get("subjects", [])):
        try:
            subjects.append(
                SubjectRecord(
                    str(entry["subject_id"]),
                    {str(k): float(v) for k, v in entry.get("fda_scores", {}).items()},
                )
            )
        except (KeyError, TypeError, ValueError, AttributeError) as err:
            raise ParseError(f"subjects[{i}]: bad or missing field {err}") from None

    recordings = []
    for i, entry in enumerate(data.get("recordings", [])):
        try:
            fps = entry.get("fps")
            recordings.append(
                RecordingRecord(
                    recording_id=str(entry["recording_id"]),
                    subject_id=str(entry["subject_id"]),
                    audio_path=str(entry["audio_path"]),
                    segment_path=str(entry["segment_path"]),
                    landmark_path=entry.get("landmark_path"),
                    fps=None if fps is None else float(fps),
                    gop_path=entry.get("gop_path"),
                )
            )
        except (KeyError, TypeError, ValueError, AttributeError) as err:
            raise ParseError(f"recordings[{i}]: bad or missing field {err}") from None

    return DatasetManifest(tuple(subjects), tuple(recordings), base_dir)


def load_manifest(path):
    """Read a manifest file."""

    try:
        with open(path, "r", encoding="utf-8") as manifestfile:
            text = manifestfile.read()
    except OSError as err:
        raise ParseError(f"cannot read manifest '{path}': {err.strerror}") from None
    return parse_manifest(text, os.path.dirname(os.path.abspath(path)))


def validate_manifest(manifest, check_files=True):
    """Return a list of problems; empty iff the manifest is consistent."""

    report = []
    subject_ids = set()
    for subject in manifest.subjects:
        if subject.subject_id in subject_ids:
            report.append(f"subject {subject.subject_id}: duplicate subject_id")
        subject_ids.add(subject.subject_id)
        for kind, value in sorted(subject.fda_scores.items()):
            if kind not in SCALE_MAX:
                report.append(f"subject {subject.subject_id}: unknown score kind '{kind}'")
            elif not 0 <= value <= SCALE_MAX[kind]:
                report.append(
                    f"subject {subject.subject_id}: {kind}={value:g} outside scale [0, {SCALE_MAX[kind]}]"
                )
        total = subject.fda_scores.get("total")
        if total is not None and 0 <= total <= SCALE_MAX["total"] and total < 37:
            report.append(f"subject {subject.subject_id}: total={total:g} below banded range [37, 116]")

    recording_ids = set()
    for recording in manifest.recordings:
        if recording.recording_id in recording_ids:
            report.append(f"recording {recording.recording_id}: duplicate recording_id")
        recording_ids.add(recording.recording_id)
        if recording.subject_id not in subject_ids:
            report.append(
                f"recording {recording.recording_id}: dangling reference to unknown subject '{recording.subject_id}'"
            )
        if recording.fps is not None and recording.fps <= 0:
            report.append(f"recording {recording.recording_id}: fps must be positive")
        if check_files:
            for name in ("audio_path", "segment_path", "landmark_path", "gop_path"):
                relpath = getattr(recording, name)
                if relpath is not None and not os.path.isfile(manifest.path(relpath)):
                    report.append(f"recording {recording.recording_id}: {name} '{relpath}' not found")

    return report
