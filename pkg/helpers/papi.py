"""The 20-dimensional acoustic feature vector and the vowel-space metrics it carries."""
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Tuple

import numpy as np
import pandas as pd
from scipy.spatial import ConvexHull, QhullError

from helpers import acoustics
from helpers.core import VOWEL_ORDER, VowelClass
from helpers.errors import (
    ConfigError,
    DegenerateFormantsError,
    MeasurementError,
    MissingVowelError,
    ValidationError,
)

PAPI_FEATURES = (
    # phonation
    "jitter",
    "shimmer",
    "hnr_db",
    "gne",
    "vfer",
    # articulation
    "jaw_distance_hz",
    "tongue_distance_hz",
    "movement_degree",
    "vsa_hz2",
    "fcr",
    "vai",
    "f1_std_hz",
    "f2_std_hz",
    "f3_std_hz",
    "intensity_std_db",
    # prosody
    "mean_intensity_db",
    "syllable_duration_s",
    "vowel_duration_s",
    # intelligibility
    "gop_vowel",
    "gop_consonant",
)

PHONATION = PAPI_FEATURES[:5]
ARTICULATION_SPACE = ("jaw_distance_hz", "tongue_distance_hz", "movement_degree", "vsa_hz2", "fcr", "vai")
FORMANT_SPREAD = ("f1_std_hz", "f2_std_hz", "f3_std_hz")
VSA_MODES = ("triangle", "hull")


@dataclass(frozen=True)
class PapiSettings:
    """Vowel-space variant and the values substituted for failed measurements."""

    vsa_mode: str = "triangle"
    default_row: Tuple[float, ...] = (0.0,) * len(PAPI_FEATURES)

    def __post_init__(self):
        if self.vsa_mode not in VSA_MODES:
            raise ConfigError(f"vsa-mode must be one of {', '.join(VSA_MODES)}, got '{self.vsa_mode}'")
        row = tuple(float(v) for v in self.default_row)
        if len(row) != len(PAPI_FEATURES) or not np.all(np.isfinite(row)):
            raise ConfigError(f"default-row needs {len(PAPI_FEATURES)} finite values")
        object.__setattr__(self, "default_row", row)

    def default(self, name):
        """Substitute value of one feature."""
        return self.default_row[PAPI_FEATURES.index(name)]


@dataclass(frozen=True, eq=False)
class PapiVector:
    """Feature values in PAPI_FEATURES order and the names of substituted groups."""

    values: np.ndarray
    flags: FrozenSet[str] = frozenset()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(PAPI_FEATURES),) or not np.all(np.isfinite(values)):
            raise ValidationError(f"PAPI vector needs {len(PAPI_FEATURES)} finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "flags", frozenset(self.flags))

    def __getitem__(self, name):
        return float(self.values[PAPI_FEATURES.index(name)])

    def as_dict(self):
        """Feature name to value."""
        return dict(zip(PAPI_FEATURES, self.values.tolist()))


@dataclass(frozen=True)
class VowelFormantSet:
    """Mean (F1, F2) per vowel in Hz."""

    means: Dict[VowelClass, Tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        for vowel, (f1, f2) in self.means.items():
            if not 0 < f1 < f2:
                raise ValidationError(f"vowel {vowel.value}: formants must satisfy 0 < F1 < F2, got ({f1}, {f2})")

    def require(self, *vowels):
        """Formants of the given vowels, or MissingVowelError."""
        missing = [v.value for v in vowels if v not in self.means]
        if missing:
            raise MissingVowelError(f"vowel set lacks {', '.join(missing)}")
        return [self.means[v] for v in vowels]

    def centroid(self):
        """Mean (F1, F2) over the vowels present."""
        points = np.array(list(self.means.values()))
        return tuple(points.mean(axis=0))


def vowel_space_area(s, mode="triangle"):
    """Area of the /a/-/i/-/u/ triangle (or of the hull of every vowel present) in Hz²."""

    if mode == "hull":
        return vowel_space_hull_area(s)
    (f1a, f2a), (f1i, f2i), (f1u, f2u) = s.require(VowelClass.A, VowelClass.I, VowelClass.U)
    return 0.5 * abs(f1a * (f2i - f2u) + f1i * (f2u - f2a) + f1u * (f2a - f2i))


def vowel_space_hull_area(s):
    """Convex-hull area over all vowels present (at least /a/, /i/, /u/)."""

    s.require(VowelClass.A, VowelClass.I, VowelClass.U)
    points = np.array([s.means[v] for v in VOWEL_ORDER if v in s.means])
    try:
        return float(ConvexHull(points).volume)
    except QhullError:
        # collinear
        return 0.0


def fcr(s):
    """Formant centralization ratio (F2u + F2a + F1i + F1u) / (F2i + F1a)."""

    (f1a, f2a), (f1i, f2i), (f1u, f2u) = s.require(VowelClass.A, VowelClass.I, VowelClass.U)
    denominator = f2i + f1a
    if denominator == 0:
        raise DegenerateFormantsError("FCR denominator F2i + F1a is zero")
    return (f2u + f2a + f1i + f1u) / denominator


def vai(s):
    """Vowel articulation index, 1 / FCR."""

    ratio = fcr(s)
    if ratio == 0:
        raise DegenerateFormantsError("VAI undefined for FCR = 0")
    return 1.0 / ratio


def movement_degree(s):
    """F2i / F2u."""

    (_, f2i), (_, f2u) = s.require(VowelClass.I, VowelClass.U)
    if f2u == 0:
        raise DegenerateFormantsError("movement degree undefined for F2u = 0")
    return f2i / f2u


def tongue_distance(s):
    """|F2i - F2u| in Hz."""

    (_, f2i), (_, f2u) = s.require(VowelClass.I, VowelClass.U)
    return abs(f2i - f2u)


def jaw_distance(s):
    """|F1a - F1i| in Hz."""

    (f1a, _), (f1i, _) = s.require(VowelClass.A, VowelClass.I)
    return abs(f1a - f1i)


def articulation_metrics(s, settings=PapiSettings()):
    """Subject-level vowel-space values keyed by feature name."""

    return {
        "jaw_distance_hz": jaw_distance(s),
        "tongue_distance_hz": tongue_distance(s),
        "movement_degree": movement_degree(s),
        "vsa_hz2": vowel_space_area(s, settings.vsa_mode),
        "fcr": fcr(s),
        "vai": vai(s),
    }


def subject_formant_set(measurements):
    """Average formant means per vowel over observations carrying exactly one vowel.

    `measurements` yields (vowel_classes, (F1, F2)) pairs.
    """

    collected = {}
    for vowels, (f1, f2) in measurements:
        if len(vowels) == 1:
            collected.setdefault(next(iter(vowels)), []).append((f1, f2))
    return VowelFormantSet(
        {vowel: tuple(np.mean(collected[vowel], axis=0)) for vowel in VOWEL_ORDER if vowel in collected}
    )


def assemble_papi(obs, audio, vowel_interval, subject_formant_set, settings=PapiSettings(), dsp=acoustics.DEFAULT_DSP):
    """Build the feature vector of one observation; failed groups take default values and are flagged."""

    start, end = vowel_interval
    if not (obs.start <= start < end <= obs.end):
        raise ValidationError(
            f"vowel interval [{start}, {end}] outside observation [{obs.start}, {obs.end}]"
        )
    segment = audio.segment(start, end)
    values = {}
    flags = set()

    try:
        pulses = acoustics.estimate_pitch_track(segment, settings=dsp)
        values.update(
            jitter=acoustics.jitter_local(pulses),
            shimmer=acoustics.shimmer_local(pulses),
            hnr_db=acoustics.hnr_db(segment, dsp),
            gne=acoustics.gne(segment, dsp),
            vfer=acoustics.vfer(segment, dsp),
        )
    except MeasurementError:
        values.update({name: settings.default(name) for name in PHONATION})
        flags.add("phonation")

    try:
        stats = acoustics.formant_stats(acoustics.lpc_formants(segment, dsp))
        values.update(
            f1_std_hz=stats["F1"]["std"], f2_std_hz=stats["F2"]["std"], f3_std_hz=stats["F3"]["std"]
        )
    except MeasurementError:
        values.update({name: settings.default(name) for name in FORMANT_SPREAD})
        flags.add("formants")

    try:
        if subject_formant_set is None:
            raise MissingVowelError("no subject formant set")
        values.update(articulation_metrics(subject_formant_set, settings))
    except (MeasurementError, MissingVowelError):
        values.update({name: settings.default(name) for name in ARTICULATION_SPACE})
        flags.add("articulation")

    intensity = acoustics.intensity_stats(segment, settings=dsp)
    values.update(
        intensity_std_db=intensity["std_db"],
        mean_intensity_db=intensity["mean_db"],
        syllable_duration_s=obs.end - obs.start,
        vowel_duration_s=end - start,
    )

    for name in ("gop_vowel", "gop_consonant"):
        value = getattr(obs, name)
        if value is None:
            values[name] = settings.default(name)
            flags.add("gop")
        else:
            values[name] = float(value)

    return PapiVector(np.array([values[name] for name in PAPI_FEATURES]), frozenset(flags))


KEY_COLUMNS = ("subject_id", "recording_id", "start", "end", "syllable", "vowel_classes", "flags")


def papi_table(observations, vectors):
    """One row per observation: keys, flags and the 20 features."""

    rows = []
    for obs, vector in zip(observations, vectors):
        row = {
            "subject_id": obs.subject_id,
            "recording_id": obs.recording_id,
            "start": obs.start,
            "end": obs.end,
            "syllable": obs.syllable_text,
            "vowel_classes": "".join(v.value for v in VOWEL_ORDER if v in obs.vowel_classes),
            "flags": ";".join(sorted(vector.flags)),
        }
        row.update(vector.as_dict())
        rows.append(row)
    return pd.DataFrame(rows, columns=list(KEY_COLUMNS) + list(PAPI_FEATURES))
