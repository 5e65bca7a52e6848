"""Readers and writers: WAV audio, TextGrid and CSV annotations, landmark tracks, GOP sidecars, model documents."""
import io
import json
import re
import struct
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy.io import wavfile

from helpers.errors import FormatError, LoadError, ParseError, ValidationError
from helpers.vgan import VganConfig, VganModel, param_shapes, standardization_shapes

MIN_SAMPLE_RATE = 16000


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono samples in [-1, 1] with their sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValidationError("audio buffer must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("audio buffer contains non-finite samples")
        if int(self.sample_rate) < MIN_SAMPLE_RATE:
            raise ValidationError(
                f"sample rate {self.sample_rate} Hz below the supported minimum {MIN_SAMPLE_RATE} Hz"
            )
        samples = samples.copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self):
        """Length in seconds."""
        return len(self.samples) / self.sample_rate

    def segment(self, start, end):
        """Sub-buffer covering [start, end) seconds."""
        first = max(0, int(round(start * self.sample_rate)))
        last = min(len(self.samples), int(round(end * self.sample_rate)))
        return AudioBuffer(self.samples[first:max(first, last)], self.sample_rate)


def _check_riff(raw):
    """Walk the RIFF chunks; return (fmt chunk bytes, channels)."""

    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError("missing 'RIFF'/'WAVE' header")

    chunks = {}
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4].decode("latin-1")
        size = struct.unpack("<I", raw[pos + 4 : pos + 8])[0]
        available = len(raw) - pos - 8
        if size > available:
            raise FormatError(
                f"truncated '{chunk_id}' chunk: declares {size} bytes, {available} present"
            )
        chunks.setdefault(chunk_id, raw[pos + 8 : pos + 8 + size])
        pos += 8 + size + (size % 2)

    fmt = chunks.get("fmt ")
    if fmt is None or len(fmt) < 16:
        raise FormatError("missing or short 'fmt ' chunk")
    format_tag, channels, _, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if format_tag == 0xFFFE and len(fmt) >= 26:
        format_tag = struct.unpack("<H", fmt[24:26])[0]
    if format_tag != 1 or bits != 16:
        raise FormatError(
            f"'fmt ' chunk declares format tag {format_tag} with {bits} bits; only PCM 16-bit is supported"
        )
    if "data" not in chunks:
        raise FormatError("missing 'data' chunk")
    return channels


def read_wav(path):
    """Read a PCM16 WAV file into an AudioBuffer (channel 0, samples / 32768)."""

    with open(path, "rb") as wavefile:
        raw = wavefile.read()
    _check_riff(raw)

    try:
        rate, data = wavfile.read(io.BytesIO(raw))
    except ValueError as err:
        raise FormatError(f"cannot decode '{path}': {err}") from None

    if data.dtype != np.int16:
        raise FormatError(f"'data' chunk decoded as {data.dtype}, expected int16")
    if data.ndim == 2:
        data = data[:, 0]
    return AudioBuffer(data.astype(np.float64) / 32768.0, rate)


def write_wav(path, audio):
    """Write an AudioBuffer as mono PCM16."""

    scaled = np.clip(np.round(np.asarray(audio.samples) * 32768.0), -32768, 32767)
    wavfile.write(path, audio.sample_rate, scaled.astype(np.int16))


@dataclass(frozen=True)
class SegmentInterval:
    """Labelled time span."""

    start: float
    end: float
    label: str


@dataclass(frozen=True)
class SegmentTier:
    """Named tier of sorted, non-overlapping intervals."""

    name: str
    intervals: Tuple[SegmentInterval, ...]
    xmin: Optional[float] = None
    xmax: Optional[float] = None

    def __post_init__(self):
        intervals = tuple(self.intervals)
        previous = None
        for interval in intervals:
            if not interval.start < interval.end:
                raise ValidationError(
                    f"tier '{self.name}': interval [{interval.start}, {interval.end}] has start >= end"
                )
            if previous is not None and interval.start < previous.end:
                raise ValidationError(
                    f"tier '{self.name}': interval at {interval.start} overlaps or precedes previous ending {previous.end}"
                )
            previous = interval
        object.__setattr__(self, "intervals", intervals)
        if self.xmin is None:
            object.__setattr__(self, "xmin", intervals[0].start if intervals else 0.0)
        if self.xmax is None:
            object.__setattr__(self, "xmax", intervals[-1].end if intervals else 0.0)

    def labelled(self):
        """Intervals with a non-blank label."""
        return [interval for interval in self.intervals if interval.label.strip()]


_KEY_VALUE = re.compile(r"^\s*([^=]+?)\s*=\s*(.*?)\s*$")


class _TextGridReader:
    """Line cursor over a long-format TextGrid."""

    def __init__(self, text):
        self.lines = text.splitlines()
        self.pos = 0

    def next_line(self, what):
        """Next non-blank line as (line number, text)."""
        while self.pos < len(self.lines):
            line = self.lines[self.pos]
            self.pos += 1
            if line.strip():
                return self.pos, line
        raise ParseError(f"unexpected end of file while reading {what}", len(self.lines))

    def peek(self):
        """Next non-blank line without consuming it."""
        pos = self.pos
        while pos < len(self.lines):
            if self.lines[pos].strip():
                return self.lines[pos].strip()
            pos += 1
        return None

    def value(self, key):
        """Read 'key = value' and return (line number, raw value)."""
        lineno, line = self.next_line(key)
        match = _KEY_VALUE.match(line)
        if not match or match.group(1) != key:
            raise ParseError(f"expected '{key} = ...', found '{line.strip()}'", lineno)
        raw = match.group(2)
        if raw.startswith('"'):
            # Quoted strings may span lines
            while not _string_closed(raw):
                if self.pos >= len(self.lines):
                    raise ParseError(f"unterminated string for '{key}'", lineno)
                raw += "\n" + self.lines[self.pos]
                self.pos += 1
        return lineno, raw

    def number(self, key):
        """Read a numeric field."""
        lineno, raw = self.value(key)
        try:
            return float(raw)
        except ValueError:
            raise ParseError(f"'{key}' is not a number: {raw}", lineno) from None

    def string(self, key):
        """Read a quoted string field."""
        lineno, raw = self.value(key)
        if not (raw.startswith('"') and raw.endswith('"') and len(raw) >= 2):
            raise ParseError(f"'{key}' is not a quoted string: {raw}", lineno)
        return raw[1:-1].replace('""', '"')

    def header(self, pattern, what):
        """Consume a structural line such as 'item [1]:'."""
        lineno, line = self.next_line(what)
        match = re.match(pattern, line.strip())
        if not match:
            raise ParseError(f"expected {what}, found '{line.strip()}'", lineno)
        return lineno, match


def _string_closed(raw):
    """True when a raw quoted value has its closing quote."""

    body = raw[1:]
    # Escaped quotes come in pairs
    stripped = body.replace('""', "")
    return stripped.endswith('"') and stripped.count('"') == 1


def parse_textgrid(text, logger=None):
    """Parse a long-format ooTextFile TextGrid; return its IntervalTiers in file order."""

    reader = _TextGridReader(text.lstrip("﻿"))
    lineno, file_type = reader.value("File type")
    if file_type != '"ooTextFile"':
        raise ParseError(f"unsupported file type {file_type}", lineno)
    lineno, object_class = reader.value("Object class")
    if object_class != '"TextGrid"':
        raise ParseError(f"unsupported object class {object_class}", lineno)
    reader.number("xmin")
    reader.number("xmax")

    lineno, line = reader.next_line("tiers flag")
    if line.strip() != "tiers? <exists>":
        if line.strip() == "tiers? <absent>":
            return []
        raise ParseError(f"expected 'tiers? <exists>', found '{line.strip()}'", lineno)
    tier_count = int(reader.number("size"))
    reader.header(r"^item \[\]:$", "'item []:'")

    tiers = []
    for tier_index in range(1, tier_count + 1):
        lineno, match = reader.header(r"^item \[(\d+)\]:$", f"'item [{tier_index}]:'")
        if int(match.group(1)) != tier_index:
            raise ParseError(f"tier number {match.group(1)} out of order", lineno)
        tier_class = reader.string("class")
        name = reader.string("name")
        xmin = reader.number("xmin")
        xmax = reader.number("xmax")

        if tier_class == "IntervalTier":
            lineno, raw = reader.value("intervals: size")
            declared = int(raw)
            intervals = []
            for j in range(1, declared + 1):
                upcoming = reader.peek()
                if upcoming is None or not upcoming.startswith("intervals ["):
                    raise ParseError(
                        f"interval count mismatch in tier '{name}': declared {declared}, found {j - 1}",
                        reader.pos + 1,
                    )
                reader.header(r"^intervals \[(\d+)\]:$", f"'intervals [{j}]:'")
                start = reader.number("xmin")
                end = reader.number("xmax")
                label = reader.string("text")
                intervals.append(SegmentInterval(start, end, label))
            upcoming = reader.peek()
            if upcoming is not None and upcoming.startswith("intervals ["):
                raise ParseError(
                    f"interval count mismatch in tier '{name}': declared {declared}, found more",
                    reader.pos + 1,
                )
            tiers.append(SegmentTier(name, tuple(intervals), xmin, xmax))
        elif tier_class == "TextTier":
            lineno, raw = reader.value("points: size")
            for j in range(1, int(raw) + 1):
                reader.header(r"^points \[(\d+)\]:$", f"'points [{j}]:'")
                upcoming = reader.peek() or ""
                reader.number("number" if upcoming.startswith("number") else "time")
                reader.string("mark")
            if logger:
                logger.warning(f"Skipping point tier '{name}' (only interval tiers are supported)")
        else:
            raise ParseError(f"unknown tier class '{tier_class}'", lineno)

    return tiers


def _quote(label):
    """Quote a TextGrid string."""

    return '"' + label.replace('"', '""') + '"'


def serialize_textgrid(tiers, xmin=None, xmax=None):
    """Write interval tiers as a long-format TextGrid."""

    tiers = list(tiers)
    if xmin is None:
        xmin = min((tier.xmin for tier in tiers), default=0.0)
    if xmax is None:
        xmax = max((tier.xmax for tier in tiers), default=0.0)

    lines = [
        'File type = "ooTextFile"',
        'Object class = "TextGrid"',
        "",
        f"xmin = {xmin!r} ",
        f"xmax = {xmax!r} ",
        "tiers? <exists> ",
        f"size = {len(tiers)} ",
        "item []: ",
    ]
    for i, tier in enumerate(tiers, start=1):
        lines += [
            f"    item [{i}]:",
            '        class = "IntervalTier" ',
            f"        name = {_quote(tier.name)} ",
            f"        xmin = {tier.xmin!r} ",
            f"        xmax = {tier.xmax!r} ",
            f"        intervals: size = {len(tier.intervals)} ",
        ]
        for j, interval in enumerate(tier.intervals, start=1):
            lines += [
                f"        intervals [{j}]:",
                f"            xmin = {interval.start!r} ",
                f"            xmax = {interval.end!r} ",
                f"            text = {_quote(interval.label)} ",
            ]
    return "\n".join(lines) + "\n"


def tier_by_name(tiers, name):
    """Pick a tier by name."""

    for tier in tiers:
        if tier.name == name:
            return tier
    raise ValidationError(f"no tier named '{name}' (found {[tier.name for tier in tiers]})")


def parse_segments_csv(text, name="segments"):
    """Parse a start,end,label CSV into a sorted SegmentTier."""

    try:
        frame = pd.read_csv(io.StringIO(text), dtype={"label": str}, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise ParseError(f"segments CSV: {err}") from None

    if list(frame.columns) != ["start", "end", "label"]:
        raise ParseError(f"segments CSV header must be start,end,label, found {','.join(frame.columns)}", 1)

    rows = []
    for row_number, row in enumerate(frame.itertuples(index=False), start=1):
        try:
            start, end = float(row.start), float(row.end)
        except ValueError:
            raise ValidationError(f"segments CSV row {row_number}: non-numeric time") from None
        if not start < end:
            raise ValidationError(f"segments CSV row {row_number}: start {start} >= end {end}")
        rows.append((start, end, str(row.label), row_number))

    rows.sort(key=lambda item: item[0])
    for previous, current in zip(rows, rows[1:]):
        if current[0] < previous[1]:
            raise ValidationError(
                f"segments CSV row {current[3]} overlaps row {previous[3]}"
            )
    return SegmentTier(name, tuple(SegmentInterval(s, e, label) for s, e, label, _ in rows))


@dataclass(frozen=True)
class LipIndexMap:
    """Landmark indices per lip role (defaults follow the 68-point layout)."""

    inner_upper: Tuple[int, ...] = (61, 62, 63)
    inner_lower: Tuple[int, ...] = (67, 66, 65)
    left_corner: int = 48
    right_corner: int = 54
    upper_mid: int = 51
    lower_mid: int = 57

    def __post_init__(self):
        object.__setattr__(self, "inner_upper", tuple(int(i) for i in self.inner_upper))
        object.__setattr__(self, "inner_lower", tuple(int(i) for i in self.inner_lower))
        if len(self.inner_upper) != len(self.inner_lower) or not self.inner_upper:
            raise ValidationError("inner-upper and inner-lower index lists must pair up")
        if min(self.indices()) < 0:
            raise ValidationError("landmark indices must be non-negative")

    def indices(self):
        """Every index referenced."""
        return (
            *self.inner_upper,
            *self.inner_lower,
            self.left_corner,
            self.right_corner,
            self.upper_mid,
            self.lower_mid,
        )


@dataclass(frozen=True, eq=False)
class LandmarkSequence:
    """Landmark frames: times (n,) and points (n, P, 2) in pixels."""

    fps: float
    times: np.ndarray
    points: np.ndarray
    index_map: LipIndexMap = field(default_factory=LipIndexMap)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 3 or points.shape[2] != 2 or points.shape[0] != len(times):
            raise ValidationError("landmark points must have shape (frames, points, 2)")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("landmark times must be strictly increasing")
        if max(self.index_map.indices()) >= points.shape[1]:
            raise ValidationError(
                f"index map references point {max(self.index_map.indices())} but frames have {points.shape[1]} points"
            )
        for array in (times, points):
            array.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "fps", float(self.fps))


def read_landmarks_csv(text, index_map=None, fps=None):
    """Parse a frame,t,x0,y0,... CSV into a LandmarkSequence."""

    index_map = index_map or LipIndexMap()
    try:
        frame = pd.read_csv(io.StringIO(text))
    except pd.errors.ParserError as err:
        line = re.search(r"line (\d+)", str(err))
        raise ParseError(f"ragged landmark row: {err}", int(line.group(1)) if line else None) from None
    except pd.errors.EmptyDataError:
        raise ParseError("landmark CSV is empty") from None

    columns = list(frame.columns)
    n_points = (len(columns) - 2) // 2
    expected = ["frame", "t"] + [f"{axis}{i}" for i in range(n_points) for axis in ("x", "y")]
    if columns != expected or n_points < 1:
        raise ParseError("landmark CSV header must be frame,t,x0,y0,...,xN,yN", 1)

    values = frame.to_numpy(dtype=np.float64, na_value=np.nan)
    ragged = np.flatnonzero(np.isnan(values).any(axis=1))
    if len(ragged):
        row = int(ragged[0]) + 1
        raise ParseError(f"ragged or incomplete landmark row {row}", row + 1)
    if len(values) < 2:
        raise ParseError("landmark CSV needs at least 2 frames (velocity features are undefined otherwise)")

    times = values[:, 1]
    steps = np.diff(times)
    if np.any(steps <= 0):
        row = int(np.flatnonzero(steps <= 0)[0]) + 2
        raise ParseError(f"landmark time not strictly increasing at row {row}", row + 1)

    if fps is None:
        fps = (len(times) - 1) / (times[-1] - times[0])
    return LandmarkSequence(fps, times, values[:, 2:].reshape(len(times), n_points, 2), index_map)


def serialize_landmarks_csv(sequence):
    """Write a LandmarkSequence as a frame,t,x0,y0,... CSV."""

    n_frames, n_points, _ = sequence.points.shape
    columns = {"frame": np.arange(n_frames), "t": sequence.times}
    for i in range(n_points):
        columns[f"x{i}"] = sequence.points[:, i, 0]
        columns[f"y{i}"] = sequence.points[:, i, 1]
    return pd.DataFrame(columns).to_csv(index=False, lineterminator="\n")


def gop_key(recording_id, start, end):
    """Millisecond-rounded key used to match GOP rows to observations."""

    return (recording_id, round(float(start), 3), round(float(end), 3))


def read_gop_csv(text):
    """Parse a recording_id,start,end,gop_vowel,gop_consonant sidecar into a lookup."""

    try:
        frame = pd.read_csv(io.StringIO(text), dtype={"recording_id": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise ParseError(f"GOP CSV: {err}") from None
    expected = ["recording_id", "start", "end", "gop_vowel", "gop_consonant"]
    if list(frame.columns) != expected:
        raise ParseError(f"GOP CSV header must be {','.join(expected)}", 1)
    return {
        gop_key(row.recording_id, row.start, row.end): (float(row.gop_vowel), float(row.gop_consonant))
        for row in frame.itertuples(index=False)
    }


def serialize_gop_csv(rows):
    """Write GOP rows given as (recording_id, start, end, gop_vowel, gop_consonant)."""

    frame = pd.DataFrame(
        list(rows), columns=["recording_id", "start", "end", "gop_vowel", "gop_consonant"]
    )
    return frame.to_csv(index=False, lineterminator="\n")


MODEL_FORMAT_VERSION = "vgan-model/1"
SUPPORTED_MODEL_VERSIONS = (MODEL_FORMAT_VERSION,)


def _pack(arrays):
    """Named arrays to {name: {shape, data}}."""

    return {
        name: {"shape": list(array.shape), "data": np.asarray(array, dtype=np.float64).ravel().tolist()}
        for name, array in sorted(arrays.items())
    }


def serialize_model(model):
    """VganModel to a JSON-ready document."""

    return {
        "version": MODEL_FORMAT_VERSION,
        "dims": asdict(model.config),
        "target": {"kind": model.target_kind, "scale_max": model.scale_max},
        "params": _pack(model.params),
        "standardization": _pack(model.standardization),
    }


def _unpack(section, expected_shapes, what):
    """Check and rebuild named arrays."""

    if not isinstance(section, dict):
        raise LoadError(f"'{what}' must be an object")
    missing = sorted(set(expected_shapes) - set(section))
    if missing:
        raise LoadError(f"{what} array '{missing[0]}' is missing")
    unexpected = sorted(set(section) - set(expected_shapes))
    if unexpected:
        raise LoadError(f"{what} array '{unexpected[0]}' is not part of the declared dims")

    arrays = {}
    for name, shape in expected_shapes.items():
        entry = section[name]
        declared = tuple(entry.get("shape", ()))
        if declared != tuple(shape):
            raise LoadError(
                f"{what} array '{name}' has shape {list(declared)}, dims imply {list(shape)}"
            )
        data = np.asarray(entry.get("data", []), dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise LoadError(f"{what} array '{name}' holds {data.size} values, shape needs {int(np.prod(shape))}")
        arrays[name] = data.reshape(shape)
    return arrays


def deserialize_model(document, expected_config=None):
    """JSON document to VganModel; shapes are checked against the declared (or expected) dims."""

    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as err:
            raise LoadError(f"model document is not valid JSON: {err.msg} (line {err.lineno})") from None
    if not isinstance(document, dict):
        raise LoadError(f"model document must be a JSON object, got {type(document).__name__}")

    version = document.get("version")
    if version not in SUPPORTED_MODEL_VERSIONS:
        raise LoadError(
            f"unsupported model version {version!r}; supported: {', '.join(SUPPORTED_MODEL_VERSIONS)}"
        )

    dims = document.get("dims", {})
    if not isinstance(dims, dict):
        raise LoadError("model dims must be a JSON object")
    dims = dict(dims)
    known = {f.name for f in fields(VganConfig)}
    unknown = sorted(set(dims) - known)
    if unknown:
        raise LoadError(f"unknown model dim '{unknown[0]}'")
    for key in ("dense_dims", "visual_dims"):
        if key in dims:
            dims[key] = tuple(dims[key])
    try:
        config = VganConfig(**dims)
    except (TypeError, ValueError) as err:
        raise LoadError(f"invalid model dims: {err}") from None

    shapes = param_shapes(config)
    if expected_config is not None:
        expected = param_shapes(expected_config)
        for name in sorted(set(shapes) | set(expected)):
            if shapes.get(name) != expected.get(name):
                raise LoadError(
                    f"model array '{name}' has shape {shapes.get(name)}, configuration implies {expected.get(name)}"
                )

    params = _unpack(document.get("params"), shapes, "parameter")
    standardization = _unpack(document.get("standardization"), standardization_shapes(config), "standardization")
    target = document.get("target", {})
    try:
        return VganModel(config, params, standardization, target["kind"], float(target["scale_max"]))
    except (KeyError, TypeError) as err:
        raise LoadError(f"model target block incomplete: {err}") from None
