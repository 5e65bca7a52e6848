"""Lip movement features from landmark tracks."""
from dataclasses import dataclass

import numpy as np
import pandas as pd

from helpers.errors import GeometryError, InsufficientDataError, ValidationError

LIP_FEATURES = (
    "min_inner_lip_dist",
    "max_inner_lip_dist",
    "min_lip_width",
    "max_lip_width",
    "left_angle_std",
    "right_angle_std",
    "inner_dist_std",
    "left_angle_velocity",
    "right_angle_velocity",
    "inner_dist_velocity",
)


@dataclass(frozen=True, eq=False)
class LipVector:
    """Lip features in LIP_FEATURES order."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(LIP_FEATURES),) or not np.all(np.isfinite(values)):
            raise ValidationError(f"lip vector needs {len(LIP_FEATURES)} finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __getitem__(self, name):
        return float(self.values[LIP_FEATURES.index(name)])

    def as_dict(self):
        """Feature name to value."""
        return dict(zip(LIP_FEATURES, self.values.tolist()))


def _corner_angle(corner, upper, lower):
    """Angle in radians at `corner` between the rays to `upper` and `lower`."""

    a = upper - corner
    b = lower - corner
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise GeometryError("zero-length vector at a lip corner")
    return float(np.arccos(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)))


def lip_geometry(points, index_map):
    """Inner-lip distance, lip width and both corner angles of one frame."""

    points = np.asarray(points, dtype=np.float64)
    if max(index_map.indices()) >= len(points):
        raise ValidationError(f"frame has {len(points)} points, index map needs {max(index_map.indices()) + 1}")

    upper = points[list(index_map.inner_upper)]
    lower = points[list(index_map.inner_lower)]
    left = points[index_map.left_corner]
    right = points[index_map.right_corner]
    upper_mid = points[index_map.upper_mid]
    lower_mid = points[index_map.lower_mid]

    return {
        "inner_dist": float(np.mean(np.linalg.norm(upper - lower, axis=1))),
        "width": float(np.linalg.norm(right - left)),
        "left_angle": _corner_angle(left, upper_mid, lower_mid),
        "right_angle": _corner_angle(right, upper_mid, lower_mid),
    }


def lip_feature_vector(seq, interval=None):
    """Amplitude, stability and speed of the lips over the frames inside `interval` (seconds)."""

    if interval is None:
        selected = np.arange(len(seq.times))
    else:
        start, end = interval
        selected = np.flatnonzero((seq.times >= start) & (seq.times <= end))
    if len(selected) < 3:
        raise InsufficientDataError(f"lip features need at least 3 frames, interval holds {len(selected)}")

    geometry = [lip_geometry(seq.points[i], seq.index_map) for i in selected]
    inner = np.array([g["inner_dist"] for g in geometry])
    width = np.array([g["width"] for g in geometry])
    left = np.array([g["left_angle"] for g in geometry])
    right = np.array([g["right_angle"] for g in geometry])

    def speed(values):
        return float(np.mean(np.abs(np.diff(values))) * seq.fps)

    return LipVector(
        np.array(
            [
                inner.min(),
                inner.max(),
                width.min(),
                width.max(),
                left.std(),
                right.std(),
                inner.std(),
                speed(left),
                speed(right),
                speed(inner),
            ]
        )
    )


def lip_table(observations, vectors):
    """One row per observation with the 10 lip features; missing vectors leave NaN and a flag."""

    rows = []
    for obs, vector in zip(observations, vectors):
        row = {
            "subject_id": obs.subject_id,
            "recording_id": obs.recording_id,
            "start": obs.start,
            "end": obs.end,
            "flags": "" if vector is not None else "missing",
        }
        row.update(vector.as_dict() if vector is not None else {name: np.nan for name in LIP_FEATURES})
        rows.append(row)
    return pd.DataFrame(rows, columns=["subject_id", "recording_id", "start", "end", "flags", *LIP_FEATURES])
