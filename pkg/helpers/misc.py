"""Vowel graph attention helpers."""
import json
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from helpers.errors import NumericError


def make_rng(seed, *keys):
    """Return a numpy Generator derived from seed and integer keys."""

    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def stable_key(text):
    """Map a string to a stable non-negative integer (for seeding)."""

    value = 0
    for char in text.encode("utf-8"):
        value = (value * 131 + char) % 2**31
    return value


def parallel_map(logger, func, items, jobs=1):
    """Map func over items, in worker processes when jobs > 1; order is kept."""

    items = list(items)
    if jobs is None or int(jobs) <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    if logger:
        logger.debug("Running %s tasks on %s workers" % (len(items), jobs))
    with ProcessPoolExecutor(max_workers=int(jobs)) as executor:
        return list(executor.map(func, items))


def ensure_dir(path):
    """Create directory if not exists."""

    if path and not os.path.exists(path):
        os.makedirs(path)
    return path


def write_json(path, data):
    """Write a JSON document with stable key order and formatting."""

    try:
        text = json.dumps(data, indent=2, sort_keys=True, allow_nan=False)
    except ValueError as err:
        raise NumericError(f"refusing to write '{path}': {err}") from None
    ensure_dir(os.path.dirname(path))
    with open(path, "w", encoding="utf-8") as jsonfile:
        jsonfile.write(text + "\n")


def read_json_text(path):
    """Read a UTF-8 text document."""

    with open(path, "r", encoding="utf-8") as textfile:
        return textfile.read()


def write_frame(path, frame):
    """Write a pandas DataFrame as CSV with shortest round-trip float formatting."""

    ensure_dir(os.path.dirname(path))
    frame.to_csv(path, index=False, float_format=None, lineterminator="\n")


def resolve_path(base_dir, path):
    """Resolve a possibly relative path against base_dir."""

    if path is None or os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base_dir, path))
