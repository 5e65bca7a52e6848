"""Vowel sample-space construction: categories per vowel, group building, severity balancing."""
from dataclasses import dataclass, field, replace
from typing import Dict, Tuple

from helpers.core import BAND_ORDER, VOWEL_ORDER, VowelGroup, severity_band
from helpers.errors import BandError, ConfigError, EmptyCategoryError, LoadError, ValidationError
from helpers.misc import make_rng, stable_key

MODES = ("zip", "random")
GROUPS_FORMAT_VERSION = "vgan-groups/1"


@dataclass(frozen=True)
class AugmentSettings:
    """Group construction knobs."""

    mode: str = "zip"
    n: int = 100
    shuffle: bool = True
    balance: bool = False
    balance_factor: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"augment mode must be one of {', '.join(MODES)}, got '{self.mode}'")
        if self.n < 1:
            raise ConfigError("augment n must be at least 1")
        if self.balance_factor <= 0:
            raise ConfigError("balance-factor must be positive")


@dataclass(frozen=True)
class VowelCategories:
    """Observations of one subject filed under every vowel they contain."""

    subject_id: str
    categories: Dict = field(default_factory=dict)
    skipped: int = 0

    def __getitem__(self, vowel):
        return self.categories.get(vowel, ())

    def sizes(self):
        """Category sizes in vowel order."""
        return tuple(len(self[v]) for v in VOWEL_ORDER)


def categorize(observations):
    """File each observation under every vowel class it contains; vowel-less ones are counted."""

    observations = list(observations)
    subjects = {obs.subject_id for obs in observations}
    if len(subjects) > 1:
        raise ValidationError(f"categorize expects one subject, got {sorted(subjects)}")

    categories = {vowel: [] for vowel in VOWEL_ORDER}
    skipped = 0
    for obs in observations:
        if not obs.vowel_classes:
            skipped += 1
            continue
        for vowel in obs.vowel_classes:
            categories[vowel].append(obs)

    return VowelCategories(
        subjects.pop() if subjects else "",
        {vowel: tuple(sorted(members, key=lambda o: o.key)) for vowel, members in categories.items()},
        skipped,
    )


def build_groups(c, mode="zip", n=100, seed=0, target=None, shuffle=True):
    """Form VowelGroups positionally (zip) or by sampling with replacement (random)."""

    missing = [vowel.value for vowel in VOWEL_ORDER if not c[vowel]]
    if missing:
        raise EmptyCategoryError(f"subject {c.subject_id}: no observation for vowel(s) {', '.join(missing)}")
    if mode not in MODES:
        raise ConfigError(f"unknown augment mode '{mode}'")

    rng = make_rng(seed, stable_key(c.subject_id))
    groups = []
    if mode == "zip":
        columns = []
        for vowel in VOWEL_ORDER:
            members = list(c[vowel])
            if shuffle:
                members = [members[i] for i in rng.permutation(len(members))]
            columns.append(members)
        for i, members in enumerate(zip(*columns)):
            groups.append(VowelGroup(c.subject_id, members, target, f"{c.subject_id}-zip-{i:05d}"))
    else:
        picks = [rng.integers(0, len(c[vowel]), size=n) for vowel in VOWEL_ORDER]
        for i in range(n):
            members = [c[vowel][picks[k][i]] for k, vowel in enumerate(VOWEL_ORDER)]
            groups.append(VowelGroup(c.subject_id, members, target, f"{c.subject_id}-random-{i:05d}"))
    return groups


def balance_by_severity(groups, totals, seed=0, factor=1.0):
    """Resample groups so every severity band holds round(min band count × factor) groups."""

    by_band = {band: [] for band in BAND_ORDER}
    for group in groups:
        by_band[severity_band(totals[group.subject_id])].append(group)

    empty = [band.value for band in BAND_ORDER if not by_band[band]]
    if empty:
        raise BandError(f"no group in severity band(s) {', '.join(empty)}")

    wanted = max(1, int(round(min(len(g) for g in by_band.values()) * factor)))
    rng = make_rng(seed, stable_key("balance"))
    balanced = []
    for band in BAND_ORDER:
        members = by_band[band]
        if len(members) >= wanted:
            chosen = sorted(rng.choice(len(members), size=wanted, replace=False))
            balanced.extend(members[i] for i in chosen)
        else:
            balanced.extend(members)
            extra = rng.integers(0, len(members), size=wanted - len(members))
            for copy, i in enumerate(extra, start=1):
                balanced.append(replace(members[i], group_id=f"{members[i].group_id}~{copy}"))
    return balanced


def groups_to_dict(groups, mode, seed, skipped=None):
    """Group manifest document: member observation keys per group in vowel order."""

    return {
        "version": GROUPS_FORMAT_VERSION,
        "mode": mode,
        "seed": seed,
        "skipped": dict(sorted((skipped or {}).items())),
        "groups": [
            {
                "group_id": group.group_id,
                "subject_id": group.subject_id,
                "members": [member.key for member in group.members],
            }
            for group in groups
        ],
    }


@dataclass(frozen=True)
class GroupRef:
    """Group manifest entry: ids and member observation keys."""

    group_id: str
    subject_id: str
    members: Tuple[str, ...]


def groups_from_dict(document):
    """Parse a group manifest document into GroupRefs."""

    if document.get("version") != GROUPS_FORMAT_VERSION:
        raise LoadError(
            f"unsupported group manifest version {document.get('version')!r}; supported: {GROUPS_FORMAT_VERSION}"
        )
    refs = []
    for i, entry in enumerate(document.get("groups", [])):
        try:
            members = tuple(str(key) for key in entry["members"])
            refs.append(GroupRef(str(entry["group_id"]), str(entry["subject_id"]), members))
        except (KeyError, TypeError) as err:
            raise LoadError(f"groups[{i}]: bad or missing field {err}") from None
        if len(members) != len(VOWEL_ORDER):
            raise LoadError(f"groups[{i}]: expected {len(VOWEL_ORDER)} members, got {len(members)}")
    return refs
