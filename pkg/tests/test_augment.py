import json

import pytest

from helpers.augment import (
    AugmentSettings,
    GroupRef,
    balance_by_severity,
    build_groups,
    categorize,
    groups_from_dict,
    groups_to_dict,
)
from helpers.core import VOWEL_ORDER, SyllableObservation, VowelClass, severity_band
from helpers.errors import BandError, ConfigError, EmptyCategoryError, LoadError, ValidationError

from conftest import observations


def test_categorize_files_multi_vowel_syllables_twice():
    obs = observations(per_vowel=(1, 1, 1, 1, 1, 1))
    obs.append(SyllableObservation("S001", "S001-R02", 0.0, 0.3, "bao"))
    obs.append(SyllableObservation("S001", "S001-R02", 1.0, 1.3, "m"))
    c = categorize(obs)
    assert c.sizes() == (2, 2, 1, 1, 1, 1)
    assert c.skipped == 1
    assert c.subject_id == "S001"


def test_categorize_rejects_mixed_subjects():
    with pytest.raises(ValidationError):
        categorize(observations("S001", (1,) * 6) + observations("S002", (1,) * 6))


def test_zip_mode_yields_smallest_category_count():
    c = categorize(observations(per_vowel=(5, 3, 4, 6, 3, 7)))
    groups = build_groups(c, "zip", seed=1)
    assert len(groups) == 3
    for group in groups:
        for vowel, member in zip(VOWEL_ORDER, group.members):
            assert vowel in member.vowel_classes
    assert len({m.key for g in groups for m in g.members}) == 18


def test_random_mode_yields_n_groups():
    c = categorize(observations(per_vowel=(2, 1, 1, 1, 1, 1)))
    groups = build_groups(c, "random", n=100, seed=1)
    assert len(groups) == 100
    assert groups[0].group_id == "S001-random-00000"


def test_group_manifest_is_seed_deterministic():
    c = categorize(observations(per_vowel=(4,) * 6))
    first = json.dumps(groups_to_dict(build_groups(c, "random", n=20, seed=5), "random", 5), sort_keys=True)
    again = json.dumps(groups_to_dict(build_groups(c, "random", n=20, seed=5), "random", 5), sort_keys=True)
    other = json.dumps(groups_to_dict(build_groups(c, "random", n=20, seed=6), "random", 6), sort_keys=True)
    assert first == again
    assert first != other


def test_zip_without_shuffle_keeps_key_order():
    c = categorize(observations(per_vowel=(2,) * 6))
    groups = build_groups(c, "zip", shuffle=False)
    assert groups[0].member(VowelClass.A).key < groups[1].member(VowelClass.A).key


def test_empty_category():
    c = categorize(observations(per_vowel=(2, 2, 0, 2, 0, 2)))
    with pytest.raises(EmptyCategoryError, match="e, u"):
        build_groups(c)


def test_settings_validation():
    with pytest.raises(ConfigError):
        AugmentSettings(mode="cycle")
    with pytest.raises(ConfigError):
        AugmentSettings(n=0)


def _groups_of(subject, count):
    c = categorize(observations(subject, (1,) * 6))
    return build_groups(c, "random", n=count, seed=0)


def test_balance_by_severity_equalizes_bands():
    totals = {"S1": 116, "S2": 100, "S3": 70, "S4": 40}
    groups = _groups_of("S1", 2) + _groups_of("S2", 8) + _groups_of("S3", 5) + _groups_of("S4", 3)
    balanced = balance_by_severity(groups, totals, seed=0)
    counts = {}
    for group in balanced:
        band = severity_band(totals[group.subject_id])
        counts[band] = counts.get(band, 0) + 1
    assert set(counts.values()) == {2}

    upsampled = balance_by_severity(groups, totals, seed=0, factor=2.0)
    assert len(upsampled) == 16
    ids = [group.group_id for group in upsampled]
    assert len(ids) == len(set(ids))
    assert any("~" in group_id for group_id in ids)


def test_balance_needs_every_band():
    totals = {"S1": 116, "S2": 100}
    with pytest.raises(BandError, match="Moderate"):
        balance_by_severity(_groups_of("S1", 2) + _groups_of("S2", 2), totals)


def test_group_manifest_roundtrip():
    groups = _groups_of("S1", 3)
    document = groups_to_dict(groups, "random", 0, {"S1": 2})
    refs = groups_from_dict(json.loads(json.dumps(document)))
    assert refs[1] == GroupRef(groups[1].group_id, "S1", tuple(m.key for m in groups[1].members))
    assert document["skipped"] == {"S1": 2}


def test_group_manifest_errors():
    document = groups_to_dict(_groups_of("S1", 1), "random", 0)
    with pytest.raises(LoadError, match="version"):
        groups_from_dict({**document, "version": "other"})
    document["groups"][0]["members"] = document["groups"][0]["members"][:5]
    with pytest.raises(LoadError, match="expected 6 members"):
        groups_from_dict(document)
