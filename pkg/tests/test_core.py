import json

import pytest

from helpers.core import (
    VOWEL_ORDER,
    DatasetManifest,
    FdaTarget,
    RecordingRecord,
    SeverityBand,
    SubjectRecord,
    SyllableObservation,
    VowelClass,
    VowelGroup,
    load_manifest,
    manifest_to_dict,
    normalize_pinyin,
    observation_key,
    parse_manifest,
    severity_band,
    validate_manifest,
    vowel_classes,
)
from helpers.errors import ParseError, RangeError, ValidationError

from conftest import observations


@pytest.mark.parametrize(
    "total, band",
    [(116, SeverityBand.NORMAL), (115, SeverityBand.MILD), (87, SeverityBand.MILD), (86, SeverityBand.MODERATE),
     (58, SeverityBand.MODERATE), (57, SeverityBand.SEVERE), (37, SeverityBand.SEVERE)],
)
def test_severity_band_edges(total, band):
    assert severity_band(total) is band


@pytest.mark.parametrize("total", [36, 117, -1])
def test_severity_band_out_of_range(total):
    with pytest.raises(RangeError):
        severity_band(total)


def test_band_severity_order():
    assert [band.severity for band in SeverityBand] == [0, 1, 2, 3]
    assert SeverityBand.MILD.interval == (87, 115)


def test_vowel_order_and_parse():
    assert [v.value for v in VOWEL_ORDER] == ["a", "o", "e", "i", "u", "v"]
    assert VowelClass.parse("ü") is VowelClass.V
    assert VowelClass.parse("I") is VowelClass.I
    assert VowelClass.U.index == 4
    with pytest.raises(RangeError):
        VowelClass.parse("x")


@pytest.mark.parametrize(
    "text, expected",
    [("mā", "ma"), ("lǜ", "lv"), ("nu:3", "nv"), ("xue", "xve"), ("Ju", "jv"), ("yu", "yv")],
)
def test_normalize_pinyin(text, expected):
    assert normalize_pinyin(text) == expected


def test_vowel_classes_multi_vowel_syllable():
    assert vowel_classes("bao") == frozenset([VowelClass.A, VowelClass.O])
    assert vowel_classes("xue") == frozenset([VowelClass.V, VowelClass.E])
    assert vowel_classes("m") == frozenset()


def test_observation_validates_span():
    with pytest.raises(ValidationError):
        SyllableObservation("S1", "R1", 0.5, 0.5, "ba")
    with pytest.raises(ValidationError):
        SyllableObservation("S1", "R1", -0.1, 0.5, "ba")


def test_observation_key_is_float_stable():
    import numpy as np

    obs = SyllableObservation("S1", "R1", np.float64(0.1), 0.4, "ba")
    assert obs.key == observation_key("R1", 0.1, 0.4) == "R1|0.1|0.4"


def test_vowel_interval_defaults_to_syllable():
    obs = SyllableObservation("S1", "R1", 1.0, 1.4, "ba")
    assert obs.vowel_interval == (1.0, 1.4)
    obs = SyllableObservation("S1", "R1", 1.0, 1.4, "ba", vowel_start=1.1, vowel_end=1.3)
    assert obs.vowel_interval == (1.1, 1.3)


def test_vowel_group_checks_members():
    members = observations(per_vowel=(1, 1, 1, 1, 1, 1))
    group = VowelGroup("S001", members)
    assert group.member(VowelClass.E).syllable_text == "de"
    with pytest.raises(ValidationError):
        VowelGroup("S001", members[:5])
    with pytest.raises(ValidationError):
        VowelGroup("S001", [members[1], *members[1:]])
    with pytest.raises(ValidationError):
        VowelGroup("S002", members)


def test_fda_target_scale():
    assert FdaTarget("lips", 12).scale_max == 20.0
    with pytest.raises(RangeError):
        FdaTarget("lips", 21)
    with pytest.raises(RangeError):
        FdaTarget("total", 50, scale_max=100)
    with pytest.raises(RangeError):
        FdaTarget("voice", 1)


def _manifest_text():
    return json.dumps(
        {
            "subjects": [{"subject_id": "S1", "fda_scores": {"total": 90, "lips": 15}}],
            "recordings": [
                {"recording_id": "R1", "subject_id": "S1", "audio_path": "a.wav", "segment_path": "a.TextGrid", "fps": 30}
            ],
        }
    )


def test_parse_manifest_roundtrip(tmp_path):
    manifest = parse_manifest(_manifest_text(), str(tmp_path))
    assert manifest.subject("S1").target("total").value == 90.0
    assert manifest.recordings[0].fps == 30.0
    assert manifest.path("a.wav") == str(tmp_path / "a.wav")
    again = parse_manifest(json.dumps(manifest_to_dict(manifest)), str(tmp_path))
    assert again == manifest


def test_parse_manifest_errors():
    with pytest.raises(ParseError) as err:
        parse_manifest('{"subjects": [')
    assert err.value.line == 1
    with pytest.raises(ParseError):
        parse_manifest("[]")
    with pytest.raises(ParseError):
        parse_manifest('{"subjects": [{"fda_scores": {}}]}')


def test_load_manifest_missing_file(tmp_path):
    with pytest.raises(ParseError):
        load_manifest(str(tmp_path / "nope.json"))


def test_validate_manifest_reports_problems(tmp_path):
    manifest = DatasetManifest(
        (SubjectRecord("S1", {"total": 30.0, "lips": 25.0}), SubjectRecord("S1", {"jaws": 1.0})),
        (
            RecordingRecord("R1", "S9", "a.wav", "a.TextGrid", fps=0.0),
            RecordingRecord("R1", "S1", "a.wav", "a.TextGrid"),
        ),
        str(tmp_path),
    )
    report = "\n".join(validate_manifest(manifest))
    assert "duplicate subject_id" in report
    assert "unknown score kind 'jaws'" in report
    assert "lips=25 outside" in report
    assert "below banded range" in report
    assert "dangling reference" in report
    assert "fps must be positive" in report
    assert "duplicate recording_id" in report
    assert "audio_path 'a.wav' not found" in report
    assert not any("not found" in line for line in validate_manifest(manifest, check_files=False))
