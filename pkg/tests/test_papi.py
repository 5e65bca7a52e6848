import numpy as np
import pytest

from helpers.core import VOWEL_ORDER, SyllableObservation, VowelClass
from helpers.errors import ConfigError, MissingVowelError, ValidationError
from helpers.ingest import AudioBuffer
from helpers.papi import (
    PAPI_FEATURES,
    PapiSettings,
    PapiVector,
    VowelFormantSet,
    articulation_metrics,
    assemble_papi,
    fcr,
    jaw_distance,
    movement_degree,
    papi_table,
    subject_formant_set,
    tongue_distance,
    vai,
    vowel_space_area,
)
from helpers.synth import synth_vowel

from conftest import make_profile


def _set(table):
    return VowelFormantSet({vowel: (f1, f2) for vowel, (f1, f2, _) in table.items()})


def _shoelace(points):
    x, y = np.asarray(points).T
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def test_fcr_vai_reciprocal(formant_table):
    s = _set(formant_table)
    assert fcr(s) * vai(s) == pytest.approx(1.0, abs=1e-9)


def test_vsa_matches_shoelace_on_random_sets():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        f1 = rng.uniform(200, 900, size=3)
        f2 = f1 + rng.uniform(100, 2000, size=3)
        s = VowelFormantSet(dict(zip((VowelClass.A, VowelClass.I, VowelClass.U), zip(f1, f2))))
        expected = _shoelace(list(zip(f1, f2)))
        assert vowel_space_area(s) == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_hull_area_contains_triangle(formant_table):
    s = _set(formant_table)
    assert vowel_space_area(s, "hull") >= vowel_space_area(s) > 0


def test_hull_of_collinear_points_is_zero():
    s = VowelFormantSet({VowelClass.A: (100, 200), VowelClass.I: (200, 400), VowelClass.U: (300, 600)})
    assert vowel_space_area(s, "hull") == 0.0


def test_articulation_distances(formant_table):
    s = _set(formant_table)
    assert jaw_distance(s) == pytest.approx(500.0)
    assert tongue_distance(s) == pytest.approx(1550.0)
    assert movement_degree(s) == pytest.approx(2300.0 / 750.0)
    metrics = articulation_metrics(s)
    assert set(metrics) == {"jaw_distance_hz", "tongue_distance_hz", "movement_degree", "vsa_hz2", "fcr", "vai"}


def test_missing_vowel():
    s = VowelFormantSet({VowelClass.A: (800, 1250), VowelClass.I: (300, 2300)})
    with pytest.raises(MissingVowelError, match="u"):
        fcr(s)
    assert jaw_distance(s) == pytest.approx(500.0)


def test_formant_set_validates_order():
    with pytest.raises(ValidationError):
        VowelFormantSet({VowelClass.A: (1300, 800)})


def test_subject_formant_set_uses_single_vowel_observations():
    s = subject_formant_set(
        [
            (frozenset([VowelClass.A]), (700, 1200)),
            (frozenset([VowelClass.A]), (900, 1300)),
            (frozenset([VowelClass.A, VowelClass.O]), (100, 200)),
        ]
    )
    assert s.means == {VowelClass.A: (800.0, 1250.0)}


def test_settings_validation():
    with pytest.raises(ConfigError):
        PapiSettings(vsa_mode="pentagon")
    with pytest.raises(ConfigError):
        PapiSettings(default_row=(0.0,) * 3)
    assert PapiSettings(default_row=tuple(range(20))).default("gne") == 3.0


def test_assemble_papi_on_synthetic_vowel(formant_table):
    audio = synth_vowel(VowelClass.A, make_profile(0.2, seed=2), 0.3)
    obs = SyllableObservation("S1", "R1", 0.0, 0.3, "a", gop_vowel=-0.6, gop_consonant=-1.0)
    vector = assemble_papi(obs, audio, (0.02, 0.28), _set(formant_table))
    assert vector.values.shape == (20,)
    assert vector.flags == frozenset()
    assert vector["gop_vowel"] == -0.6
    assert vector["vowel_duration_s"] == pytest.approx(0.26)
    assert vector["syllable_duration_s"] == pytest.approx(0.3)
    assert vector["jitter"] > 0


def test_assemble_papi_substitutes_and_flags():
    audio = AudioBuffer(np.zeros(4800), 16000)
    obs = SyllableObservation("S1", "R1", 0.0, 0.3, "a")
    settings = PapiSettings(default_row=(-1.0,) * len(PAPI_FEATURES))
    vector = assemble_papi(obs, audio, (0.0, 0.3), None, settings)
    assert vector.flags == frozenset({"phonation", "formants", "articulation", "gop"})
    assert vector["jitter"] == -1.0
    assert vector["vai"] == -1.0
    assert vector["mean_intensity_db"] == -120.0


def test_assemble_papi_rejects_interval_outside_syllable():
    obs = SyllableObservation("S1", "R1", 0.1, 0.3, "a")
    with pytest.raises(ValidationError):
        assemble_papi(obs, AudioBuffer(np.zeros(4800), 16000), (0.0, 0.2), None)


def test_papi_vector_and_table():
    with pytest.raises(ValidationError):
        PapiVector(np.full(20, np.nan))
    obs = SyllableObservation("S1", "R1", 0.0, 0.3, "xue")
    frame = papi_table([obs], [PapiVector(np.arange(20.0), {"gop", "formants"})])
    row = frame.iloc[0]
    assert row["vowel_classes"] == "ev"
    assert row["flags"] == "formants;gop"
    assert list(frame.columns[-20:]) == list(PAPI_FEATURES)
    assert [v.value for v in VOWEL_ORDER if v.value in row["vowel_classes"]] == ["e", "v"]
