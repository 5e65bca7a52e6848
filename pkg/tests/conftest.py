"""Shared fixtures."""
import logging

import numpy as np
import pytest

from helpers.core import VOWEL_ORDER, SyllableObservation
from helpers.ingest import AudioBuffer
from helpers.synth import SynthProfile, SynthSettings


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs taking minutes")


@pytest.fixture
def logger():
    """Plain logging.Logger; helpers only call info/warning/debug on it."""

    log = logging.getLogger("vgan-tests")
    log.setLevel(logging.DEBUG)
    return log


@pytest.fixture
def settings():
    return SynthSettings()


@pytest.fixture
def formant_table(settings):
    """Vowel to (F1, F2, F3) of the synthesizer defaults."""

    return settings.formant_table()


def make_profile(severity=0.0, seed=1, settings=None, lip_severity=None):
    return SynthProfile.from_settings(severity, settings or SynthSettings(), seed, lip_severity)


@pytest.fixture
def profile():
    return make_profile()


def sine(freq=200.0, duration=0.5, sample_rate=16000, amplitude=0.5):
    t = np.arange(int(duration * sample_rate)) / sample_rate
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq * t), sample_rate)


SYLLABLE_OF = {"a": "ba", "o": "bo", "e": "de", "i": "bi", "u": "bu", "v": "lv"}


def observations(subject_id="S001", per_vowel=(3, 3, 3, 3, 3, 3), recording_id=None):
    """Observations with one vowel each, `per_vowel[k]` of vowel k."""

    result = []
    t = 0.0
    for vowel, count in zip(VOWEL_ORDER, per_vowel):
        for _ in range(count):
            result.append(
                SyllableObservation(
                    subject_id=subject_id,
                    recording_id=recording_id or f"{subject_id}-R01",
                    start=t,
                    end=t + 0.3,
                    syllable_text=SYLLABLE_OF[vowel.value],
                )
            )
            t += 0.5
    return result


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Small synthetic corpus shared by the extraction and CLI tests."""

    from helpers.synth import gen_corpus

    out = tmp_path_factory.mktemp("corpus")
    manifest = gen_corpus(4, 7, str(out), SynthSettings(subjects=4, repetitions=1))
    return out, manifest
