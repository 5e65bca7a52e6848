import numpy as np
import pytest

from helpers.errors import ConfigError, DataError, LoadError
from helpers.gmm import (
    GaussianMixture,
    GmmSettings,
    _runs,
    detect_vowel_intervals,
    frame_features,
    frame_times,
    gmm_fit,
    gmm_from_dict,
    gmm_to_dict,
    split_frames,
)
from helpers.ingest import AudioBuffer, SegmentInterval, SegmentTier, serialize_textgrid


def _two_clusters(n=400, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(loc=(-3.0, 0.0), scale=0.7, size=(n, 2))
    b = rng.normal(loc=(3.0, 1.0), scale=(0.5, 1.2), size=(n, 2))
    return np.vstack([a, b]), np.repeat([0, 1], n)


def test_log_likelihood_never_decreases():
    X, _ = _two_clusters()
    _, history = gmm_fit(X, 3, max_iter=60, seed=1, tol=0.0, reg=0.0)
    assert len(history) <= 60
    assert np.all(np.diff(history) >= -1e-8)


def test_two_cluster_recovery():
    X, labels = _two_clusters()
    mixture, _ = gmm_fit(X, 2, seed=0)
    assignment = np.argmax(mixture.component_log_prob(X), axis=1)
    accuracy = max(np.mean(assignment == labels), np.mean(assignment != labels))
    assert accuracy >= 0.95
    assert mixture.weights.sum() == pytest.approx(1.0)


def test_fit_is_seeded():
    X, _ = _two_clusters()
    a, _ = gmm_fit(X, 4, max_iter=5, seed=3)
    b, _ = gmm_fit(X, 4, max_iter=5, seed=3)
    assert np.array_equal(a.means, b.means)


def test_fit_needs_enough_frames(logger, caplog):
    with pytest.raises(DataError):
        gmm_fit(np.zeros((3, 2)), 5)
    X, _ = _two_clusters(n=10)
    gmm_fit(X, 3, max_iter=2, logger=logger)
    assert "at least 30 recommended" in caplog.text


def test_score_frames_of_a_single_gaussian():
    mixture = GaussianMixture(np.array([1.0]), np.zeros((1, 2)), np.eye(2)[None])
    assert mixture.score_frames(np.zeros((1, 2)))[0] == pytest.approx(-np.log(2 * np.pi))


def test_runs():
    assert _runs([False, True, True, False, True]) == [(1, 2), (4, 4)]
    assert _runs([]) == []


def test_frame_features_shape():
    settings = GmmSettings(n_mels=12)
    audio = AudioBuffer(np.random.default_rng(0).normal(scale=0.1, size=16000), 16000)
    features = frame_features(audio, settings)
    assert features.shape == (len(frame_times(audio, settings)), 13)
    assert np.all(np.isfinite(features))


def _tone_in_noise(seed=0):
    rng = np.random.default_rng(seed)
    fs = 16000
    x = 0.003 * rng.standard_normal(3 * fs // 2)
    t = np.arange(fs // 2) / fs
    x[fs // 2 : fs] += 0.5 * np.sin(2 * np.pi * 220 * t) + 0.2 * np.sin(2 * np.pi * 660 * t)
    return AudioBuffer(x, fs)


def test_detect_vowel_intervals_finds_the_tone():
    settings = GmmSettings(components=2)
    audio = _tone_in_noise()
    tier = SegmentTier("vowels", (SegmentInterval(0.5, 1.0, "a"),), 0.0, 1.5)
    inside, outside = split_frames(audio, tier, settings)
    assert len(inside) == pytest.approx(50, abs=2)
    vowel, _ = gmm_fit(inside, 2, seed=0, reg=1e-3)
    other, _ = gmm_fit(outside, 2, seed=0, reg=1e-3)

    detected = detect_vowel_intervals(_tone_in_noise(seed=1), vowel, other, 0.03, settings)
    assert len(detected.intervals) == 1
    found = detected.intervals[0]
    assert found.start == pytest.approx(0.5, abs=0.03)
    assert found.end == pytest.approx(1.0, abs=0.03)
    assert found.label == "vowel"
    assert type(found.start) is float and type(found.end) is float
    assert "np.float64" not in serialize_textgrid([detected])


def test_detect_checks_dimensions():
    small = GaussianMixture(np.array([1.0]), np.zeros((1, 3)), np.eye(3)[None])
    with pytest.raises(DataError):
        detect_vowel_intervals(_tone_in_noise(), small, small, settings=GmmSettings())


def test_gmm_document_roundtrip():
    X, _ = _two_clusters(n=50)
    mixture, _ = gmm_fit(X, 2, seed=0)
    settings = GmmSettings(n_mels=1, hop=0.005)
    vowel, other, restored = gmm_from_dict(gmm_to_dict(mixture, mixture, settings))
    assert np.array_equal(vowel.covariances, mixture.covariances)
    assert restored.hop == 0.005 and restored.dim == 2


def test_gmm_document_errors():
    X, _ = _two_clusters(n=50)
    mixture, _ = gmm_fit(X, 2, seed=0)
    document = gmm_to_dict(mixture, mixture, GmmSettings(n_mels=1))
    with pytest.raises(LoadError, match="version"):
        gmm_from_dict({**document, "version": "x"})
    with pytest.raises(LoadError, match="dimension"):
        gmm_from_dict(gmm_to_dict(mixture, mixture, GmmSettings(n_mels=4)))
    document["models"]["other"]["weights"] = [0.7, 0.7]
    with pytest.raises(LoadError, match="sum to 1"):
        gmm_from_dict(document)


def test_settings_validation():
    with pytest.raises(ConfigError):
        GmmSettings(components=0)
    with pytest.raises(ConfigError):
        GmmSettings(hop=0.0)
