"""Full-covariance Gaussian mixtures fitted with EM, and vowel-frame detection by likelihood ratio."""
from dataclasses import dataclass, replace

import librosa
import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist
from scipy.special import logsumexp
from sklearn.cluster import kmeans_plusplus

from helpers.errors import ConfigError, DataError, LoadError, NumericError
from helpers.ingest import SegmentInterval, SegmentTier

GMM_FORMAT_VERSION = "vgan-gmm/1"
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class GmmSettings:
    """Mixture size, EM limits, frame features and run post-processing."""

    components: int = 70
    max_iter: int = 60
    tol: float = 1e-6
    reg: float = 1e-6
    n_mels: int = 12
    frame: float = 0.025
    hop: float = 0.01
    min_duration: float = 0.03
    merge_gap: float = 0.02

    def __post_init__(self):
        if self.components < 1 or self.max_iter < 1 or self.n_mels < 1:
            raise ConfigError("gmm components, max-iter and n-mels must be at least 1")
        if self.frame <= 0 or self.hop <= 0:
            raise ConfigError("gmm frame and hop must be positive")
        if self.reg < 0 or self.tol < 0 or self.min_duration < 0 or self.merge_gap < 0:
            raise ConfigError("gmm reg, tol, min-duration and merge-gap must be non-negative")

    @property
    def dim(self):
        """Frame feature dimension."""
        return self.n_mels + 1


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Weights (K,), means (K, D), covariances (K, D, D)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    @property
    def n_components(self):
        return len(self.weights)

    def component_log_prob(self, X):
        """log w_k + log N(x | μ_k, Σ_k) for every frame and component."""

        X = np.asarray(X, dtype=np.float64)
        n, dim = X.shape
        out = np.empty((n, self.n_components))
        with np.errstate(divide="ignore"):
            log_weights = np.log(self.weights)
        for k in range(self.n_components):
            chol = _cholesky(self.covariances[k])
            z = linalg.solve_triangular(chol, (X - self.means[k]).T, lower=True)
            log_det = 2.0 * np.sum(np.log(np.diag(chol)))
            out[:, k] = log_weights[k] - 0.5 * (dim * np.log(2 * np.pi) + log_det + np.sum(z**2, axis=0))
        return out

    def score_frames(self, X):
        """Per-frame log-likelihood."""
        return logsumexp(self.component_log_prob(X), axis=1)


def _cholesky(cov):
    """Lower Cholesky factor, adding diagonal jitter until it succeeds."""

    jitter = 0.0
    for attempt in range(8):
        try:
            return linalg.cholesky(cov + jitter * np.eye(len(cov)), lower=True)
        except linalg.LinAlgError:
            jitter = 1e-6 * 10**attempt
    raise NumericError("covariance is not positive definite even after jitter")


def _m_step(X, resp, reg):
    """Closed-form weights, means and covariances from responsibilities."""

    n, dim = X.shape
    counts = resp.sum(axis=0) + 10 * np.finfo(np.float64).eps
    means = resp.T @ X / counts[:, None]
    covariances = np.empty((len(counts), dim, dim))
    for k in range(len(counts)):
        diff = X - means[k]
        covariances[k] = (resp[:, k, None] * diff).T @ diff / counts[k] + reg * np.eye(dim)
    return GaussianMixture(counts / counts.sum(), means, covariances)


def gmm_fit(frames, K, max_iter=60, seed=0, tol=1e-6, reg=1e-6, logger=None):
    """EM with k-means++ seeding; returns (mixture, mean per-frame log-likelihood per iteration)."""

    X = np.asarray(frames, dtype=np.float64)
    n = len(X)
    if n < K:
        raise DataError(f"{n} frames cannot support {K} mixture components")
    if n < 10 * K and logger:
        logger.warning(f"Only {n} frames for {K} components, at least {10 * K} recommended")

    centers, _ = kmeans_plusplus(X, K, random_state=seed)
    nearest = np.argmin(cdist(X, centers, "sqeuclidean"), axis=1)
    resp = np.zeros((n, K))
    resp[np.arange(n), nearest] = 1.0
    mixture = _m_step(X, resp, reg)

    history = []
    for iteration in range(max_iter):
        log_prob = mixture.component_log_prob(X)
        log_norm = logsumexp(log_prob, axis=1)
        history.append(float(log_norm.mean()))
        if len(history) > 1 and history[-1] - history[-2] < tol:
            break
        resp = np.exp(log_prob - log_norm[:, None])
        mixture = _m_step(X, resp, reg)

    if logger:
        logger.debug(f"EM stopped after {len(history)} iterations, log-likelihood {history[-1]:.6f}")
    return mixture, history


def frame_times(audio, settings=GmmSettings()):
    """Centre time of every analysis frame."""

    window = int(round(settings.frame * audio.sample_rate))
    hop = max(1, int(round(settings.hop * audio.sample_rate)))
    count = 1 if len(audio.samples) <= window else 1 + (len(audio.samples) - window) // hop
    return (np.arange(count) * hop + window / 2.0) / audio.sample_rate


def frame_features(audio, settings=GmmSettings()):
    """Log-energy plus mel-band log energies per frame, shape (frames, n_mels + 1)."""

    fs = audio.sample_rate
    window = int(round(settings.frame * fs))
    hop = max(1, int(round(settings.hop * fs)))
    n_fft = int(2 ** np.ceil(np.log2(window)))
    mel = librosa.filters.mel(sr=fs, n_fft=n_fft, n_mels=settings.n_mels)
    taper = np.hamming(window)

    x = np.asarray(audio.samples, dtype=np.float64)
    if len(x) < window:
        x = np.pad(x, (0, window - len(x)))
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop]
    power = np.abs(np.fft.rfft(frames * taper, n=n_fft, axis=1)) ** 2
    log_energy = np.log(np.sum(frames**2, axis=1) + LOG_FLOOR)
    log_mel = np.log(power @ mel.T + LOG_FLOOR)
    return np.column_stack([log_energy, log_mel])


def split_frames(audio, tier, settings=GmmSettings()):
    """Frames whose centre falls inside a labelled interval of `tier`, and the rest."""

    features = frame_features(audio, settings)
    centres = frame_times(audio, settings)[: len(features)]
    inside = np.zeros(len(centres), dtype=bool)
    for interval in tier.labelled():
        inside |= (centres >= interval.start) & (centres < interval.end)
    return features[inside], features[~inside]


def _runs(flags):
    """(first, last) index pairs of True runs."""

    runs = []
    start = None
    for i, flag in enumerate(flags):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(flags) - 1))
    return runs


def detect_vowel_intervals(audio, gmm_vowel, gmm_other, min_dur=0.03, settings=GmmSettings(), merge_gap=None):
    """Vowel spans where the vowel mixture out-scores the other mixture."""

    if gmm_vowel.means.shape[1] != gmm_other.means.shape[1]:
        raise DataError("vowel and other mixtures use different feature dimensions")
    merge_gap = settings.merge_gap if merge_gap is None else merge_gap

    features = frame_features(audio, settings)
    if features.shape[1] != gmm_vowel.means.shape[1]:
        raise DataError(
            f"mixtures expect {gmm_vowel.means.shape[1]}-dim frames, features have {features.shape[1]}"
        )
    llr = gmm_vowel.score_frames(features) - gmm_other.score_frames(features)
    centres = frame_times(audio, settings)[: len(features)]
    half = settings.hop / 2.0

    spans = [
        [float(max(0.0, centres[a] - half)), float(min(audio.duration, centres[b] + half))]
        for a, b in _runs(llr > 0)
    ]
    merged = []
    for span in spans:
        if merged and span[0] - merged[-1][1] < merge_gap:
            merged[-1][1] = span[1]
        else:
            merged.append(span)

    intervals = [SegmentInterval(s, e, "vowel") for s, e in merged if e - s >= min_dur and e > s]
    return SegmentTier("vowels", tuple(intervals), 0.0, audio.duration)


def _mixture_to_dict(mixture):
    return {
        "weights": mixture.weights.tolist(),
        "means": mixture.means.tolist(),
        "covariances": mixture.covariances.tolist(),
    }


def _mixture_from_dict(data, name, dim):
    try:
        weights = np.asarray(data["weights"], dtype=np.float64)
        means = np.asarray(data["means"], dtype=np.float64)
        covariances = np.asarray(data["covariances"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as err:
        raise LoadError(f"mixture '{name}': bad or missing field {err}") from None
    k = len(weights)
    if means.shape != (k, dim) or covariances.shape != (k, dim, dim):
        raise LoadError(f"mixture '{name}': arrays do not match {k} components of dimension {dim}")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise LoadError(f"mixture '{name}': weights must be non-negative and sum to 1")
    return GaussianMixture(weights, means, covariances)


def gmm_to_dict(vowel, other, settings):
    """GMM model document with the feature definition it was trained on."""

    return {
        "version": GMM_FORMAT_VERSION,
        "features": {"n_mels": settings.n_mels, "frame": settings.frame, "hop": settings.hop},
        "models": {"vowel": _mixture_to_dict(vowel), "other": _mixture_to_dict(other)},
    }


def gmm_from_dict(document, settings=GmmSettings()):
    """Parse a GMM model document; returns (vowel, other, settings with the stored feature definition)."""

    if document.get("version") != GMM_FORMAT_VERSION:
        raise LoadError(
            f"unsupported GMM version {document.get('version')!r}; supported: {GMM_FORMAT_VERSION}"
        )
    features = document.get("features", {})
    try:
        settings = replace(
            settings,
            n_mels=int(features["n_mels"]),
            frame=float(features["frame"]),
            hop=float(features["hop"]),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise LoadError(f"GMM feature definition incomplete: {err}") from None
    models = document.get("models", {})
    for name in ("vowel", "other"):
        if name not in models:
            raise LoadError(f"GMM document lacks the '{name}' mixture")
    return (
        _mixture_from_dict(models["vowel"], "vowel", settings.dim),
        _mixture_from_dict(models["other"], "other", settings.dim),
        settings,
    )
