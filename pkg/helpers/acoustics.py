"""Signal-level measurements: pitch pulses, perturbation, noise ratios, intensity, formants, bark."""
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal

from helpers.errors import (
    ConfigError,
    FormantFailureError,
    InsufficientDataError,
    RangeError,
    UnvoicedError,
)


@dataclass(frozen=True)
class DspSettings:
    """Analysis constants; times in seconds, frequencies in Hz."""

    f0_min: float = 60.0
    f0_max: float = 400.0
    pitch_window: float = 0.04
    pitch_hop: float = 0.01
    voicing_threshold: float = 0.3
    formant_window: float = 0.025
    formant_hop: float = 0.01
    pre_emphasis: float = 0.97
    lpc_order: int = 0
    max_bandwidth: float = 400.0
    residual_order: int = 13
    gne_bandwidth: float = 1000.0
    gne_step: float = 500.0
    gne_min_separation: float = 500.0
    gne_max_lag: float = 0.001
    min_excitation_duration: float = 0.03
    vfer_split: float = 2500.0
    intensity_window: float = 0.025
    intensity_hop: float = 0.01

    def __post_init__(self):
        if not 0 < self.f0_min < self.f0_max:
            raise ConfigError(f"f0 range [{self.f0_min}, {self.f0_max}] is invalid")
        if not 0 < self.voicing_threshold < 1:
            raise ConfigError("voicing-threshold must lie in (0, 1)")
        if not 0 <= self.pre_emphasis < 1:
            raise ConfigError("pre-emphasis must lie in [0, 1)")
        for name in (
            "pitch_window",
            "pitch_hop",
            "formant_window",
            "formant_hop",
            "intensity_window",
            "intensity_hop",
            "gne_bandwidth",
            "gne_step",
            "max_bandwidth",
            "vfer_split",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name.replace('_', '-')} must be positive")
        if self.lpc_order < 0 or self.residual_order < 1:
            raise ConfigError("LPC orders must be positive (lpc-order 0 means 2 + rate/1000)")

    def formant_order(self, sample_rate):
        """LPC order used for formant tracking."""
        return self.lpc_order or int(2 + sample_rate // 1000)


DEFAULT_DSP = DspSettings()


@dataclass(frozen=True, eq=False)
class PulseSequence:
    """Glottal periods T_i (s) with peak amplitudes A_i."""

    periods: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        periods = np.asarray(self.periods, dtype=np.float64)
        amplitudes = np.asarray(self.amplitudes, dtype=np.float64)
        if periods.shape != amplitudes.shape:
            raise ValueError("periods and amplitudes must have equal length")
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "amplitudes", amplitudes)

    def __len__(self):
        return len(self.periods)


@dataclass(frozen=True, eq=False)
class FormantTrack:
    """Per-frame F1..F3 (NaN where invalid) and validity flags."""

    times: np.ndarray
    formants: np.ndarray
    valid: np.ndarray


def _frame_starts(length, window, hop):
    """Start indices of full frames; a short signal yields one frame."""

    if length <= window:
        return np.array([0])
    return np.arange(0, length - window + 1, hop)


def normalized_autocorrelation(frame, min_lag, max_lag):
    """r(τ) for τ in [min_lag, max_lag], normalized by the energies of the overlapping parts."""

    frame = np.asarray(frame, dtype=np.float64)
    frame = frame - frame.mean()
    n = len(frame)
    max_lag = min(max_lag, n - 2)
    if max_lag < min_lag:
        return np.zeros(0)

    lags = np.arange(min_lag, max_lag + 1)
    full = signal.correlate(frame, frame, mode="full", method="fft")[n - 1 :]
    energy = np.cumsum(frame**2)
    total = energy[-1]
    head = energy[n - lags - 1]
    tail = total - energy[lags - 1]
    denom = np.sqrt(head * tail)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(denom > 0, full[lags] / denom, 0.0)
    return np.clip(r, -1.0, 1.0)


def _parabolic(y, i):
    """Offset and height of the parabola through y[i-1], y[i], y[i+1]."""

    if i <= 0 or i >= len(y) - 1:
        return 0.0, y[i]
    left, mid, right = y[i - 1], y[i], y[i + 1]
    curvature = left - 2 * mid + right
    if curvature == 0:
        return 0.0, mid
    offset = 0.5 * (left - right) / curvature
    return offset, mid - 0.25 * (left - right) * offset


def _pitch_frames(audio, settings):
    """Per-frame (start sample, best lag in samples or None, max r)."""

    fs = audio.sample_rate
    window = int(round(settings.pitch_window * fs))
    hop = max(1, int(round(settings.pitch_hop * fs)))
    min_lag = max(2, int(np.floor(fs / settings.f0_max)))
    max_lag = int(np.ceil(fs / settings.f0_min))

    frames = []
    for start in _frame_starts(len(audio.samples), window, hop):
        r = normalized_autocorrelation(audio.samples[start : start + window], min_lag, max_lag)
        if len(r) < 3:
            frames.append((start, None, 0.0))
            continue
        best = float(r.max())
        if best < settings.voicing_threshold:
            frames.append((start, None, best))
            continue
        peaks, _ = signal.find_peaks(r)
        # Lowest-lag peak within 5% of the maximum
        candidates = [p for p in peaks if r[p] >= 0.95 * best]
        pick = candidates[0] if candidates else int(np.argmax(r))
        offset, _ = _parabolic(r, pick)
        frames.append((start, min_lag + pick + offset, best))
    return frames, window


def estimate_pitch_track(audio, f0_range=None, settings=DEFAULT_DSP):
    """Locate glottal pulses in the voiced parts of a segment."""

    if f0_range is not None:
        settings = replace(settings, f0_min=f0_range[0], f0_max=f0_range[1])
    fs = audio.sample_rate
    if audio.duration < 3.0 / settings.f0_min:
        raise InsufficientDataError(
            f"segment of {audio.duration * 1000:.1f} ms is shorter than 3 periods of {settings.f0_min:g} Hz"
        )

    frames, window = _pitch_frames(audio, settings)
    voiced = [(start, lag) for start, lag, _ in frames if lag is not None]
    if not voiced:
        raise UnvoicedError("no voiced frame in segment")

    median_period = float(np.median([lag for _, lag in voiced]))

    # Contiguous voiced spans in samples
    spans = []
    for start, _ in voiced:
        end = min(len(audio.samples), start + window)
        if spans and start <= spans[-1][1]:
            spans[-1][1] = max(spans[-1][1], end)
        else:
            spans.append([start, end])

    x = audio.samples
    periods, amplitudes = [], []
    lo_period, hi_period = 1.0 / settings.f0_max, 1.0 / settings.f0_min
    for first, last in spans:
        chunk = x[first:last]
        if not len(chunk):
            continue
        polarity = 1.0 if chunk.max() >= -chunk.min() else -1.0
        y = polarity * chunk
        peaks, _ = signal.find_peaks(y, distance=max(1, int(0.7 * median_period)), height=0.3 * y.max())
        times, heights = [], []
        for p in peaks:
            offset, height = _parabolic(y, p)
            times.append((first + p + offset) / fs)
            heights.append(height)
        for i in range(len(times) - 1):
            period = times[i + 1] - times[i]
            if lo_period <= period <= hi_period:
                periods.append(period)
                amplitudes.append(heights[i])

    if not periods:
        raise UnvoicedError("no glottal period within the f0 range")
    return PulseSequence(np.array(periods), np.array(amplitudes))


def _local_perturbation(values, what):
    """mean|v_i - v_{i+1}| / mean(v_i)."""

    values = np.asarray(values, dtype=np.float64)
    if len(values) < 3:
        raise InsufficientDataError(f"{what} needs at least 3 values, got {len(values)}")
    mean = values.mean()
    if mean <= 0:
        raise InsufficientDataError(f"{what} undefined for non-positive mean")
    return float(np.mean(np.abs(np.diff(values))) / mean)


def jitter_local(pulses):
    """Relative mean absolute difference of consecutive periods."""

    return _local_perturbation(pulses.periods, "jitter")


def shimmer_local(pulses):
    """Relative mean absolute difference of consecutive peak amplitudes."""

    return _local_perturbation(pulses.amplitudes, "shimmer")


HNR_CLAMP = (1e-6, 1.0 - 1e-6)


def hnr_from_r(r):
    """10·log10(r / (1 - r)) with r clamped."""

    r = np.clip(r, *HNR_CLAMP)
    return 10.0 * np.log10(r / (1.0 - r))


def hnr_db(segment, settings=DEFAULT_DSP):
    """Mean harmonics-to-noise ratio over voiced frames."""

    frames, _ = _pitch_frames(segment, settings)
    values = [best for _, lag, best in frames if lag is not None]
    if not values:
        raise UnvoicedError("no voiced frame for HNR")
    return float(np.mean(hnr_from_r(np.array(values))))


def levinson_durbin(r, order):
    """Solve the autocorrelation normal equations; return (a with a[0] = 1, prediction error)."""

    r = np.asarray(r, dtype=np.float64)
    a = np.zeros(order + 1)
    a[0] = 1.0
    error = r[0]
    if error <= 0:
        return a, 0.0

    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[1:i], r[i - 1 : 0 : -1])
        k = -acc / error
        a[1:i] = a[1:i] + k * a[i - 1 : 0 : -1]
        a[i] = k
        error *= 1.0 - k * k
        if error <= 0:
            break
    return a, float(error)


def autocorrelation(x, order):
    """Biased autocorrelation r[0..order]."""

    x = np.asarray(x, dtype=np.float64)
    full = signal.correlate(x, x, mode="full", method="fft")[len(x) - 1 :]
    r = np.zeros(order + 1)
    r[: min(order + 1, len(full))] = full[: order + 1]
    return r


def lpc_residual(segment, order=13):
    """Inverse-filter a segment with its own LPC polynomial (Hamming-windowed estimate)."""

    x = np.asarray(segment.samples, dtype=np.float64)
    a, _ = levinson_durbin(autocorrelation(x * np.hamming(len(x)), order), order)
    return signal.lfilter(a, [1.0], x)


def _require_excitation_length(segment, settings):
    if segment.duration < settings.min_excitation_duration:
        raise InsufficientDataError(
            f"segment of {segment.duration * 1000:.1f} ms is shorter than "
            f"{settings.min_excitation_duration * 1000:g} ms"
        )


def gne_bands(sample_rate, settings=DEFAULT_DSP):
    """Centre frequencies of the GNE analysis bands."""

    nyquist = sample_rate / 2.0
    return np.arange(settings.gne_bandwidth / 2.0, nyquist - settings.gne_bandwidth + 1e-9, settings.gne_step)


def gne(segment, settings=DEFAULT_DSP):
    """Glottal-to-noise excitation ratio in [0, 1]."""

    _require_excitation_length(segment, settings)
    fs = segment.sample_rate
    centres = gne_bands(fs, settings)
    if len(centres) < 2:
        raise ConfigError(
            f"GNE needs at least 2 bands, configuration yields {len(centres)} at {fs} Hz"
        )

    residual = lpc_residual(segment, settings.residual_order)
    half = settings.gne_bandwidth / 2.0
    envelopes = []
    for centre in centres:
        low, high = max(centre - half, 20.0), min(centre + half, fs / 2.0 - 1.0)
        sos = signal.butter(4, [low, high], btype="bandpass", fs=fs, output="sos")
        band = signal.sosfiltfilt(sos, residual)
        envelopes.append(np.abs(signal.hilbert(band)))
    envelopes = np.array(envelopes)

    std = envelopes.std(axis=1, keepdims=True)
    std[std == 0] = 1.0
    z = (envelopes - envelopes.mean(axis=1, keepdims=True)) / std
    n = z.shape[1]

    separated = np.abs(centres[:, None] - centres[None, :]) >= settings.gne_min_separation
    max_lag = int(round(settings.gne_max_lag * fs))
    best = 0.0
    for lag in range(0, min(max_lag, n - 1) + 1):
        corr = z[:, : n - lag] @ z[:, lag:].T / (n - lag)
        best = max(best, float(corr[separated].max()))
    return float(np.clip(best, 0.0, 1.0))


VFER_FLOOR = 1e-12


def vfer_from_residual(residual, sample_rate, split=2500.0):
    """10·log10(E_low / E_high) of a residual's power spectrum split at `split` Hz."""

    power = np.abs(np.fft.rfft(np.asarray(residual, dtype=np.float64))) ** 2
    freqs = np.fft.rfftfreq(len(residual), 1.0 / sample_rate)
    low = float(power[freqs < split].sum())
    high = float(power[freqs >= split].sum())
    total = low + high
    if total <= 0:
        raise InsufficientDataError("residual has no energy")
    high = max(high, VFER_FLOOR * total)
    low = max(low, VFER_FLOOR * total)
    return 10.0 * np.log10(low / high)


def vfer(segment, settings=DEFAULT_DSP):
    """Vocal fold excitation ratio of the LPC residual in dB."""

    _require_excitation_length(segment, settings)
    residual = lpc_residual(segment, settings.residual_order)
    return vfer_from_residual(residual, segment.sample_rate, settings.vfer_split)


INTENSITY_FLOOR_DB = -120.0


def intensity_stats(segment, win=None, hop=None, settings=DEFAULT_DSP):
    """Mean and standard deviation of frame RMS level in dB re full scale."""

    fs = segment.sample_rate
    window = max(1, int(round((win or settings.intensity_window) * fs)))
    step = max(1, int(round((hop or settings.intensity_hop) * fs)))
    x = segment.samples
    if not len(x):
        return {"mean_db": INTENSITY_FLOOR_DB, "std_db": 0.0}

    levels = []
    for start in _frame_starts(len(x), window, step):
        frame = x[start : start + window]
        rms = np.sqrt(np.mean(frame**2))
        levels.append(max(20.0 * np.log10(rms) if rms > 0 else INTENSITY_FLOOR_DB, INTENSITY_FLOOR_DB))
    levels = np.array(levels)
    return {"mean_db": float(levels.mean()), "std_db": float(levels.std())}


def formant_candidates(a, sample_rate, max_bandwidth=400.0):
    """Sorted resonance frequencies of an LPC polynomial passing the bandwidth and range rules."""

    roots = np.roots(a)
    roots = roots[np.imag(roots) > 0]
    freqs = np.angle(roots) * sample_rate / (2 * np.pi)
    bandwidths = -sample_rate / np.pi * np.log(np.abs(roots))
    keep = (bandwidths < max_bandwidth) & (freqs > 90.0) & (freqs < sample_rate / 2.0 - 50.0)
    return np.sort(freqs[keep])


def lpc_formants(segment, settings=DEFAULT_DSP):
    """Track F1..F3 with autocorrelation LPC on pre-emphasized Hamming frames."""

    if segment.duration < 0.05:
        raise InsufficientDataError(f"formant tracking needs 50 ms, got {segment.duration * 1000:.1f} ms")

    fs = segment.sample_rate
    order = settings.formant_order(fs)
    x = signal.lfilter([1.0, -settings.pre_emphasis], [1.0], segment.samples)
    window = int(round(settings.formant_window * fs))
    hop = max(1, int(round(settings.formant_hop * fs)))
    taper = np.hamming(window)

    starts = _frame_starts(len(x), window, hop)
    formants = np.full((len(starts), 3), np.nan)
    valid = np.zeros(len(starts), dtype=bool)
    for i, start in enumerate(starts):
        frame = x[start : start + window]
        if len(frame) < window:
            continue
        r = autocorrelation(frame * taper, order)
        if r[0] <= 0:
            continue
        a, _ = levinson_durbin(r, order)
        candidates = formant_candidates(a, fs, settings.max_bandwidth)
        if len(candidates) >= 3:
            formants[i] = candidates[:3]
            valid[i] = True

    if not valid.any():
        raise FormantFailureError("no frame produced three formant candidates")
    times = (starts + window / 2.0) / fs
    return FormantTrack(times, formants, valid)


def formant_stats(track):
    """Mean and standard deviation of F1..F3 over valid frames."""

    values = track.formants[track.valid]
    if not len(values):
        raise FormantFailureError("formant track has no valid frame")
    return {
        f"F{k + 1}": {"mean": float(values[:, k].mean()), "std": float(values[:, k].std())}
        for k in range(3)
    }


def hz_to_bark(f):
    """Bark value of a frequency (scalar or array)."""

    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise RangeError("frequency must be non-negative")
    bark = 13.0 * np.arctan(0.00076 * f) + 3.5 * np.arctan((f / 7500.0) ** 2)
    return float(bark) if bark.ndim == 0 else bark


def bark_vowel_radius(f1, f2):
    """√(bark(F1)² + bark(F2)²)."""

    return float(np.hypot(hz_to_bark(f1), hz_to_bark(f2)))


def bark_vowel_space_3d(f1, f2, f3):
    """(bark(F1), bark(F2), bark(F3) - bark(F2))."""

    b2 = hz_to_bark(f2)
    return (hz_to_bark(f1), b2, hz_to_bark(f3) - b2)
