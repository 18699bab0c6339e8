"""Deterministic signal-processing frontend.

STFT analysis/synthesis, mel filterbank with log compression, elementwise
spectrogram masking, SNR-calibrated mixing, and 16-bit PCM WAV I/O. Every
function is pure: no hidden state, safe to call concurrently.

Conventions: spectrograms are (T, F) with time on axis 0; the analysis
window is a periodic Hann at 75% overlap by default, which satisfies the
constant-overlap-add condition used by the inverse transform.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import InvalidInputError

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-10  # added under the log so silence maps to log(1e-10), not -inf


class SpecDomain(Enum):
    LINEAR_MAG_STFT = "linear_mag_stft"
    MEL_LOG_POWER = "mel_log_power"


@dataclass
class AudioClip:
    """Mono waveform with amplitudes roughly in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInputError(f"expected mono 1-D samples, got shape {self.samples.shape}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2)))


@dataclass
class Spectrogram:
    """Time-frequency matrix tagged with its domain.

    `phase` is present exactly when `domain` is LINEAR_MAG_STFT; `n_samples`
    remembers the analysed clip length so the inverse transform can trim
    synthesis padding.
    """

    values: np.ndarray  # (T, F)
    domain: SpecDomain
    phase: np.ndarray | None
    frame_len: int
    hop: int
    sample_rate: int
    n_samples: int

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] <= 0 or self.values.shape[1] <= 0:
            raise InvalidInputError(f"spectrogram values must be a non-empty 2-D matrix, got {self.values.shape}")
        if (self.phase is not None) != (self.domain == SpecDomain.LINEAR_MAG_STFT):
            raise InvalidInputError("phase must be present iff domain is LINEAR_MAG_STFT")
        if self.phase is not None and self.phase.shape != self.values.shape:
            raise InvalidInputError("phase shape must match values shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class MelFilterbank:
    """Triangular mel filterbank, rows = mel bands, columns = linear bins."""

    weights: np.ndarray  # (F_mel, F_lin), non-negative
    f_min: float
    f_max: float

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise InvalidInputError("filterbank weights must be non-negative")
        empty = np.where(~np.any(self.weights > 0, axis=1))[0]
        if empty.size:
            raise InvalidInputError(f"filterbank rows {empty.tolist()} have no nonzero entry")


@dataclass
class Mask:
    """Saliency mask with entries in [0, 1], same shape as its target spectrogram."""

    values: np.ndarray  # (T, F)
    domain: SpecDomain

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidInputError(f"mask must be 2-D, got shape {self.values.shape}")
        lo, hi = float(self.values.min()), float(self.values.max())
        if lo < -1e-9 or hi > 1 + 1e-9:
            raise InvalidInputError(f"mask entries must lie in [0, 1], got range [{lo}, {hi}]")
        self.values = np.clip(self.values, 0.0, 1.0)

    def mean(self) -> float:
        return float(self.values.mean())


def _periodic_hann(frame_len: int) -> np.ndarray:
    n = np.arange(frame_len)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_len)


def stft(clip: AudioClip, frame_len: int = 1024, hop: int | None = None) -> Spectrogram:
    """Magnitude/phase STFT of `clip` using a periodic Hann window.

    T = number of frames (the tail is zero-padded to a whole frame),
    F = frame_len // 2 + 1.
    """
    if hop is None:
        hop = frame_len // 4
    if hop > frame_len or hop <= 0:
        raise InvalidInputError(f"hop ({hop}) must be in (0, frame_len={frame_len}]")
    x = clip.samples
    n = len(x)
    if n < frame_len:
        raise InvalidInputError(f"clip has {n} samples, shorter than one frame ({frame_len})")

    n_frames = 1 + math.ceil((n - frame_len) / hop)
    padded = np.zeros((n_frames - 1) * hop + frame_len)
    padded[:n] = x
    window = _periodic_hann(frame_len)

    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * window
    z = np.fft.rfft(frames, axis=1)
    return Spectrogram(
        values=np.abs(z),
        domain=SpecDomain.LINEAR_MAG_STFT,
        phase=np.angle(z),
        frame_len=frame_len,
        hop=hop,
        sample_rate=clip.sample_rate,
        n_samples=n,
    )


def istft(spec: Spectrogram) -> AudioClip:
    """Least-squares overlap-add inverse of `stft`.

    Exact wherever the squared analysis windows overlap; output is trimmed
    to the originally analysed length.
    """
    if spec.phase is None:
        raise InvalidInputError("istft requires a spectrogram with phase (LINEAR_MAG_STFT)")
    frame_len, hop = spec.frame_len, spec.hop
    z = spec.values * np.exp(1j * spec.phase)
    frames = np.fft.irfft(z, n=frame_len, axis=1)

    window = _periodic_hann(frame_len)
    n_frames = frames.shape[0]
    total = (n_frames - 1) * hop + frame_len
    num = np.zeros(total)
    den = np.zeros(total)
    for m in range(n_frames):
        sl = slice(m * hop, m * hop + frame_len)
        num[sl] += frames[m] * window
        den[sl] += window**2
    out = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
    return AudioClip(samples=out[: spec.n_samples], sample_rate=spec.sample_rate)


def hz_to_mel(f: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def make_mel_filterbank(
    n_mels: int,
    frame_len: int,
    sample_rate: int,
    f_min: float = 0.0,
    f_max: float | None = None,
) -> MelFilterbank:
    """Triangular filters equally spaced on the mel scale."""
    if f_max is None:
        f_max = sample_rate / 2.0
    n_bins = frame_len // 2 + 1
    bin_hz = np.fft.rfftfreq(frame_len, d=1.0 / sample_rate)

    mel_pts = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    hz_pts = np.asarray(mel_to_hz(mel_pts))

    weights = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        left, center, right = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (bin_hz - left) / max(center - left, 1e-12)
        down = (right - bin_hz) / max(right - center, 1e-12)
        weights[i] = np.maximum(0.0, np.minimum(up, down))
    return MelFilterbank(weights=weights, f_min=float(f_min), f_max=float(f_max))


def to_mel_log_power(spec: Spectrogram, fb: MelFilterbank, log_floor: float = LOG_FLOOR) -> Spectrogram:
    """log(mel_energy + floor) of a linear-magnitude STFT."""
    if spec.domain != SpecDomain.LINEAR_MAG_STFT:
        raise InvalidInputError("to_mel_log_power expects a LINEAR_MAG_STFT spectrogram")
    if fb.weights.shape[1] != spec.values.shape[1]:
        raise InvalidInputError(
            f"filterbank has {fb.weights.shape[1]} linear bins, spectrogram has {spec.values.shape[1]}"
        )
    mel_energy = spec.values.astype(np.float64) ** 2 @ fb.weights.T
    return Spectrogram(
        values=np.log(mel_energy + log_floor),
        domain=SpecDomain.MEL_LOG_POWER,
        phase=None,
        frame_len=spec.frame_len,
        hop=spec.hop,
        sample_rate=spec.sample_rate,
        n_samples=spec.n_samples,
    )


def apply_mask(spec: Spectrogram, mask: Mask) -> Spectrogram:
    """Elementwise product of spectrogram values with the mask.

    Phase, domain and framing metadata pass through unchanged.
    """
    if mask.values.shape != spec.values.shape:
        raise InvalidInputError(f"mask shape {mask.values.shape} != spectrogram shape {spec.values.shape}")
    return Spectrogram(
        values=spec.values * mask.values,
        domain=spec.domain,
        phase=None if spec.phase is None else spec.phase.copy(),
        frame_len=spec.frame_len,
        hop=spec.hop,
        sample_rate=spec.sample_rate,
        n_samples=spec.n_samples,
    )


def listenable(spec: Spectrogram, mask: Mask) -> AudioClip:
    """Waveform of the masked spectrogram, reconstructed with the original phase."""
    if spec.domain != SpecDomain.LINEAR_MAG_STFT:
        raise InvalidInputError("listenable output requires the LINEAR_MAG_STFT domain")
    return istft(apply_mask(spec, mask))


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float) -> AudioClip:
    """clean + g*noise with g chosen so the clean/noise power ratio hits snr_db."""
    if len(clean.samples) != len(noise.samples):
        raise InvalidInputError("clean and noise must have equal lengths")
    if clean.sample_rate != noise.sample_rate:
        raise InvalidInputError("clean and noise must share a sample rate")
    p_clean = float(np.mean(clean.samples**2))
    p_noise = float(np.mean(noise.samples**2))
    if p_clean <= 0 or p_noise <= 0:
        raise InvalidInputError("mix_at_snr requires both inputs to have nonzero power")
    gain = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return AudioClip(samples=clean.samples + gain * noise.samples, sample_rate=clean.sample_rate)


def fix_length(clip: AudioClip, n_samples: int) -> AudioClip:
    """Zero-pad short clips; center-crop long ones."""
    x = clip.samples
    if len(x) == n_samples:
        return clip
    if len(x) < n_samples:
        out = np.zeros(n_samples)
        out[: len(x)] = x
    else:
        start = (len(x) - n_samples) // 2
        out = x[start : start + n_samples].copy()
    return AudioClip(samples=out, sample_rate=clip.sample_rate)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase resampling to `target_rate`."""
    if clip.sample_rate == target_rate:
        return clip
    g = math.gcd(clip.sample_rate, target_rate)
    out = resample_poly(clip.samples, target_rate // g, clip.sample_rate // g)
    return AudioClip(samples=out, sample_rate=target_rate)


class MelFrontend:
    """Input transform feeding the audio encoder: STFT then mel log-power.

    Caches the filterbank for a fixed (sample_rate, frame_len, n_mels)
    geometry. Stateless otherwise.
    """

    def __init__(self, sample_rate: int, frame_len: int = 1024, hop: int | None = None, n_mels: int = 64):
        self.sample_rate = sample_rate
        self.frame_len = frame_len
        self.hop = hop if hop is not None else frame_len // 4
        self.n_mels = n_mels
        self.filterbank = make_mel_filterbank(n_mels, frame_len, sample_rate)

    def stft(self, clip: AudioClip) -> Spectrogram:
        return stft(clip, frame_len=self.frame_len, hop=self.hop)

    def mel(self, clip_or_spec: AudioClip | Spectrogram) -> Spectrogram:
        spec = clip_or_spec if isinstance(clip_or_spec, Spectrogram) else self.stft(clip_or_spec)
        return to_mel_log_power(spec, self.filterbank)

    __call__ = mel


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write mono 16-bit PCM."""
    pcm = np.clip(clip.samples, -1.0, 1.0)
    wavfile.write(str(path), clip.sample_rate, (pcm * 32767.0).astype(np.int16))


def read_wav(path: str | Path, expected_rate: int | None = None) -> AudioClip:
    """Read mono 16-bit PCM; resamples (with a warning) on rate mismatch."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise InvalidInputError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype != np.int16:
        raise InvalidInputError(f"{path}: expected 16-bit PCM, got dtype {data.dtype}")
    clip = AudioClip(samples=data.astype(np.float64) / 32768.0, sample_rate=rate)
    if expected_rate is not None and rate != expected_rate:
        log.warning("resampling %s from %d Hz to %d Hz (polyphase)", path, rate, expected_rate)
        clip = resample(clip, expected_rate)
    return clip
