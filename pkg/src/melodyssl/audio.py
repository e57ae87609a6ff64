"""Audio loading and the spectrogram front end.

Pipeline: WAV -> mono 8 kHz -> log-magnitude STFT (1024-point Hann, hop 80,
so one frame per 10 ms) -> 31-frame patches for the classifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile
import scipy.signal

SAMPLE_RATE = 8000
N_FFT = 1024
HOP = 80
N_BINS = N_FFT // 2 + 1
CONTEXT = 31
LOG_EPS = 1e-7


class AudioError(ValueError):
    pass


@dataclass
class AudioClip:
    """Samples in [-1, 1]; shape ``(n,)`` for mono or ``(n, channels)``."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim not in (1, 2) or s.shape[0] == 0:
            raise AudioError("audio must be non-empty with 1 or 2 dimensions")
        if s.ndim == 2 and s.shape[1] not in (1, 2):
            raise AudioError("only mono or stereo audio is supported")
        if not np.all(np.isfinite(s)):
            raise AudioError("audio contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise AudioError("sample rate must be positive")
        self.samples = s
        self.sample_rate = int(self.sample_rate)

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class Spectrogram:
    values: np.ndarray  # (n_frames, 513)
    hop_seconds: float = HOP / SAMPLE_RATE
    bin_hz: float = SAMPLE_RATE / N_FFT

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class FramePatch:
    values: np.ndarray  # (31, 513)
    center_frame_index: int


def load_wav(path) -> AudioClip:
    """Read 16-bit PCM or 32-bit float WAV, scaled to [-1, 1]."""
    try:
        sr, data = scipy.io.wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise AudioError("cannot read %s: %s" % (path, exc)) from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioError("unsupported WAV encoding %s in %s" % (data.dtype, path))
    if samples.shape[0] == 0:
        raise AudioError("%s has no samples" % path)
    if samples.ndim == 2 and samples.shape[1] == 1:
        samples = samples[:, 0]
    return AudioClip(samples, sr)


def write_wav(path, clip: AudioClip, pcm16: bool = False) -> None:
    """Write float32 WAV (default, lossless for the synthetic corpus) or 16-bit PCM."""
    x = np.asarray(clip.samples)
    if pcm16:
        data = np.clip(np.round(x * 32767.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    scipy.io.wavfile.write(path, clip.sample_rate, data)


def _resampling_filter(up: int, down: int) -> np.ndarray:
    # frequencies normalised to the upsampled rate; cutoff at 0.45 x target
    # rate, stopband from the target Nyquist, ~80 dB rejection
    cutoff = 0.45 / down
    width = 0.1 / down
    numtaps, beta = scipy.signal.kaiserord(80.0, width / 0.5)
    numtaps |= 1
    return scipy.signal.firwin(numtaps, cutoff, window=("kaiser", beta), fs=1.0) * up


def to_mono_8k(clip: AudioClip) -> AudioClip:
    """Downmix by channel mean and resample to 8 kHz.

    8 kHz mono input comes back untouched (same array values).
    """
    if clip.sample_rate < SAMPLE_RATE:
        raise AudioError("upsampling from %d Hz is not supported" % clip.sample_rate)
    x = clip.samples
    if x.ndim == 2:
        x = x.mean(axis=1)
    if clip.sample_rate == SAMPLE_RATE:
        return AudioClip(x, SAMPLE_RATE)
    g = math.gcd(clip.sample_rate, SAMPLE_RATE)
    up, down = SAMPLE_RATE // g, clip.sample_rate // g
    h = _resampling_filter(up, down)
    y = scipy.signal.resample_poly(x, up, down, window=h)
    return AudioClip(y, SAMPLE_RATE)


def reflect_index(idx, n: int) -> np.ndarray:
    """Fold arbitrary integer indices into [0, n) by mirror reflection (no edge repeat)."""
    idx = np.asarray(idx)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    m = np.mod(idx, period)
    return np.where(m < n, m, period - m)


def n_frames_for(n_samples: int) -> int:
    return -(-n_samples // HOP)


def stft_logmag(clip: AudioClip) -> Spectrogram:
    """ln(|STFT| + 1e-7) with frames centred at sample t*80, reflect padded."""
    if clip.sample_rate != SAMPLE_RATE or clip.channels != 1:
        raise AudioError("stft_logmag expects 8 kHz mono audio")
    x = np.asarray(clip.samples, dtype=np.float64).reshape(-1)
    n = x.size
    n_frames = n_frames_for(n)
    offsets = np.arange(N_FFT) - N_FFT // 2
    idx = np.arange(n_frames)[:, None] * HOP + offsets[None, :]
    frames = x[reflect_index(idx, n)]
    window = scipy.signal.get_window("hann", N_FFT)
    mag = np.abs(np.fft.rfft(frames * window, axis=1))
    return Spectrogram(np.log(mag + LOG_EPS).astype(np.float32))


def patch_centers(n_frames: int, stride: int, offset: int = 0) -> np.ndarray:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return np.arange(offset, n_frames, stride)


def patch_rows(centers, n_frames: int) -> np.ndarray:
    """Frame indices ``(n_patches, 31)`` for patches at the given centres."""
    half = CONTEXT // 2
    rows = np.asarray(centers)[:, None] + np.arange(-half, half + 1)[None, :]
    return reflect_index(rows, n_frames)


def normalize(values: np.ndarray, norm) -> np.ndarray:
    if norm is None:
        return values
    mean, std = norm
    return ((values - mean) / std).astype(np.float32)


def make_patches(spec: Spectrogram, stride: int, norm=None, offset: int = 0):
    """Cut 31-frame patches centred every ``stride`` frames.

    ``norm`` is an optional ``(mean, std)`` pair (scalars or per-bin arrays).
    """
    centers = patch_centers(spec.n_frames, stride, offset)
    rows = patch_rows(centers, spec.n_frames)
    values = normalize(spec.values, norm)
    return [FramePatch(values[r], int(c)) for r, c in zip(rows, centers)]


def patch_array(values: np.ndarray, stride: int, norm=None, offset: int = 0):
    """Array form of :func:`make_patches`: returns ``(patches, rows)``."""
    n = values.shape[0]
    rows = patch_rows(patch_centers(n, stride, offset), n)
    return normalize(values, norm)[rows], rows
