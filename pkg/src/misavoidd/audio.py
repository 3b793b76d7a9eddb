"""MFCC extraction from mono audio (25 ms Hamming frames, 10 ms hop)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
from scipy.io import wavfile

LOG_FLOOR = 1e-10


@dataclass
class AudioClip:
    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"audio must be mono, got array of shape {self.samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")


@dataclass
class MfccConfig:
    frame_len_seconds: float = 0.025
    frame_hop_seconds: float = 0.010
    n_fft: int = 512
    num_mels: int = 26
    num_coeffs: int = 13
    fmin: float = 0.0
    fmax: float | None = None


@dataclass
class MfccFrameSeries:
    frames: np.ndarray  # [num_frames, num_coeffs]
    frame_hop_seconds: float = 0.010
    frame_len_seconds: float = 0.025

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def frame_count(num_samples: int, window: int, hop: int) -> int:
    if num_samples < window:
        return 0
    return (num_samples - window) // hop + 1


def _frame_sizes(sample_rate: int, cfg: MfccConfig) -> tuple[int, int]:
    window = int(round(sample_rate * cfg.frame_len_seconds))
    hop = int(round(sample_rate * cfg.frame_hop_seconds))
    return window, hop


def frame_and_window(clip: AudioClip, cfg: MfccConfig | None = None) -> np.ndarray:
    """Slice the clip into Hamming-windowed frames, one per row."""
    cfg = cfg or MfccConfig()
    window, hop = _frame_sizes(clip.sample_rate, cfg)
    n = frame_count(clip.samples.size, window, hop)
    if n == 0:
        raise ValueError(
            f"clip has {clip.samples.size} samples, shorter than one {window}-sample window"
        )
    idx = np.arange(window)[None, :] + hop * np.arange(n)[:, None]
    return clip.samples[idx] * np.hamming(window)[None, :]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(sample_rate: int, cfg: MfccConfig) -> np.ndarray:
    """Edge and center frequencies (Hz) of the filterbank, length num_mels + 2."""
    fmax = cfg.fmax if cfg.fmax is not None else sample_rate / 2.0
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.num_mels + 2)
    return mel_to_hz(mels)


def mel_filterbank(sample_rate: int, cfg: MfccConfig | None = None) -> np.ndarray:
    """Triangular HTK-mel filters, shape [num_mels, n_fft // 2 + 1], peak weight 1."""
    cfg = cfg or MfccConfig()
    edges = mel_centers(sample_rate, cfg)
    freqs = np.arange(cfg.n_fft // 2 + 1) * sample_rate / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def power_spectrum(frames: np.ndarray, n_fft: int) -> np.ndarray:
    if frames.shape[1] > n_fft:
        raise ValueError(f"frame length {frames.shape[1]} exceeds n_fft {n_fft}")
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    return (spec.real**2 + spec.imag**2) / n_fft


def mel_energies(clip: AudioClip, cfg: MfccConfig | None = None) -> np.ndarray:
    """Mel filterbank energies per frame; spectrum bins are floored at 1e-10."""
    cfg = cfg or MfccConfig()
    frames = frame_and_window(clip, cfg)
    pspec = np.maximum(power_spectrum(frames, cfg.n_fft), LOG_FLOOR)
    return pspec @ mel_filterbank(clip.sample_rate, cfg).T


def mfcc(clip: AudioClip, num_mels: int = 26, num_coeffs: int = 13, cfg: MfccConfig | None = None) -> MfccFrameSeries:
    """Log-mel energies decorrelated by an orthonormal type-II DCT."""
    if clip.samples.size == 0:
        raise ValueError("empty clip")
    if clip.sample_rate < 8000:
        raise ValueError(f"sample_rate must be at least 8000 Hz, got {clip.sample_rate}")
    if num_mels < 1 or num_coeffs < 1 or num_coeffs > num_mels:
        raise ValueError(f"need 1 <= num_coeffs <= num_mels, got {num_coeffs} and {num_mels}")
    base = cfg or MfccConfig()
    cfg = MfccConfig(**{**base.__dict__, "num_mels": num_mels, "num_coeffs": num_coeffs})
    log_mel = np.log(mel_energies(clip, cfg))
    coeffs = scipy.fft.dct(log_mel, type=2, axis=1, norm="ortho")[:, :num_coeffs]
    return MfccFrameSeries(coeffs, cfg.frame_hop_seconds, cfg.frame_len_seconds)


def read_wav(path: str | Path) -> AudioClip:
    """Read a mono 16-bit PCM or 32-bit float WAV file."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, found {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample type {data.dtype}; need int16 or float32")
    return AudioClip(int(rate), samples)
