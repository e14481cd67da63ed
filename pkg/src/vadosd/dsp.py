"""STFT, mel filterbank, log-mel features and mean-variance normalization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .corpus_io import SAMPLE_RATE


@dataclass(frozen=True)
class FrontendConfig:
    win_length: int = 400  # 25 ms
    hop: int = 160  # 10 ms
    fft_size: int = 512
    num_mel: int = 64
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-6
    sample_rate: int = SAMPLE_RATE

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1


def num_stft_frames(num_samples: int, cfg: FrontendConfig = FrontendConfig()) -> int:
    return max(1, math.ceil(num_samples / cfg.hop))


def frame_signal(x: np.ndarray, cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """Left-aligned frames: frame t covers samples ``[t*hop, t*hop + win)``, tail zero-padded.

    ``x`` is ``... x N``; returns ``... x T x win``.
    """
    n = x.shape[-1]
    t = num_stft_frames(n, cfg)
    padded_len = (t - 1) * cfg.hop + cfg.win_length
    pad = [(0, 0)] * (x.ndim - 1) + [(0, padded_len - n)]
    xp = np.pad(x, pad)
    view = np.lib.stride_tricks.sliding_window_view(xp, cfg.win_length, axis=-1)
    return view[..., :: cfg.hop, :][..., :t, :]


@lru_cache(maxsize=8)
def _hann(n: int) -> np.ndarray:
    # periodic Hann
    return (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)).astype(np.float32)


def stft(channels: np.ndarray, cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """Complex STFT of an ``M x N`` (or ``N``) signal -> ``M x T x F``."""
    x = np.atleast_2d(np.asarray(channels, dtype=np.float32))
    frames = frame_signal(x, cfg) * _hann(cfg.win_length)
    return np.fft.rfft(frames, n=cfg.fft_size, axis=-1).astype(np.complex64)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """Triangular filters with centers equally spaced on the mel scale, ``num_mel x num_bins``.

    Edges are placed on the mel grid; a filter narrower than the bin spacing
    is widened to one bin on either side of its center so every row has
    support.
    """
    bin_freqs = np.arange(cfg.num_bins) * cfg.sample_rate / cfg.fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.num_mel + 2))
    spacing = cfg.sample_rate / cfg.fft_size
    fb = np.zeros((cfg.num_mel, cfg.num_bins))
    for k in range(cfg.num_mel):
        lo, center, hi = edges[k], edges[k + 1], edges[k + 2]
        lo = min(lo, center - spacing)
        hi = max(hi, center + spacing)
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        fb[k] = np.clip(np.minimum(rising, falling), 0.0, None)
    fb = fb.astype(np.float32)
    fb.flags.writeable = False
    return fb


def filter_centers(cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.num_mel + 2))[1:-1]


def log_mel(magnitude: np.ndarray, cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """``ln(fb @ |X|^2 + floor)`` over the last axis (``... x F`` -> ``... x num_mel``)."""
    power = np.asarray(magnitude, dtype=np.float32) ** 2
    return np.log(power @ mel_filterbank(cfg).T + np.float32(cfg.log_floor))


def logmel_features(channels: np.ndarray, cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """Single-channel path: log-mel of the channel-averaged signal, ``T x num_mel``."""
    mono = np.atleast_2d(channels).mean(axis=0)
    return log_mel(np.abs(stft(mono, cfg))[0], cfg)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, features: np.ndarray) -> np.ndarray:
        return ((features - self.mean) / self.std).astype(np.float32)


def mvn_stats(features: np.ndarray, var_floor: float = 1e-8) -> NormStats:
    """Per-dimension statistics over the time axis; near-constant dimensions get unit scale."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"mvn needs at least 2 frames of a T x F matrix, got shape {x.shape}")
    mu = x.mean(axis=0)
    var = x.var(axis=0)
    std = np.where(var > var_floor, np.sqrt(var), 1.0)
    return NormStats(mu, std)


def mvn(features: np.ndarray, var_floor: float = 1e-8) -> np.ndarray:
    """Zero mean, unit variance per dimension; constant dimensions map to 0."""
    x = np.asarray(features, dtype=np.float64)
    stats = mvn_stats(x, var_floor)
    return (x - stats.mean) / stats.std
