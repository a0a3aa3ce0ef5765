"""Audio ingestion, MFCC front end, feature normalization and augmentations.

All waveform work happens at 16 kHz mono. Features are float32 arrays of
shape (n_mfcc, frames), channels first.
"""
from __future__ import annotations

import functools
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .errors import CorruptFile, TooShort, UnsupportedFormat

SAMPLE_RATE = 16000
FEATURE_MAGIC = b"SGF1"
GATE_MAGIC = b"SGZ1"


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("AudioClip needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("AudioClip samples must be finite")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MfccConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    n_mel: int = 64
    n_mfcc: int = 32
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if min(self.window_ms, self.hop_ms, self.fft_size, self.n_mel, self.n_mfcc) <= 0:
            raise ValueError("MFCC config values must be positive")
        if self.n_mfcc > self.n_mel:
            raise ValueError("n_mfcc must not exceed n_mel")
        if self.fft_size < self.window:
            raise ValueError("fft_size must cover the analysis window")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError("need 0 <= fmin < fmax <= Nyquist")

    @property
    def window(self) -> int:
        return int(round(self.window_ms * self.sample_rate / 1000))

    @property
    def hop(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))


@dataclass(frozen=True)
class AugmentConfig:
    time_shift_ms: float = 5.0
    noise_db_min: float = -90.0
    noise_db_max: float = -46.0
    noise_prob: float = 0.8
    specaug_time_masks: int = 2
    specaug_time_width: int = 25
    specaug_freq_masks: int = 2
    specaug_freq_width: int = 15
    speccutout_rects: int = 5

    def __post_init__(self):
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ValueError("noise_prob must lie in [0, 1]")
        if self.noise_db_min > self.noise_db_max:
            raise ValueError("noise dB range is not ordered")
        widths = (self.time_shift_ms, self.specaug_time_masks, self.specaug_time_width,
                  self.specaug_freq_masks, self.specaug_freq_width, self.speccutout_rects)
        if min(widths) < 0:
            raise ValueError("mask counts and widths must be non-negative")

    @property
    def max_shift(self) -> int:
        return int(round(self.time_shift_ms * SAMPLE_RATE / 1000))


# --------------------------------------------------------------------------
# WAV I/O

def load_wav(path) -> AudioClip:
    """Read a 16 kHz mono PCM16 WAV file, scaling samples by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            if channels != 1 or width != 2 or rate != SAMPLE_RATE:
                raise UnsupportedFormat(
                    f"{path}: need mono 16-bit PCM at {SAMPLE_RATE} Hz, "
                    f"got {channels} ch, {8 * width} bit, {rate} Hz")
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormat(f"{path}: {msg}") from exc
        raise CorruptFile(f"{path}: {msg}") from exc
    except (EOFError, struct.error) as exc:
        raise CorruptFile(f"{path}: truncated header") from exc
    if len(raw) != 2 * n_frames or n_frames == 0:
        raise CorruptFile(f"{path}: expected {n_frames} frames, found {len(raw) // 2}")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float32) / 32768.0, SAMPLE_RATE)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples.astype(np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.astype("<i2").tobytes())


# --------------------------------------------------------------------------
# MFCC

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=8)
def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Triangular filters (n_mel, fft_size//2 + 1) with mel-spaced corners."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mel + 2))
    freqs = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate / cfg.fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


@functools.lru_cache(maxsize=8)
def _hann(n: int) -> np.ndarray:
    # periodic Hann
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames(n_samples: int, cfg: MfccConfig = MfccConfig()) -> int:
    if n_samples < cfg.window:
        raise TooShort(f"{n_samples} samples is shorter than one {cfg.window}-sample window")
    return 1 + (n_samples - cfg.window) // cfg.hop


def compute_mfcc(clip: AudioClip, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """MFCC matrix of shape (n_mfcc, T), T = 1 + (len - window) // hop."""
    x = np.asarray(clip.samples, dtype=np.float64)
    t = n_frames(x.size, cfg)
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window)[::cfg.hop][:t]
    spec = np.fft.rfft(frames * _hann(cfg.window), n=cfg.fft_size, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    logmel = np.log(power @ mel_filterbank(cfg).T + cfg.log_floor)
    ceps = dct(logmel, type=2, axis=1, norm="ortho")[:, :cfg.n_mfcc]
    return np.ascontiguousarray(ceps.T, dtype=np.float32)


def normalize_features(f: np.ndarray, min_std: float = 1e-5) -> np.ndarray:
    """Per-channel standardization across time (population std, clamped)."""
    f64 = np.asarray(f, dtype=np.float64)
    mean = f64.mean(axis=1, keepdims=True)
    std = np.maximum(f64.std(axis=1, keepdims=True), min_std)
    return ((f64 - mean) / std).astype(np.float32)


# --------------------------------------------------------------------------
# waveform augmentations

def shift_samples(samples: np.ndarray, shift: int) -> np.ndarray:
    """Delay (shift > 0) or advance (shift < 0) with zero fill."""
    out = np.zeros_like(samples)
    n = samples.size
    if shift >= n or -shift >= n:
        return out
    if shift > 0:
        out[shift:] = samples[:n - shift]
    elif shift < 0:
        out[:n + shift] = samples[-shift:]
    else:
        out[:] = samples
    return out


def time_shift(clip: AudioClip, rng: np.random.Generator,
               cfg: AugmentConfig = AugmentConfig()) -> AudioClip:
    shift = int(rng.integers(-cfg.max_shift, cfg.max_shift + 1))
    return AudioClip(shift_samples(clip.samples, shift), clip.sample_rate)


def white_noise(n: int, level_db: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise rescaled so its RMS is exactly ``level_db`` dBFS."""
    noise = rng.standard_normal(n)
    rms = np.sqrt(np.mean(noise ** 2))
    return noise * (10.0 ** (level_db / 20.0) / max(rms, 1e-12))


def add_white_noise(clip: AudioClip, rng: np.random.Generator,
                    cfg: AugmentConfig = AugmentConfig()) -> AudioClip:
    if rng.random() >= cfg.noise_prob:
        return clip
    level = rng.uniform(cfg.noise_db_min, cfg.noise_db_max)
    noisy = clip.samples + white_noise(clip.samples.size, level, rng)
    return AudioClip(np.clip(noisy, -1.0, 1.0), clip.sample_rate)


# --------------------------------------------------------------------------
# spectrogram augmentations

def mask_time(f: np.ndarray, start: int, width: int) -> np.ndarray:
    out = f.copy()
    out[:, start:start + width] = 0
    return out


def mask_channels(f: np.ndarray, start: int, height: int) -> np.ndarray:
    out = f.copy()
    out[start:start + height, :] = 0
    return out


def mask_rect(f: np.ndarray, c0: int, t0: int, height: int, width: int) -> np.ndarray:
    out = f.copy()
    out[c0:c0 + height, t0:t0 + width] = 0
    return out


def _span(rng, size, max_width):
    width = min(int(rng.integers(0, max_width + 1)), size)
    start = int(rng.integers(0, size - width + 1))
    return start, width


def spec_augment(f: np.ndarray, rng: np.random.Generator,
                 cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Zero ``specaug_time_masks`` time spans and ``specaug_freq_masks`` channel spans."""
    out = f.copy()
    channels, frames = out.shape
    for _ in range(cfg.specaug_time_masks):
        start, width = _span(rng, frames, cfg.specaug_time_width)
        out[:, start:start + width] = 0
    for _ in range(cfg.specaug_freq_masks):
        start, height = _span(rng, channels, cfg.specaug_freq_width)
        out[start:start + height, :] = 0
    return out


def spec_cutout(f: np.ndarray, rng: np.random.Generator,
                cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    out = f.copy()
    channels, frames = out.shape
    for _ in range(cfg.speccutout_rects):
        t0, width = _span(rng, frames, cfg.specaug_time_width)
        c0, height = _span(rng, channels, cfg.specaug_freq_width)
        out[c0:c0 + height, t0:t0 + width] = 0
    return out


# --------------------------------------------------------------------------
# debug dumps

def write_matrix_dump(path, values: np.ndarray, magic: bytes = FEATURE_MAGIC) -> None:
    values = np.asarray(values, dtype="<f4")
    channels, frames = values.shape
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", channels, frames))
        fh.write(np.ascontiguousarray(values).tobytes())


def read_matrix_dump(path, magic: bytes = FEATURE_MAGIC) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != magic:
        raise CorruptFile(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise CorruptFile(f"{path}: truncated header")
    channels, frames = struct.unpack_from("<II", data, 4)
    body = data[12:]
    if len(body) != 4 * channels * frames:
        raise CorruptFile(f"{path}: expected {channels}x{frames} floats")
    return np.frombuffer(body, dtype="<f4").reshape(channels, frames).astype(np.float32)
