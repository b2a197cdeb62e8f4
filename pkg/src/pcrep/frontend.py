"""Acoustic frontend: WAV ingest, log-mel analysis, and the feature file format.

The on-disk format is a small binary container (magic "PCRP") holding one
float32 feature matrix plus an optional integer label track, used both for
real log-mel features and synthetic corpora.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

MAGIC = b"PCRP"
FORMAT_VERSION = 1


class FeatureFileError(ValueError):
    """Base for feature container problems."""


class BadMagicError(FeatureFileError):
    pass


class TruncatedPayloadError(FeatureFileError):
    pass


class DimensionMismatchError(FeatureFileError):
    pass


class AudioFormatError(ValueError):
    pass


@dataclass
class FeatureMatrix:
    """frames: (N, D) float32; labels: optional (N,) ints in [0, n_classes)."""

    frames: np.ndarray
    frame_period: float = 0.01          # seconds between frames
    labels: np.ndarray | None = None
    n_classes: int = 0

    def validate(self):
        if self.frames.ndim != 2:
            raise DimensionMismatchError(f"frames must be 2-D, got {self.frames.ndim}-D")
        if self.frames.shape[0] == 0 or self.frames.shape[1] == 0:
            raise DimensionMismatchError("frames must be non-empty in both axes")
        if self.labels is not None:
            if self.n_classes <= 0:
                raise DimensionMismatchError("label track requires n_classes > 0")
            if len(self.labels) != len(self.frames):
                raise DimensionMismatchError("label track length != frame count")
            if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
                raise DimensionMismatchError("label values outside [0, n_classes)")


def write_features(path, mat: FeatureMatrix):
    """Header: magic, version u16, D u16, N u32, frame period in microseconds
    u32, label class count u16 (0 = no labels); then N*D little-endian f32
    row-major, then N u16 labels when present."""
    mat.validate()
    n, d = mat.frames.shape
    n_classes = mat.n_classes if mat.labels is not None else 0
    period_us = round(mat.frame_period * 1e6)
    header = MAGIC + struct.pack("<HHIIH", FORMAT_VERSION, d, n, period_us, n_classes)
    body = np.ascontiguousarray(mat.frames, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)
        if mat.labels is not None:
            fh.write(np.ascontiguousarray(mat.labels, dtype="<u2").tobytes())


def read_features(path, expected_dim: int | None = None) -> FeatureMatrix:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a feature file (bad magic)")
    header_len = 4 + struct.calcsize("<HHIIH")
    if len(blob) < header_len:
        raise TruncatedPayloadError(f"{path}: header cut short")
    version, d, n, period_us, n_classes = struct.unpack("<HHIIH", blob[4:header_len])
    if version != FORMAT_VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}")
    if d == 0 or n == 0:
        raise DimensionMismatchError(f"{path}: empty dimensions N={n} D={d}")
    if expected_dim is not None and d != expected_dim:
        raise DimensionMismatchError(f"{path}: has D={d}, expected D={expected_dim}")
    need = header_len + n * d * 4 + (n * 2 if n_classes else 0)
    if len(blob) < need:
        raise TruncatedPayloadError(f"{path}: payload is {len(blob)} bytes, need {need}")
    off = header_len
    frames = np.frombuffer(blob, dtype="<f4", count=n * d, offset=off).reshape(n, d).copy()
    labels = None
    if n_classes:
        off += n * d * 4
        labels = np.frombuffer(blob, dtype="<u2", count=n, offset=off).astype(np.int64)
        if labels.max() >= n_classes:
            raise DimensionMismatchError(f"{path}: label values exceed class count {n_classes}")
    return FeatureMatrix(frames=frames, frame_period=period_us / 1e6,
                         labels=labels, n_classes=n_classes)


def load_wav(path) -> tuple[int, np.ndarray]:
    """Accepts 16-bit PCM mono and 32-bit float mono; everything else is an error.
    Returns (sample_rate, float64 samples scaled to roughly [-1, 1])."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: need mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        return rate, data.astype(np.float64) / 32768.0
    if data.dtype == np.float32:
        return rate, data.astype(np.float64)
    raise AudioFormatError(
        f"{path}: unsupported sample encoding {data.dtype}; need PCM16 or float32")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass
class MelConfig:
    sample_rate: int = 16000
    window: int = 400        # 25 ms
    hop: int = 160           # 10 ms
    n_fft: int = 512
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10

    def validate(self):
        if self.window > self.n_fft:
            raise ValueError("window longer than FFT size")
        if self.hop < 1 or self.window < 2:
            raise ValueError("bad framing")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError("mel band edges out of range")

    @property
    def frame_period(self) -> float:
        return self.hop / self.sample_rate


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """(n_mels, n_fft//2 + 1) triangular filters with edges equally spaced on
    the mel scale between fmin and fmax."""
    edges_mel = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    edges_hz = mel_to_hz(edges_mel)
    bin_hz = np.arange(cfg.n_fft // 2 + 1) * (cfg.sample_rate / cfg.n_fft)
    fb = np.zeros((cfg.n_mels, len(bin_hz)))
    for m in range(cfg.n_mels):
        lo, mid, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        rise = (bin_hz - lo) / (mid - lo)
        fall = (hi - bin_hz) / (hi - mid)
        fb[m] = np.clip(np.minimum(rise, fall), 0.0, None)
    return fb


def frame_count(n_samples: int, window: int, hop: int) -> int:
    """No padding: frames are fully inside the signal."""
    if n_samples < window:
        return 0
    return 1 + (n_samples - window) // hop


def log_mel(samples: np.ndarray, cfg: MelConfig | None = None) -> FeatureMatrix:
    """Hann-windowed power spectra through the mel filterbank, natural log
    with an additive floor. Silence maps every cell to log(log_floor)."""
    if cfg is None:
        cfg = MelConfig()
    cfg.validate()
    samples = np.asarray(samples, dtype=np.float64)
    n = frame_count(len(samples), cfg.window, cfg.hop)
    if n == 0:
        raise AudioFormatError(
            f"signal of {len(samples)} samples is shorter than one window ({cfg.window})")
    idx = np.arange(cfg.window)[None, :] + cfg.hop * np.arange(n)[:, None]
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(cfg.window) / cfg.window)
    windowed = samples[idx] * hann
    spec = np.fft.rfft(windowed, n=cfg.n_fft, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    mel_energy = power @ mel_filterbank(cfg).T
    feats = np.log(mel_energy + cfg.log_floor).astype(np.float32)
    return FeatureMatrix(frames=feats, frame_period=cfg.frame_period)
