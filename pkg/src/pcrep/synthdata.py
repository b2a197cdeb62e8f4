"""Synthetic segmental corpus: a Markov chain over classes, geometric segment
durations, and Gaussian frames around linearly separable class means.

Class means sit at scaled one-hot corners, so a linear probe on clean frames
is perfect by construction. Transitions prefer one successor class, which
keeps the next segment partially predictable; labels far apart are close to
independent. Per-utterance generators are derived from (seed, index), so any
utterance can be regenerated alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .frontend import FeatureMatrix, read_features, write_features


class SynthError(ValueError):
    pass


@dataclass
class SynthConfig:
    classes: int = 8
    dim: int = 20
    mean_duration: float = 7.0
    mean_scale: float = 1.0
    noise_scale: float = 1.0
    successor_bias: float = 0.5     # probability mass on the preferred next class
    min_len: int = 60
    max_len: int = 120
    seed: int = 0
    transition: np.ndarray | None = None   # optional override, zero diagonal

    def validate(self):
        if self.classes < 2:
            raise SynthError("need at least two classes")
        if self.dim < self.classes:
            raise SynthError("dim must be >= classes for one-hot corners")
        if self.mean_duration < 1.0:
            raise SynthError("mean_duration must be >= 1")
        if not 0 < self.min_len <= self.max_len:
            raise SynthError("bad utterance length range")
        if self.transition is not None:
            t = self.transition
            if t.shape != (self.classes, self.classes):
                raise SynthError("transition matrix shape mismatch")
            if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-9):
                raise SynthError("transition rows must be a distribution")
            if np.any(np.diag(t) != 0):
                raise SynthError("self-transitions belong to the duration process, "
                                 "diagonal must be zero")


def default_transition(classes: int, successor_bias: float) -> np.ndarray:
    """Zero diagonal; each class puts successor_bias on (c+1) mod C and
    spreads the rest uniformly over the remaining classes."""
    if classes > 2 and not 0.0 <= successor_bias <= 1.0:
        raise SynthError("successor_bias must lie in [0, 1]")
    t = np.zeros((classes, classes))
    rest = (1.0 - successor_bias) / (classes - 2) if classes > 2 else 0.0
    for c in range(classes):
        t[c, :] = rest
        t[c, c] = 0.0
        t[c, (c + 1) % classes] = successor_bias if classes > 2 else 1.0
    return t


def class_means(cfg: SynthConfig) -> np.ndarray:
    means = np.zeros((cfg.classes, cfg.dim), dtype=np.float64)
    for c in range(cfg.classes):
        means[c, c] = cfg.mean_scale
    return means


def generate_labels(cfg: SynthConfig, rng: np.random.Generator, length: int) -> np.ndarray:
    """Segment labels: geometric durations (support 1, 2, ...; mean = mean_duration),
    successor sampled from the transition row when a segment ends."""
    trans = cfg.transition if cfg.transition is not None \
        else default_transition(cfg.classes, cfg.successor_bias)
    labels = np.empty(length, dtype=np.int64)
    pos = 0
    c = int(rng.integers(cfg.classes))
    p_end = 1.0 / cfg.mean_duration
    while pos < length:
        dur = int(rng.geometric(p_end))
        take = min(dur, length - pos)
        labels[pos:pos + take] = c
        pos += take
        c = int(rng.choice(cfg.classes, p=trans[c]))
    return labels


def generate_utterance(cfg: SynthConfig, rng: np.random.Generator,
                       length: int) -> FeatureMatrix:
    labels = generate_labels(cfg, rng, length)
    means = class_means(cfg)
    frames = means[labels] + cfg.noise_scale * rng.standard_normal((length, cfg.dim))
    return FeatureMatrix(frames=frames.astype(np.float32), frame_period=0.01,
                         labels=labels, n_classes=cfg.classes)


def generate_corpus(cfg: SynthConfig, count: int) -> list:
    """[(name, FeatureMatrix)] with per-utterance streams derived from
    (cfg.seed, index); regenerating with the same config is bit-identical."""
    cfg.validate()
    out = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), i]))
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        out.append((f"utt{i:05d}", generate_utterance(cfg, rng, length)))
    return out


def write_corpus(corpus: list, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, mat in corpus:
        write_features(out_dir / f"{name}.pcf", mat)


def load_corpus(corpus_dir, expected_dim: int | None = None) -> list:
    """Reads every *.pcf under a directory in sorted name order."""
    corpus_dir = Path(corpus_dir)
    paths = sorted(corpus_dir.glob("*.pcf"))
    if not paths:
        raise FileNotFoundError(f"no .pcf feature files in {corpus_dir}")
    return [(p.stem, read_features(p, expected_dim=expected_dim)) for p in paths]
