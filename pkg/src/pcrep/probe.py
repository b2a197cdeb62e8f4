"""Frozen-feature probing: a linear softmax classifier trained on frame
features against (optionally time-shifted) frame labels, reported as frame
error rate.

The probe is deliberately weak. Zero-initialized weights, full-batch
gradients, no regularization: whatever accuracy it reaches is information
that sits linearly accessible in the features, not modeling power of the
probe itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .numcore import adam_step, init_adam


class ProbeError(ValueError):
    pass


@dataclass
class ProbeConfig:
    epochs: int = 200
    lr: float = 1e-2

    def validate(self):
        if self.epochs < 0:
            raise ProbeError("epochs must be >= 0")
        if self.lr <= 0:
            raise ProbeError("lr must be positive")


def shifted_pairs(features: np.ndarray, labels: np.ndarray, shift: int):
    """Pair the feature at frame t with the label at frame t + shift.

    Negative shifts probe for past labels, positive for future ones. Returns
    (features view, labels view) trimmed to the overlap.
    """
    n = len(labels)
    if len(features) != n:
        raise ProbeError(f"{len(features)} feature rows vs {n} labels")
    if abs(shift) >= n:
        raise ProbeError(f"|shift|={abs(shift)} leaves no frames of {n}")
    if shift >= 0:
        return features[:n - shift], labels[shift:]
    return features[-shift:], labels[:n + shift]


def corpus_pairs(utterances: list, shift: int):
    """Concatenate shifted (feature, label) pairs over [(features, labels)]."""
    if not utterances:
        raise ProbeError("no utterances to probe")
    xs, ys = [], []
    for feats, labels in utterances:
        fx, ly = shifted_pairs(feats, labels, shift)
        xs.append(fx)
        ys.append(ly)
    return np.concatenate(xs), np.concatenate(ys)


def apply_collapse(labels: np.ndarray, mapping: dict) -> np.ndarray:
    """Map every label id through mapping; ids outside its domain are an error."""
    labels = np.asarray(labels)
    missing = set(np.unique(labels).tolist()) - set(mapping)
    if missing:
        raise ProbeError(f"labels {sorted(missing)} absent from collapse map")
    lut = np.zeros(max(mapping) + 1, dtype=np.int64)
    for src, dst in mapping.items():
        lut[src] = dst
    return lut[labels]


def read_collapse_map(path) -> dict:
    """Whitespace pairs, one 'from to' per line. '#' starts a comment."""
    mapping = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 2:
                raise ProbeError(f"{path}:{ln}: expected two integers, got {body!r}")
            try:
                src, dst = int(parts[0]), int(parts[1])
            except ValueError:
                raise ProbeError(f"{path}:{ln}: expected two integers, got {body!r}")
            if src in mapping:
                raise ProbeError(f"{path}:{ln}: duplicate source id {src}")
            mapping[src] = dst
    if not mapping:
        raise ProbeError(f"{path}: empty collapse map")
    return mapping


def evaluate_fer(predicted: np.ndarray, reference: np.ndarray,
                 collapse: dict | None = None) -> float:
    """Fraction of frames whose (optionally collapsed) labels disagree."""
    predicted = np.asarray(predicted)
    reference = np.asarray(reference)
    if predicted.shape != reference.shape:
        raise ProbeError(f"shape mismatch {predicted.shape} vs {reference.shape}")
    if predicted.size == 0:
        raise ProbeError("no frames to score")
    if collapse is not None:
        predicted = apply_collapse(predicted, collapse)
        reference = apply_collapse(reference, collapse)
    return float(np.mean(predicted != reference))


@dataclass
class ProbeResult:
    weights: np.ndarray     # (classes, feature_dim) float64
    bias: np.ndarray        # (classes,)
    val_fer: float          # of the snapshot below
    epoch: int              # 0 means the zero initialization won
    history: list = field(repr=False, default_factory=list)


def probe_predict(weights: np.ndarray, bias: np.ndarray, x: np.ndarray) -> np.ndarray:
    """argmax of the affine scores; ties go to the lowest class id."""
    scores = x.astype(np.float64) @ weights.T + bias
    return np.argmax(scores, axis=1)


def _ce_and_grads(w, b, x, y):
    logits = x @ w.T + b
    lse = logsumexp(logits, axis=1)
    n = len(y)
    ce = float(np.mean(lse - logits[np.arange(n), y]))
    p = np.exp(logits - lse[:, None])
    p[np.arange(n), y] -= 1.0
    p /= n
    return ce, p.T @ x, p.sum(axis=0)


def fit_probe(train_x: np.ndarray, train_y: np.ndarray,
              val_x: np.ndarray, val_y: np.ndarray,
              n_classes: int, cfg: ProbeConfig | None = None) -> ProbeResult:
    """Full-batch softmax regression in float64, snapshotting the epoch with
    the lowest validation error (earliest epoch wins ties)."""
    cfg = cfg or ProbeConfig()
    cfg.validate()
    if train_y.min() < 0 or train_y.max() >= n_classes:
        raise ProbeError(f"train labels outside [0, {n_classes})")
    if val_y.min() < 0 or val_y.max() >= n_classes:
        raise ProbeError(f"val labels outside [0, {n_classes})")
    x = train_x.astype(np.float64)
    xv = val_x.astype(np.float64)
    y = np.asarray(train_y, dtype=np.int64)
    w = np.zeros((n_classes, x.shape[1]))
    b = np.zeros(n_classes)
    opt = init_adam([w, b], lr=cfg.lr)

    best_fer = evaluate_fer(probe_predict(w, b, xv), val_y)
    best_w, best_b, best_epoch = w.copy(), b.copy(), 0
    history = [best_fer]
    for epoch in range(cfg.epochs):
        _ce, gw, gb = _ce_and_grads(w, b, x, y)
        adam_step(opt, [w, b], [gw, gb])
        fer = evaluate_fer(probe_predict(w, b, xv), val_y)
        history.append(fer)
        if fer < best_fer:
            best_fer = fer
            best_w, best_b, best_epoch = w.copy(), b.copy(), epoch + 1
    return ProbeResult(weights=best_w, bias=best_b, val_fer=best_fer,
                       epoch=best_epoch, history=history)


def probe_shift_grid(train_utts: list, val_utts: list, n_classes: int,
                     shifts, cfg: ProbeConfig | None = None) -> dict:
    """One probe per shift; returns {shift: ProbeResult}.

    utterance lists hold (features, labels) pairs; the same frozen features
    serve every shift, only the label alignment moves.
    """
    out = {}
    for shift in shifts:
        tx, ty = corpus_pairs(train_utts, shift)
        vx, vy = corpus_pairs(val_utts, shift)
        out[int(shift)] = fit_probe(tx, ty, vx, vy, n_classes, cfg)
    return out


def write_fer_report(path, rows: dict, shifts):
    """CSV with one row per feature source, FER as percentages, one decimal.

    rows: {source name: {shift: fer}}. Missing cells render as '-'.
    """
    shifts = [int(s) for s in shifts]
    with open(path, "w") as fh:
        fh.write("source," + ",".join(str(s) for s in shifts) + "\n")
        for source in rows:
            cells = []
            for s in shifts:
                fer = rows[source].get(s)
                cells.append("-" if fer is None else f"{100.0 * fer:.1f}")
            fh.write(source + "," + ",".join(cells) + "\n")
