"""Training objectives: future-frame prediction plus past reconstruction.

The future loss is an L1 over frames predicted n steps ahead. The
reconstruction term picks anchor frames, seeds the auxiliary stack with the
encoder's states at each anchor, and replays a window of s-frames-ago inputs;
gradients flow through the seeds back into the main stack. The optimizer
consumes per-frame-per-dimension means; raw sums are kept for logging.

All indices here are 0-based: an utterance is frames[0..N-1] and the state
h[t] is taken after consuming frames[t].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .model import EncoderParams, HiddenStates, project, roll_stack


class ObjectiveError(ValueError):
    pass


@dataclass
class ObjectiveConfig:
    """n: prediction distance; s: how far back windows start; l: window length;
    p_anchor: per-frame anchor probability; lam: reconstruction weight."""

    n: int = 5
    s: int = 7
    l: int = 3
    p_anchor: float = 0.15
    lam: float = 0.1
    seed_depth: str = "per_layer"   # or "top": only aux layer 1 sees the representation

    def validate(self):
        if self.n < 1 or self.s < 1 or self.l < 1:
            raise ObjectiveError("n, s, l must be positive")
        if not 0.0 <= self.p_anchor <= 1.0:
            raise ObjectiveError("p_anchor must lie in [0, 1]")
        if self.lam < 0.0:
            raise ObjectiveError("lam must be nonnegative")
        if self.seed_depth not in ("per_layer", "top"):
            raise ObjectiveError(f"unknown seed_depth {self.seed_depth!r}")


@dataclass
class AnchorSet:
    """Sorted 0-based anchor positions for one utterance."""

    positions: np.ndarray

    @property
    def m(self) -> int:
        return len(self.positions)


@dataclass
class LossBreakdown:
    """lf/lr/lm are per-frame-per-dim means; lf_sum/lr_sum are raw L1 totals.
    lm == lf + lam * lr holds exactly in evaluation precision."""

    lf: float
    lr: float
    lm: float
    lf_sum: float
    lr_sum: float
    anchors: int
    frames: int


def eligible_anchor_mask(n_frames: int, cfg: ObjectiveConfig) -> np.ndarray:
    """A frame a can anchor iff its window exists (a - s >= 0) and every
    window target stays inside the utterance (a - s + l - 1 + n <= N - 1)."""
    a = np.arange(n_frames)
    return (a - cfg.s >= 0) & (a - cfg.s + cfg.l - 1 + cfg.n <= n_frames - 1)


def sample_anchors(n_frames: int, cfg: ObjectiveConfig, rng: np.random.Generator) -> AnchorSet:
    """Each eligible frame is selected independently with probability p_anchor.

    One draw per frame regardless of eligibility, so the stream consumed is a
    pure function of n_frames.
    """
    cfg.validate()
    draws = rng.random(n_frames) < cfg.p_anchor
    mask = eligible_anchor_mask(n_frames, cfg)
    return AnchorSet(positions=np.nonzero(draws & mask)[0])


def validation_anchors(n_frames: int, cfg: ObjectiveConfig) -> AnchorSet:
    """Deterministic stand-in for sampling: every ceil(1/p)-th eligible frame."""
    cfg.validate()
    eligible = np.nonzero(eligible_anchor_mask(n_frames, cfg))[0]
    if cfg.p_anchor <= 0.0:
        return AnchorSet(positions=eligible[:0])
    stride = math.ceil(1.0 / cfg.p_anchor)
    return AnchorSet(positions=eligible[::stride])


def window_indices(anchor: int, cfg: ObjectiveConfig):
    """(source_start, target_start, length) of the past window at an anchor.
    Sources are frames[src : src + l], targets frames[src + n : src + n + l]."""
    src = anchor - cfg.s
    return src, src + cfg.n, cfg.l


def compute_lf(predictions, targets):
    """L1 future loss over already-aligned rows: predictions[t] vs targets[t].

    Returns (raw_sum, mean) where mean divides by rows * dim. Both are tape
    nodes when the inputs are; floats otherwise.
    """
    pshape = predictions.shape if not isinstance(predictions, nc.Tensor) else predictions.data.shape
    tshape = np.asarray(targets).shape
    if pshape != tshape:
        raise ObjectiveError(f"prediction shape {pshape} != target shape {tshape}")
    if pshape[0] == 0:
        raise ObjectiveError("no predictable frames")
    raw = nc.total(nc.absolute(predictions - targets))
    mean = raw * (1.0 / (pshape[0] * pshape[1]))
    if isinstance(raw, nc.Tensor):
        return raw, mean
    return float(raw), float(mean)


def _flat_index(t, b, batch):
    return t * batch + b


def _roll_aux_windows(frames_flat, h_layers_flat, pairs, params, cfg, batch):
    """Reconstruction loss over pooled anchors.

    frames_flat: (T*B, D) constants laid out row t*B+b. h_layers_flat: one
    (T*B, H) block per main layer (tape nodes during training). pairs: list of
    (b, a) anchors, already validated eligible w.r.t. true lengths.
    Returns (raw_sum, mean_per_frame_dim) or None when there are no anchors.
    """
    m = len(pairs)
    if m == 0:
        return None
    bs = np.array([b for b, _ in pairs])
    anchors = np.array([a for _, a in pairs])
    seed_idx = anchors * batch + bs

    n_layers = len(params.aux)
    hidden = params.aux[0].hidden_dim
    if cfg.seed_depth == "per_layer":
        seeds = [nc.take_rows(h_layers_flat[k], seed_idx, unique=True) for k in range(n_layers)]
    else:
        top = nc.take_rows(h_layers_flat[-1], seed_idx, unique=True)
        zeros = np.zeros((m, hidden), dtype=frames_flat.dtype)
        seeds = [top] + [zeros.copy() for _ in range(n_layers - 1)]

    src = anchors - cfg.s
    step_inputs = [frames_flat[(src + k) * batch + bs] for k in range(cfg.l)]
    per_layer = roll_stack(params.aux, step_inputs, seeds)
    hidden_rows = nc.concat_rows(per_layer[-1])              # (l*m, H), row k*m + j
    preds = project(params.w_aux, hidden_rows, params.w_aux_bias)
    tgt = np.concatenate([frames_flat[(src + k + cfg.n) * batch + bs] for k in range(cfg.l)], axis=0)
    raw = nc.total(nc.absolute(preds - tgt))
    mean = raw * (1.0 / (m * cfg.l * frames_flat.shape[1]))
    return raw, mean


def batch_objective(params: EncoderParams, frames: np.ndarray, lengths: np.ndarray,
                    cfg: ObjectiveConfig, anchors_per_utt: list | None):
    """Loss graph (or plain values) for one padded batch.

    frames: (B, T, D) already normalized, rows past lengths[b] are padding.
    anchors_per_utt: one AnchorSet per utterance, or None for the prediction
    objective. Losses only ever read gathered valid rows, so padding width
    cannot change any value. Returns (loss, LossBreakdown-of-scalars) where
    scalars are tape nodes in training and floats in evaluation.
    """
    cfg.validate()
    b_sz, t_max, dim = frames.shape
    n = cfg.n

    frames_flat = frames.transpose(1, 0, 2).reshape(t_max * b_sz, dim)
    steps = [frames[:, t, :] for t in range(t_max)]
    per_layer = roll_stack(params.main, steps)
    h_layers_flat = [nc.concat_rows(outs) for outs in per_layer]

    pred_idx, tgt_idx = [], []
    for b in range(b_sz):
        valid = max(0, int(lengths[b]) - n)
        ts = np.arange(valid)
        pred_idx.append(ts * b_sz + b)
        tgt_idx.append((ts + n) * b_sz + b)
    pred_idx = np.concatenate(pred_idx)
    tgt_idx = np.concatenate(tgt_idx)
    if len(pred_idx) == 0:
        raise ObjectiveError(f"no predictable frames in batch (n={n})")

    h_rows = nc.take_rows(h_layers_flat[-1], pred_idx, unique=True)
    preds = project(params.w, h_rows, params.w_bias)
    targets = frames_flat[tgt_idx]
    lf_raw, lf_mean = compute_lf(preds, targets)

    pairs = []
    if anchors_per_utt is not None:
        for b, aset in enumerate(anchors_per_utt):
            for a in aset.positions:
                if not (a - cfg.s >= 0 and a - cfg.s + cfg.l - 1 + n <= int(lengths[b]) - 1):
                    raise ObjectiveError(f"anchor {a} ineligible for utterance of length {lengths[b]}")
                pairs.append((b, int(a)))

    aux = _roll_aux_windows(frames_flat, h_layers_flat, pairs, params, cfg, b_sz) if pairs else None
    if aux is None:
        lr_raw, lr_mean = 0.0, 0.0
        lm = lf_mean
    else:
        lr_raw, lr_mean = aux
        lm = lf_mean + cfg.lam * lr_mean

    parts = LossBreakdown(lf=lf_mean, lr=lr_mean, lm=lm,
                          lf_sum=lf_raw, lr_sum=lr_raw,
                          anchors=len(pairs), frames=len(pred_idx))
    return lm, parts


def compute_lr(frames: np.ndarray, hidden: HiddenStates, anchors: AnchorSet,
               params: EncoderParams, cfg: ObjectiveConfig) -> float:
    """Reconstruction loss for one utterance: mean over anchors of the
    per-frame-per-dim window loss. 0 when the anchor set is empty."""
    cfg.validate()
    n_frames = frames.shape[0]
    ok = eligible_anchor_mask(n_frames, cfg)
    for a in anchors.positions:
        if not ok[a]:
            raise ObjectiveError(f"anchor {a} ineligible for N={n_frames}")
    if anchors.m == 0:
        return 0.0
    pairs = [(0, int(a)) for a in anchors.positions]
    out = _roll_aux_windows(frames, [h for h in hidden.layers], pairs, params, cfg, batch=1)
    _raw, mean = out
    return mean.item() if isinstance(mean, nc.Tensor) else float(mean)


def compute_lm(frames: np.ndarray, params: EncoderParams, cfg: ObjectiveConfig,
               rng: np.random.Generator | None = None,
               anchors: AnchorSet | None = None) -> LossBreakdown:
    """Full objective for one utterance (values only, no gradients).

    Anchors come from rng sampling unless given explicitly; pass an empty
    AnchorSet to evaluate the prediction term alone.
    """
    n_frames = frames.shape[0]
    if n_frames <= cfg.n:
        raise ObjectiveError(f"need more than n={cfg.n} frames, got {n_frames}")
    if anchors is None:
        if rng is None:
            raise ObjectiveError("need an rng or an explicit anchor set")
        anchors = sample_anchors(n_frames, cfg, rng)
    _lm, parts = batch_objective(
        params, frames[None, :, :], np.array([n_frames]), cfg, [anchors])

    def val(x):
        return x.item() if isinstance(x, nc.Tensor) else float(x)

    return LossBreakdown(lf=val(parts.lf), lr=val(parts.lr), lm=val(parts.lm),
                         lf_sum=val(parts.lf_sum), lr_sum=val(parts.lr_sum),
                         anchors=parts.anchors, frames=parts.frames)
