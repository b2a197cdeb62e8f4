"""Training loop: length-bucketed batching, Adam over the tape gradients,
deterministic validation, metrics CSV, and resumable checkpoints.

Determinism contract: with a fixed seed and single-threaded numerics, every
run of the same corpus reproduces losses bit-identically. Batch shuffling and
per-utterance anchor streams are pure functions of (seed, epoch, utterance),
so resuming from a checkpoint replays exactly what an uninterrupted run would
have done.
"""

from __future__ import annotations

import csv
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .checkpoint import ModelState, load_checkpoint, save_checkpoint
from .model import DimensionError, ModelConfig, flatten_params, init_encoder, lift_params
from .numcore import AdamState, NonFiniteError, adam_step, init_adam, reverse_gradients
from .objectives import (LossBreakdown, ObjectiveConfig, batch_objective,
                         sample_anchors, validation_anchors)

METRICS_COLUMNS = ["epoch", "split", "L_f_sum", "L_f_mean", "L_r_mean",
                   "L_m_mean", "anchors_per_utt", "wall_seconds"]

# stream tags keep the derived generators apart
_TAG_SHUFFLE = 2
_TAG_ANCHORS = 3


class TrainerError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    objective: str = "lm"            # "lf" trains the prediction term alone
    seed: int = 0
    val_fraction: float = 0.05       # used only when no explicit validation corpus
    obj: ObjectiveConfig = field(default_factory=ObjectiveConfig)

    def validate(self):
        if self.objective not in ("lf", "lm"):
            raise TrainerError(f"objective must be lf or lm, got {self.objective!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainerError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise TrainerError("lr must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise TrainerError("val_fraction must lie in [0, 1)")
        self.obj.validate()


@dataclass
class Batch:
    frames: np.ndarray    # (B, T, D) zero-padded
    lengths: np.ndarray   # (B,) true frame counts
    names: tuple
    utt_ids: np.ndarray   # stable indices into the training corpus

    @property
    def mask(self) -> np.ndarray:
        t = np.arange(self.frames.shape[1])
        return t[None, :] < self.lengths[:, None]


def split_corpus(corpus: list, val_fraction: float):
    """Stable hash of the utterance name decides the split, so membership
    never depends on corpus order or size."""
    train, val = [], []
    for item in corpus:
        frac = (zlib.crc32(item[0].encode()) % 1_000_000) / 1_000_000
        (val if frac < val_fraction else train).append(item)
    return train, val


def norm_stats(corpus: list):
    """Per-dimension mean/std over all training frames, float32."""
    total = np.zeros(corpus[0][1].frames.shape[1], dtype=np.float64)
    total_sq = np.zeros_like(total)
    count = 0
    for _name, mat in corpus:
        f = mat.frames.astype(np.float64)
        total += f.sum(axis=0)
        total_sq += (f * f).sum(axis=0)
        count += len(f)
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), 1e-8)
    return mean.astype(np.float32), std.astype(np.float32)


def make_batches(utterances: list, batch_size: int, seed=None) -> list:
    """Bucket by length, shuffle within buckets, then shuffle batch order.

    utterances: [(utt_id, name, frames)]. Every utterance lands in exactly one
    batch. seed=None gives the deterministic sorted order used for validation.
    """
    if batch_size < 1:
        raise TrainerError("batch_size must be positive")
    if not utterances:
        raise TrainerError("no utterances to batch")
    order = list(range(len(utterances)))
    rng = None
    if seed is not None:
        rng = np.random.default_rng(seed)
        rng.shuffle(order)
    # stable sort: equal lengths keep their shuffled relative order
    order.sort(key=lambda i: len(utterances[i][2]))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        rng.shuffle(chunks)
    dim = utterances[0][2].shape[1]
    batches = []
    for chunk in chunks:
        t_max = max(len(utterances[i][2]) for i in chunk)
        frames = np.zeros((len(chunk), t_max, dim), dtype=np.float32)
        lengths = np.empty(len(chunk), dtype=np.int64)
        names, ids = [], []
        for row, i in enumerate(chunk):
            utt_id, name, f = utterances[i]
            frames[row, :len(f)] = f
            lengths[row] = len(f)
            names.append(name)
            ids.append(utt_id)
        batches.append(Batch(frames=frames, lengths=lengths,
                             names=tuple(names), utt_ids=np.array(ids)))
    return batches


def _anchor_rng(seed: int, epoch: int, utt_id: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), _TAG_ANCHORS, int(epoch), int(utt_id)]))


def _epoch_shuffle_seed(seed: int, epoch: int):
    return np.random.SeedSequence([int(seed), _TAG_SHUFFLE, int(epoch)])


@dataclass
class _Accum:
    lf_raw: float = 0.0
    lr_raw: float = 0.0
    pred_frames: int = 0
    anchors: int = 0
    utts: int = 0

    def add(self, parts: LossBreakdown, n_utts: int, dim: int, window: int):
        def val(x):
            return x.item() if isinstance(x, nc.Tensor) else float(x)
        self.lf_raw += val(parts.lf_sum)
        self.lr_raw += val(parts.lr_sum)
        self.pred_frames += parts.frames
        self.anchors += parts.anchors
        self.utts += n_utts
        self._dim = dim
        self._window = window

    def breakdown(self, lam: float) -> LossBreakdown:
        lf = self.lf_raw / (self.pred_frames * self._dim)
        lr = self.lr_raw / (self.anchors * self._window * self._dim) if self.anchors else 0.0
        return LossBreakdown(lf=lf, lr=lr, lm=lf + lam * lr,
                             lf_sum=self.lf_raw, lr_sum=self.lr_raw,
                             anchors=self.anchors, frames=self.pred_frames)


def train_epoch(state: ModelState, batches: list, cfg: TrainConfig,
                opt: AdamState, epoch: int) -> LossBreakdown:
    """One pass over the batches, updating parameters in place.

    Epoch means are frame-weighted for the prediction term and anchor-weighted
    for the reconstruction term. A non-finite loss aborts, naming the batch.
    """
    cfg.validate()
    dim = state.model_cfg.dim
    flat = flatten_params(state.params)
    # lam == 0 takes the same graph-free path as the pure prediction
    # objective, so the two produce bit-identical trajectories
    use_aux = cfg.objective == "lm" and cfg.obj.lam != 0.0
    acc = _Accum()
    for bi, batch in enumerate(batches):
        anchors = None
        if use_aux:
            anchors = [
                sample_anchors(int(n), cfg.obj, _anchor_rng(cfg.seed, epoch, uid))
                for uid, n in zip(batch.utt_ids, batch.lengths)
            ]
        tape = nc.Tape(np.float32)
        lifted, nodes = lift_params(tape, state.params)
        loss, parts = batch_objective(lifted, batch.frames, batch.lengths,
                                      cfg.obj, anchors)
        if not np.isfinite(loss.data):
            raise NonFiniteError(
                f"non-finite loss at epoch {epoch} batch {bi} (utterances {batch.names})")
        grads = reverse_gradients(tape, loss)
        adam_step(opt, flat, [grads[n] for n in nodes])
        acc.add(parts, len(batch.names), dim, cfg.obj.l)
    return acc.breakdown(cfg.obj.lam)


def validate(state: ModelState, utterances: list, cfg: TrainConfig) -> LossBreakdown:
    """Loss over a corpus with frozen parameters and deterministic anchors
    (every ceil(1/p)-th eligible frame). Reconstruction is always reported,
    whatever objective trained the model."""
    if not utterances:
        raise TrainerError("empty validation corpus")
    batches = make_batches(utterances, cfg.batch_size, seed=None)
    acc = _Accum()
    for batch in batches:
        anchors = [validation_anchors(int(n), cfg.obj) for n in batch.lengths]
        _loss, parts = batch_objective(state.params, batch.frames, batch.lengths,
                                       cfg.obj, anchors)
        acc.add(parts, len(batch.names), state.model_cfg.dim, cfg.obj.l)
    return acc.breakdown(cfg.obj.lam)


def _normalized(corpus: list, mean: np.ndarray, std: np.ndarray) -> list:
    return [(i, name, (mat.frames - mean) / std)
            for i, (name, mat) in enumerate(corpus)]


def _format_row(epoch: int, split: str, parts: LossBreakdown, n_utts: int,
                wall: float) -> dict:
    return {
        "epoch": epoch,
        "split": split,
        "L_f_sum": repr(float(parts.lf_sum)),
        "L_f_mean": repr(float(parts.lf)),
        "L_r_mean": repr(float(parts.lr)),
        "L_m_mean": repr(float(parts.lm)),
        "anchors_per_utt": repr(parts.anchors / n_utts),
        "wall_seconds": f"{wall:.3f}",
    }


@dataclass
class PretrainResult:
    state: ModelState
    best_val_lf: float
    final_val: LossBreakdown
    metrics_path: Path
    best_path: Path
    last_path: Path


def pretrain(train_corpus: list, val_corpus: list | None, model_cfg: ModelConfig,
             cfg: TrainConfig, out_dir, resume: bool = False,
             log=None) -> PretrainResult:
    """Full run: normalization stats, epochs of train/validate, metrics.csv,
    best (lowest validation L_f) and last checkpoints.

    val_corpus=None splits train_corpus by stable name hash. resume=True picks
    up from out_dir/last.pckp and replays the remaining epochs exactly as an
    uninterrupted run would.
    """
    cfg.validate()
    model_cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    best_path = out_dir / "best.pckp"
    last_path = out_dir / "last.pckp"

    if val_corpus is None:
        train_corpus, val_corpus = split_corpus(train_corpus, cfg.val_fraction)
    if not train_corpus:
        raise TrainerError("empty training corpus")
    if not val_corpus:
        raise TrainerError("empty validation corpus (adjust val_fraction)")
    dim = train_corpus[0][1].frames.shape[1]
    for name, mat in list(train_corpus) + list(val_corpus):
        if mat.frames.shape[1] != dim:
            raise DimensionError(f"utterance {name} has D={mat.frames.shape[1]}, corpus has D={dim}")
    if model_cfg.dim != dim:
        raise DimensionError(f"model dim {model_cfg.dim} != corpus dim {dim}")

    start_epoch = 0
    rows: list[dict] = []
    if resume and last_path.exists():
        state, opt, next_epoch = load_checkpoint(last_path, expected_dim=dim)
        if opt is None:
            raise TrainerError(f"{last_path} holds no optimizer state, cannot resume")
        if state.model_cfg != model_cfg or state.obj_cfg != cfg.obj:
            raise TrainerError("checkpoint config disagrees with the requested run")
        start_epoch = next_epoch
        if metrics_path.exists():
            with open(metrics_path, newline="") as fh:
                rows = [r for r in csv.DictReader(fh) if int(r["epoch"]) < start_epoch]
    else:
        mean, std = norm_stats(train_corpus)
        params = init_encoder(model_cfg, seed=cfg.seed)
        state = ModelState(model_cfg=model_cfg, obj_cfg=cfg.obj, norm_mean=mean,
                           norm_std=std, params=params, init_seed=cfg.seed)
        opt = init_adam(flatten_params(params), lr=cfg.lr)

    train_utts = _normalized(train_corpus, state.norm_mean, state.norm_std)
    val_utts = _normalized(val_corpus, state.norm_mean, state.norm_std)

    best_val_lf = float("inf")
    for r in rows:
        if r["split"] == "val":
            best_val_lf = min(best_val_lf, float(r["L_f_mean"]))

    final_val = None
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        batches = make_batches(train_utts, cfg.batch_size,
                               seed=_epoch_shuffle_seed(cfg.seed, epoch))
        train_parts = train_epoch(state, batches, cfg, opt, epoch)
        t1 = time.perf_counter()
        rows.append(_format_row(epoch, "train", train_parts, len(train_utts), t1 - t0))

        t0 = time.perf_counter()
        val_parts = validate(state, val_utts, cfg)
        t1 = time.perf_counter()
        rows.append(_format_row(epoch, "val", val_parts, len(val_utts), t1 - t0))
        final_val = val_parts

        _write_metrics(metrics_path, rows)
        save_checkpoint(last_path, state, optimizer=opt, epoch=epoch + 1)
        if val_parts.lf < best_val_lf:
            best_val_lf = val_parts.lf
            save_checkpoint(best_path, state)
        if log:
            log(f"epoch {epoch}: train lm {train_parts.lm:.5f} "
                f"val lf {val_parts.lf:.5f} val lr {val_parts.lr:.5f}")

    if final_val is None:   # resumed past the last epoch; report stored tail
        final_val = validate(state, val_utts, cfg)
    return PretrainResult(state=state, best_val_lf=best_val_lf, final_val=final_val,
                          metrics_path=metrics_path, best_path=best_path,
                          last_path=last_path)


def _write_metrics(path: Path, rows: list):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
