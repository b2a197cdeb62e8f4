"""Binary checkpoint container (magic "PCKP").

Layout: header with the architecture and objective hyperparameters, the
normalization statistics, every parameter array little-endian float32 in
declared order, then an optional trainer section (epoch, Adam moments) so an
interrupted run can resume bit-identically. Array shapes are derived from the
header, never stored.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (DimensionError, EncoderParams, ModelConfig, flatten_params,
                    param_shapes, unflatten_config)
from .numcore import AdamState
from .objectives import ObjectiveConfig

MAGIC = b"PCKP"
FORMAT_VERSION = 1

_FLAG_OPTIMIZER = 1
_FLAG_PROJ_BIAS = 2
_FLAG_SEED_TOP = 4

_HEADER = "<BHIIHHHddQ"   # flags, layers, hidden, dim, n, s, l, p_anchor, lam, init_seed


class CheckpointError(ValueError):
    pass


@dataclass
class ModelState:
    """Everything needed to run the encoder on raw features."""

    model_cfg: ModelConfig
    obj_cfg: ObjectiveConfig
    norm_mean: np.ndarray   # (dim,) float32
    norm_std: np.ndarray
    params: EncoderParams
    init_seed: int = 0


def save_checkpoint(path, state: ModelState, optimizer: AdamState | None = None,
                    epoch: int | None = None) -> None:
    """Byte output is a pure function of the arguments."""
    mc, oc = state.model_cfg, state.obj_cfg
    flags = 0
    if optimizer is not None:
        flags |= _FLAG_OPTIMIZER
    if mc.projection_bias:
        flags |= _FLAG_PROJ_BIAS
    if oc.seed_depth == "top":
        flags |= _FLAG_SEED_TOP
    blob = [MAGIC, struct.pack("<H", FORMAT_VERSION)]
    blob.append(struct.pack(_HEADER, flags, mc.layers, mc.hidden, mc.dim,
                            oc.n, oc.s, oc.l, oc.p_anchor, oc.lam, state.init_seed))
    blob.append(np.ascontiguousarray(state.norm_mean, dtype="<f4").tobytes())
    blob.append(np.ascontiguousarray(state.norm_std, dtype="<f4").tobytes())
    for arr in flatten_params(state.params):
        blob.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    if optimizer is not None:
        blob.append(struct.pack("<IQdddd", 0 if epoch is None else epoch,
                                optimizer.step, optimizer.lr, optimizer.beta1,
                                optimizer.beta2, optimizer.eps))
        for group in (optimizer.m, optimizer.v):
            for arr in group:
                blob.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(blob))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.off + count > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.off:self.off + count]
        self.off += count
        return out

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        raw = self.take(count * 4)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def load_checkpoint(path, expected_dim: int | None = None):
    """Returns (ModelState, AdamState | None, epoch | None).

    expected_dim lets callers fail fast when the checkpoint was trained on
    features of a different width than the corpus at hand.
    """
    blob = Path(path).read_bytes()
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<H", r.take(2))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    flags, layers, hidden, dim, n, s, l, p_anchor, lam, init_seed = \
        struct.unpack(_HEADER, r.take(struct.calcsize(_HEADER)))
    if expected_dim is not None and dim != expected_dim:
        raise DimensionError(f"{path}: trained on D={dim}, corpus has D={expected_dim}")
    mc = ModelConfig(layers=layers, hidden=hidden, dim=dim,
                     projection_bias=bool(flags & _FLAG_PROJ_BIAS))
    oc = ObjectiveConfig(n=n, s=s, l=l, p_anchor=p_anchor, lam=lam,
                         seed_depth="top" if flags & _FLAG_SEED_TOP else "per_layer")
    norm_mean = r.array((dim,))
    norm_std = r.array((dim,))
    flat = [r.array(shape) for shape in param_shapes(mc)]
    params = unflatten_config(mc, flat)
    state = ModelState(model_cfg=mc, obj_cfg=oc, norm_mean=norm_mean,
                       norm_std=norm_std, params=params, init_seed=init_seed)
    optimizer = None
    epoch = None
    if flags & _FLAG_OPTIMIZER:
        epoch, step, lr, b1, b2, eps = struct.unpack("<IQdddd", r.take(struct.calcsize("<IQdddd")))
        m = [r.array(a.shape) for a in flat]
        v = [r.array(a.shape) for a in flat]
        optimizer = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step=step, m=m, v=v)
    if r.off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - r.off} unexpected trailing bytes")
    return state, optimizer, epoch
