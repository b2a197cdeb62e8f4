"""Stacked unidirectional GRU encoder with residual feeds and linear output heads.

Two congruent stacks live side by side: the main encoder that produces the
representation, and an auxiliary stack whose layers get seeded from the main
one when reconstructing past windows. A plain linear head (no bias by
default) maps hidden states back to input-feature space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import numcore as nc


class DimensionError(ValueError):
    """Array widths disagree with the configuration."""


@dataclass
class ModelConfig:
    layers: int = 3
    hidden: int = 512
    dim: int = 80
    projection_bias: bool = False

    def validate(self):
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.hidden < 1 or self.dim < 1:
            raise ValueError("hidden and dim must be positive")


@dataclass
class GruLayerParams:
    """One layer's gates: z/r/c input and recurrent matrices plus biases.

    Weight layout is (hidden, fan_in) so a batch of rows multiplies as
    x @ w.T. Update gate z keeps the old state, reset gate r scales the
    recurrent path of the candidate.
    """

    wz: np.ndarray
    wr: np.ndarray
    wc: np.ndarray
    uz: np.ndarray
    ur: np.ndarray
    uc: np.ndarray
    bz: np.ndarray
    br: np.ndarray
    bc: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.wz.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.uz.shape[1]


@dataclass
class EncoderParams:
    main: list
    aux: list
    w: np.ndarray       # (dim, hidden) projection of main hidden states
    w_aux: np.ndarray   # same shape, owned by the reconstruction head
    w_bias: np.ndarray | None = None
    w_aux_bias: np.ndarray | None = None

    def validate(self):
        if len(self.main) != len(self.aux):
            raise DimensionError("main and aux stacks must have the same depth")
        for a, b in zip(self.main, self.aux):
            if a.wz.shape != b.wz.shape or a.uz.shape != b.uz.shape:
                raise DimensionError("main and aux layers must be congruent")
        if self.w.shape != self.w_aux.shape:
            raise DimensionError("projection heads must be congruent")


@dataclass
class HiddenStates:
    """Per-layer hidden sequences, each (N, hidden). layers[-1] is the representation."""

    layers: list

    @property
    def last(self):
        return self.layers[-1]


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def init_gru_layer(rng: np.random.Generator, input_dim: int, hidden: int,
                   dtype=np.float32) -> GruLayerParams:
    """Input matrices uniform +-sqrt(1/fan_in), recurrent orthogonal, biases zero."""
    lim = (1.0 / input_dim) ** 0.5

    def win():
        return rng.uniform(-lim, lim, size=(hidden, input_dim)).astype(dtype)

    def wrec():
        return _orthogonal(rng, hidden).astype(dtype)

    zeros = lambda: np.zeros(hidden, dtype=dtype)
    return GruLayerParams(
        wz=win(), wr=win(), wc=win(),
        uz=wrec(), ur=wrec(), uc=wrec(),
        bz=zeros(), br=zeros(), bc=zeros(),
    )


def init_encoder(cfg: ModelConfig, seed: int, dtype=np.float32) -> EncoderParams:
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    stacks = []
    for _ in range(2):
        layers = []
        fan_in = cfg.dim
        for _k in range(cfg.layers):
            layers.append(init_gru_layer(rng, fan_in, cfg.hidden, dtype))
            fan_in = cfg.hidden
        stacks.append(layers)
    lim = (1.0 / cfg.hidden) ** 0.5
    w = rng.uniform(-lim, lim, size=(cfg.dim, cfg.hidden)).astype(dtype)
    w_aux = rng.uniform(-lim, lim, size=(cfg.dim, cfg.hidden)).astype(dtype)
    bias = np.zeros(cfg.dim, dtype=dtype) if cfg.projection_bias else None
    bias_aux = np.zeros(cfg.dim, dtype=dtype) if cfg.projection_bias else None
    params = EncoderParams(main=stacks[0], aux=stacks[1], w=w, w_aux=w_aux,
                           w_bias=bias, w_aux_bias=bias_aux)
    params.validate()
    return params


def flatten_params(p: EncoderParams) -> list:
    """Declared serialization order: main layers, aux layers, heads."""
    out = []
    for stack in (p.main, p.aux):
        for layer in stack:
            out += [layer.wz, layer.wr, layer.wc,
                    layer.uz, layer.ur, layer.uc,
                    layer.bz, layer.br, layer.bc]
    out.append(p.w)
    out.append(p.w_aux)
    if p.w_bias is not None:
        out += [p.w_bias, p.w_aux_bias]
    return out


def param_names(p: EncoderParams) -> list:
    names = []
    for stack_name, stack in (("main", p.main), ("aux", p.aux)):
        for k in range(len(stack)):
            for f in ("wz", "wr", "wc", "uz", "ur", "uc", "bz", "br", "bc"):
                names.append(f"{stack_name}.{k}.{f}")
    names += ["w", "w_aux"]
    if p.w_bias is not None:
        names += ["w_bias", "w_aux_bias"]
    return names


def unflatten_params(template: EncoderParams, flat: list) -> EncoderParams:
    """Rebuild the EncoderParams structure from a flat list (arrays or tape nodes)."""
    it = iter(flat)
    stacks = []
    for stack in (template.main, template.aux):
        layers = []
        for _ in stack:
            wz, wr, wc, uz, ur, uc, bz, br, bc = (next(it) for _ in range(9))
            layers.append(GruLayerParams(wz, wr, wc, uz, ur, uc, bz, br, bc))
        stacks.append(layers)
    w = next(it)
    w_aux = next(it)
    wb = next(it) if template.w_bias is not None else None
    wab = next(it) if template.w_bias is not None else None
    return EncoderParams(main=stacks[0], aux=stacks[1], w=w, w_aux=w_aux,
                         w_bias=wb, w_aux_bias=wab)


def param_shapes(cfg: ModelConfig) -> list:
    """Shapes in the declared serialization order, derived from config alone."""
    shapes = []
    for _stack in range(2):
        fan_in = cfg.dim
        for _k in range(cfg.layers):
            shapes += [(cfg.hidden, fan_in)] * 3
            shapes += [(cfg.hidden, cfg.hidden)] * 3
            shapes += [(cfg.hidden,)] * 3
            fan_in = cfg.hidden
    shapes += [(cfg.dim, cfg.hidden)] * 2
    if cfg.projection_bias:
        shapes += [(cfg.dim,)] * 2
    return shapes


def unflatten_config(cfg: ModelConfig, flat: list) -> EncoderParams:
    """unflatten_params without needing an existing instance."""
    it = iter(flat)
    stacks = []
    for _stack in range(2):
        layers = []
        for _k in range(cfg.layers):
            wz, wr, wc, uz, ur, uc, bz, br, bc = (next(it) for _ in range(9))
            layers.append(GruLayerParams(wz, wr, wc, uz, ur, uc, bz, br, bc))
        stacks.append(layers)
    w = next(it)
    w_aux = next(it)
    wb = next(it) if cfg.projection_bias else None
    wab = next(it) if cfg.projection_bias else None
    return EncoderParams(main=stacks[0], aux=stacks[1], w=w, w_aux=w_aux,
                         w_bias=wb, w_aux_bias=wab)


def lift_params(tape: nc.Tape, p: EncoderParams):
    """Put every parameter on the tape; returns (lifted structure, flat node list)."""
    flat = flatten_params(p)
    names = param_names(p)
    nodes = [tape.parameter(a, name=nm) for a, nm in zip(flat, names)]
    return unflatten_params(p, nodes), nodes


def gru_cell_step(layer: GruLayerParams, x: np.ndarray, state: np.ndarray) -> np.ndarray:
    """Single-vector reference cell, kept independent of the rolled stacks so
    tests can cross-check one against the other.

    z = logistic(wz x + uz h + bz)
    r = logistic(wr x + ur h + br)
    c = tanh(wc x + uc (r * h) + bc)
    h' = z * h + (1 - z) * c
    """
    x = np.asarray(x)
    state = np.asarray(state)
    if x.shape != (layer.input_dim,):
        raise DimensionError(f"input shape {x.shape} != ({layer.input_dim},)")
    if state.shape != (layer.hidden_dim,):
        raise DimensionError(f"state shape {state.shape} != ({layer.hidden_dim},)")
    z = 1.0 / (1.0 + np.exp(-(layer.wz @ x + layer.uz @ state + layer.bz)))
    r = 1.0 / (1.0 + np.exp(-(layer.wr @ x + layer.ur @ state + layer.br)))
    c = np.tanh(layer.wc @ x + layer.uc @ (r * state) + layer.bc)
    return z * state + (1.0 - z) * c


def gru_step_composed(layer: GruLayerParams, x, h):
    """The gated update written in tape primitives. gru_step below computes
    the same thing as one fused node; this form stays as its cross-check."""
    z = nc.sigmoid(nc.linear(x, layer.wz) + nc.linear(h, layer.uz) + layer.bz)
    r = nc.sigmoid(nc.linear(x, layer.wr) + nc.linear(h, layer.ur) + layer.br)
    c = nc.tanh(nc.linear(x, layer.wc) + nc.linear(r * h, layer.uc) + layer.bc)
    return z * h + (1.0 - z) * c


def gru_step(layer: GruLayerParams, x, h):
    """One gated update over a batch of rows: x (R, fan_in), h (R, hidden).

    Fused into a single tape node: the forward matches gru_step_composed bit
    for bit, the backward is the hand-derived gate gradient. Collapsing the
    ~19 primitive nodes a step would otherwise record roughly halves training
    time at the row counts this package runs at.
    """
    roles = (("wz", layer.wz), ("wr", layer.wr), ("wc", layer.wc),
             ("uz", layer.uz), ("ur", layer.ur), ("uc", layer.uc),
             ("bz", layer.bz), ("br", layer.br), ("bc", layer.bc),
             ("x", x), ("h", h))
    parents = tuple(t for _k, t in roles if isinstance(t, nc.Tensor))
    if not parents:
        z = expit((x @ layer.wz.T + h @ layer.uz.T) + layer.bz)
        r = expit((x @ layer.wr.T + h @ layer.ur.T) + layer.br)
        c = np.tanh((x @ layer.wc.T + (r * h) @ layer.uc.T) + layer.bc)
        return z * h + (1.0 - z) * c

    tape = parents[0].tape

    def val(t):
        return t.data if isinstance(t, nc.Tensor) else np.asarray(t, dtype=tape.dtype)

    wz, wr, wc = val(layer.wz), val(layer.wr), val(layer.wc)
    uz, ur, uc = val(layer.uz), val(layer.ur), val(layer.uc)
    xv, hv = val(x), val(h)
    z = expit((xv @ wz.T + hv @ uz.T) + val(layer.bz))
    r = expit((xv @ wr.T + hv @ ur.T) + val(layer.br))
    rh = r * hv
    c = np.tanh((xv @ wc.T + rh @ uc.T) + val(layer.bc))
    out = z * hv + (1.0 - z) * c
    keys = tuple(k for k, t in roles if isinstance(t, nc.Tensor))

    def grad_fn(g):
        pz = g * (hv - c) * (z * (1.0 - z))
        pc = g * (1.0 - z) * (1.0 - c * c)
        q = pc @ uc                      # gradient into r * h
        pr = q * hv * (r * (1.0 - r))
        table = {
            "wz": lambda: pz.T @ xv, "uz": lambda: pz.T @ hv, "bz": lambda: pz.sum(axis=0),
            "wr": lambda: pr.T @ xv, "ur": lambda: pr.T @ hv, "br": lambda: pr.sum(axis=0),
            "wc": lambda: pc.T @ xv, "uc": lambda: pc.T @ rh, "bc": lambda: pc.sum(axis=0),
            "x": lambda: pz @ wz + pr @ wr + pc @ wc,
            "h": lambda: g * z + q * r + pz @ uz + pr @ ur,
        }
        return tuple(table[k]() for k in keys)

    return nc.Tensor(out, tape, parents, grad_fn)


def roll_stack(stack: list, step_inputs: list, init_states: list | None = None) -> list:
    """Run the stack over a sequence of row blocks.

    step_inputs is a list over time of (R, fan_in) blocks. Residual feed:
    layer k+1 consumes layer k's output plus layer k's own input whenever the
    widths match (so the usual frame-width first layer stays residual-free).
    Returns one list of (R, hidden) states per layer; no initial states are
    included in the outputs.
    """
    n_layers = len(stack)
    rows = step_inputs[0].shape[0]
    per_layer = []
    inputs = step_inputs
    for k, layer in enumerate(stack):
        wide = layer.hidden_dim
        if init_states is not None:
            h = init_states[k]
        else:
            dt = layer.wz.data.dtype if isinstance(layer.wz, nc.Tensor) else layer.wz.dtype
            h = np.zeros((rows, wide), dtype=dt)
        outs = []
        for x in inputs:
            h = gru_step(layer, x, h)
            outs.append(h)
        per_layer.append(outs)
        if k + 1 < n_layers:
            if layer.input_dim == wide:
                inputs = [o + xi for o, xi in zip(outs, inputs)]
            else:
                inputs = outs
    return per_layer


def stack_forward(stack: list, frames, init_states: list | None = None) -> HiddenStates:
    """Roll one utterance (N, dim) through the stack.

    init_states, when given, is one (hidden,) vector per layer. Returns all
    layers' hidden sequences; layers[-1] is the representation.
    """
    n = frames.shape[0]
    if frames.shape[1] != stack[0].input_dim:
        raise DimensionError(
            f"frames have width {frames.shape[1]}, stack expects {stack[0].input_dim}")
    inits = None
    if init_states is not None:
        inits = [np.asarray(s).reshape(1, -1) for s in init_states]
    steps = [frames[t:t + 1] for t in range(n)]
    per_layer = roll_stack(stack, steps, inits)
    layers = [nc.concat_rows(outs) for outs in per_layer]
    return HiddenStates(layers=layers)


def project(w, hidden, bias=None):
    """Map hidden states back to feature space: hidden (N, H) -> (N, dim)."""
    out = nc.linear(hidden, w)
    if bias is not None:
        out = out + bias
    return out


def extract_features(params: EncoderParams, frames: np.ndarray,
                     norm_mean: np.ndarray | None = None,
                     norm_std: np.ndarray | None = None) -> np.ndarray:
    """Frozen-encoder representation of one utterance: last-layer states.

    frames are raw features; normalization stats, when given, are applied
    first (they come from the checkpoint that produced params).
    """
    frames = np.asarray(frames, dtype=np.float32)
    if frames.shape[1] != params.main[0].input_dim:
        raise DimensionError(
            f"frames have width {frames.shape[1]}, encoder expects {params.main[0].input_dim}")
    if norm_mean is not None:
        frames = (frames - norm_mean.astype(np.float32)) / norm_std.astype(np.float32)
    return stack_forward(params.main, frames).last
