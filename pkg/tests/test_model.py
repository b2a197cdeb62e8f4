import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import pcrep.numcore as nc
from pcrep.model import (DimensionError, GruLayerParams, ModelConfig,
                         extract_features, flatten_params, gru_cell_step,
                         gru_step, gru_step_composed, init_encoder,
                         init_gru_layer, lift_params, param_names,
                         param_shapes, project, roll_stack, stack_forward,
                         unflatten_config, unflatten_params)
from pcrep.numcore import Tape, finite_diff_check, reverse_gradients


def zero_layer(input_dim, hidden):
    z = lambda *shape: np.zeros(shape, dtype=np.float32)
    return GruLayerParams(wz=z(hidden, input_dim), wr=z(hidden, input_dim),
                          wc=z(hidden, input_dim), uz=z(hidden, hidden),
                          ur=z(hidden, hidden), uc=z(hidden, hidden),
                          bz=z(hidden), br=z(hidden), bc=z(hidden))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(layers=0).validate()
    with pytest.raises(ValueError):
        ModelConfig(hidden=0).validate()
    with pytest.raises(ValueError):
        ModelConfig(dim=-1).validate()


def test_zero_weights_halve_state():
    # all-zero weights: update gate 0.5, candidate 0, so h' = 0.5 h
    layer = zero_layer(3, 4)
    h = np.array([1.0, -2.0, 4.0, 0.0], dtype=np.float32)
    out = gru_cell_step(layer, np.ones(3, dtype=np.float32), h)
    assert np.array_equal(out, 0.5 * h)


def test_cell_shape_errors():
    layer = zero_layer(3, 4)
    with pytest.raises(DimensionError):
        gru_cell_step(layer, np.ones(2), np.zeros(4))
    with pytest.raises(DimensionError):
        gru_cell_step(layer, np.ones(3), np.zeros(5))


def test_batched_step_matches_cell():
    rng = np.random.default_rng(5)
    layer = init_gru_layer(rng, 4, 6)
    x = rng.normal(size=(3, 4)).astype(np.float32)
    h = rng.normal(size=(3, 6)).astype(np.float32)
    out = gru_step(layer, x, h)
    for row in range(3):
        ref = gru_cell_step(layer, x[row], h[row])
        assert np.allclose(out[row], ref, rtol=0, atol=1e-6)


def test_fused_step_matches_composed_bitwise():
    rng = np.random.default_rng(6)
    layer = init_gru_layer(rng, 4, 5)
    x = rng.normal(size=(3, 4)).astype(np.float32)
    h = rng.normal(size=(3, 5)).astype(np.float32)
    assert np.array_equal(gru_step(layer, x, h), gru_step_composed(layer, x, h))

    cfg = ModelConfig(layers=1, hidden=5, dim=4)
    enc = init_encoder(cfg, seed=2)
    tapes, outs = [], []
    for step in (gru_step, gru_step_composed):
        tape = Tape(np.float32)
        lifted, nodes = lift_params(tape, enc)
        hh = step(lifted.main[0], x, tape.parameter(h, name="h"))
        outs.append(hh.data)
        tapes.append((tape, nodes, nc.total(nc.absolute(hh))))
    assert np.array_equal(outs[0], outs[1])


def test_fused_step_gradients_match_composed():
    rng = np.random.default_rng(7)
    cfg = ModelConfig(layers=1, hidden=5, dim=4)
    enc = init_encoder(cfg, seed=2)
    x = rng.normal(size=(3, 4)).astype(np.float32)
    h = rng.normal(size=(3, 5)).astype(np.float32)
    grads = []
    for step in (gru_step, gru_step_composed):
        tape = Tape(np.float32)
        lifted, nodes = lift_params(tape, enc)
        hp = tape.parameter(h, name="h")
        loss = nc.total(nc.absolute(step(lifted.main[0], x, hp)))
        g = reverse_gradients(tape, loss)
        grads.append([g[n] for n in nodes] + [g[hp]])
    for ga, gb in zip(*grads):
        assert np.allclose(ga, gb, rtol=1e-4, atol=1e-6)


def test_fused_step_finite_differences():
    # chained steps in float64 exercise the hand-written state gradient
    cfg = ModelConfig(layers=1, hidden=5, dim=4)
    enc = init_encoder(cfg, seed=9)
    rng = np.random.default_rng(8)
    x1 = rng.normal(size=(3, 4))
    x2 = rng.normal(size=(3, 4))

    def f(params):
        enc2 = unflatten_params(enc, params)
        h = gru_step(enc2.main[0], x1, np.zeros((3, 5)))
        h = gru_step(enc2.main[0], x2, h)
        return nc.total(nc.absolute(h))

    assert finite_diff_check(f, flatten_params(enc)) < 1e-8


# ------------------------------------------------------------ initialization

def test_init_recurrent_orthogonal():
    rng = np.random.default_rng(0)
    layer = init_gru_layer(rng, 3, 8)
    for u in (layer.uz, layer.ur, layer.uc):
        eye = u.astype(np.float64) @ u.astype(np.float64).T
        assert np.allclose(eye, np.eye(8), atol=1e-5)
    assert np.all(layer.bz == 0) and np.all(layer.br == 0) and np.all(layer.bc == 0)
    bound = np.sqrt(1.0 / 3.0)
    for w in (layer.wz, layer.wr, layer.wc):
        assert np.all(np.abs(w) <= bound)


def test_init_deterministic_per_seed():
    cfg = ModelConfig(layers=2, hidden=5, dim=4)
    a = flatten_params(init_encoder(cfg, seed=11))
    b = flatten_params(init_encoder(cfg, seed=11))
    c = flatten_params(init_encoder(cfg, seed=12))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))
    assert all(x.dtype == np.float32 for x in a)


def test_flatten_roundtrip_and_shapes():
    cfg = ModelConfig(layers=3, hidden=7, dim=5, projection_bias=True)
    enc = init_encoder(cfg, seed=1)
    flat = flatten_params(enc)
    assert [f.shape for f in flat] == param_shapes(cfg)
    assert len(param_names(enc)) == len(flat)
    rebuilt = unflatten_params(enc, flat)
    assert all(np.array_equal(a, b) for a, b in
               zip(flat, flatten_params(rebuilt)))
    again = unflatten_config(cfg, flat)
    assert all(np.array_equal(a, b) for a, b in
               zip(flat, flatten_params(again)))


def test_param_count():
    cfg = ModelConfig(layers=3, hidden=7, dim=5)
    # two stacks of 3 layers, 9 arrays each, plus two heads without bias
    assert len(param_shapes(cfg)) == 2 * 3 * 9 + 2


# ------------------------------------------------------------ stacks

def test_residual_feed_matches_manual_composition():
    # 3 layers, dim != hidden: layer 1 feeds plainly, deeper layers feed
    # output plus own input
    cfg = ModelConfig(layers=3, hidden=5, dim=4)
    enc = init_encoder(cfg, seed=21)
    rng = np.random.default_rng(3)
    frames = rng.normal(size=(6, 4)).astype(np.float32)

    hs = stack_forward(enc.main, frames)
    h1 = np.zeros(5, dtype=np.float32)
    h2 = np.zeros(5, dtype=np.float32)
    h3 = np.zeros(5, dtype=np.float32)
    for t in range(6):
        h1 = gru_cell_step(enc.main[0], frames[t], h1)
        in2 = h1
        h2 = gru_cell_step(enc.main[1], in2, h2)
        in3 = h2 + in2
        h3 = gru_cell_step(enc.main[2], in3, h3)
        assert np.allclose(hs.layers[2][t], h3, rtol=0, atol=1e-5)
    assert hs.last.shape == (6, 5)


def test_first_layer_residual_when_widths_match():
    cfg = ModelConfig(layers=2, hidden=4, dim=4)
    enc = init_encoder(cfg, seed=22)
    rng = np.random.default_rng(4)
    frames = rng.normal(size=(3, 4)).astype(np.float32)
    hs = stack_forward(enc.main, frames)
    h1 = np.zeros(4, dtype=np.float32)
    h2 = np.zeros(4, dtype=np.float32)
    for t in range(3):
        h1 = gru_cell_step(enc.main[0], frames[t], h1)
        h2 = gru_cell_step(enc.main[1], h1 + frames[t], h2)
    assert np.allclose(hs.layers[1][-1], h2, rtol=0, atol=1e-5)


def test_stack_forward_rejects_wrong_width():
    cfg = ModelConfig(layers=1, hidden=4, dim=3)
    enc = init_encoder(cfg, seed=0)
    with pytest.raises(DimensionError):
        stack_forward(enc.main, np.zeros((5, 7), dtype=np.float32))


def test_roll_stack_honors_initial_states():
    cfg = ModelConfig(layers=2, hidden=4, dim=4)
    enc = init_encoder(cfg, seed=5)
    x = np.ones((2, 4), dtype=np.float32)
    init = [np.full((2, 4), 0.3, dtype=np.float32),
            np.full((2, 4), -0.2, dtype=np.float32)]
    out = roll_stack(enc.main, [x], init_states=init)
    ref0 = gru_step(enc.main[0], x, init[0])
    assert np.array_equal(out[0][0], ref0)
    ref1 = gru_step(enc.main[1], ref0 + x, init[1])
    assert np.array_equal(out[1][0], ref1)


def test_projection_shapes_and_bias():
    rng = np.random.default_rng(9)
    w = rng.normal(size=(3, 5)).astype(np.float32)
    h = rng.normal(size=(4, 5)).astype(np.float32)
    out = project(w, h)
    assert out.shape == (4, 3)
    assert np.allclose(out, h @ w.T, rtol=0, atol=1e-6)
    bias = np.array([1.0, 2.0, 3.0], dtype=np.float32)
    assert np.allclose(project(w, h, bias), h @ w.T + bias, rtol=0, atol=1e-6)


# ------------------------------------------------------------ extraction

def test_extract_features_normalizes_and_matches_tape():
    cfg = ModelConfig(layers=2, hidden=5, dim=4)
    enc = init_encoder(cfg, seed=30)
    rng = np.random.default_rng(12)
    frames = rng.normal(size=(7, 4)).astype(np.float32)
    mean = frames.mean(axis=0)
    std = frames.std(axis=0) + 0.1

    feats = extract_features(enc, frames, mean, std)
    assert feats.shape == (7, 5) and feats.dtype == np.float32

    normed = (frames - mean) / std
    hs = stack_forward(enc.main, normed)
    assert np.array_equal(feats, np.asarray(hs.layers[-1]))

    # value mode agrees with the recorded graph
    tape = Tape(np.float32)
    lifted, _nodes = lift_params(tape, enc)
    hs_tape = stack_forward(lifted.main, normed)
    assert np.array_equal(feats, hs_tape.last.data)


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 3), st.integers(2, 6), st.integers(2, 5), st.integers(1, 9))
def test_extract_shape_property(layers, hidden, dim, n_frames):
    cfg = ModelConfig(layers=layers, hidden=hidden, dim=dim)
    enc = init_encoder(cfg, seed=1)
    frames = np.random.default_rng(0).normal(size=(n_frames, dim)).astype(np.float32)
    feats = extract_features(enc, frames,
                             np.zeros(dim, np.float32), np.ones(dim, np.float32))
    assert feats.shape == (n_frames, hidden)
