"""Forward pass, activation trace, and loss gradients."""

import numpy as np
import pytest

from conftest import oracle_layers, random_conv_config, random_image, random_weights
from oracles import fd_loss_gradients, forward_loops, loss_loops
from visback.config import (
    ConfigError,
    LayerSpec,
    NetworkConfig,
    conv_layer,
    fc_layer,
    toy_config,
    validate_config,
)
from visback.network import (
    InputRangeError,
    NonFiniteOutputError,
    backward,
    forward,
    forward_batch,
    normalize_input,
)
from visback.tensor import ShapeError, Tensor
from visback.weights import WeightSet, init_weights, parameter_shapes, zero_weights


def ws_from_arrays(cfg, pairs):
    """Build a WeightSet from {layer_index: (flat weights, biases)} lists."""
    arrays = {
        i: (np.asarray(w, dtype=np.float32).reshape(-1), np.asarray(b, dtype=np.float32).reshape(-1))
        for i, (w, b) in pairs.items()
    }
    return WeightSet(config=cfg, arrays=arrays)


# --- normalization ----------------------------------------------------------

def test_normalize_input_endpoints():
    t = Tensor(np.array([[[0.0, 127.5, 255.0]]], dtype=np.float32))
    out = normalize_input(t)
    np.testing.assert_allclose(out.data, [[[-1.0, 0.0, 1.0]]], atol=1e-7)


def test_normalize_input_range_check():
    with pytest.raises(InputRangeError):
        normalize_input(Tensor(np.array([[[-0.5]]], dtype=np.float32)))
    with pytest.raises(InputRangeError):
        normalize_input(Tensor(np.array([[[255.5]]], dtype=np.float32)))


# --- forward ----------------------------------------------------------------

def test_forward_hand_example():
    # 1x1 input x=2, conv w=3 b=1 relu -> 7, output fc w=2 b=-1 -> 13
    cfg = NetworkConfig(1, 1, 1, (
        conv_layer(1, kernel=1, stride=1, in_channels=1),
        fc_layer(1, activation="none"),
    ))
    ws = ws_from_arrays(cfg, {0: ([3.0], [1.0]), 1: ([2.0], [-1.0])})
    out, trace = forward(cfg, ws, Tensor(np.array([[[2.0]]], dtype=np.float32)))
    assert out.inverse_turning_radius == pytest.approx(13.0)
    # no normalization layer: entries[0] carries the raw input at index -1
    assert trace.entries[0][0] == -1
    assert trace.entries[1][1].data[0, 0, 0] == pytest.approx(7.0)


def test_forward_trace_shapes_match_validation_table():
    cfg = toy_config()
    ws = init_weights(cfg, seed=0)
    rng = np.random.default_rng(2)
    img = Tensor(rng.uniform(0, 255, cfg.input_shape).astype(np.float32))
    _, trace = forward(cfg, ws, img)
    table = {row.index: row.output_shape for row in validate_config(cfg)}
    assert trace.entries[0][0] == 0  # normalization first
    assert trace.normalized_input.shape == cfg.input_shape
    for idx, tensor in trace.conv_entries:
        assert tensor.shape == table[idx]
    assert [idx for idx, _ in trace.conv_entries] == cfg.conv_indices()


def test_forward_is_pure_and_deterministic():
    rng = np.random.default_rng(7)
    cfg = random_conv_config(rng)
    ws = random_weights(cfg, rng)
    img = random_image(cfg, rng)
    before = img.data.copy()
    out1, tr1 = forward(cfg, ws, img)
    out2, tr2 = forward(cfg, ws, img)
    assert out1.inverse_turning_radius == out2.inverse_turning_radius
    for (i1, t1), (i2, t2) in zip(tr1.entries, tr2.entries):
        assert i1 == i2
        np.testing.assert_array_equal(t1.data, t2.data)
    np.testing.assert_array_equal(img.data, before)


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(13)
    for _ in range(20):
        cfg = random_conv_config(rng)
        ws = random_weights(cfg, rng)
        img = random_image(cfg, rng)
        got = forward(cfg, ws, img)[0].inverse_turning_radius
        want = forward_loops(oracle_layers(cfg, ws), img.data.astype(np.float64))
        assert got == pytest.approx(want, rel=1e-4, abs=1e-4)


def test_forward_rejects_mismatched_config_and_shape():
    cfg = toy_config()
    ws = init_weights(cfg, seed=0)
    other = init_weights(random_conv_config(np.random.default_rng(0)), seed=0)
    img = Tensor(np.zeros(cfg.input_shape, dtype=np.float32))
    with pytest.raises(ConfigError):
        forward(cfg, other, img)
    with pytest.raises(ShapeError):
        forward(cfg, ws, Tensor.zeros(3, 10, 10))


def test_forward_nonfinite_output_raises():
    cfg = NetworkConfig(1, 1, 1, (fc_layer(1, activation="none"),))
    ws = ws_from_arrays(cfg, {0: ([3.0e38], [0.0])})
    with np.errstate(over="ignore"), pytest.raises(NonFiniteOutputError):
        forward(cfg, ws, Tensor(np.array([[[100.0]]], dtype=np.float32)))


def test_forward_zero_weights_outputs_zero():
    cfg = toy_config()
    ws = zero_weights(cfg)
    img = Tensor(np.full(cfg.input_shape, 128.0, dtype=np.float32))
    out, _ = forward(cfg, ws, img)
    assert out.inverse_turning_radius == 0.0


def test_zeroing_a_layer_changes_output():
    rng = np.random.default_rng(21)
    cfg = toy_config()
    ws = init_weights(cfg, seed=5)
    img = Tensor(rng.uniform(0, 255, cfg.input_shape).astype(np.float32))
    base = forward(cfg, ws, img)[0].inverse_turning_radius
    for i in sorted(ws.arrays):
        arrays = {j: (w.copy(), b.copy()) for j, (w, b) in ws.arrays.items()}
        arrays[i] = (np.zeros_like(arrays[i][0]), arrays[i][1])
        cut = WeightSet(config=cfg, arrays=arrays)
        assert forward(cfg, cut, img)[0].inverse_turning_radius != base


def test_forward_batch_matches_single_forward():
    rng = np.random.default_rng(31)
    cfg = random_conv_config(rng)
    ws = random_weights(cfg, rng)
    imgs = np.stack([random_image(cfg, rng).data for _ in range(5)])
    preds = forward_batch(cfg, ws, imgs)
    assert preds.shape == (5,)
    for k in range(5):
        single = forward(cfg, ws, Tensor(imgs[k]))[0].inverse_turning_radius
        assert preds[k] == pytest.approx(single, rel=1e-5, abs=1e-6)


# --- backward ---------------------------------------------------------------

def test_backward_hand_example():
    # one fc layer, no normalization: pred = 2w + b, loss = (2w + b - t)^2
    # at w=1.5 b=0 t=1: loss = 4, dloss/dw = 2*(3-1)*2 = 8, dloss/db = 4
    cfg = NetworkConfig(1, 1, 1, (fc_layer(1, activation="none"),))
    ws = ws_from_arrays(cfg, {0: ([1.5], [0.0])})
    grads, loss = backward(cfg, ws, Tensor(np.array([[[2.0]]], dtype=np.float32)), 1.0)
    assert loss == pytest.approx(4.0)
    assert grads.weight(0)[0] == pytest.approx(8.0)
    assert grads.bias(0)[0] == pytest.approx(4.0)


def _loss_of(cfg, ws, img, target):
    pred = forward(cfg, ws, img)[0].inverse_turning_radius
    diff = pred - target
    return diff * diff


def _fd_gradients_via_forward(cfg, ws, img, target, eps):
    """Central finite differences of the package's own loss, one parameter at
    a time. Cheap enough for tiny nets because the forward pass is vectorized."""
    out = {}
    for i in sorted(ws.arrays):
        w, b = ws.arrays[i]
        dw, db = np.zeros_like(w, dtype=np.float64), np.zeros_like(b, dtype=np.float64)
        for arr, grad in ((w, dw), (b, db)):
            for k in range(arr.size):
                arrays = {j: (wj.copy(), bj.copy()) for j, (wj, bj) in ws.arrays.items()}
                probe = arrays[i][0] if arr is w else arrays[i][1]
                probe[k] = arr[k] + eps
                hi = _loss_of(cfg, WeightSet(config=cfg, arrays=arrays), img, target)
                probe[k] = arr[k] - eps
                lo = _loss_of(cfg, WeightSet(config=cfg, arrays=arrays), img, target)
                grad[k] = (hi - lo) / (2 * eps)
        out[i] = (dw, db)
    return out


def test_backward_matches_finite_differences():
    # eps = 1e-4 keeps the probe off ReLU kinks for these nets
    rng = np.random.default_rng(17)
    checked = 0
    for _ in range(6):
        cfg = random_conv_config(rng, max_conv_layers=2, max_fc_layers=1)
        if sum(w.size + b.size for w, b in random_weights(cfg, rng).arrays.values()) > 900:
            continue  # keep the parameter-by-parameter probe fast
        ws = random_weights(cfg, rng)
        img = random_image(cfg, rng)
        target = float(rng.uniform(-1, 1))
        grads, _ = backward(cfg, ws, img, target)
        fd = _fd_gradients_via_forward(cfg, ws, img, target, eps=1e-4)
        for i in sorted(ws.arrays):
            dw_fd, db_fd = fd[i]
            scale = max(np.abs(dw_fd).max(), np.abs(db_fd).max(), 1e-6)
            np.testing.assert_allclose(grads.weight(i), dw_fd, atol=2e-3 * scale)
            np.testing.assert_allclose(grads.bias(i), db_fd, atol=2e-3 * scale)
        checked += 1
    assert checked >= 3


def test_backward_matches_float64_loop_oracle():
    """One fully independent check: finite differences of a straight-loop
    float64 reimplementation, no shared code with the package."""
    cfg = NetworkConfig(2, 6, 7, (
        LayerSpec(kind="normalization"),
        conv_layer(2, kernel=3, stride=2, in_channels=2),
        fc_layer(3),
        fc_layer(1, activation="none"),
    ))
    rng = np.random.default_rng(23)
    ws = random_weights(cfg, rng)
    img = random_image(cfg, rng)
    target = 0.25
    grads, loss = backward(cfg, ws, img, target)
    layers = oracle_layers(cfg, ws)
    assert loss == pytest.approx(loss_loops(layers, img.data.astype(np.float64), target),
                                 rel=1e-4, abs=1e-7)
    fd = fd_loss_gradients(layers, img.data.astype(np.float64), target, eps=1e-5)
    param_indices = [i for i, l in enumerate(cfg.layers) if l.kind != "normalization"]
    fd_entries = [g for g in fd if g is not None]
    for i, (dw_fd, db_fd) in zip(param_indices, fd_entries):
        scale = max(np.abs(dw_fd).max(), np.abs(db_fd).max(), 1e-6)
        np.testing.assert_allclose(grads.weight(i), dw_fd.reshape(-1), atol=2e-3 * scale)
        np.testing.assert_allclose(grads.bias(i), db_fd.reshape(-1), atol=2e-3 * scale)


def test_backward_gradient_zero_at_exact_fit():
    cfg = NetworkConfig(1, 1, 1, (fc_layer(1, activation="none"),))
    ws = ws_from_arrays(cfg, {0: ([2.0], [1.0])})
    grads, loss = backward(cfg, ws, Tensor(np.array([[[3.0]]], dtype=np.float32)), 7.0)
    assert loss == pytest.approx(0.0)
    assert grads.weight(0)[0] == pytest.approx(0.0)
    assert grads.bias(0)[0] == pytest.approx(0.0)
