import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metaiot import neuralnet as nn
from metaiot.errors import ArgumentError, DataError, ShapeError, TrainingError

RNG = np.random.default_rng(0)


def tiny_net(**kw):
    return nn.NetworkSpec(in_channels=2, depth=kw.pop("depth", 2), base_channels=kw.pop("base", 2), **kw)


# single layers

def test_identity_one_by_one_conv():
    spec = nn.LayerSpec("conv", 3, 3, kernel=(1, 1), padding=(0, 0), activation="none")
    W = np.eye(3).reshape(3, 3, 1, 1)
    x = RNG.standard_normal((2, 3, 5, 4))
    assert np.array_equal(nn.layer_forward(x, spec, (W, np.zeros(3))), x)


def test_zero_weights_relu_gives_zero():
    spec = nn.LayerSpec("conv", 2, 4)
    x = RNG.standard_normal((1, 2, 6, 6))
    out = nn.layer_forward(x, spec, (np.zeros(spec.weight_shape), np.zeros(4)))
    assert out.shape == (1, 4, 6, 6) and not out.any()


def test_stride_two_shape():
    spec = nn.LayerSpec("conv", 1, 1, stride=(2, 2))
    x = RNG.standard_normal((1, 1, 32, 8))
    W = RNG.standard_normal(spec.weight_shape)
    assert nn.layer_forward(x, spec, (W, np.zeros(1))).shape == (1, 1, 16, 4)
    assert spec.out_shape(32, 8) == (16, 4)


def test_conv_matches_direct_cross_correlation():
    spec = nn.LayerSpec("conv", 2, 3, stride=(2, 1), activation="none")
    x = RNG.standard_normal((1, 2, 7, 5))
    W = RNG.standard_normal(spec.weight_shape)
    b = RNG.standard_normal(3)
    out = nn.layer_forward(x, spec, (W, b))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for o in range(3):
        for r in range(out.shape[2]):
            for c in range(out.shape[3]):
                ref[0, o, r, c] = np.sum(xp[0, :, 2 * r:2 * r + 3, c:c + 3] * W[o]) + b[o]
    assert np.allclose(out, ref, atol=1e-12)


def test_deconv_is_adjoint_of_conv():
    conv = nn.LayerSpec("conv", 3, 4, stride=(2, 2), activation="none")
    deconv = nn.LayerSpec("deconv", 4, 3, stride=(2, 2), activation="none")
    W = RNG.standard_normal(conv.weight_shape)  # (4, 3, 3, 3) serves both
    x = RNG.standard_normal((1, 3, 8, 6))
    y = RNG.standard_normal((1, 4, 4, 3))
    cx = nn.layer_forward(x, conv, (W, np.zeros(4)))
    dy = nn.layer_forward(y, deconv, (W, np.zeros(3)), target=(8, 6))
    assert np.sum(cx * y) == pytest.approx(np.sum(x * dy), rel=1e-12)


def test_channel_mismatch_and_bad_spec_rejected():
    spec = nn.LayerSpec("conv", 2, 2)
    with pytest.raises(ShapeError):
        nn.layer_forward(np.zeros((1, 3, 4, 4)), spec, (np.zeros(spec.weight_shape), np.zeros(2)))
    with pytest.raises(ArgumentError):
        nn.LayerSpec("state", 2, 2, stride=(2, 2))
    with pytest.raises(ArgumentError):
        nn.NetworkSpec(in_channels=2, depth=7)


# network

def test_output_shape_and_range_for_sensing_layout():
    net = nn.NetworkSpec(in_channels=6, depth=4, base_channels=8)
    M = RNG.random((1, 6, 32, 8))
    out = nn.network_forward(M, net, nn.init_weights(net, 1))
    assert out.shape == M.shape
    assert np.all((out >= 0) & (out <= 1))


@settings(max_examples=20)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(4, 33), st.integers(2, 12))
def test_shape_round_trip(depth, ch, h, w):
    net = nn.NetworkSpec(in_channels=ch, depth=depth, base_channels=2)
    M = np.random.default_rng(depth).random((1, ch, h, w))
    assert nn.network_forward(M, net, nn.init_weights(net, 0)).shape == M.shape


def test_overfit_single_sample():
    net = nn.NetworkSpec(in_channels=6, depth=4, base_channels=32)
    M = np.random.default_rng(5).random((1, 6, 32, 8))
    weights, hist = nn.train(M, net, epochs=500, seed=0)
    assert hist[-1] < 0.01 * hist[0]


# gradients

def test_zero_gradient_at_exact_reconstruction():
    net = tiny_net()
    weights = nn.init_weights(net, 3)
    caches: list = []
    out = nn.network_forward(RNG.random((1, 2, 8, 4)), net, weights, caches)
    assert nn.reconstruction_loss(out, out) == 0.0
    # dL/dM~ = 2 (M~ - M) / n vanishes when M~ = M
    grads = nn.network_backward(2 * (out - out) / out.size, net, weights, caches)
    assert all(not g.any() and not b.any() for g, b in grads)


def test_gradient_shapes_and_dead_channel():
    net = tiny_net(depth=1)
    weights = nn.init_weights(net, 0)
    W, b = weights[0]
    b = b.copy()
    b[0] = -1e6  # relu never fires for this channel
    weights[0] = (W, b)
    _, grads = nn.loss_and_grad(RNG.random((1, 2, 8, 4)), net, weights)
    assert [g.shape for g, _ in grads] == [w.shape for w, _ in weights]
    assert not grads[0][0][0].any() and grads[0][1][0] == 0.0


def test_gradient_check_tiny_net():
    assert nn.gradient_check(tiny_net(), RNG.random((1, 2, 8, 4)), seed=1) < 1e-4


def test_gradient_check_depth_one():
    assert nn.gradient_check(tiny_net(depth=1), RNG.random((1, 2, 8, 4)), seed=2) < 1e-4


def test_gradient_check_linear_net():
    # the loss is quadratic in each single weight, so central differences are exact
    # up to rounding; a wider step keeps rounding below the tolerance
    net = tiny_net(hidden_activation="none", output_activation="none")
    assert nn.gradient_check(net, RNG.random((1, 2, 8, 4)), eps=1e-3, seed=4) < 1e-7


def test_loss_scaling_scales_gradients():
    net = tiny_net()
    weights = nn.init_weights(net, 6)
    M = RNG.random((2, 2, 8, 4))
    l1, g1 = nn.loss_and_grad(M, net, weights)
    l2, g2 = nn.loss_and_grad(M, net, weights, scale=2.0)
    assert l2 == 2 * l1
    assert all(np.array_equal(2 * a, c) and np.array_equal(2 * b, d) for (a, b), (c, d) in zip(g1, g2))


# Adam

def test_adam_zero_gradient_leaves_weights_unchanged():
    net = tiny_net()
    weights = nn.init_weights(net, 0)
    zeros = [(np.zeros_like(W), np.zeros_like(b)) for W, b in weights]
    new, state = nn.adam_step(weights, zeros, nn.AdamState.zeros(weights))
    assert state.step == 1
    assert all(np.array_equal(a, c) and np.array_equal(b, d) for (a, b), (c, d) in zip(weights, new))


def test_adam_constant_gradient_unit_step():
    w = [(np.array([0.0, 0.0]), np.array([0.0]))]
    g = [(np.array([3.0, -0.02]), np.array([1e-3]))]
    state = nn.AdamState.zeros(w, lr=1e-3)
    for _ in range(999):
        w, state = nn.adam_step(w, g, state)
    before = nn.flatten(w)
    w, state = nn.adam_step(w, g, state)
    step = np.abs(nn.flatten(w) - before)
    assert state.step == 1000
    assert np.allclose(step, 1e-3, rtol=0.01)


def test_adam_rejects_non_finite_gradient():
    w = [(np.zeros(2), np.zeros(1))]
    with pytest.raises(TrainingError):
        nn.adam_step(w, [(np.array([np.nan, 0.0]), np.zeros(1))], nn.AdamState.zeros(w))


def test_training_is_deterministic_and_makes_progress():
    net = tiny_net()
    data = np.random.default_rng(8).random((50, 2, 8, 4))
    wa, ha = nn.train(data, net, epochs=200, batch_size=10, seed=3)
    wb, hb = nn.train(data, net, epochs=200, batch_size=10, seed=3)
    assert np.array_equal(nn.flatten(wa), nn.flatten(wb)) and ha == hb
    assert len(ha) == 201
    assert ha[-1] < ha[0]
    with pytest.raises(DataError):
        nn.train(np.zeros((0, 2, 8, 4)), net)


# checkpoints

def test_checkpoint_round_trip(tmp_path):
    net = nn.NetworkSpec(in_channels=6, depth=3, base_channels=4)
    weights = nn.init_weights(net, 9)
    nn.Checkpoint(net, weights, seed=9, epoch=12, loss_history=[0.5, 0.25]).save(tmp_path)
    raw = np.fromfile(tmp_path / "weights.bin", dtype="<f8")
    assert raw.size == net.n_params
    back = nn.Checkpoint.load(tmp_path)
    assert back.spec == net and back.seed == 9 and back.epoch == 12
    assert back.loss_history == [0.5, 0.25]
    assert np.array_equal(nn.flatten(back.weights), nn.flatten(weights))


def test_checkpoint_errors(tmp_path):
    with pytest.raises(DataError):
        nn.Checkpoint.load(tmp_path / "missing")
    with pytest.raises(ShapeError):
        nn.unflatten(np.zeros(3), tiny_net())
