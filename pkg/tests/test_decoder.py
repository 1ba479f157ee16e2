import numpy as np
import pytest

from tensoravatar.decoder import (MlpParams, PosEncConfig, decode_color, decode_color_backward,
                                  decode_opacity_offset, decode_opacity_offset_backward, init_mlp, mlp_backward,
                                  mlp_forward, posenc, posenc_backward)
from tensoravatar.errors import DimensionMismatch

from conftest import central_diff, rel_err


def gemv_oracle(params, x):
    """Row-by-row matrix-vector products with explicit loops."""
    h = np.array(x, dtype=float)
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = np.array([sum(h[i] * W[i, j] for i in range(W.shape[0])) + b[j] for j in range(W.shape[1])])
        last = l == len(params.weights) - 1
        if not last:
            h = np.maximum(z, 0)
        elif params.head == "sigmoid":
            h = 1 / (1 + np.exp(-z))
        elif params.head == "tanh":
            h = np.tanh(z)
        else:
            h = z
    return h


def posenc_oracle(v, n_freq, include_input):
    out = list(v) if include_input else []
    for k in range(n_freq):
        out += [np.sin(2 ** k * np.pi * c) for c in v]
        out += [np.cos(2 ** k * np.pi * c) for c in v]
    return np.array(out)


def test_posenc_zero_input_pattern():
    e = posenc(np.zeros(3), PosEncConfig(2, include_input=False))
    np.testing.assert_array_equal(e, [0, 0, 0, 1, 1, 1, 0, 0, 0, 1, 1, 1])


def test_posenc_identity_and_by_hand(rng):
    v = rng.normal(size=3)
    np.testing.assert_array_equal(posenc(v, PosEncConfig(0, True)), v)
    e = posenc(np.array([1.0, 0, 0]), PosEncConfig(1, False))
    np.testing.assert_allclose(e, [0, 0, 0, -1, 1, 1], atol=1e-15)
    assert PosEncConfig().out_dim(3) == 27
    for _ in range(20):
        v = rng.normal(size=3)
        np.testing.assert_allclose(posenc(v), posenc_oracle(v, 4, True), atol=1e-12)


def test_posenc_backward_fd(rng):
    for _ in range(100):
        v = rng.normal(size=(1, 3))
        g = rng.normal(size=(1, 27))
        an = posenc_backward(v, g)
        fd = np.array([central_diff(lambda: np.sum(g * posenc(v)), v, i, h=1e-6) for i in range(3)])
        assert rel_err(an.ravel(), fd) < 1e-6


def test_zero_net_outputs():
    for head, want in (("sigmoid", 0.5), ("tanh", 0.0), ("linear", 0.0)):
        p = MlpParams([np.zeros((4, 2))], [np.zeros(2)], head)
        np.testing.assert_allclose(mlp_forward(p, np.ones(4)), want)
    p = MlpParams([np.zeros((4, 2))], [np.array([0.3, -1.0])], "tanh")
    np.testing.assert_allclose(mlp_forward(p, np.ones(4)), np.tanh([0.3, -1.0]))


def test_relu_clamp():
    p = MlpParams([np.eye(2), np.eye(2)], [np.zeros(2), np.zeros(2)], "linear")
    np.testing.assert_array_equal(mlp_forward(p, np.array([-1.0, 2.0])), [0.0, 2.0])


def test_mlp_matches_gemv_oracle(rng):
    for head in ("sigmoid", "tanh", "linear"):
        p = init_mlp([5, 7, 6, 3], head, rng)
        for b in p.biases:
            b += rng.normal(size=b.shape)
        for _ in range(10):
            x = rng.normal(size=5)
            np.testing.assert_allclose(mlp_forward(p, x), gemv_oracle(p, x), atol=1e-12, rtol=0)


def test_init_bounds(rng):
    p = init_mlp([16, 8, 1], "tanh", rng)
    assert np.all(np.abs(p.weights[0]) <= 0.25) and np.all(p.biases[0] == 0)
    assert p.dims == [16, 8, 1] and p.activations == ("relu", "tanh")


def test_mlp_weight_gradients_fd(rng):
    # two hidden layers of width 8 on 8 inputs with a scalar head; >= 100 checked weights
    checked = 0
    while checked < 100:
        p = init_mlp([8, 8, 8, 1], "tanh", rng)
        for b in p.biases:
            b += rng.normal(0, 0.1, b.shape)
        x = rng.normal(size=(4, 8))
        g = rng.normal(size=(4, 1))
        grads, _ = mlp_backward(p, x, g)
        f = lambda: np.sum(g * mlp_forward(p, x))
        for name, arr in p.tensors().items():
            for idx in rng.choice(arr.size, size=min(arr.size, 6), replace=False):
                fd = central_diff(f, arr, int(idx), h=1e-6)
                an = grads[name].reshape(-1)[idx]
                assert abs(an - fd) <= 1e-6 * max(abs(fd), 1e-3), name
                checked += 1


def test_mlp_input_gradient_fd(rng):
    for _ in range(100):
        p = init_mlp([6, 8, 2], "sigmoid", rng)
        x = rng.normal(size=(1, 6))
        g = rng.normal(size=(1, 2))
        _, dx = mlp_backward(p, x, g)
        fd = np.array([central_diff(lambda: np.sum(g * mlp_forward(p, x)), x, i, h=1e-7) for i in range(6)])
        assert rel_err(dx.ravel(), fd, floor=1e-4) < 1e-5


def test_zero_upstream_gradient(rng):
    p = init_mlp([4, 8, 3], "sigmoid", rng)
    grads, dx = mlp_backward(p, rng.normal(size=(3, 4)), np.zeros((3, 3)))
    assert all(np.all(v == 0) for v in grads.values()) and np.all(dx == 0)


def test_color_decoder(rng):
    feat_dim = 10
    dims = [feat_dim + 27, 16, 3]
    zero = MlpParams([np.zeros((dims[0], 16)), np.zeros((16, 3))], [np.zeros(16), np.zeros(3)], "sigmoid")
    np.testing.assert_allclose(decode_color(np.ones(feat_dim), np.array([0, 0, 1.0]), zero), 0.5)
    p = init_mlp(dims, "sigmoid", rng)
    f = rng.normal(size=feat_dim)
    a, b = decode_color(f, np.array([0, 0, 1.0]), p), decode_color(f, np.array([1.0, 0, 0]), p)
    assert not np.allclose(a, b)
    v = rng.normal(size=3)
    np.testing.assert_allclose(decode_color(f, v, p), gemv_oracle(p, np.concatenate([f, posenc_oracle(v, 4, True)])),
                               atol=1e-12)
    batch = decode_color(rng.normal(size=(50, feat_dim)) * 5, rng.normal(size=(50, 3)), p)
    assert np.all((batch > 0) & (batch < 1))
    with pytest.raises(DimensionMismatch):
        decode_color(np.ones(3), v, p)


def test_color_decoder_backward_fd(rng):
    p = init_mlp([4 + 27, 8, 3], "sigmoid", rng)
    for _ in range(100):
        f = rng.normal(size=(1, 4))
        v = rng.normal(size=(1, 3))
        g = rng.normal(size=(1, 3))
        _, cache = decode_color(f, v, p, return_cache=True)
        _, df, dv = decode_color_backward(f, v, p, g, cache)
        obj = lambda: np.sum(g * decode_color(f, v, p))
        fdf = np.array([central_diff(obj, f, i) for i in range(4)])
        fdv = np.array([central_diff(obj, v, i) for i in range(3)])
        assert rel_err(df.ravel(), fdf, floor=1e-4) < 1e-4
        assert rel_err(dv.ravel(), fdv, floor=1e-4) < 1e-4


def test_opacity_decoder(rng):
    n = 4
    zero = MlpParams([np.zeros((6 * n, 8)), np.zeros((8, 1))], [np.zeros(8), np.zeros(1)], "tanh")
    assert decode_opacity_offset(np.ones(3 * n), np.ones(3 * n), zero) == 0.0
    p = init_mlp([6 * n, 8, 8, 1], "tanh", rng)
    lb, lr = rng.normal(size=3 * n), rng.normal(size=3 * n)
    assert decode_opacity_offset(lb, lr, p) == pytest.approx(gemv_oracle(p, np.concatenate([lb, lr]))[0], abs=1e-12)
    small = decode_opacity_offset(rng.uniform(-1e-4, 1e-4, (20, 3 * n)), rng.uniform(-1e-4, 1e-4, (20, 3 * n)), p)
    assert np.all(np.abs(small) < 1e-3)
    big = decode_opacity_offset(rng.normal(size=(50, 3 * n)) * 20, rng.normal(size=(50, 3 * n)) * 20, p)
    assert np.all(np.abs(big) <= 1)


def test_opacity_decoder_backward_fd(rng):
    n = 2
    p = init_mlp([6 * n, 8, 1], "tanh", rng)
    for _ in range(100):
        lb, lr = rng.normal(size=(1, 3 * n)), rng.normal(size=(1, 3 * n))
        g = rng.normal(size=1)
        _, cache = decode_opacity_offset(lb, lr, p, return_cache=True)
        _, dlb, dlr = decode_opacity_offset_backward(p, g, cache, 3 * n)
        obj = lambda: float(np.sum(g * decode_opacity_offset(lb, lr, p)))
        fd = np.array([central_diff(obj, lb, i) for i in range(3 * n)] + [central_diff(obj, lr, i) for i in range(3 * n)])
        assert rel_err(np.concatenate([dlb.ravel(), dlr.ravel()]), fd, floor=1e-4) < 1e-4


def test_forward_deterministic(rng):
    p = init_mlp([31, 16, 3], "sigmoid", rng)
    f, v = rng.normal(size=(20, 4)), rng.normal(size=(20, 3))
    assert np.array_equal(decode_color(f, v, p), decode_color(f, v, p))
