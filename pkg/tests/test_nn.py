"""Finite-difference gradient checks for the hand-written layers."""

import numpy as np

from motionforge import nn


def central_diff(f, arrays, h=1e-6):
    """Numerical gradient of scalar f() with respect to each array in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def grad_close(analytic, numeric, tol):
    """Relative agreement, with an absolute floor for zero gradients.

    A shared bias added to every attention key shifts all logits of a query
    equally, so softmax makes some true gradients exactly zero; those come
    back as finite-difference noise and need the absolute floor.
    """
    return np.allclose(analytic, numeric, rtol=tol, atol=1e-7)


def check_module_grads(module, x, seed=0, tol=1e-5):
    rng = np.random.default_rng(seed)
    d_out_fixed = rng.standard_normal(module.forward(x).shape)

    def loss():
        return float(np.sum(module.forward(x) * d_out_fixed))

    cache: dict = {}
    module.forward(x, cache)
    grads: dict = {}
    dx = module.backward(d_out_fixed, cache, grads)

    params = module.named_params()
    numeric = central_diff(loss, [p for _, p in params])
    for (name, _), num in zip(params, numeric):
        assert grad_close(grads[name], num, tol), name
    (num_dx,) = central_diff(loss, [x])
    assert grad_close(dx, num_dx, tol), "input gradient"


def test_dense_grads():
    rng = np.random.default_rng(1)
    lin = nn.Dense("lin", 5, 4, rng)
    check_module_grads(lin, rng.standard_normal((7, 5)))


def test_dense_batched_leading_dims():
    rng = np.random.default_rng(2)
    lin = nn.Dense("lin", 3, 6, rng)
    check_module_grads(lin, rng.standard_normal((2, 4, 3)))


def test_layernorm_grads():
    rng = np.random.default_rng(3)
    ln = nn.LayerNorm("ln", 8)
    ln.gain[:] = rng.standard_normal(8)
    ln.bias[:] = rng.standard_normal(8)
    check_module_grads(ln, rng.standard_normal((5, 8)))


def test_attention_grads():
    rng = np.random.default_rng(4)
    attn = nn.MultiHeadAttention("attn", 8, 2, rng)
    check_module_grads(attn, rng.standard_normal((6, 8)))


def test_attention_batched():
    rng = np.random.default_rng(5)
    attn = nn.MultiHeadAttention("attn", 8, 2, rng)
    check_module_grads(attn, rng.standard_normal((3, 5, 8)))


def test_ffn_grads():
    rng = np.random.default_rng(6)
    ffn = nn.FeedForward("ffn", 6, 12, rng)
    # keep activations away from the ReLU kink for clean finite differences
    x = rng.standard_normal((4, 6)) + 0.5
    cache: dict = {}
    ffn.forward(x, cache)
    check_module_grads(ffn, x)


def test_encoder_grads():
    rng = np.random.default_rng(7)
    enc = nn.TransformerEncoder("enc", 8, layers=2, heads=2, d_ffn=16,
                                dropout=0.0, rng=rng)
    check_module_grads(enc, rng.standard_normal((5, 8)), tol=2e-5)


def test_dropout_scaling_and_backward():
    rng = np.random.default_rng(8)
    drop = nn.Dropout("drop", 0.5)
    x = np.ones((100, 10))
    cache: dict = {}
    y = drop.forward(x, cache, np.random.default_rng(0))
    kept = y != 0
    assert np.allclose(y[kept], 2.0)  # inverted scaling by 1/(1-p)
    d = drop.backward(np.ones_like(y), cache, {})
    assert np.array_equal(d != 0, kept)
    # inactive without an rng
    assert drop.forward(x, {}, None) is x


def test_adam_bias_correction_matches_hand_computation():
    # single-parameter model, one step: m = (1-b1) g, v = (1-b2) g^2,
    # mhat = g, vhat = g^2, update = lr * g / (|g| + eps)
    p = np.array([1.0])
    opt = nn.Adam([("p", p)], lr=0.1)
    g = np.array([0.3])
    opt.step({"p": g})
    expected = 1.0 - 0.1 * 0.3 / (0.3 + 1e-8)
    assert abs(p[0] - expected) < 1e-12


def test_adam_zero_lr_is_identity():
    p = np.array([1.0, -2.0])
    opt = nn.Adam([("p", p)], lr=0.0)
    opt.step({"p": np.array([5.0, 5.0])})
    assert np.array_equal(p, [1.0, -2.0])


def test_sinusoidal_positions_shape_and_range():
    pe = nn.sinusoidal_positions(20, 16)
    assert pe.shape == (20, 16)
    assert np.abs(pe).max() <= 1.0
    assert not np.allclose(pe[0], pe[1])


def test_encoder_deterministic_without_dropout():
    rng = np.random.default_rng(9)
    enc = nn.TransformerEncoder("enc", 8, 1, 2, 16, dropout=0.1, rng=rng)
    x = rng.standard_normal((4, 8))
    assert np.array_equal(enc.forward(x), enc.forward(x))
