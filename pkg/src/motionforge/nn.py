"""Minimal float64 neural-net layers with hand-written backprop.

Layers cache whatever the backward pass needs in an explicit dict, so a
forward/backward pair computes exact gradients of the forward computation.
The test suite checks every parameter against central finite differences.
"""

from __future__ import annotations

import numpy as np


def xavier_uniform(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-s, s, size=(d_in, d_out))


def sinusoidal_positions(max_len: int, d: int) -> np.ndarray:
    """Fixed sin/cos position table, shape (max_len, d)."""
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.zeros((max_len, d))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def _acc(grads: dict, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


class Dense:
    """Affine map over the last axis."""

    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator):
        self.name = name
        self.w = xavier_uniform(rng, d_in, d_out)
        self.b = np.zeros(d_out)

    def named_params(self):
        return [(self.name + ".w", self.w), (self.name + ".b", self.b)]

    def forward(self, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
        if cache is not None:
            cache[self.name + ".x"] = x
        return x @ self.w + self.b

    def backward(self, d_out: np.ndarray, cache: dict, grads: dict) -> np.ndarray:
        x = cache[self.name + ".x"]
        x2 = x.reshape(-1, x.shape[-1])
        g2 = d_out.reshape(-1, d_out.shape[-1])
        _acc(grads, self.name + ".w", x2.T @ g2)
        _acc(grads, self.name + ".b", g2.sum(axis=0))
        return d_out @ self.w.T


class LayerNorm:
    def __init__(self, name: str, d: int, eps: float = 1e-6):
        self.name = name
        self.gain = np.ones(d)
        self.bias = np.zeros(d)
        self.eps = eps

    def named_params(self):
        return [(self.name + ".gain", self.gain), (self.name + ".bias", self.bias)]

    def forward(self, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        if cache is not None:
            cache[self.name + ".xhat"] = xhat
            cache[self.name + ".inv"] = inv
        return xhat * self.gain + self.bias

    def backward(self, d_out: np.ndarray, cache: dict, grads: dict) -> np.ndarray:
        xhat = cache[self.name + ".xhat"]
        inv = cache[self.name + ".inv"]
        d = xhat.shape[-1]
        flat = (-1, d)
        _acc(grads, self.name + ".gain", (d_out * xhat).reshape(flat).sum(axis=0))
        _acc(grads, self.name + ".bias", d_out.reshape(flat).sum(axis=0))
        dxhat = d_out * self.gain
        # dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - m1 - xhat * m2)


class Dropout:
    """Inverted dropout; identity when inactive (p == 0 or no rng given)."""

    def __init__(self, name: str, p: float):
        self.name = name
        self.p = p

    def forward(self, x, cache=None, rng: np.random.Generator | None = None):
        if rng is None or self.p <= 0.0:
            if cache is not None:
                cache[self.name + ".mask"] = None
            return x
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        if cache is not None:
            cache[self.name + ".mask"] = mask
        return x * mask

    def backward(self, d_out, cache, grads):
        mask = cache[self.name + ".mask"]
        return d_out if mask is None else d_out * mask


class MultiHeadAttention:
    """Bidirectional self-attention over (..., n_tokens, d)."""

    def __init__(self, name: str, d: int, heads: int, rng: np.random.Generator):
        assert d % heads == 0
        self.name = name
        self.d = d
        self.heads = heads
        self.dk = d // heads
        self.wq = Dense(name + ".wq", d, d, rng)
        self.wk = Dense(name + ".wk", d, d, rng)
        self.wv = Dense(name + ".wv", d, d, rng)
        self.wo = Dense(name + ".wo", d, d, rng)

    def named_params(self):
        out = []
        for lin in (self.wq, self.wk, self.wv, self.wo):
            out.extend(lin.named_params())
        return out

    def _split(self, x):
        # (B, N, d) -> (B, H, N, dk)
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.dk).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, h, n, dk = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, n, h * dk)

    def forward(self, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        q = self._split(self.wq.forward(x, cache))
        k = self._split(self.wk.forward(x, cache))
        v = self._split(self.wv.forward(x, cache))
        scores = q @ k.swapaxes(-1, -2) / np.sqrt(self.dk)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        p = e / e.sum(axis=-1, keepdims=True)
        ctx = self._merge(p @ v)
        if cache is not None:
            cache[self.name + ".p"] = p
            cache[self.name + ".q"] = q
            cache[self.name + ".k"] = k
            cache[self.name + ".v"] = v
            cache[self.name + ".squeeze"] = squeeze
        out = self.wo.forward(ctx, cache)
        return out[0] if squeeze else out

    def backward(self, d_out: np.ndarray, cache: dict, grads: dict) -> np.ndarray:
        squeeze = cache[self.name + ".squeeze"]
        if squeeze:
            d_out = d_out[None]
        p = cache[self.name + ".p"]
        q = cache[self.name + ".q"]
        k = cache[self.name + ".k"]
        v = cache[self.name + ".v"]
        d_ctx = self._split(self.wo.backward(d_out, cache, grads))
        dp = d_ctx @ v.swapaxes(-1, -2)
        dv = p.swapaxes(-1, -2) @ d_ctx
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
        ds /= np.sqrt(self.dk)
        dq = ds @ k
        dk_ = ds.swapaxes(-1, -2) @ q
        dx = self.wq.backward(self._merge(dq), cache, grads)
        dx += self.wk.backward(self._merge(dk_), cache, grads)
        dx += self.wv.backward(self._merge(dv), cache, grads)
        return dx[0] if squeeze else dx


class FeedForward:
    """Dense -> ReLU -> Dense."""

    def __init__(self, name: str, d: int, d_hidden: int, rng: np.random.Generator):
        self.name = name
        self.lin1 = Dense(name + ".lin1", d, d_hidden, rng)
        self.lin2 = Dense(name + ".lin2", d_hidden, d, rng)

    def named_params(self):
        return self.lin1.named_params() + self.lin2.named_params()

    def forward(self, x, cache=None):
        h = self.lin1.forward(x, cache)
        r = np.maximum(h, 0.0)
        if cache is not None:
            cache[self.name + ".pos"] = h > 0
        return self.lin2.forward(r, cache)

    def backward(self, d_out, cache, grads):
        dr = self.lin2.backward(d_out, cache, grads)
        dh = dr * cache[self.name + ".pos"]
        return self.lin1.backward(dh, cache, grads)


class EncoderLayer:
    """Pre-LN transformer encoder layer with residual connections."""

    def __init__(self, name, d, heads, d_ffn, dropout, rng):
        self.name = name
        self.ln1 = LayerNorm(name + ".ln1", d)
        self.attn = MultiHeadAttention(name + ".attn", d, heads, rng)
        self.drop1 = Dropout(name + ".drop1", dropout)
        self.ln2 = LayerNorm(name + ".ln2", d)
        self.ffn = FeedForward(name + ".ffn", d, d_ffn, rng)
        self.drop2 = Dropout(name + ".drop2", dropout)

    def named_params(self):
        return (self.ln1.named_params() + self.attn.named_params()
                + self.ln2.named_params() + self.ffn.named_params())

    def forward(self, x, cache=None, rng=None):
        a = self.drop1.forward(self.attn.forward(self.ln1.forward(x, cache), cache),
                               cache, rng)
        x1 = x + a
        f = self.drop2.forward(self.ffn.forward(self.ln2.forward(x1, cache), cache),
                               cache, rng)
        return x1 + f

    def backward(self, d_out, cache, grads):
        df = self.drop2.backward(d_out, cache, grads)
        dx1 = d_out + self.ln2.backward(self.ffn.backward(df, cache, grads),
                                        cache, grads)
        da = self.drop1.backward(dx1, cache, grads)
        return dx1 + self.ln1.backward(self.attn.backward(da, cache, grads),
                                       cache, grads)


class TransformerEncoder:
    """Stack of encoder layers with a final LayerNorm."""

    def __init__(self, name, d, layers, heads, d_ffn, dropout, rng):
        self.name = name
        self.layers = [
            EncoderLayer(f"{name}.layers.{i}", d, heads, d_ffn, dropout, rng)
            for i in range(layers)
        ]
        self.ln_out = LayerNorm(name + ".ln_out", d)

    def named_params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.named_params())
        out.extend(self.ln_out.named_params())
        return out

    def forward(self, x, cache=None, rng=None):
        for layer in self.layers:
            x = layer.forward(x, cache, rng)
        return self.ln_out.forward(x, cache)

    def backward(self, d_out, cache, grads):
        dx = self.ln_out.backward(d_out, cache, grads)
        for layer in reversed(self.layers):
            dx = layer.backward(dx, cache, grads)
        return dx


class Adam:
    """Adam with bias correction, updating parameter arrays in place."""

    def __init__(self, param_list, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(param_list)  # [(name, array)]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in self.params}
        self.v = {name: np.zeros_like(p) for name, p in self.params}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params:
            g = grads.get(name)
            if g is None:
                continue
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / (1 - b1 ** self.t)
            vhat = self.v[name] / (1 - b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
