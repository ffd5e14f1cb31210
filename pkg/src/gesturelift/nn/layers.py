"""Layers with hand-written backward passes.

Sequence tensors are channels-last: ``(batch, time, channels)``.  Each layer
reads its weights from a :class:`ParamStore` by name at call time, so a model
can be re-evaluated in float64 by swapping the store (used by gradient
checks).  ``forward`` returns ``(output, cache)``; ``backward`` takes the
upstream gradient and that cache, adds parameter gradients into the store
and returns the input gradient.
"""

from __future__ import annotations

import numpy as np

from gesturelift.errors import StructuralError
from gesturelift.nn.params import ParamStore


def _init(rng, shape, fan_in, gain, dtype):
    return (rng.standard_normal(shape) * (gain / np.sqrt(fan_in))).astype(dtype)


class Dense:
    def __init__(self, store: ParamStore, name, n_in, n_out, rng, gain=1.0, zero=False):
        self.store = store
        self.n_in, self.n_out = n_in, n_out
        w = np.zeros((n_in, n_out)) if zero else _init(rng, (n_in, n_out), n_in, gain, store.dtype)
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", np.zeros(n_out))

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise StructuralError(f"dense layer expects width {self.n_in}, got {x.shape[-1]}")
        return x @ self.store[self.w] + self.store[self.b], x

    def backward(self, dy, x):
        w = self.store[self.w]
        self.store.accumulate(self.w, x.reshape(-1, self.n_in).T @ dy.reshape(-1, self.n_out))
        self.store.accumulate(self.b, dy.reshape(-1, self.n_out).sum(axis=0))
        return dy @ w.T


def conv1d(x, w, b, dilation=1, padding="same"):
    """Dilated cross-correlation along time.

    ``x``: ``(B, T, C_in)``; ``w``: ``(k, C_in, C_out)``; ``b``: ``(C_out,)``.
    ``padding="same"`` pads ``dilation * (k - 1)`` zeros split evenly (extra
    one on the right), ``"valid"`` pads nothing.
    """
    k = w.shape[0]
    if dilation < 1:
        raise StructuralError("dilation must be >= 1")
    if x.ndim != 3 or x.shape[2] != w.shape[1]:
        raise StructuralError(f"conv1d expects (B, T, {w.shape[1]}) input, got {x.shape}")
    span = dilation * (k - 1)
    if padding == "same":
        left = span // 2
        right = span - left
    elif padding == "valid":
        left = right = 0
    else:
        raise StructuralError(f"unknown padding mode {padding!r}")
    t_in = x.shape[1]
    t_out = t_in + left + right - span
    if t_out < 1:
        raise StructuralError(f"kernel span {span + 1} exceeds padded input length {t_in + left + right}")
    xp = np.pad(x, ((0, 0), (left, right), (0, 0))) if left or right else x
    y = np.broadcast_to(b, (x.shape[0], t_out, w.shape[2])).copy()
    for j in range(k):
        y += xp[:, j * dilation:j * dilation + t_out] @ w[j]
    return y, (xp, left, t_in, dilation)


def conv1d_backward(dy, w, cache):
    """Gradients ``(dx, dw, db)`` for :func:`conv1d`."""
    xp, left, t_in, dilation = cache
    k, c_in, c_out = w.shape
    t_out = dy.shape[1]
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    dy2 = dy.reshape(-1, c_out)
    for j in range(k):
        sl = slice(j * dilation, j * dilation + t_out)
        dw[j] = xp[:, sl].reshape(-1, c_in).T @ dy2
        dxp[:, sl] += dy @ w[j].T
    return dxp[:, left:left + t_in], dw, dy2.sum(axis=0)


class Conv1d:
    def __init__(self, store: ParamStore, name, c_in, c_out, kernel, rng, dilation=1,
                 padding="same", gain=1.0, zero=False):
        self.store = store
        self.kernel, self.dilation, self.padding = kernel, dilation, padding
        shape = (kernel, c_in, c_out)
        w = np.zeros(shape) if zero else _init(rng, shape, kernel * c_in, gain, store.dtype)
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", np.zeros(c_out))

    @property
    def receptive_field(self) -> int:
        return self.dilation * (self.kernel - 1) + 1

    def forward(self, x):
        return conv1d(x, self.store[self.w], self.store[self.b], self.dilation, self.padding)

    def backward(self, dy, cache):
        dx, dw, db = conv1d_backward(dy, self.store[self.w], cache)
        self.store.accumulate(self.w, dw)
        self.store.accumulate(self.b, db)
        return dx


def receptive_field(layers) -> int:
    """Receptive field of a stack of convolutions applied in sequence."""
    return 1 + sum(layer.dilation * (layer.kernel - 1) for layer in layers)


def relu(x):
    return np.maximum(x, 0), x


def relu_backward(dy, x):
    return dy * (x > 0)


def tanh(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy, y):
    return dy * (1 - y * y)


def sigmoid(x):
    # split on sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mse(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    if pred.shape != target.shape:
        raise StructuralError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


class GRU:
    """Single-direction GRU layer.

    Gate order in the packed weights is reset, update, candidate:

        r = sigmoid(x Wr + h Ur + b)      z = sigmoid(x Wz + h Uz + b)
        n = tanh(x Wn + bn + r * (h Un + bn'))
        h' = (1 - z) * n + z * h
    """

    def __init__(self, store: ParamStore, name, n_in, hidden, rng):
        self.store = store
        self.n_in, self.hidden = n_in, hidden
        self.wx = store.add(f"{name}.wx", _init(rng, (n_in, 3 * hidden), n_in, 1.0, store.dtype))
        self.wh = store.add(f"{name}.wh", _init(rng, (hidden, 3 * hidden), hidden, 1.0, store.dtype))
        self.bx = store.add(f"{name}.bx", np.zeros(3 * hidden))
        self.bh = store.add(f"{name}.bh", np.zeros(3 * hidden))

    def _check(self, x, h):
        if x.shape[-1] != self.n_in or h.shape[-1] != self.hidden:
            raise StructuralError(
                f"GRU expects input width {self.n_in} and hidden width {self.hidden}, "
                f"got {x.shape[-1]} and {h.shape[-1]}"
            )

    def _cell(self, gx, h):
        H = self.hidden
        gh = h @ self.store[self.wh] + self.store[self.bh]
        r = sigmoid(gx[:, :H] + gh[:, :H])
        z = sigmoid(gx[:, H:2 * H] + gh[:, H:2 * H])
        n = np.tanh(gx[:, 2 * H:] + r * gh[:, 2 * H:])
        h_new = (1 - z) * n + z * h
        return h_new, (h, r, z, n, gh[:, 2 * H:])

    def _cell_backward(self, dh_new, cache):
        h, r, z, n, ghn = cache
        dn = dh_new * (1 - z)
        dz = dh_new * (h - n)
        dan = dn * (1 - n * n)
        dr = dan * ghn
        dar = dr * r * (1 - r)
        daz = dz * z * (1 - z)
        dgh = np.concatenate([dar, daz, dan * r], axis=1)
        dgx = np.concatenate([dar, daz, dan], axis=1)
        dh = dh_new * z + dgh @ self.store[self.wh].T
        return dgx, dgh, dh

    def step(self, x, h):
        """One recurrence step for ``x``: ``(B, n_in)``, ``h``: ``(B, hidden)``."""
        self._check(x, h)
        gx = x @ self.store[self.wx] + self.store[self.bx]
        h_new, cache = self._cell(gx, h)
        return h_new, (x, cache)

    def step_backward(self, dh_new, cache):
        x, cell_cache = cache
        dgx, dgh, dh = self._cell_backward(dh_new, cell_cache)
        self.store.accumulate(self.wh, cell_cache[0].T @ dgh)
        self.store.accumulate(self.bh, dgh.sum(axis=0))
        self.store.accumulate(self.wx, x.T @ dgx)
        self.store.accumulate(self.bx, dgx.sum(axis=0))
        return dgx @ self.store[self.wx].T, dh

    def forward(self, xs, h0=None, reverse=False):
        """Run over ``xs``: ``(B, T, n_in)``; returns all hidden states ``(B, T, hidden)``."""
        B, T, _ = xs.shape
        h = np.zeros((B, self.hidden), dtype=xs.dtype) if h0 is None else h0
        self._check(xs, h)
        gx_all = xs @ self.store[self.wx] + self.store[self.bx]
        hs = np.empty((B, T, self.hidden), dtype=xs.dtype)
        caches = [None] * T
        order = range(T - 1, -1, -1) if reverse else range(T)
        for t in order:
            h, caches[t] = self._cell(gx_all[:, t], h)
            hs[:, t] = h
        return hs, (xs, caches, reverse)

    def backward(self, dhs, cache):
        xs, caches, reverse = cache
        B, T, _ = xs.shape
        dgx_all = np.empty((B, T, 3 * self.hidden), dtype=xs.dtype)
        dwh = np.zeros_like(self.store[self.wh])
        dbh = np.zeros_like(self.store[self.bh])
        dh = np.zeros((B, self.hidden), dtype=xs.dtype)
        order = range(T) if reverse else range(T - 1, -1, -1)
        for t in order:
            dgx, dgh, dh = self._cell_backward(dhs[:, t] + dh, caches[t])
            dgx_all[:, t] = dgx
            dwh += caches[t][0].T @ dgh
            dbh += dgh.sum(axis=0)
        self.store.accumulate(self.wh, dwh)
        self.store.accumulate(self.bh, dbh)
        self.store.accumulate(self.wx, xs.reshape(-1, self.n_in).T @ dgx_all.reshape(-1, 3 * self.hidden))
        self.store.accumulate(self.bx, dgx_all.reshape(-1, 3 * self.hidden).sum(axis=0))
        return dgx_all @ self.store[self.wx].T, dh


class BiGRU:
    """Forward and backward GRUs whose outputs are concatenated per frame."""

    def __init__(self, store, name, n_in, hidden, rng):
        self.fwd = GRU(store, f"{name}.fwd", n_in, hidden, rng)
        self.bwd = GRU(store, f"{name}.bwd", n_in, hidden, rng)
        self.hidden = hidden

    def forward(self, xs):
        hf, cf = self.fwd.forward(xs)
        hb, cb = self.bwd.forward(xs, reverse=True)
        return np.concatenate([hf, hb], axis=-1), (cf, cb)

    def backward(self, dy, cache):
        cf, cb = cache
        H = self.hidden
        dxf, _ = self.fwd.backward(dy[..., :H], cf)
        dxb, _ = self.bwd.backward(dy[..., H:], cb)
        return dxf + dxb


def sinusoidal_embedding(steps, dim):
    """Transformer-style sinusoidal embedding of integer steps, shape ``(len(steps), dim)``."""
    steps = np.asarray(steps, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = steps[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)
