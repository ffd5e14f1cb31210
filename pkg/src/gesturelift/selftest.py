"""Quick closed-form metric checks and gradient checks, run by ``gesturelift selftest``."""

from __future__ import annotations

import math

import numpy as np

from gesturelift.metrics import FeatureStats, beat_consistency, diversity_once, fgd, matrix_sqrt_psd
from gesturelift.nn import GRU, Conv1d, Dense, ParamStore, grad_check, mse, tanh, tanh_backward
from gesturelift.pose import mpjpe


def _metric_checks():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((64, 32))
    s = FeatureStats(a.mean(0), np.cov(a, rowvar=False))
    yield "fgd(s, s) == 0", abs(fgd(s, s)) < 1e-8
    eye = np.eye(32)
    shifted = FeatureStats(np.r_[2.0, np.zeros(31)], eye)
    yield "fgd mean shift |mu|^2=4", abs(fgd(FeatureStats(np.zeros(32), eye), shifted) - 4.0) < 1e-6
    wide = FeatureStats(np.zeros(32), 4 * eye)
    yield "fgd covariance 4I", abs(fgd(FeatureStats(np.zeros(32), eye), wide) - 32.0) < 1e-6
    x = rng.standard_normal((32, 32))
    m = x @ x.T
    r = matrix_sqrt_psd(m)
    yield "matrix_sqrt_psd", np.linalg.norm(r @ r - m) / np.linalg.norm(m) < 1e-8
    yield "bc one offset beat", abs(beat_consistency([1.0], [1.1]) - math.exp(-0.5)) < 1e-9
    yield "bc two beats", abs(beat_consistency([1.0, 2.0], [1.0, 2.2]) - (1 + math.exp(-2)) / 2) < 1e-9
    feats = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
    yield "diversity partition", abs(diversity_once(feats, 2, partition=([0, 1], [2, 3])) - math.sqrt(2)) < 1e-9
    p = np.zeros((2, 10, 3), np.float32)
    yield "mpjpe offset", abs(mpjpe(p, p + np.array([3, 4, 0], np.float32)) - 5.0) < 1e-6


def _grad_checks():
    rng = np.random.default_rng(1)

    store = ParamStore(np.float64)
    dense = Dense(store, "d", 5, 4, rng)
    x = rng.standard_normal((3, 5))
    y = rng.standard_normal((3, 4))

    def dense_loss():
        out, c = dense.forward(x)
        loss, d = mse(out, y)
        dense.backward(d, c)
        return loss

    yield "dense gradient", grad_check(dense_loss, store, eps=1e-6) < 1e-6

    store = ParamStore(np.float64)
    c1 = Conv1d(store, "c1", 3, 4, 3, rng, dilation=2)
    c2 = Conv1d(store, "c2", 4, 2, 3, rng)
    xs = rng.standard_normal((2, 12, 3))
    ys = rng.standard_normal((2, 12, 2))

    def conv_loss():
        h, k1 = c1.forward(xs)
        h, t1 = tanh(h)
        out, k2 = c2.forward(h)
        loss, d = mse(out, ys)
        c1.backward(tanh_backward(c2.backward(d, k2), t1), k1)
        return loss

    yield "dilated conv stack gradient", grad_check(conv_loss, store, eps=1e-5) < 1e-4

    store = ParamStore(np.float64)
    gru = GRU(store, "g", 3, 4, rng)
    seq = rng.standard_normal((2, 6, 3))
    target = rng.standard_normal((2, 6, 4))

    def gru_loss():
        hs, c = gru.forward(seq)
        loss, d = mse(hs, target)
        gru.backward(d, c)
        return loss

    yield "GRU unroll gradient", grad_check(gru_loss, store, eps=1e-5) < 1e-4


def run_selftest():
    """List of ``(name, passed)`` pairs."""
    return [(name, bool(ok)) for name, ok in (*_metric_checks(), *_grad_checks())]
