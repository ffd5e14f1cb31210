import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gesturelift.errors import ParseError, StructuralError
from gesturelift.nn import (
    GRU,
    BiGRU,
    Conv1d,
    Dense,
    ParamStore,
    adam_update,
    clip_grad_norm,
    conv1d,
    decode_bundle,
    encode_bundle,
    grad_check,
    mse,
    receptive_field,
    sigmoid,
    tanh,
    tanh_backward,
)


def brute_conv(x, w, b, dilation, left):
    B, T, _ = x.shape
    k, _, c_out = w.shape
    out = np.zeros((B, T, c_out))
    for bi in range(B):
        for t in range(T):
            out[bi, t] = b
            for j in range(k):
                src = t - left + j * dilation
                if 0 <= src < T:
                    out[bi, t] += x[bi, src] @ w[j]
    return out


def test_identity_kernel(rng):
    x = rng.normal(size=(2, 9, 1))
    w = np.zeros((3, 1, 1))
    w[1] = 1
    y, _ = conv1d(x, w, np.zeros(1))
    np.testing.assert_array_equal(y, x)


def test_zero_weights_give_bias(rng):
    y, _ = conv1d(rng.normal(size=(1, 5, 2)), np.zeros((3, 2, 4)), np.arange(4.0))
    assert np.all(y == np.arange(4.0))


def test_dilated_conv_matches_nested_loops(rng):
    x = rng.normal(size=(2, 16, 3))
    w = rng.normal(size=(3, 3, 2))
    b = rng.normal(size=2)
    y, _ = conv1d(x, w, b, dilation=3)
    np.testing.assert_allclose(y, brute_conv(x, w, b, 3, left=3), atol=1e-6)


def test_kernel_longer_than_input():
    with pytest.raises(StructuralError):
        conv1d(np.zeros((1, 4, 1)), np.zeros((3, 1, 1)), np.zeros(1), dilation=3, padding="valid")


def test_receptive_field_closed_form(rng):
    store = ParamStore()
    layers = [Conv1d(store, f"c{d}", 2, 2, 3, rng, dilation=d) for d in (1, 3, 9, 27)]
    assert receptive_field(layers) == 1 + 2 * (1 + 3 + 9 + 27) == 81


def test_empirical_receptive_field(rng):
    store = ParamStore(np.float64)
    layers = [Conv1d(store, f"c{d}", 1, 1, 3, rng, dilation=d) for d in (1, 2, 4)]
    for layer in layers:
        store[layer.w][...] = 1.0

    def run(x):
        for layer in layers:
            x = layer.forward(x)[0]
        return x

    base = run(np.zeros((1, 64, 1)))
    touched = []
    for t in range(64):
        x = np.zeros((1, 64, 1))
        x[0, t] = 1
        if run(x)[0, 32, 0] != base[0, 32, 0]:
            touched.append(t)
    assert max(touched) - min(touched) + 1 == receptive_field(layers) == 15


def test_gru_zero_parameters_stay_at_zero(rng):
    store = ParamStore()
    gru = GRU(store, "g", 3, 4, rng)
    for n in store.names():
        store[n][...] = 0
    h, _ = gru.step(rng.normal(size=(2, 3)).astype(np.float32), np.zeros((2, 4), np.float32))
    assert np.all(h == 0)


def test_gru_width_mismatch(rng):
    gru = GRU(ParamStore(), "g", 3, 4, rng)
    with pytest.raises(StructuralError):
        gru.step(np.zeros((1, 5), np.float32), np.zeros((1, 4), np.float32))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 5))
def test_gru_state_bounded(seed, scale):
    r = np.random.default_rng(seed)
    gru = GRU(ParamStore(np.float64), "g", 3, 4, r)
    hs, _ = gru.forward(scale * r.normal(size=(2, 10, 3)))
    assert np.all(np.abs(hs) < 1)


def test_gru_saturates_without_overshoot(rng):
    gru = GRU(ParamStore(np.float64), "g", 3, 4, rng)
    hs, _ = gru.forward(1e4 * rng.normal(size=(2, 10, 3)))
    assert np.all(np.isfinite(hs)) and np.all(np.abs(hs) <= 1)


def test_sigmoid_is_stable():
    x = np.array([-1000.0, 0.0, 1000.0])
    np.testing.assert_array_equal(sigmoid(x), [0.0, 0.5, 1.0])


def test_dense_gradient_exact(rng):
    store = ParamStore(np.float64)
    layer = Dense(store, "d", 4, 3, rng)
    x, y = rng.normal(size=(5, 4)), rng.normal(size=(5, 3))

    def loss():
        out, c = layer.forward(x)
        value, d = mse(out, y)
        layer.backward(d, c)
        return value

    assert grad_check(loss, store, eps=1e-6) < 1e-6


@pytest.mark.parametrize("dilation", [1, 2, 3])
def test_conv_tanh_stack_gradient(rng, dilation):
    store = ParamStore(np.float64)
    c1 = Conv1d(store, "a", 3, 5, 3, rng, dilation=dilation)
    c2 = Conv1d(store, "b", 5, 2, 3, rng)
    x, y = rng.normal(size=(2, 16, 3)), rng.normal(size=(2, 16, 2))

    def loss():
        h, k1 = c1.forward(x)
        h, t = tanh(h)
        out, k2 = c2.forward(h)
        value, d = mse(out, y)
        c1.backward(tanh_backward(c2.backward(d, k2), t), k1)
        return value

    assert grad_check(loss, store, eps=1e-5) < 1e-4


def test_gru_two_step_gradient(rng):
    store = ParamStore(np.float64)
    gru = GRU(store, "g", 3, 4, rng)
    x, y = rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 4))

    def loss():
        hs, c = gru.forward(x)
        value, d = mse(hs, y)
        gru.backward(d, c)
        return value

    assert grad_check(loss, store, eps=1e-3) < 1e-4


def test_bigru_input_gradient(rng):
    store = ParamStore(np.float64)
    bi = BiGRU(store, "bi", 3, 4, rng)
    x, y = rng.normal(size=(2, 6, 3)), rng.normal(size=(2, 6, 8))
    out, cache = bi.forward(x)
    _, d = mse(out, y)
    dx = bi.backward(d, cache)
    eps = 1e-6
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        num[idx] = (mse(bi.forward(xp)[0], y)[0] - mse(bi.forward(xm)[0], y)[0]) / (2 * eps)
    np.testing.assert_allclose(dx, num, rtol=1e-5, atol=1e-9)


def test_grad_check_reports_non_finite(rng):
    store = ParamStore(np.float64)
    store.add("p", np.ones(2))
    assert np.isnan(grad_check(lambda: float("inf"), store))


def test_adam_zero_gradient_keeps_params():
    store = ParamStore()
    store.add("p", np.ones(3))
    adam_update(store, lr=0.1)
    assert np.all(store["p"] == 1)
    assert store.step == 1


def test_adam_first_step_moves_by_lr():
    store = ParamStore(np.float64)
    store.add("p", np.zeros(4))
    store.accumulate("p", np.full(4, 3.7))
    adam_update(store, lr=1e-3)
    np.testing.assert_allclose(store["p"], -1e-3, rtol=1e-6)
    assert np.all(store.grads["p"] == 0)


def _train_tiny(seed):
    r = np.random.default_rng(seed)
    store = ParamStore()
    layer = Dense(store, "d", 3, 2, r)
    x, y = r.normal(size=(8, 3)).astype(np.float32), r.normal(size=(8, 2)).astype(np.float32)
    for _ in range(5):
        out, c = layer.forward(x)
        _, d = mse(out, y)
        layer.backward(d, c)
        adam_update(store, lr=1e-2)
    return store


def test_training_is_bitwise_repeatable():
    a, b = _train_tiny(5), _train_tiny(5)
    for n in a.names():
        assert a[n].tobytes() == b[n].tobytes()


def test_frozen_model_gives_same_loss(rng):
    store = ParamStore()
    layer = Dense(store, "d", 3, 2, rng)
    x = rng.normal(size=(4, 3)).astype(np.float32)
    assert layer.forward(x)[0].tobytes() == layer.forward(x)[0].tobytes()


def test_clip_grad_norm():
    store = ParamStore(np.float64)
    store.add("a", np.zeros(2))
    store.accumulate("a", np.array([3.0, 4.0]))
    assert clip_grad_norm(store, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(store.grads["a"], [0.6, 0.8])


# --- bundles -----------------------------------------------------------------

def test_bundle_round_trip(rng):
    tensors = {"w": rng.normal(size=(2, 3)).astype(np.float32), "s": np.float32(rng.normal(size=()))}
    meta = {"kind": "lifter", "hp": {"dilations": [1, 3]}}
    data = encode_bundle(tensors, meta)
    assert data[:4] == b"GDLM"
    assert struct.unpack("<I", data[4:8])[0] == 1
    back, meta2 = decode_bundle(data)
    assert meta2 == meta
    assert back["w"].tobytes() == tensors["w"].tobytes()
    assert back["s"].shape == ()


def test_bundle_is_byte_stable(rng):
    tensors = {"b": np.ones(2, np.float32), "a": np.zeros(3, np.float32)}
    assert encode_bundle(tensors, {"x": 1}) == encode_bundle(dict(reversed(tensors.items())), {"x": 1})


@pytest.mark.parametrize("mutate", [
    lambda d: b"XXXX" + d[4:],
    lambda d: d[:4] + struct.pack("<I", 9) + d[8:],
    lambda d: d[:-3],
    lambda d: d + b"\0",
])
def test_bundle_corruption_is_reported(mutate):
    data = encode_bundle({"w": np.ones((2, 2), np.float32)}, {"kind": "x"})
    with pytest.raises(ParseError) as info:
        decode_bundle(mutate(data))
    assert "offset" in str(info.value)
