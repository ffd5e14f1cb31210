import numpy as np
import pytest

from gesturelift.errors import StructuralError
from gesturelift.lifter import (
    LifterModel,
    _fk_matrix,
    _project,
    downscale_sequence,
    initial_loss,
    lift,
    lift_dirs,
    position_loss,
    resample_dirs,
    train_lifter,
    upscale_sequence,
    zero_depth_dirs,
)
from gesturelift.nn import ParamStore, grad_check
from gesturelift.pose import PoseSequence, batch_mpjpe

SMALL = {"channels": 8, "dilations": [1, 2], "target_len": 40}


def smooth_sequence(n=34, dim=3, seed=0):
    r = np.random.default_rng(seed)
    t = np.linspace(0, 1, n)[:, None, None]
    phase = r.uniform(0, 2 * np.pi, (1, 9, dim))
    raw = np.sin(2 * np.pi * 0.3 * t + phase) + 0.5 * r.normal(size=(1, 9, dim))
    return PoseSequence(raw / np.linalg.norm(raw, axis=-1, keepdims=True))


def test_constant_sequence_resamples_to_constant():
    seq = PoseSequence(np.tile([0.0, 0.6, 0.8], (34, 9, 1)))
    up = upscale_sequence(seq)
    assert len(up) == 273
    np.testing.assert_allclose(up.dirs, seq.dirs[:1].repeat(273, 0), atol=1e-12)
    np.testing.assert_allclose(downscale_sequence(up).dirs, seq.dirs, atol=1e-12)


def test_endpoints_exact():
    seq = smooth_sequence()
    up = upscale_sequence(seq)
    assert np.array_equal(up.dirs[0], seq.dirs[0]) and np.array_equal(up.dirs[-1], seq.dirs[-1])


def test_quarter_turn_midpoint():
    dirs = np.zeros((2, 9, 3))
    dirs[0, :] = [1, 0, 0]
    dirs[1, :] = [0, 1, 0]
    mid = upscale_sequence(PoseSequence(dirs), 3).dirs[1, 0]
    np.testing.assert_allclose(mid, [np.sqrt(0.5), np.sqrt(0.5), 0], atol=1e-12)


def test_up_down_round_trip():
    seq = smooth_sequence()
    back = downscale_sequence(upscale_sequence(seq), 34)
    assert np.max(np.abs(back.dirs - seq.dirs)) < 1e-3


def test_resample_identity_and_errors():
    seq = smooth_sequence()
    assert np.array_equal(downscale_sequence(seq, 34).dirs, seq.dirs)
    with pytest.raises(StructuralError):
        upscale_sequence(seq, 20)
    with pytest.raises(StructuralError):
        downscale_sequence(seq, 60)
    with pytest.raises(StructuralError):
        upscale_sequence(PoseSequence(seq.dirs[:1]))


def test_default_receptive_field():
    assert LifterModel().receptive_field == 81


def test_empirical_receptive_field():
    model = LifterModel({"channels": 4}, seed=2)
    r = np.random.default_rng(0)
    # positive weights and inputs keep every ReLU open, so influence is never masked
    for n in model.store.names():
        model.store[n][...] = np.abs(r.normal(0.1, 0.05, model.store[n].shape))
    x = np.full((1, 200, 9, 2), 0.5, np.float32)
    base = model.forward(x)[0]
    probe = x.copy()
    probe[0, 100, 3] = 1.0
    frames = np.flatnonzero(np.any(model.forward(probe)[0] != base, axis=(0, 2, 3)))
    assert frames.min() == 100 - 40 and frames.max() == 100 + 40
    assert frames.size == model.receptive_field == 81


def test_untrained_lift_is_zero_depth_and_unit():
    model = LifterModel(SMALL, seed=0)
    seq2d = PoseSequence(_project(smooth_sequence().dirs))
    out = lift(model, seq2d)
    assert len(out) == len(seq2d) and out.dim == 3
    assert out.norms_valid(1e-5)
    assert np.all(out.dirs[..., 2] == 0)


def test_lift_is_bitwise_deterministic():
    model = LifterModel(SMALL, seed=1)
    model.store[model.head.w][...] = 0.1
    seq2d = PoseSequence(_project(smooth_sequence(seed=3).dirs))
    assert lift(model, seq2d).dirs.tobytes() == lift(model, seq2d).dirs.tobytes()


def test_lift_rejects_3d():
    with pytest.raises(StructuralError):
        lift(LifterModel(SMALL), smooth_sequence())


def test_initial_loss_is_zero_depth_error():
    gt = np.stack([smooth_sequence(seed=s).dirs for s in range(3)]).astype(np.float32)
    model = LifterModel(SMALL, seed=0)
    up_gt = resample_dirs(gt, SMALL["target_len"])
    expected = batch_mpjpe(zero_depth_dirs(resample_dirs(_project(gt), SMALL["target_len"])), up_gt)
    assert initial_loss(model, gt) == pytest.approx(expected, rel=1e-5)


def test_position_loss_gradient():
    r = np.random.default_rng(0)
    store = ParamStore(np.float64)
    raw = store.add("raw", r.normal(size=(2, 5, 9, 3)))
    target = r.normal(size=(2, 5, 9, 3))
    target /= np.linalg.norm(target, axis=-1, keepdims=True)
    fk = _fk_matrix()

    def loss():
        value, d = position_loss(store[raw], target, fk)
        store.accumulate(raw, d)
        return value

    assert grad_check(loss, store, eps=1e-6) < 1e-4


def test_lifter_stack_gradient():
    model = LifterModel({"channels": 5, "dilations": [1, 2, 3], "target_len": 16}, seed=0)
    model.store.cast_(np.float64)
    r = np.random.default_rng(4)
    for n in model.store.names():
        model.store[n][...] = r.normal(0, 0.3, model.store[n].shape)
    gt = smooth_sequence(16, seed=5).dirs[None]
    x = _project(gt)
    fk = _fk_matrix()

    def loss():
        raw, cache = model.forward(x)
        value, d = position_loss(raw, gt, fk)
        model.backward(d, cache)
        return value

    assert grad_check(loss, model.store, eps=1e-5) < 1e-4


def test_training_reduces_loss_and_is_deterministic(tiny_dataset):
    hp = {**SMALL, "epochs": 3, "batch": 16}
    a, rep = train_lifter(tiny_dataset, hp, seed=0)
    b, _ = train_lifter(tiny_dataset, hp, seed=0)
    assert a.to_bytes() == b.to_bytes()
    losses = [r["train_loss"] for r in rep if isinstance(r["epoch"], int)]
    assert all(np.isfinite(losses))
    assert losses[-1] < losses[0]
    assert rep[-1]["epoch"] == "test"


def test_bundle_round_trip_lifts_identically(tmp_path, tiny_dataset):
    model, _ = train_lifter(tiny_dataset, {**SMALL, "epochs": 1}, seed=0)
    path = tmp_path / "lifter.gdlm"
    model.save(path)
    loaded = LifterModel.load(path)
    x = _project(tiny_dataset.batch("test", 3).dirs[:2])
    assert lift_dirs(model, x).tobytes() == lift_dirs(loaded, x).tobytes()
