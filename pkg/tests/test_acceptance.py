"""End-to-end acceptance checks on the default synthetic corpus.

Each test covers one criterion and prints a PASS/FAIL line for it; the
terminal summary repeats them.  Training happens once per session in the
fixtures below, and its wall time is checked against the budget.
"""

import csv
import io
import math
import time

import numpy as np
import pytest

from gesturelift import harness
from gesturelift.cli import main
from gesturelift.dataset import SynthConfig, synth_generate, write_dataset
from gesturelift.diffusion import (
    DenoiserModel,
    NoiseSchedule,
    forward_diffuse,
    sample_batch,
    sample_raw,
    train_diffusion,
    train_step,
)
from gesturelift.encoder import FeatureEncoder, train_feature_autoencoder
from gesturelift.lifter import LifterModel, _fk_matrix, lift, position_loss, train_lifter
from gesturelift.metrics import (
    FeatureStats,
    beat_consistency,
    diversity,
    diversity_once,
    encode_stats,
    fgd,
    matrix_sqrt_psd,
    mean_beat_consistency,
)
from gesturelift.nn import GRU, Conv1d, Dense, ParamStore, grad_check, mse, tanh, tanh_backward
from gesturelift.pose import (
    PoseSequence,
    batch_mpjpe,
    dirvec_to_joints,
    joints_to_dirvec,
    mpjpe,
    project_to_2d,
)
from gesturelift.recurrent import RecurrentModel, generate_batch, mean_pose_dirs, train_recurrent

pytestmark = pytest.mark.slow

SEED = 0
MINUTE = 60.0


class Timed:
    def __init__(self, fn):
        t = time.perf_counter()
        self.value = fn()
        self.seconds = time.perf_counter() - t


@pytest.fixture(scope="module")
def dataset():
    return synth_generate(SynthConfig(), seed=SEED)


@pytest.fixture(scope="module")
def lifter_run(dataset):
    return Timed(lambda: train_lifter(dataset, seed=SEED))


@pytest.fixture(scope="module")
def diffusion3d(dataset):
    return Timed(lambda: train_diffusion(dataset, 3, seed=SEED))


@pytest.fixture(scope="module")
def recurrent3d(dataset):
    return Timed(lambda: train_recurrent(dataset, 3, seed=SEED))


@pytest.fixture(scope="module")
def bundles(tmp_path_factory, dataset, lifter_run, diffusion3d, recurrent3d):
    root = tmp_path_factory.mktemp("acceptance")
    paths = {"dataset": root / "default.gstr"}
    write_dataset(paths["dataset"], dataset)
    trained = {
        ("lifter", 3): lifter_run.value[0],
        ("diffusion", 3): diffusion3d.value[0],
        ("recurrent", 3): recurrent3d.value[0],
        ("diffusion", 2): train_diffusion(dataset, 2, seed=SEED)[0],
        ("recurrent", 2): train_recurrent(dataset, 2, seed=SEED)[0],
        ("encoder", 3): train_feature_autoencoder(dataset, 3, seed=SEED)[0],
        ("encoder", 2): train_feature_autoencoder(dataset, 2, seed=SEED)[0],
    }
    for (kind, dim), model in trained.items():
        paths[kind, dim] = root / f"{kind}{dim}d.gdlm"
        model.save(paths[kind, dim])
    paths["root"] = root
    return paths


# --- 1 ---------------------------------------------------------------------

def test_metric_oracles(criterion):
    with criterion(1, "metric oracles"):
        start = time.perf_counter()
        rng = np.random.default_rng(SEED)
        x = rng.standard_normal((500, 32))
        s = encode_stats(x)
        assert abs(fgd(s, s)) < 1e-8
        eye, zero = np.eye(32), np.zeros(32)
        shift = np.r_[2.0, np.zeros(31)]
        assert abs(fgd(FeatureStats(zero, eye), FeatureStats(shift, eye)) - 4.0) < 1e-6
        assert abs(fgd(FeatureStats(zero, eye), FeatureStats(zero, 4 * eye)) - 32.0) < 1e-6
        real = encode_stats(rng.standard_normal((20_000, 32)))
        moved = encode_stats(rng.standard_normal((20_000, 32)) + shift)
        wide = encode_stats(2 * rng.standard_normal((20_000, 32)))
        assert fgd(real, moved) == pytest.approx(4.0, rel=0.05)
        assert fgd(real, wide) == pytest.approx(32.0, rel=0.05)

        for _ in range(100):
            a = rng.standard_normal((32, 32))
            m = a @ a.T
            r = matrix_sqrt_psd(m)
            assert np.linalg.norm(r @ r - m) / max(1.0, np.linalg.norm(m)) < 1e-8

        assert abs(beat_consistency([1.0], [1.1]) - 0.606531) < 1e-6
        assert abs(beat_consistency([1.0], [1.1]) - math.exp(-0.5)) < 1e-9
        assert abs(beat_consistency([1.0, 2.0], [1.0, 2.2]) - (1 + math.exp(-2)) / 2) < 1e-9
        assert abs(beat_consistency([0.5, 1.5, 2.5], [0.5, 1.5, 2.5]) - 1.0) < 1e-12

        feats = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
        assert abs(diversity_once(feats, 2, partition=([0, 1], [2, 3])) - math.sqrt(2)) < 1e-9
        assert diversity(np.ones((200, 32)), n=50) == 0.0

        p = np.zeros((2, 10, 3), np.float32)
        assert abs(mpjpe(p, p + np.array([3, 4, 0], np.float32)) - 5.0) < 1e-6
        assert time.perf_counter() - start < 10


# --- 2 ---------------------------------------------------------------------

def _dense_check(rng):
    store = ParamStore(np.float64)
    layer = Dense(store, "d", 6, 4, rng)
    x, y = rng.standard_normal((3, 6)), rng.standard_normal((3, 4))

    def loss():
        out, c = layer.forward(x)
        val, d = mse(out, y)
        layer.backward(d, c)
        return val

    return grad_check(loss, store, eps=1e-6)


def _conv_check(rng):
    store = ParamStore(np.float64)
    c1 = Conv1d(store, "c1", 3, 5, 3, rng, dilation=3)
    c2 = Conv1d(store, "c2", 5, 2, 3, rng, dilation=2)
    x, y = rng.standard_normal((2, 20, 3)), rng.standard_normal((2, 20, 2))

    def loss():
        h, k1 = c1.forward(x)
        h, t = tanh(h)
        out, k2 = c2.forward(h)
        val, d = mse(out, y)
        c1.backward(tanh_backward(c2.backward(d, k2), t), k1)
        return val

    return grad_check(loss, store, eps=1e-5)


def _gru_check(rng):
    store = ParamStore(np.float64)
    gru = GRU(store, "g", 3, 4, rng)
    x, y = rng.standard_normal((2, 8, 3)), rng.standard_normal((2, 8, 4))

    def loss():
        hs, c = gru.forward(x)
        val, d = mse(hs, y)
        gru.backward(d, c)
        return val

    return grad_check(loss, store, eps=1e-5)


def _wake(store, prefix, rng, scale=0.2):
    for n in store.names():
        if n.startswith(prefix):
            store[n][...] = scale * rng.standard_normal(store[n].shape)


def _encoder_check(rng):
    m = FeatureEncoder({"channels": 8, "latent": 4}, seed=1)
    m.store.cast_(np.float64)
    _wake(m.store, "dec_out", rng)
    dirs = rng.standard_normal((2, 34, 9, 3))
    return grad_check(lambda: m.reconstruction_loss(dirs), m.store, eps=1e-5, max_entries=8)


def _denoiser_check(rng):
    m = DenoiserModel({"channels": 8, "audio_channels": 4, "emb_dim": 8, "steps": 10}, seed=1)
    m.store.cast_(np.float64)
    _wake(m.store, "output", rng, 0.3)
    x0, feats = rng.standard_normal((2, 34, 27)), rng.standard_normal((2, 34, 32))
    return grad_check(lambda: train_step(m, x0, feats, np.random.default_rng(3), cond_dropout_p=0.5),
                      m.store, eps=1e-5, max_entries=8)


def _lifter_check(rng):
    m = LifterModel({"channels": 6, "dilations": [1, 3], "target_len": 34}, seed=1)
    m.store.cast_(np.float64)
    _wake(m.store, "head", rng, 0.3)
    x = rng.standard_normal((2, 34, 9, 2))
    y = rng.standard_normal((2, 34, 9, 3))
    y /= np.linalg.norm(y, axis=-1, keepdims=True)
    fk = _fk_matrix()

    def loss():
        raw, cache = m.forward(x)
        val, d = position_loss(raw, y, fk)
        m.backward(d, cache)
        return val

    return grad_check(loss, m.store, eps=1e-6, max_entries=8)


def _recurrent_check(rng):
    m = RecurrentModel({"proj": 6, "hidden": 5}, seed=1)
    m.store.cast_(np.float64)
    _wake(m.store, "head", rng, 0.3)
    feats, target = rng.standard_normal((2, 34, 32)), rng.standard_normal((2, 34, 27))

    def loss():
        rec, cont = m.step_loss(feats, target)
        return rec + cont

    return grad_check(loss, m.store, eps=1e-5, max_entries=8)


def test_gradient_suite(criterion):
    with criterion(2, "gradient suite"):
        start = time.perf_counter()
        rng = np.random.default_rng(SEED)
        checks = {
            "dense": (_dense_check, 1e-6),
            "dilated conv stack": (_conv_check, 1e-4),
            "GRU": (_gru_check, 1e-4),
            "encoder stack": (_encoder_check, 1e-4),
            "denoiser stack": (_denoiser_check, 1e-4),
            "lifter stack": (_lifter_check, 1e-4),
            "recurrent 34-frame unroll": (_recurrent_check, 1e-3),
        }
        errors = {name: fn(rng) for name, (fn, _) in checks.items()}
        print({k: f"{v:.2e}" for k, v in errors.items()})
        for name, (_, tol) in checks.items():
            assert errors[name] < tol, name
        assert time.perf_counter() - start < MINUTE


# --- 3 ---------------------------------------------------------------------

def test_pose_representation(criterion):
    with criterion(3, "pose representation"):
        rng = np.random.default_rng(SEED)
        joints = rng.uniform(-5, 5, (1000, 10, 3))
        seq = joints_to_dirvec(joints)
        assert seq.norms_valid(1e-6)
        assert joints_to_dirvec(joints[..., :2]).norms_valid(1e-6)
        scale = rng.uniform(0.1, 10, (1000, 1, 1))
        shift = rng.uniform(-5, 5, (1000, 1, 3))
        np.testing.assert_allclose(joints_to_dirvec(joints * scale + shift).dirs, seq.dirs, atol=1e-9)

        dirs = rng.standard_normal((1000, 9, 3))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        consistent = dirvec_to_joints(dirs)
        assert np.max(np.abs(dirvec_to_joints(joints_to_dirvec(consistent)) - consistent)) <= 1e-6

        for vec, expected in [((1, 0, 0), (1, 0)), ((0, 0, 1), (0, 0)), ((0.6, 0, 0.8), (1, 0))]:
            out = project_to_2d(PoseSequence(np.tile(np.asarray(vec, float), (1, 9, 1)))).dirs
            np.testing.assert_array_equal(out[0, 0], expected)


# --- 4 ---------------------------------------------------------------------

def test_lifter(criterion, dataset, lifter_run):
    with criterion(4, "lifter halves the zero-depth error"):
        model, report = lifter_run.value
        test = report[-1]
        print(f"lifter: {lifter_run.seconds:.0f}s, test MPJPE {test['val_mpjpe']:.4f} "
              f"vs zero-depth {test['val_zero_depth_mpjpe']:.4f}")
        assert lifter_run.seconds < 5 * MINUTE
        assert test["val_mpjpe"] < 0.5 * test["val_zero_depth_mpjpe"]

        seq2d = project_to_2d(dataset.clips[0].motion)
        a, b = lift(model, seq2d), lift(model, seq2d)
        assert a.dirs.tobytes() == b.dirs.tobytes()

        probe = LifterModel({"channels": 4}, seed=2)
        r = np.random.default_rng(0)
        for n in probe.store.names():
            probe.store[n][...] = np.abs(r.normal(0.1, 0.05, probe.store[n].shape))
        x = np.full((1, 200, 9, 2), 0.5, np.float32)
        base = probe.forward(x)[0]
        x[0, 100, 3] = 1.0
        frames = np.flatnonzero(np.any(probe.forward(x)[0] != base, axis=(0, 2, 3)))
        span = frames.max() - frames.min() + 1
        assert span <= 81 and span == probe.receptive_field


def test_lifter_training_loss_decreases(lifter_run):
    losses = [row["train_loss"] for row in lifter_run.value[1] if isinstance(row["epoch"], int)]
    print("lifter train loss by epoch:", [f"{v:.4f}" for v in losses])
    assert all(np.isfinite(losses))
    assert all(b < a for a, b in zip(losses, losses[1:]))


# --- 5 ---------------------------------------------------------------------

def test_diffusion(criterion, dataset, diffusion3d):
    with criterion(5, "diffusion sanity"):
        s = NoiseSchedule.linear()
        rng = np.random.default_rng(SEED)
        for t in (10, 50, 100):
            xt = forward_diffuse(np.full((100_000, 3), 0.5), t, rng.standard_normal((100_000, 3)), s)
            np.testing.assert_allclose(xt.var(axis=0), 1 - s.alpha_bar(t), rtol=0.02)

        model, _ = diffusion3d.value
        test = dataset.batch("test", 3)
        feats = model.normalize_features(test.features[:4])
        np.testing.assert_array_equal(sample_raw(model, feats, 0.0, seed=SEED),
                                      sample_raw(model, feats, None, seed=SEED))

        n = 50
        samples = sample_batch(model, test, n=n, seed=SEED)
        beats = test.audio_beats[:n]
        perm = np.random.default_rng(SEED).permutation(n)
        bc = mean_beat_consistency(beats, samples)
        null = mean_beat_consistency([beats[i] for i in perm], samples)
        print(f"diffusion: {diffusion3d.seconds:.0f}s, BC {bc:.4f} vs shuffled audio {null:.4f} "
              f"(seed {SEED}, w={model.hp['guidance_w']})")
        assert diffusion3d.seconds < 10 * MINUTE
        assert bc > null


# --- 6 ---------------------------------------------------------------------

def test_recurrent(criterion, dataset, recurrent3d):
    with criterion(6, "recurrent beats the mean pose"):
        model, _ = recurrent3d.value
        train, test = dataset.batch("train", 3), dataset.batch("test", 3)
        generated = np.stack([s.dirs for s in generate_batch(model, test)])
        baseline = np.broadcast_to(mean_pose_dirs(train.dirs), test.dirs.shape)
        err, base = batch_mpjpe(generated, test.dirs), batch_mpjpe(baseline, test.dirs)
        print(f"recurrent: {recurrent3d.seconds:.0f}s, test MPJPE {err:.4f} vs mean pose {base:.4f}")
        assert recurrent3d.seconds < 5 * MINUTE
        assert err < base


# --- 7 ---------------------------------------------------------------------

def _report(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_end_to_end_evaluation(criterion, bundles, capsys):
    with criterion(7, "evaluate-3d and evaluate-2d end to end"):
        b = bundles
        start = time.perf_counter()
        outputs = []
        for kind in ("diffusion", "recurrent"):
            out = b["root"] / f"eval_{kind}"
            common = ["--dataset", b["dataset"], "--gen3d", b[kind, 3], "--gen2d", b[kind, 2],
                      "--seed", SEED, "--out", out]
            assert main([str(a) for a in ["evaluate-3d", *common, "--lifter", b["lifter", 3],
                                          "--encoder", b["encoder", 3]]]) == 0
            assert main([str(a) for a in ["evaluate-2d", *common, "--encoder", b["encoder", 2]]]) == 0
            outputs.append(out)
        elapsed = time.perf_counter() - start
        printed = capsys.readouterr().out
        with capsys.disabled():
            print("\n" + printed)
        print(f"evaluation: {elapsed:.0f}s")
        assert elapsed < 20 * MINUTE
        for out in outputs:
            for dim in (3, 2):
                rows = _report(out / f"eval_{dim}d.csv")
                assert len({r["setting"] for r in rows}) == 3 and len(rows) == 9
                assert all(np.isfinite(float(r["value"])) for r in rows)
                gt = next(r for r in rows if r["setting"] == f"ground_truth_{dim}d" and r["metric"] == "FGD")
                assert abs(float(gt["value"])) < 1e-8
                assert all(r["seed"] == str(SEED) for r in rows)
                text = (out / f"eval_{dim}d.txt").read_text()
                assert "seeds: sampling 0" in text and "config hash" in text
                assert ("holds" in text) or ("does not hold" in text)
                assert (out / f"eval_{dim}d.png").stat().st_size > 0


# --- 8 ---------------------------------------------------------------------

TINY = {
    "diffusion": ["channels=8", "audio_channels=4", "emb_dim=8", "dilations=[1,2]", "steps=5",
                  "train_steps=4", "batch=8"],
    "recurrent": ["proj=6", "hidden=5", "epochs=1", "batch=16"],
    "lifter": ["channels=8", "dilations=[1,2]", "target_len=40", "epochs=1", "windows_per_epoch=16"],
    "encoder": ["channels=8", "epochs=1", "batch=16"],
}


def _run_pipeline(root):
    def cli(*args):
        assert main([str(a) for a in args]) == 0

    data = root / "data.gstr"
    cli("gen-data", "--clips", 12, "--duration", 6, "--seed", 5, "--out", data)
    for kind, dim in [("diffusion", 3), ("diffusion", 2), ("recurrent", 3), ("recurrent", 2),
                      ("lifter", 3), ("encoder", 3), ("encoder", 2)]:
        sets = [x for s in TINY[kind] for x in ("--set", s)]
        cli("train", "--model", kind, "--dim", dim, "--dataset", data, "--seed", 5,
            "--out", root / f"{kind}{dim}.gdlm", *sets)
    common = ["--dataset", data, "--seed", 5, "--no-timestamp", "--out", root / "eval"]
    cli("evaluate-3d", "--gen3d", root / "diffusion3.gdlm", "--gen2d", root / "recurrent2.gdlm",
        "--lifter", root / "lifter3.gdlm", "--encoder", root / "encoder3.gdlm", *common)
    cli("evaluate-2d", "--gen2d", root / "diffusion2.gdlm", "--gen3d", root / "recurrent3.gdlm",
        "--encoder", root / "encoder2.gdlm", *common)
    cli("export", "--dataset", data, "--bundle", root / "diffusion3.gdlm", "--seed", 5,
        "--out", root / "sample.csv")
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_determinism(criterion, tmp_path, capsys):
    with criterion(8, "byte-identical reruns"):
        first = _run_pipeline(tmp_path / "a")
        second = _run_pipeline(tmp_path / "b")
        capsys.readouterr()
        assert sorted(first) == sorted(second)
        assert any(str(k).endswith(".gdlm") for k in first)
        assert any(str(k).endswith(".csv") for k in first)
        differ = [str(k) for k in first if first[k] != second[k]]
        assert not differ, differ
