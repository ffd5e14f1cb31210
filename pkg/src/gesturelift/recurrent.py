"""Deterministic audio-to-gesture generator built on a bidirectional GRU.

Per frame the decoder reads projected audio features, the seed pose (only
on the first ``n_seed`` frames, zeros after) and a seed-indicator bit.  The
output head predicts an offset from the training-set mean pose, so an
untrained model reproduces the mean-pose baseline.
"""

from __future__ import annotations

import logging

import numpy as np

from gesturelift.dataset import GestureDataset, WindowBatch
from gesturelift.errors import StructuralError
from gesturelift.nn import BiGRU, Dense, Model, adam_update, clip_grad_norm, tanh, tanh_backward
from gesturelift.pose import PoseSequence, batch_mpjpe, normalize_dirs

log = logging.getLogger(__name__)

DEFAULTS = {
    "dim": 3,
    "bones": 9,
    "n_features": 32,
    "proj": 64,
    "hidden": 64,
    "n_seed": 4,
    "continuity_weight": 0.1,
    "epochs": 8,
    "batch": 64,
    "lr": 1e-4,
}


def loss_terms(pred, target, weight=0.1):
    """``(reconstruction, weighted continuity, d_pred)`` for ``(B, T, width)`` arrays."""
    if pred.shape != target.shape:
        raise StructuralError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    rec = float(np.mean(diff * diff))
    d_rec = (2.0 / diff.size) * diff
    vel = np.diff(pred, axis=1) - np.diff(target, axis=1)
    cont = float(np.mean(vel * vel)) if vel.size else 0.0
    d_vel = (2.0 * weight / max(vel.size, 1)) * vel
    d_pred = d_rec.copy()
    d_pred[:, 1:] += d_vel
    d_pred[:, :-1] -= d_vel
    return rec, weight * cont, d_pred


class RecurrentModel(Model):
    kind = "recurrent"

    def __init__(self, hp=None, seed=0):
        super().__init__({**DEFAULTS, **(hp or {})}, seed)
        hp, rng, s = self.hp, self.rng, self.store
        if hp["dim"] not in (2, 3):
            raise StructuralError("pose dimensionality must be 2 or 3")
        self.width = hp["bones"] * hp["dim"]
        self.proj = Dense(s, "proj", hp["n_features"], hp["proj"], rng)
        self.gru1 = BiGRU(s, "gru1", hp["proj"] + self.width + 1, hp["hidden"], rng)
        self.gru2 = BiGRU(s, "gru2", 2 * hp["hidden"], hp["hidden"], rng)
        self.head = Dense(s, "head", 2 * hp["hidden"], self.width, rng, zero=True)
        self.buffers = {"feat_mean": np.zeros(hp["n_features"], np.float32),
                        "feat_std": np.ones(hp["n_features"], np.float32),
                        "mean_pose": np.zeros(self.width, np.float32)}

    def normalize_features(self, feats):
        f = (np.asarray(feats, np.float32) - self.buffers["feat_mean"]) / self.buffers["feat_std"]
        return f.astype(self.store.dtype)

    def _inputs(self, seed_poses, T):
        B, n_seed = seed_poses.shape[:2]
        seed_in = np.zeros((B, T, self.width), dtype=self.store.dtype)
        seed_in[:, :n_seed] = seed_poses.reshape(B, n_seed, -1)
        mask = np.zeros((B, T, 1), dtype=self.store.dtype)
        mask[:, :n_seed] = 1
        return seed_in, mask

    def forward(self, feats, seed_poses):
        """Raw ``(B, T, width)`` prediction from normalized features and seed poses."""
        B, T, _ = feats.shape
        if seed_poses.shape[1] != self.hp["n_seed"]:
            raise StructuralError(
                f"expected {self.hp['n_seed']} seed frames, got {seed_poses.shape[1]}")
        if seed_poses.shape[0] != B:
            raise StructuralError("seed poses and features disagree on batch size")
        a, c_proj = self.proj.forward(feats)
        a, t_proj = tanh(a)
        seed_in, mask = self._inputs(seed_poses, T)
        x = np.concatenate([a, seed_in, mask], axis=-1)
        h1, c1 = self.gru1.forward(x)
        h2, c2 = self.gru2.forward(h1)
        out, c_head = self.head.forward(h2)
        return out + self.buffers["mean_pose"].astype(out.dtype), (c_proj, t_proj, c1, c2, c_head)

    def backward(self, d_out, cache):
        c_proj, t_proj, c1, c2, c_head = cache
        dh2 = self.head.backward(d_out, c_head)
        dh1 = self.gru2.backward(dh2, c2)
        dx = self.gru1.backward(dh1, c1)
        da = tanh_backward(dx[..., :self.hp["proj"]], t_proj)
        self.proj.backward(da, c_proj)

    def step_loss(self, feats, target):
        """Loss on a batch of windows, seeding with the target's first frames; accumulates grads."""
        n_seed = self.hp["n_seed"]
        B, T = target.shape[:2]
        seeds = target[:, :n_seed].reshape(B, n_seed, self.hp["bones"], self.dim)
        pred, cache = self.forward(feats, seeds)
        rec, cont, d_pred = loss_terms(pred, target, self.hp["continuity_weight"])
        self.backward(d_pred, cache)
        return rec, cont


def generate_dirs(model: RecurrentModel, feats, seed_poses) -> np.ndarray:
    """Unit ``(B, T, bones, D)`` output for raw features ``(B, T, 32)`` and ``(B, n_seed, bones, D)`` seeds."""
    seed_poses = np.asarray(seed_poses, dtype=model.store.dtype)
    if seed_poses.ndim != 4 or seed_poses.shape[1] != model.hp["n_seed"] or seed_poses.shape[3] != model.dim:
        raise StructuralError(
            f"seed poses must be (B, {model.hp['n_seed']}, bones, {model.dim}), got {seed_poses.shape}")
    raw, _ = model.forward(model.normalize_features(feats), seed_poses)
    B, T = raw.shape[:2]
    dirs = normalize_dirs(raw.reshape(B, T, model.hp["bones"], model.dim))
    dirs[:, :model.hp["n_seed"]] = seed_poses
    return dirs.astype(np.float32)


def generate(model: RecurrentModel, features, seed_poses, fps=15.0) -> PoseSequence:
    seed_poses = np.asarray(seed_poses)
    if seed_poses.ndim != 3 or len(seed_poses) != model.hp["n_seed"]:
        raise StructuralError(f"expected {model.hp['n_seed']} seed poses, got {len(seed_poses)}")
    return PoseSequence(generate_dirs(model, np.asarray(features)[None], seed_poses[None])[0], fps)


def generate_batch(model: RecurrentModel, batch: WindowBatch, n=None, chunk=128) -> list:
    """Generate for the first ``n`` windows of ``batch``, seeding from their own first frames."""
    if batch.dirs.shape[-1] != model.dim:
        raise StructuralError(f"model generates {model.dim}D poses but the batch is {batch.dirs.shape[-1]}D")
    n = len(batch) if n is None else min(n, len(batch))
    out = []
    for i in range(0, n, chunk):
        j = min(i + chunk, n)
        dirs = generate_dirs(model, batch.features[i:j], batch.dirs[i:j, :model.hp["n_seed"]])
        out.extend(PoseSequence(d, batch.fps) for d in dirs)
    return out


def mean_pose_dirs(dirs) -> np.ndarray:
    """Per-bone mean direction over every frame, renormalized; shape ``(bones, D)``."""
    return normalize_dirs(np.asarray(dirs, dtype=np.float64).reshape(-1, *dirs.shape[-2:]).mean(axis=0))


def train_recurrent(dataset: GestureDataset, dim=3, hp=None, seed=0, progress=None):
    """Fit the recurrent generator on the train split.  Returns ``(model, report)``."""
    model = RecurrentModel({**(hp or {}), "dim": dim}, seed)
    hp = model.hp
    train = dataset.batch("train", dim)
    val = dataset.batch("val", dim)
    if len(train) == 0:
        raise StructuralError("training split is empty")
    feats_raw = train.features.reshape(-1, train.features.shape[-1])
    model.buffers["feat_mean"] = feats_raw.mean(axis=0).astype(np.float32)
    model.buffers["feat_std"] = np.maximum(feats_raw.std(axis=0), 1e-3).astype(np.float32)
    mean_pose = mean_pose_dirs(train.dirs)
    model.buffers["mean_pose"] = mean_pose.reshape(-1).astype(np.float32)
    x_all = train.dirs.reshape(len(train), train.dirs.shape[1], -1)
    f_all = model.normalize_features(train.features)
    rng = np.random.default_rng([seed, 3])

    def evaluate():
        if len(val) == 0:
            return float("nan"), float("nan")
        pred = generate_dirs(model, val.features, val.dirs[:, :hp["n_seed"]])
        base = np.broadcast_to(mean_pose, val.dirs.shape)
        return batch_mpjpe(pred, val.dirs), batch_mpjpe(base, val.dirs)

    v, vb = evaluate()
    report = [{"epoch": 0, "reconstruction": float("nan"), "continuity": float("nan"),
               "val_mpjpe": v, "val_mean_pose_mpjpe": vb}]
    for epoch in range(1, hp["epochs"] + 1):
        order = rng.permutation(len(train))
        recs, conts = [], []
        for i in range(0, len(order), hp["batch"]):
            idx = order[i:i + hp["batch"]]
            rec, cont = model.step_loss(f_all[idx], x_all[idx])
            clip_grad_norm(model.store, 1.0)
            adam_update(model.store, lr=hp["lr"])
            recs.append(rec)
            conts.append(cont)
        v, vb = evaluate()
        row = {"epoch": epoch, "reconstruction": float(np.mean(recs)),
               "continuity": float(np.mean(conts)), "val_mpjpe": v, "val_mean_pose_mpjpe": vb}
        report.append(row)
        log.info("recurrent(%dD) %s", dim, row)
        if progress:
            progress(row)
    return model, report
