"""2D to 3D lifting with a dilated temporal convolutional network.

Input sequences are resampled to ``target_len`` frames (273 by default, more
than the 81-frame receptive field) before the network runs and back to
their native length afterwards.  The network predicts a correction on top
of the zero-depth embedding of its input, so an untrained model (zero
output head) reproduces the zero-depth baseline exactly.
"""

from __future__ import annotations

import logging

import numpy as np

from gesturelift.dataset import GestureDataset
from gesturelift.errors import StructuralError
from gesturelift.nn import Conv1d, Model, adam_update, clip_grad_norm, relu, relu_backward
from gesturelift.pose import DEFAULT_SKELETON, PoseSequence, batch_mpjpe, embed_zero_depth

log = logging.getLogger(__name__)

DEFAULTS = {
    "channels": 128,
    "kernel": 3,
    "dilations": [1, 3, 9, 27],
    "target_len": 273,
    "bones": 9,
    "epochs": 3,
    "batch": 32,
    "lr": 1e-3,
    "windows_per_epoch": 0,  # 0 means every training window
}

_NORM_EPS = 1e-8


def resample_dirs(dirs, n):
    """Linear resampling of ``(..., T, bones, D)`` along ``T`` onto ``n`` uniform frames.

    Endpoints are copied, interior frames renormalized per bone.
    """
    dirs = np.asarray(dirs)
    t_in = dirs.shape[-3]
    if n == t_in:
        return dirs.copy()
    pos = np.arange(n) * (t_in - 1) / (n - 1)
    lo = np.minimum(np.floor(pos).astype(int), t_in - 2)
    frac = (pos - lo).astype(dirs.dtype)[:, None, None]
    out = dirs[..., lo, :, :] * (1 - frac) + dirs[..., lo + 1, :, :] * frac
    norm = np.linalg.norm(out, axis=-1, keepdims=True)
    out = np.where(norm > 1e-12, out / np.where(norm > 1e-12, norm, 1), 0).astype(dirs.dtype)
    out[..., 0, :, :] = dirs[..., 0, :, :]
    out[..., -1, :, :] = dirs[..., -1, :, :]
    return out


def upscale_sequence(seq: PoseSequence, target_len=273) -> PoseSequence:
    if len(seq) < 2:
        raise StructuralError("need at least two frames to resample")
    if target_len < len(seq):
        raise StructuralError(f"cannot upscale {len(seq)} frames to {target_len}")
    fps = seq.fps * (target_len - 1) / (len(seq) - 1)
    return PoseSequence(resample_dirs(seq.dirs, target_len), fps)


def downscale_sequence(seq: PoseSequence, target_len=34) -> PoseSequence:
    if len(seq) < 2 or target_len < 2:
        raise StructuralError("need at least two frames to resample")
    if target_len > len(seq):
        raise StructuralError(f"cannot downscale {len(seq)} frames to {target_len}")
    fps = seq.fps * (target_len - 1) / (len(seq) - 1)
    return PoseSequence(resample_dirs(seq.dirs, target_len), fps)


def _fk_matrix(skeleton=DEFAULT_SKELETON):
    return skeleton.chain_matrix() * np.asarray(skeleton.bone_lengths)[None, :]


def _normalize(raw):
    norm = np.linalg.norm(raw, axis=-1, keepdims=True)
    safe = np.maximum(norm, _NORM_EPS)
    return raw / safe, safe


def position_loss(raw, target_dirs, fk):
    """MPJPE between joints built from normalized ``raw`` and from ``target_dirs``.

    Returns ``(loss, d_raw)``.
    """
    dirs, norm = _normalize(raw)
    pred = np.einsum("jb,...bd->...jd", fk, dirs)
    gt = np.einsum("jb,...bd->...jd", fk, target_dirs)
    diff = pred - gt
    dist = np.linalg.norm(diff, axis=-1, keepdims=True)
    count = dist.size
    loss = float(dist.sum() / count)
    d_pred = diff / np.maximum(dist, 1e-12) / count
    d_dirs = np.einsum("jb,...jd->...bd", fk, d_pred)
    d_raw = (d_dirs - dirs * np.sum(dirs * d_dirs, axis=-1, keepdims=True)) / norm
    return loss, d_raw.astype(raw.dtype)


class LifterModel(Model):
    kind = "lifter"

    def __init__(self, hp=None, seed=0):
        super().__init__({**DEFAULTS, **(hp or {})}, seed)
        hp, rng, s = self.hp, self.rng, self.store
        c, k, bones = hp["channels"], hp["kernel"], hp["bones"]
        dil = hp["dilations"]
        self.expand = Conv1d(s, "expand", 2 * bones, c, k, rng, dilation=dil[0], gain=np.sqrt(2))
        self.blocks = []
        for i, d in enumerate(dil[1:]):
            self.blocks.append((
                Conv1d(s, f"block{i}.dilated", c, c, k, rng, dilation=d, gain=np.sqrt(2)),
                Conv1d(s, f"block{i}.mix", c, c, 1, rng, gain=np.sqrt(2)),
            ))
        self.head = Conv1d(s, "head", c, 3 * bones, 1, rng, zero=True)

    @property
    def receptive_field(self) -> int:
        k = self.hp["kernel"]
        return 1 + sum(d * (k - 1) for d in self.hp["dilations"])

    def forward(self, x2d):
        """``(B, T, bones, 2)`` directions to raw ``(B, T, bones, 3)`` vectors."""
        B, T, bones, _ = x2d.shape
        x = x2d.reshape(B, T, 2 * bones)
        h, c0 = self.expand.forward(x)
        h, r0 = relu(h)
        caches = []
        for conv_d, mix in self.blocks:
            a, ca = conv_d.forward(h)
            a, ra = relu(a)
            b, cb = mix.forward(a)
            b, rb = relu(b)
            caches.append((ca, ra, cb, rb))
            h = h + b
        out, ch = self.head.forward(h)
        base = np.concatenate([x2d, np.zeros((B, T, bones, 1), dtype=x2d.dtype)], axis=-1)
        raw = base + out.reshape(B, T, bones, 3)
        return raw, (c0, r0, caches, ch, x2d.shape)

    def backward(self, d_raw, cache):
        c0, r0, caches, ch, shape = cache
        B, T, bones, _ = shape
        dh = self.head.backward(d_raw.reshape(B, T, 3 * bones), ch)
        for (conv_d, mix), (ca, ra, cb, rb) in zip(reversed(self.blocks), reversed(caches)):
            db = relu_backward(dh, rb)
            da = mix.backward(db, cb)
            da = relu_backward(da, ra)
            dh = dh + conv_d.backward(da, ca)
        dx = self.expand.backward(relu_backward(dh, r0), c0)
        return dx.reshape(B, T, bones, 2)

    def predict_dirs(self, x2d):
        raw, _ = self.forward(np.asarray(x2d, dtype=self.store.dtype))
        return _normalize(raw)[0]


def lift_dirs(model: LifterModel, dirs2d, chunk=64) -> np.ndarray:
    """Lift ``(N, T, bones, 2)`` directions; returns unit ``(N, T, bones, 3)``."""
    dirs2d = np.asarray(dirs2d, dtype=np.float32)
    n, t = dirs2d.shape[:2]
    target = max(model.hp["target_len"], t)
    out = np.empty(dirs2d.shape[:3] + (3,), dtype=np.float32)
    for i in range(0, n, chunk):
        up = resample_dirs(dirs2d[i:i + chunk], target)
        pred = model.predict_dirs(up)
        out[i:i + chunk] = resample_dirs(pred, t)
    return out


def lift(model: LifterModel, seq2d: PoseSequence) -> PoseSequence:
    """Lift one 2D sequence to 3D.  Identical inputs give bitwise-identical outputs."""
    if seq2d.dim != 2:
        raise StructuralError("lift expects a 2D pose sequence")
    if len(seq2d) < 2:
        raise StructuralError("need at least two frames to lift")
    return PoseSequence(lift_dirs(model, seq2d.dirs[None])[0], seq2d.fps)


def zero_depth_dirs(dirs2d):
    return np.stack([embed_zero_depth(PoseSequence(d)).dirs for d in dirs2d]) if len(dirs2d) else dirs2d


def _project(dirs3d):
    xy = dirs3d[..., :2]
    norm = np.linalg.norm(xy, axis=-1, keepdims=True)
    return np.where(norm > 1e-12, xy / np.where(norm > 1e-12, norm, 1), 0).astype(dirs3d.dtype)


def initial_loss(model: LifterModel, gt3d) -> float:
    """Training loss of ``model`` on the given 34-frame 3D windows (no update)."""
    target = model.hp["target_len"]
    up_gt = resample_dirs(gt3d, target)
    raw, _ = model.forward(resample_dirs(_project(gt3d), target))
    return position_loss(raw, up_gt, _fk_matrix())[0]


def train_lifter(dataset: GestureDataset, hp=None, seed=0, progress=None):
    """Fit a lifter on ``(project_to_2d(gt), gt)`` pairs from the train split.

    Returns ``(model, report)`` where ``report`` holds one row per epoch
    (epoch 0 is the untrained model) and a final test row.
    """
    model = LifterModel(hp, seed)
    hp = model.hp
    train = dataset.batch("train", 3)
    val = dataset.batch("val", 3)
    test = dataset.batch("test", 3)
    if len(train) == 0:
        raise StructuralError("training split is empty")
    fk = _fk_matrix().astype(np.float32)
    rng = np.random.default_rng([seed, 1])
    target = hp["target_len"]
    gt_all = train.dirs
    in_all = _project(gt_all)

    def evaluate(batch):
        if len(batch) == 0:
            return float("nan"), float("nan")
        gt = batch.dirs
        x2d = _project(gt)
        return batch_mpjpe(lift_dirs(model, x2d), gt), batch_mpjpe(zero_depth_dirs(x2d), gt)

    report = []
    v, vb = evaluate(val)
    report.append({"epoch": 0, "train_loss": initial_loss(model, gt_all[:256]),
                   "val_mpjpe": v, "val_zero_depth_mpjpe": vb})
    for epoch in range(1, hp["epochs"] + 1):
        order = rng.permutation(len(train))
        if hp["windows_per_epoch"]:
            order = order[:hp["windows_per_epoch"]]
        losses = []
        for i in range(0, len(order), hp["batch"]):
            idx = order[i:i + hp["batch"]]
            x = resample_dirs(in_all[idx], target)
            y = resample_dirs(gt_all[idx], target)
            raw, cache = model.forward(x)
            loss, d_raw = position_loss(raw, y, fk)
            model.backward(d_raw, cache)
            clip_grad_norm(model.store, 5.0)
            adam_update(model.store, lr=hp["lr"])
            losses.append(loss)
        v, vb = evaluate(val)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_mpjpe": v,
               "val_zero_depth_mpjpe": vb}
        report.append(row)
        log.info("lifter epoch %d: %s", epoch, row)
        if progress:
            progress(row)
    t, tb = evaluate(test)
    report.append({"epoch": "test", "train_loss": float("nan"), "val_mpjpe": t, "val_zero_depth_mpjpe": tb})
    return model, report
