"""Convolutional autoencoder whose 32-dim bottleneck feeds FGD and diversity."""

from __future__ import annotations

import logging

import numpy as np

from gesturelift.dataset import WINDOW_LEN, GestureDataset
from gesturelift.errors import StructuralError
from gesturelift.metrics import FeatureStats, encode_stats
from gesturelift.nn import Conv1d, Dense, Model, adam_update, clip_grad_norm, mse, relu, relu_backward

log = logging.getLogger(__name__)

DEFAULTS = {
    "dim": 3,
    "bones": 9,
    "frames": WINDOW_LEN,
    "channels": 64,
    "latent": 32,
    "epochs": 10,
    "batch": 64,
    "lr": 1e-3,
}


class FeatureEncoder(Model):
    kind = "encoder"

    def __init__(self, hp=None, seed=0):
        super().__init__({**DEFAULTS, **(hp or {})}, seed)
        hp, rng, s = self.hp, self.rng, self.store
        if hp["dim"] not in (2, 3):
            raise StructuralError("pose dimensionality must be 2 or 3")
        self.width = hp["bones"] * hp["dim"]
        c, f, half = hp["channels"], hp["frames"], hp["channels"] // 2
        g = np.sqrt(2)
        self.enc1 = Conv1d(s, "enc1", self.width, c, 3, rng, gain=g)
        self.enc2 = Conv1d(s, "enc2", c, c, 3, rng, dilation=2, gain=g)
        self.to_latent = Dense(s, "to_latent", f * c, hp["latent"], rng)
        self.from_latent = Dense(s, "from_latent", hp["latent"], f * half, rng, gain=g)
        self.dec1 = Conv1d(s, "dec1", half, half, 3, rng, gain=g)
        self.dec_out = Conv1d(s, "dec_out", half, self.width, 3, rng, zero=True)
        self.buffers = {"mean": np.zeros(self.width, np.float32)}

    def _flat(self, dirs):
        dirs = np.asarray(dirs, dtype=self.store.dtype)
        if dirs.ndim != 4 or dirs.shape[1:] != (self.hp["frames"], self.hp["bones"], self.dim):
            raise StructuralError(
                f"encoder expects ({self.hp['frames']}, {self.hp['bones']}, {self.dim}) windows, "
                f"got {dirs.shape[1:]}")
        return dirs.reshape(dirs.shape[0], dirs.shape[1], self.width)

    def encode_forward(self, x):
        B = x.shape[0]
        h, c1 = self.enc1.forward(x)
        h, r1 = relu(h)
        h, c2 = self.enc2.forward(h)
        h, r2 = relu(h)
        z, cz = self.to_latent.forward(h.reshape(B, -1))
        return z, (c1, r1, c2, r2, cz, h.shape)

    def encode_backward(self, dz, cache):
        c1, r1, c2, r2, cz, shape = cache
        dh = self.to_latent.backward(dz, cz).reshape(shape)
        dh = self.enc2.backward(relu_backward(dh, r2), c2)
        self.enc1.backward(relu_backward(dh, r1), c1)

    def forward(self, x):
        """Reconstruction of flattened windows ``(B, frames, width)``."""
        B = x.shape[0]
        z, ce = self.encode_forward(x)
        h, cl = self.from_latent.forward(z)
        h, rl = relu(h)
        h = h.reshape(B, self.hp["frames"], -1)
        h, cd = self.dec1.forward(h)
        h, rd = relu(h)
        out, co = self.dec_out.forward(h)
        return out + self.buffers["mean"].astype(out.dtype), (ce, cl, rl, cd, rd, co)

    def backward(self, d_out, cache):
        ce, cl, rl, cd, rd, co = cache
        dh = self.dec_out.backward(d_out, co)
        dh = self.dec1.backward(relu_backward(dh, rd), cd)
        dh = relu_backward(dh.reshape(dh.shape[0], -1), rl)
        dz = self.from_latent.backward(dh, cl)
        self.encode_backward(dz, ce)

    def reconstruction_loss(self, dirs):
        x = self._flat(dirs)
        out, cache = self.forward(x)
        loss, d = mse(out, x)
        self.backward(d, cache)
        return loss

    def encode(self, dirs, chunk=256) -> np.ndarray:
        """``(N, frames, bones, D)`` windows to ``(N, latent)`` features."""
        x = self._flat(dirs)
        out = [self.encode_forward(x[i:i + chunk])[0] for i in range(0, len(x), chunk)]
        return np.concatenate(out) if out else np.zeros((0, self.hp["latent"]), self.store.dtype)

    def reconstruct(self, dirs, chunk=256) -> np.ndarray:
        x = self._flat(dirs)
        return np.concatenate([self.forward(x[i:i + chunk])[0] for i in range(0, len(x), chunk)])

    def stats(self, sequences) -> FeatureStats:
        dirs = np.stack([getattr(s, "dirs", s) for s in sequences])
        return encode_stats(self.encode(dirs))


def reconstruction_mse(model: FeatureEncoder, dirs) -> float:
    x = model._flat(dirs)
    return float(np.mean((model.reconstruct(dirs) - x) ** 2))


def baseline_mse(model: FeatureEncoder, dirs) -> float:
    """Error of always predicting the stored mean (the untrained reconstruction)."""
    x = model._flat(dirs)
    return float(np.mean((x - model.buffers["mean"]) ** 2))


def train_feature_autoencoder(dataset: GestureDataset, dim=3, hp=None, seed=0, progress=None):
    """Fit the autoencoder on train windows in dimension ``dim``.  Returns ``(model, report)``."""
    model = FeatureEncoder({**(hp or {}), "dim": dim}, seed)
    hp = model.hp
    train = dataset.batch("train", dim)
    val = dataset.batch("val", dim)
    if len(train) == 0:
        raise StructuralError("cannot train the feature encoder on an empty split")
    model.buffers["mean"] = train.dirs.reshape(-1, model.width).mean(axis=0).astype(np.float32)
    rng = np.random.default_rng([seed, 4])
    check = val.dirs if len(val) else train.dirs[:256]
    report = [{"epoch": 0, "train_mse": float("nan"), "val_mse": reconstruction_mse(model, check),
               "val_mean_mse": baseline_mse(model, check)}]
    for epoch in range(1, hp["epochs"] + 1):
        order = rng.permutation(len(train))
        losses = []
        for i in range(0, len(order), hp["batch"]):
            losses.append(model.reconstruction_loss(train.dirs[order[i:i + hp["batch"]]]))
            clip_grad_norm(model.store, 5.0)
            adam_update(model.store, lr=hp["lr"])
        row = {"epoch": epoch, "train_mse": float(np.mean(losses)),
               "val_mse": reconstruction_mse(model, check), "val_mean_mse": report[0]["val_mean_mse"]}
        report.append(row)
        log.info("encoder(%dD) %s", dim, row)
        if progress:
            progress(row)
    return model, report
