"""Audio-conditioned DDPM gesture generator with classifier-free guidance.

The denoiser sees the noisy pose sequence concatenated frame by frame with
an encoding of the audio features, plus a sinusoidal embedding of the
diffusion step added to every frame.  During training the audio encoding is
swapped for a learned null token with probability ``cond_dropout_p`` so the
same network also predicts noise unconditionally.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from gesturelift.dataset import GestureDataset, WindowBatch
from gesturelift.errors import StructuralError
from gesturelift.nn import (
    Conv1d,
    Dense,
    Model,
    adam_update,
    clip_grad_norm,
    mse,
    relu,
    relu_backward,
    sinusoidal_embedding,
)
from gesturelift.pose import PoseSequence, normalize_dirs

log = logging.getLogger(__name__)

DEFAULTS = {
    "dim": 3,
    "bones": 9,
    "n_features": 32,
    "audio_channels": 32,
    "channels": 64,
    "emb_dim": 32,
    "dilations": [1, 2, 4, 8],
    "steps": 100,
    "beta_start": 1e-4,
    "beta_end": 0.02,
    "cond_dropout_p": 0.1,
    "guidance_w": 1.0,
    "train_steps": 3000,
    "batch": 64,
    "lr": 1e-4,
}

POSE_STD_FLOOR = 0.02


@dataclass
class NoiseSchedule:
    betas: np.ndarray

    @classmethod
    def linear(cls, steps=100, beta_start=1e-4, beta_end=0.02):
        if steps < 1:
            raise StructuralError("diffusion needs at least one step")
        return cls(np.linspace(beta_start, beta_end, steps))

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def alphas(self):
        return 1.0 - self.betas

    @property
    def alpha_bars(self):
        return np.cumprod(self.alphas)

    def alpha_bar(self, t):
        """``alpha_bar`` at 1-based step(s) ``t``."""
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise StructuralError(f"diffusion step must lie in 1..{self.T}")
        return self.alpha_bars[t - 1]


def forward_diffuse(x0, t, noise, schedule: NoiseSchedule):
    """``sqrt(ab_t) x0 + sqrt(1 - ab_t) noise``; ``t`` may be one step per sample."""
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    if x0.shape != noise.shape:
        raise StructuralError("noise must have the same shape as x0")
    ab = schedule.alpha_bar(t)
    if np.ndim(ab):
        ab = np.reshape(ab, (-1,) + (1,) * (x0.ndim - 1))
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise).astype(x0.dtype)


def guided_eps(eps_cond, eps_uncond, w):
    """``eps_u + (1 + w)(eps_c - eps_u)``; exactly ``eps_cond`` when ``w == 0``."""
    if w == 0:
        return eps_cond
    return eps_uncond + (1.0 + w) * (eps_cond - eps_uncond)


class DenoiserModel(Model):
    kind = "diffusion"

    def __init__(self, hp=None, seed=0):
        super().__init__({**DEFAULTS, **(hp or {})}, seed)
        hp, rng, s = self.hp, self.rng, self.store
        if hp["dim"] not in (2, 3):
            raise StructuralError("pose dimensionality must be 2 or 3")
        self.width = hp["bones"] * hp["dim"]
        ac, c, e = hp["audio_channels"], hp["channels"], hp["emb_dim"]
        g = np.sqrt(2)
        self.audio1 = Conv1d(s, "audio1", hp["n_features"], ac, 3, rng, gain=g)
        self.audio2 = Conv1d(s, "audio2", ac, ac, 3, rng, dilation=2, gain=g)
        self.null = s.add("null_token", 0.1 * rng.standard_normal(ac))
        self.emb1 = Dense(s, "emb1", e, c, rng, gain=g)
        self.emb2 = Dense(s, "emb2", c, c, rng)
        self.inp = Conv1d(s, "input", self.width + ac, c, 3, rng)
        self.blocks = [
            (Conv1d(s, f"block{i}.dilated", c, c, 3, rng, dilation=d, gain=g),
             Conv1d(s, f"block{i}.mix", c, c, 1, rng, gain=0.5))
            for i, d in enumerate(hp["dilations"])
        ]
        self.out = Conv1d(s, "output", c, self.width, 1, rng, zero=True)
        self.buffers = {"feat_mean": np.zeros(hp["n_features"], np.float32),
                        "feat_std": np.ones(hp["n_features"], np.float32),
                        "pose_mean": np.zeros(self.width, np.float32),
                        "pose_std": np.ones(self.width, np.float32)}

    @property
    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule.linear(self.hp["steps"], self.hp["beta_start"], self.hp["beta_end"])

    def normalize_features(self, feats):
        f = (np.asarray(feats, np.float32) - self.buffers["feat_mean"]) / self.buffers["feat_std"]
        return f.astype(self.store.dtype)

    def normalize_poses(self, flat):
        """Pose frames ``(..., width)`` to the standardized space the diffusion runs in."""
        return ((flat - self.buffers["pose_mean"]) / self.buffers["pose_std"]).astype(self.store.dtype)

    def denormalize_poses(self, x):
        return x * self.buffers["pose_std"] + self.buffers["pose_mean"]

    def encode_audio(self, feats):
        a, c1 = self.audio1.forward(feats)
        a, r1 = relu(a)
        a, c2 = self.audio2.forward(a)
        a, r2 = relu(a)
        return a, (c1, r1, c2, r2)

    def encode_audio_backward(self, da, cache):
        c1, r1, c2, r2 = cache
        da = self.audio2.backward(relu_backward(da, r2), c2)
        self.audio1.backward(relu_backward(da, r1), c1)

    def forward(self, x_t, feats, t, drop):
        """Predict noise for ``x_t``: ``(B, T, width)``; ``feats`` already normalized.

        ``drop`` is a boolean mask of samples that get the null token.
        """
        B, T, width = x_t.shape
        if width != self.width:
            raise StructuralError(f"denoiser expects frame width {self.width}, got {width}")
        if feats.shape[:2] != (B, T):
            raise StructuralError("audio features and pose frames are misaligned")
        drop = np.asarray(drop, dtype=bool)
        if drop.all():
            audio, a_cache = None, None
            cond = np.broadcast_to(self.store[self.null], (B, T, self.hp["audio_channels"]))
        else:
            audio, a_cache = self.encode_audio(feats)
            cond = np.where(drop[:, None, None], self.store[self.null], audio)
        x = np.concatenate([x_t, cond], axis=-1).astype(self.store.dtype)
        emb0 = sinusoidal_embedding(t, self.hp["emb_dim"]).astype(self.store.dtype)
        e, ce1 = self.emb1.forward(emb0)
        e, re1 = relu(e)
        emb, ce2 = self.emb2.forward(e)
        h, c_in = self.inp.forward(x)
        caches = []
        for conv_d, mix in self.blocks:
            hin = h + emb[:, None, :]
            a, ra = relu(hin)
            a, ca = conv_d.forward(a)
            a, rb = relu(a)
            b, cb = mix.forward(a)
            caches.append((ra, ca, rb, cb))
            h = hin + b
        hr, r_out = relu(h)
        eps, c_out = self.out.forward(hr)
        cache = (drop, a_cache, c_in, ce1, re1, ce2, caches, r_out, c_out)
        return eps, cache

    def backward(self, d_eps, cache):
        drop, a_cache, c_in, ce1, re1, ce2, caches, r_out, c_out = cache
        dh = relu_backward(self.out.backward(d_eps, c_out), r_out)
        d_emb = np.zeros((dh.shape[0], dh.shape[2]), dtype=dh.dtype)
        for (conv_d, mix), (ra, ca, rb, cb) in zip(reversed(self.blocks), reversed(caches)):
            da = relu_backward(mix.backward(dh, cb), rb)
            da = relu_backward(conv_d.backward(da, ca), ra)
            dh = dh + da
            d_emb += dh.sum(axis=1)
        dx = self.inp.backward(dh, c_in)
        de = self.emb2.backward(d_emb, ce2)
        self.emb1.backward(relu_backward(de, re1), ce1)
        d_cond = dx[..., self.width:]
        self.store.accumulate(self.null, d_cond[drop].sum(axis=(0, 1)))
        if a_cache is not None:
            self.encode_audio_backward(np.where(drop[:, None, None], 0, d_cond), a_cache)

    def predict(self, x_t, feats, t, drop):
        return self.forward(x_t, feats, t, drop)[0]


def train_step(model: DenoiserModel, x0, feats, rng, cond_dropout_p=None, schedule=None):
    """One noise-regression loss evaluation with gradients accumulated into the store.

    ``x0``: ``(B, T, width)`` standardized clean poses; ``feats`` normalized audio features.
    Step, noise and dropout mask are drawn from ``rng`` in that order.
    """
    schedule = schedule or model.schedule
    p = model.hp["cond_dropout_p"] if cond_dropout_p is None else cond_dropout_p
    x0 = np.asarray(x0, dtype=model.store.dtype)
    B = x0.shape[0]
    if feats.shape[:2] != x0.shape[:2]:
        raise StructuralError("audio features and pose windows are misaligned")
    t = rng.integers(1, schedule.T + 1, size=B)
    noise = rng.standard_normal(x0.shape).astype(x0.dtype)
    drop = rng.random(B) < p
    x_t = forward_diffuse(x0, t, noise, schedule)
    eps, cache = model.forward(x_t, feats, t, drop)
    loss, d_eps = mse(eps, noise)
    model.backward(d_eps, cache)
    return loss


def _flatten(dirs):
    return dirs.reshape(dirs.shape[0], dirs.shape[1], -1)


def train_diffusion(dataset: GestureDataset, dim=3, hp=None, seed=0, progress=None):
    """Fit a denoiser on the train split in dimension ``dim``.  Returns ``(model, report)``."""
    model = DenoiserModel({**(hp or {}), "dim": dim}, seed)
    hp = model.hp
    train = dataset.batch("train", dim)
    if len(train) == 0:
        raise StructuralError("training split is empty")
    feats_raw = train.features.reshape(-1, train.features.shape[-1])
    model.buffers["feat_mean"] = feats_raw.mean(axis=0).astype(np.float32)
    model.buffers["feat_std"] = np.maximum(feats_raw.std(axis=0), 1e-3).astype(np.float32)
    flat = _flatten(train.dirs).reshape(-1, model.width)
    model.buffers["pose_mean"] = flat.mean(axis=0).astype(np.float32)
    # near-static components keep a floor so sampling error there is not amplified
    model.buffers["pose_std"] = np.maximum(flat.std(axis=0), POSE_STD_FLOOR).astype(np.float32)
    x_all = model.normalize_poses(_flatten(train.dirs))
    f_all = model.normalize_features(train.features)
    rng = np.random.default_rng([seed, 2])
    report, window = [], []
    log_every = max(1, hp["train_steps"] // 20)
    for step in range(1, hp["train_steps"] + 1):
        idx = rng.integers(0, len(train), size=hp["batch"])
        loss = train_step(model, x_all[idx], f_all[idx], rng)
        clip_grad_norm(model.store, 1.0)
        adam_update(model.store, lr=hp["lr"])
        window.append(loss)
        if step % log_every == 0 or step == hp["train_steps"]:
            row = {"step": step, "train_loss": float(np.mean(window))}
            window = []
            report.append(row)
            log.info("diffusion(%dD) %s", dim, row)
            if progress:
                progress(row)
    return model, report


def sample_raw(model: DenoiserModel, feats, guidance_w=None, seed=0, noise_seeds=None):
    """Ancestral sampling for a batch of normalized features ``(B, T, 32)``.

    ``guidance_w=None`` runs the conditional model only.  Returns the final
    ``(B, T, width)`` sample mapped back to pose coordinates (not yet unit length).
    """
    sched = model.schedule
    B, T = feats.shape[:2]
    if noise_seeds is None:
        noise_seeds = [[seed, i] for i in range(B)]
    rngs = [np.random.default_rng(s) for s in noise_seeds]
    dtype = model.store.dtype

    def draw():
        return np.stack([r.standard_normal((T, model.width)) for r in rngs]).astype(dtype)

    x = draw()
    keep = np.zeros(B, dtype=bool)
    null = np.ones(B, dtype=bool)
    alphas, abar, betas = sched.alphas, sched.alpha_bars, sched.betas
    for t in range(sched.T, 0, -1):
        steps = np.full(B, t)
        eps_c = model.predict(x, feats, steps, keep)
        if guidance_w is None:
            eps = eps_c
        else:
            eps_u = model.predict(x, feats, steps, null)
            eps = guided_eps(eps_c, eps_u, guidance_w)
        a, ab, b = alphas[t - 1], abar[t - 1], betas[t - 1]
        mean = (x - (b / np.sqrt(1.0 - ab)) * eps) / np.sqrt(a)
        if t > 1:
            var = b * (1.0 - abar[t - 2]) / (1.0 - ab)
            x = (mean + np.sqrt(var) * draw()).astype(dtype)
        else:
            x = mean.astype(dtype)
    return model.denormalize_poses(x).astype(dtype)


def _to_sequences(model, raw, fps):
    dirs = normalize_dirs(raw.reshape(raw.shape[0], raw.shape[1], model.hp["bones"], model.dim))
    return [PoseSequence(d.astype(np.float32), fps) for d in dirs]


def sample(model: DenoiserModel, features, guidance_w=None, seed=0, fps=15.0) -> PoseSequence:
    """One sequence conditioned on raw ``(T, 32)`` audio features."""
    feats = model.normalize_features(np.asarray(features)[None])
    w = model.hp["guidance_w"] if guidance_w is None else guidance_w
    return _to_sequences(model, sample_raw(model, feats, w, seed), fps)[0]


def sample_batch(model: DenoiserModel, batch: WindowBatch, n=None, guidance_w=None, seed=0,
                 chunk=64) -> list:
    """``n`` samples conditioned on the first ``n`` windows of ``batch`` (all if ``None``).

    Sample ``i`` draws its noise from a generator seeded with ``(seed, i)``,
    so the noise never depends on ``chunk``.
    """
    n = len(batch) if n is None else min(n, len(batch))
    w = model.hp["guidance_w"] if guidance_w is None else guidance_w
    out = []
    for i in range(0, n, chunk):
        j = min(i + chunk, n)
        feats = model.normalize_features(batch.features[i:j])
        raw = sample_raw(model, feats, w, noise_seeds=[[seed, k] for k in range(i, j)])
        out.extend(_to_sequences(model, raw, batch.fps))
    return out
