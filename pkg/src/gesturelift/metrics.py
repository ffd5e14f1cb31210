"""Gesture distribution metrics: Frechet gesture distance, beat consistency, diversity."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from gesturelift.errors import StructuralError
from gesturelift.pose import PoseSequence

log = logging.getLogger(__name__)

BC_SIGMA = 0.1
DIVERSITY_N = 500
DIVERSITY_REPEATS = 100


@dataclass
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass
class KinematicBeats:
    times: np.ndarray
    threshold: float = 0.0

    def __len__(self):
        return len(self.times)


def encode_stats(latents) -> FeatureStats:
    """Sample mean and unbiased covariance of ``(n, dim)`` latent vectors."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise StructuralError("need at least two latent vectors to estimate a covariance")
    mu = z.mean(axis=0)
    c = z - mu
    return FeatureStats(mu, c.T @ c / (z.shape[0] - 1))


def matrix_sqrt_psd(m, tol=1e-6) -> np.ndarray:
    """Symmetric square root ``V diag(sqrt(lambda)) V^T`` of a PSD matrix.

    Eigenvalues down to ``-tol`` (relative to the matrix scale) are clamped
    to zero; anything more negative, or asymmetry beyond ``tol``, raises.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise StructuralError("matrix square root needs a square matrix")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - m.T), initial=0.0) > tol * scale:
        raise StructuralError("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w.size and w.min() < -tol * scale:
        raise StructuralError(f"matrix is indefinite (smallest eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fgd(real: FeatureStats, gen: FeatureStats) -> float:
    """Frechet distance between the Gaussians fitted to two feature sets.

    ``|mu_r - mu_g|^2 + Tr(S_r + S_g - 2 (S_r^1/2 S_g S_r^1/2)^1/2)``.
    """
    if real.mu.shape != gen.mu.shape or real.sigma.shape != gen.sigma.shape:
        raise StructuralError("feature statistics have different dimensions")
    diff = real.mu - gen.mu
    root_r = matrix_sqrt_psd(real.sigma)
    inner = root_r @ gen.sigma @ root_r
    cross = matrix_sqrt_psd(0.5 * (inner + inner.T), tol=1e-5)
    value = float(diff @ diff + np.trace(real.sigma) + np.trace(gen.sigma) - 2.0 * np.trace(cross))
    if value < 0:
        if value < -1e-6:
            log.warning("fgd: negative distance %.3g clamped to 0", value)
        value = 0.0
    return value


def angular_velocity(seq: PoseSequence) -> np.ndarray:
    """Per-frame mean over bones of the angle (radians) turned since the previous frame.

    Entry ``f`` measures the change from frame ``f - 1`` to ``f``; entry 0 is 0.
    Zero-sentinel bones contribute zero.
    """
    d = np.asarray(seq.dirs, dtype=np.float64)
    out = np.zeros(len(d))
    if len(d) < 2:
        return out
    a, b = d[:-1], d[1:]
    dot = np.sum(a * b, axis=-1)
    if d.shape[-1] == 2:
        cross = np.abs(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
    else:
        cross = np.linalg.norm(np.cross(a, b), axis=-1)
    out[1:] = np.arctan2(cross, dot).mean(axis=1)
    return out


def extract_kinematic_beats(seq: PoseSequence, threshold=None) -> KinematicBeats:
    """Frames whose angular velocity is a local maximum above ``threshold``.

    The default threshold is mean + one standard deviation of the trace.  A
    plateau counts once, at its first frame.
    """
    v = angular_velocity(seq)
    if len(v) < 2:
        return KinematicBeats(np.zeros(0), 0.0)
    trace = v[1:]
    thr = float(trace.mean() + trace.std()) if threshold is None else float(threshold)
    padded = np.concatenate([[-np.inf], v, [-np.inf]])
    f = np.arange(1, len(v))
    is_peak = (padded[f + 1] > padded[f]) & (padded[f + 1] >= padded[f + 2]) & (v[f] > thr)
    return KinematicBeats(f[is_peak] / seq.fps, thr)


def beat_consistency(audio_beats, kin_beats, sigma=BC_SIGMA) -> float:
    """Mean over audio beats of ``exp(-d^2 / (2 sigma^2))``, ``d`` the gap to the nearest kinematic beat."""
    x = np.asarray(getattr(audio_beats, "times", audio_beats), dtype=np.float64)
    y = np.asarray(getattr(kin_beats, "times", kin_beats), dtype=np.float64)
    if x.size == 0:
        raise StructuralError("beat consistency is undefined without audio beats")
    if y.size == 0:
        log.debug("beat_consistency: no kinematic beats, scoring 0")
        return 0.0
    d2 = np.min((x[:, None] - y[None, :]) ** 2, axis=1)
    return float(np.mean(np.exp(-d2 / (2.0 * sigma * sigma))))


def mean_beat_consistency(audio_beats_list, sequences, sigma=BC_SIGMA, threshold=None) -> float:
    """Average BC over sequences that have at least one audio beat."""
    scores = [beat_consistency(ab, extract_kinematic_beats(seq, threshold), sigma)
              for ab, seq in zip(audio_beats_list, sequences) if len(ab)]
    return float(np.mean(scores)) if scores else float("nan")


def diversity_once(features, n, rng=None, partition=None) -> float:
    """Distance between the means of two disjoint random subsets of size ``n``.

    ``partition=(idx_a, idx_b)`` fixes the subsets instead of sampling them.
    """
    z = np.asarray(features, dtype=np.float64)
    if partition is None:
        idx = rng.permutation(len(z))
        a, b = idx[:n], idx[n:2 * n]
    else:
        a, b = partition
    return float(np.linalg.norm(z[a].mean(axis=0) - z[b].mean(axis=0)))


def diversity(features, n=DIVERSITY_N, seed=0, repeats=DIVERSITY_REPEATS) -> float:
    """Mean over ``repeats`` seeded draws of :func:`diversity_once`.

    ``n`` shrinks to half the feature count (with a warning) when too large.
    """
    z = np.asarray(features, dtype=np.float64)
    if z.ndim != 2 or len(z) < 2:
        raise StructuralError("diversity needs at least two feature vectors")
    if 2 * n > len(z):
        log.warning("diversity: N=%d exceeds half of %d features, using %d", n, len(z), len(z) // 2)
        n = len(z) // 2
    seeds = np.random.SeedSequence(seed).spawn(repeats)
    return float(np.mean([diversity_once(z, n, np.random.default_rng(s)) for s in seeds]))
