"""Synthetic paired audio/gesture corpus, windowing, splits and the ``GSTR`` file format.

The generator stands in for a real talk-video corpus.  Each clip has a
click-plus-babble audio track with clicks on a regular beat grid and an
upper-body gesture track whose arm strokes reach peak angular velocity on
those beats.  Ground-truth beat times are kept for oracle tests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gesturelift.audio import N_FEATURES, SAMPLE_RATE, AudioClip, audio_beats, conditioning_features
from gesturelift.binio import Reader
from gesturelift.errors import ParseError, StructuralError
from gesturelift.pose import PoseSequence, normalize_dirs, project_to_2d

FPS = 15.0
WINDOW_LEN = 34
STRIDE = 10
SPLITS = ("train", "val", "test")

MAGIC = b"GSTR"
VERSION = 1


@dataclass
class SynthConfig:
    n_clips: int = 200
    duration: float = 20.0
    bpm_min: float = 80.0
    bpm_max: float = 130.0
    jitter: float = 0.02  # std of stroke timing around its beat, seconds
    noise: float = 0.5  # per-stroke variation of amplitude and direction
    stroke_width: float = 0.07  # tanh time constant of one stroke, seconds
    fps: float = FPS
    sample_rate: int = SAMPLE_RATE


@dataclass
class Clip:
    audio: AudioClip
    motion: PoseSequence
    beats: np.ndarray  # ground-truth beat times, seconds


@dataclass
class GestureDataset:
    clips: list
    fps: float = FPS
    split_seed: int = 0
    windows: list = field(default_factory=list)
    split_assignment: list = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.windows and self.clips:
            self.windows = window(self)
        if not self.split_assignment and self.windows:
            self.split_assignment = split(self.windows, seed=self.split_seed)

    def clip_split(self) -> dict:
        return {w[0]: s for w, s in zip(self.windows, self.split_assignment)}

    def split_windows(self, name) -> list:
        return [w for w, s in zip(self.windows, self.split_assignment) if s == name]

    def clip_features(self, i) -> np.ndarray:
        key = ("features", i)
        if key not in self._cache:
            clip = self.clips[i]
            self._cache[key] = conditioning_features(clip.audio, len(clip.motion), self.fps)
        return self._cache[key]

    def clip_audio_beats(self, i) -> np.ndarray:
        key = ("beats", i)
        if key not in self._cache:
            self._cache[key] = audio_beats(self.clips[i].audio).times
        return self._cache[key]

    def batch(self, name, dim=3) -> "WindowBatch":
        """Stack every window of split ``name`` into arrays."""
        wins = self.split_windows(name)
        dirs, feats, beats = [], [], []
        for c, s in wins:
            seq = self.clips[c].motion
            d = seq.dirs[s:s + WINDOW_LEN]
            if dim == 2:
                d = project_to_2d(PoseSequence(d, seq.fps)).dirs
            dirs.append(d)
            feats.append(self.clip_features(c)[s:s + WINDOW_LEN])
            t0 = s / self.fps
            b = self.clip_audio_beats(c)
            beats.append(b[(b >= t0) & (b < t0 + WINDOW_LEN / self.fps)] - t0)
        n = len(wins)
        bones = self.clips[0].motion.dirs.shape[1] if self.clips else 9
        return WindowBatch(
            dirs=np.asarray(dirs, dtype=np.float32).reshape(n, WINDOW_LEN, bones, dim),
            features=np.asarray(feats, dtype=np.float32).reshape(n, WINDOW_LEN, N_FEATURES),
            audio_beats=beats,
            windows=wins,
            fps=self.fps,
        )


@dataclass
class WindowBatch:
    dirs: np.ndarray  # (N, 34, bones, D)
    features: np.ndarray  # (N, 34, 32)
    audio_beats: list  # per window, seconds relative to window start
    windows: list
    fps: float = FPS

    def __len__(self):
        return len(self.windows)

    def sequences(self):
        return [PoseSequence(d, self.fps) for d in self.dirs]


# --- synthesis -------------------------------------------------------------

def _arm_dir(elev, azim, side):
    """Unit bone direction: ``elev`` 0 hangs down, pi/2 points forward (depth)."""
    return np.stack([side * np.sin(elev) * np.sin(azim), -np.cos(elev),
                     np.sin(elev) * np.cos(azim)], axis=-1)


def _step(u):
    return 0.5 * (1.0 + np.tanh(u))


def _synth_motion(cfg: SynthConfig, rng, beat_index, beat_grid, taus, n_frames):
    t = np.arange(n_frames) / cfg.fps
    n_beats = len(beat_grid)
    dirs = np.zeros((n_frames, 9, 3))
    phase = (t - beat_grid[0]) / (4 * (beat_grid[1] - beat_grid[0])) * 2 * np.pi
    sway_phase = cfg.noise * rng.uniform(0, 2 * np.pi)
    sway = np.sin(phase + sway_phase)
    nod = np.sin(2 * phase + sway_phase + 1.0)
    dirs[:, 0] = np.stack([0.05 * sway, np.ones_like(t), 0.03 * nod], axis=-1)
    dirs[:, 1] = np.stack([0.03 * sway, np.ones_like(t), 0.08 + 0.02 * nod], axis=-1)
    dirs[:, 2] = np.stack([0.02 * sway, np.ones_like(t), 0.2 + 0.06 * nod], axis=-1)

    # per-beat target levels: even beats raise the arms, odd beats lower them
    even = (beat_index % 2) == 0
    for b, side in ((3, 1.0), (4, -1.0)):
        raise_amp = 0.9 * (1.0 + cfg.noise * 0.2 * rng.uniform(-1, 1, n_beats))
        side_w = 1.0 + cfg.noise * 0.25 * rng.uniform(-1, 1, n_beats)
        level_k = np.where(even, raise_amp * side_w, 0.0)
        azim_k = np.where(even, cfg.noise * 0.5 * rng.standard_normal(n_beats), 0.0)
        d_level = np.diff(np.concatenate([[0.0], level_k]))
        d_azim = np.diff(np.concatenate([[0.0], azim_k]))
        s = _step((t[:, None] - taus[None, :]) / cfg.stroke_width)
        level = s @ d_level
        azim = 0.35 + s @ d_azim
        elev = 0.25 + level
        shrug = 0.06 * level
        dirs[:, b] = np.stack([side * np.ones_like(t), shrug, 0.05 * np.ones_like(t)], axis=-1)
        dirs[:, b + 2] = _arm_dir(elev, azim, side)
        dirs[:, b + 4] = _arm_dir(elev + 0.5 + 0.6 * level, azim + 0.1, side)
    return normalize_dirs(dirs)


def _synth_audio(cfg: SynthConfig, rng, beats, n_samples):
    sr = cfg.sample_rate
    t = np.arange(n_samples) / sr
    f0 = rng.uniform(110, 220)
    pitch = f0 * (1 + 0.05 * np.sin(2 * np.pi * rng.uniform(0.3, 0.8) * t))
    ph = 2 * np.pi * np.cumsum(pitch) / sr
    voice = sum(np.sin(h * ph) / h for h in range(1, 6))
    syl_rate = rng.uniform(3.0, 5.0)
    syllables = 0.5 - 0.5 * np.cos(2 * np.pi * syl_rate * t + rng.uniform(0, 2 * np.pi))
    x = 0.05 * voice * syllables + 0.004 * rng.standard_normal(n_samples)
    n_click = int(0.012 * sr)
    decay = np.exp(-np.arange(n_click) / (0.003 * sr))
    tone = np.sin(2 * np.pi * 2000 * np.arange(n_click) / sr)
    for tb in beats:
        i = int(round(tb * sr))
        seg = slice(i, min(i + n_click, n_samples))
        m = seg.stop - seg.start
        x[seg] += (0.35 * rng.standard_normal(m) + 0.25 * tone[:m]) * decay[:m]
    return np.clip(x, -1.0, 1.0)


def synth_clip(cfg: SynthConfig, seed, index) -> Clip:
    """Clip ``index`` of the corpus; depends only on ``(cfg, seed, index)``."""
    rng = np.random.default_rng([seed, index])
    fps = cfg.fps
    n_frames = int(round(cfg.duration * fps))
    n_samples = int(round(cfg.duration * cfg.sample_rate))
    period = 60.0 / rng.uniform(cfg.bpm_min, cfg.bpm_max)
    offset = round(rng.uniform(0, period) * fps) / fps
    # beat k sits at offset + k * period; strokes run a few beats past both ends
    k = np.arange(-4, int(np.ceil(cfg.duration / period)) + 4)
    grid = offset + k * period
    # kinematic beats are stamped at the later frame of the interval they are
    # measured over, so strokes lead their beat by half a frame to cancel that
    taus = grid - 0.5 / fps + cfg.jitter * rng.standard_normal(len(grid))
    margin = 2.0 / fps
    audible = grid[(grid >= margin) & (grid <= cfg.duration - margin)]
    motion = _synth_motion(cfg, rng, k, grid, taus, n_frames)
    audio = _synth_audio(cfg, rng, audible, n_samples)
    return Clip(
        AudioClip(audio.astype(np.float32), cfg.sample_rate),
        PoseSequence(motion.astype(np.float32), fps),
        audible.astype(np.float64),
    )


def synth_generate(cfg: SynthConfig = None, seed=0, split_seed=0) -> GestureDataset:
    cfg = cfg or SynthConfig()
    if cfg.duration <= 0 or cfg.n_clips < 0:
        raise StructuralError("synthetic corpus needs a positive duration and a non-negative clip count")
    if not 0 < cfg.bpm_min <= cfg.bpm_max:
        raise StructuralError("tempo range must satisfy 0 < bpm_min <= bpm_max")
    clips = [synth_clip(cfg, seed, i) for i in range(cfg.n_clips)]
    return GestureDataset(clips, fps=cfg.fps, split_seed=split_seed)


# --- windows and splits ------------------------------------------------------

def window_starts(n_frames, length=WINDOW_LEN, stride=STRIDE) -> list:
    if n_frames < length:
        return []
    return list(range(0, (n_frames - length) // stride * stride + 1, stride))


def window(dataset: GestureDataset, length=WINDOW_LEN, stride=STRIDE) -> list:
    """``(clip index, start frame)`` for every full window; partial tails are dropped."""
    return [(c, s) for c, clip in enumerate(dataset.clips)
            for s in window_starts(len(clip.motion), length, stride)]


def split(windows, fractions=(0.8, 0.1, 0.1), seed=0) -> list:
    """Assign whole clips to train/val/test so overlapping windows never straddle splits."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise StructuralError("split fractions must be three non-negative numbers summing to 1")
    clips = sorted({c for c, _ in windows})
    order = np.random.default_rng(seed).permutation(len(clips))
    n_train = int(round(fractions[0] * len(clips)))
    n_val = int(round(fractions[1] * len(clips)))
    label = {}
    for rank, i in enumerate(order):
        label[clips[i]] = SPLITS[0] if rank < n_train else SPLITS[1] if rank < n_train + n_val else SPLITS[2]
    return [label[c] for c, _ in windows]


# --- GSTR file format ---------------------------------------------------------

def encode_dataset(ds: GestureDataset) -> bytes:
    out = [MAGIC, struct.pack("<IfI", VERSION, ds.fps, len(ds.clips))]
    for clip in ds.clips:
        samples = np.ascontiguousarray(clip.audio.samples, dtype="<f4")
        dirs = np.ascontiguousarray(clip.motion.dirs, dtype="<f4")
        beats = np.ascontiguousarray(clip.beats, dtype="<f8")
        out.append(struct.pack("<Q", samples.size) + samples.tobytes())
        out.append(struct.pack("<IBB", dirs.shape[0], dirs.shape[2], dirs.shape[1]) + dirs.tobytes())
        out.append(struct.pack("<I", beats.size) + beats.tobytes())
    return b"".join(out)


def decode_dataset(data: bytes, split_seed=0) -> GestureDataset:
    r = Reader(data, "dataset")
    if r.take(4, "magic") != MAGIC:
        raise ParseError("bad magic, not a GSTR dataset", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise ParseError(f"unsupported dataset version {version}", 4)
    fps, n_clips = r.unpack("<fI", "header")
    clips = []
    for c in range(n_clips):
        (n_samples,) = r.unpack("<Q", f"clip {c} sample count")
        samples = r.array("<f4", n_samples, f"clip {c} audio").astype(np.float32)
        start = r.pos
        n_frames, dims, bones = r.unpack("<IBB", f"clip {c} pose header")
        if dims not in (2, 3) or bones == 0:
            raise ParseError(f"clip {c} has invalid pose layout dims={dims} bones={bones}", start)
        dirs = r.array("<f4", n_frames * dims * bones, f"clip {c} pose data").astype(np.float32)
        (n_beats,) = r.unpack("<I", f"clip {c} beat count")
        beats = r.array("<f8", n_beats, f"clip {c} beats").astype(np.float64)
        clips.append(Clip(AudioClip(samples, SAMPLE_RATE),
                          PoseSequence(dirs.reshape(n_frames, bones, dims), float(fps)), beats))
    if not r.at_end():
        raise ParseError("trailing bytes after last clip", r.pos)
    return GestureDataset(clips, fps=float(fps), split_seed=split_seed)


def write_dataset(path, ds: GestureDataset):
    Path(path).write_bytes(encode_dataset(ds))


def read_dataset(path, split_seed=0) -> GestureDataset:
    return decode_dataset(Path(path).read_bytes(), split_seed=split_seed)
