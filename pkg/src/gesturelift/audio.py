"""Audio loading, onset envelope, audio beats and per-pose-frame conditioning features."""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass

import numpy as np

from gesturelift.errors import ParseError, StructuralError, UnsupportedFormatError

SAMPLE_RATE = 16000
HOP = 160  # 10 ms
WINDOW = 736  # 46 ms
N_FEATURES = 32
N_MEL_BANDS = 30
LOG_FLOOR = 1e-10


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.sample_rate <= 0:
            raise StructuralError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise StructuralError("audio samples must be finite")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class BeatSet:
    times: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if np.any(np.diff(self.times) <= 0):
            raise StructuralError("beat times must be strictly increasing")

    def __len__(self):
        return len(self.times)


def resample_linear(x, rate_in, rate_out=SAMPLE_RATE):
    """Linear interpolation onto the ``rate_out`` grid spanning the same first..last sample."""
    if rate_in == rate_out or len(x) == 0:
        return np.asarray(x, dtype=np.float64)
    n_out = int(np.floor((len(x) - 1) * rate_out / rate_in)) + 1
    t_out = np.arange(n_out) * (rate_in / rate_out)
    return np.interp(t_out, np.arange(len(x)), x)


def load_wav(data: bytes) -> AudioClip:
    """Decode a PCM-16 RIFF/WAVE file to a mono 16 kHz clip in ``[-1, 1]``."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise ParseError("not a RIFF/WAVE file", 0)
    try:
        with wave.open(io.BytesIO(data)) as w:
            n_channels, width, rate, n_frames = (
                w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes())
            raw = w.readframes(n_frames)
    except wave.Error as exc:
        if "unknown format" in str(exc):
            raise UnsupportedFormatError(f"only PCM WAV is supported ({exc})") from exc
        raise ParseError(f"malformed WAV: {exc}") from exc
    except EOFError as exc:
        raise ParseError("truncated WAV header") from exc
    if width != 2:
        raise UnsupportedFormatError(f"only 16-bit PCM is supported, got {8 * width}-bit")
    if len(raw) < n_frames * n_channels * 2:
        raise ParseError(
            f"truncated WAV data: header declares {n_frames} frames, found "
            f"{len(raw) // (2 * n_channels)}", len(data))
    pcm = np.frombuffer(raw, dtype="<i2").reshape(-1, n_channels).astype(np.float64)
    mono = pcm.mean(axis=1) / 32768.0
    return AudioClip(resample_linear(mono, rate), SAMPLE_RATE)


def write_wav(clip: AudioClip) -> bytes:
    """Encode a clip as mono PCM-16 WAV bytes."""
    pcm = np.clip(np.round(np.asarray(clip.samples) * 32767.0), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(clip.sample_rate))
        w.writeframes(pcm.tobytes())
    return buf.getvalue()


def _frames(x, hop, window, lead):
    """Hann-windowed frames; frame ``i`` spans ``[i*hop - lead, i*hop - lead + window)``."""
    xp = np.concatenate([np.zeros(lead), x, np.zeros(window)])
    n = len(x) // hop + 1
    idx = np.arange(window)[None, :] + hop * np.arange(n)[:, None]
    return xp[idx] * np.hanning(window)[None, :]


def onset_envelope(clip: AudioClip, hop=HOP, window=WINDOW) -> np.ndarray:
    """Half-wave rectified spectral flux, one value per ``hop`` samples.

    The frames are shifted so that value ``i`` belongs to time ``i * hop /
    sample_rate``: a Hann window gains energy fastest when an onset sits a
    quarter window inside its leading edge, so each frame starts three
    quarters of a window before its timestamp.
    """
    if window < hop:
        raise StructuralError("window must be at least hop")
    x = np.asarray(clip.samples, dtype=np.float64)
    if len(x) < window:
        return np.zeros(0)
    mag = np.abs(np.fft.rfft(_frames(x, hop, window, (3 * window) // 4), axis=1))
    flux = np.maximum(np.diff(mag, axis=0), 0.0).sum(axis=1)
    return np.concatenate([[0.0], flux])


def detect_audio_beats(envelope, fps_equiv=SAMPLE_RATE / HOP, threshold_k=1.5,
                       min_gap=0.1, duration=None) -> BeatSet:
    """Peaks of ``envelope`` above ``mean + k * std`` separated by at least ``min_gap`` seconds."""
    env = np.asarray(envelope, dtype=np.float64)
    if env.size < 3 or not np.any(env > 0):
        return BeatSet(np.zeros(0))
    thr = env.mean() + threshold_k * env.std()
    i = np.arange(1, env.size - 1)
    peaks = i[(env[i] > env[i - 1]) & (env[i] >= env[i + 1]) & (env[i] > thr)]
    kept = []
    for p in sorted(peaks, key=lambda p: (-env[p], p)):
        if all(abs(p - q) / fps_equiv >= min_gap for q in kept):
            kept.append(p)
    times = np.sort(np.asarray(kept, dtype=np.float64)) / fps_equiv
    if duration is not None:
        times = times[times <= duration]
    return BeatSet(times)


def audio_beats(clip: AudioClip, threshold_k=1.5) -> BeatSet:
    env = onset_envelope(clip)
    return detect_audio_beats(env, clip.sample_rate / HOP, threshold_k, duration=clip.duration)


def _mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def _mel_inv(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def mel_band_edges(n_bands=N_MEL_BANDS, f_min=0.0, f_max=SAMPLE_RATE / 2):
    """``n_bands + 2`` edge frequencies (Hz); band ``b`` spans ``edges[b]..edges[b+2]``."""
    return _mel_inv(np.linspace(_mel(f_min), _mel(f_max), n_bands + 2))


def mel_filterbank(n_fft, sample_rate=SAMPLE_RATE, n_bands=N_MEL_BANDS):
    edges = mel_band_edges(n_bands, 0.0, sample_rate / 2)
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    fb = np.zeros((n_bands, freqs.size))
    for b in range(n_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[b] = np.maximum(0.0, np.minimum(up, down))
    return fb


def conditioning_features(clip: AudioClip, n_frames: int, fps=15.0) -> np.ndarray:
    """``(n_frames, 32)`` features centered on pose frame times ``f / fps``.

    Columns: log energy, onset strength (envelope maximum over the frame's
    span), then 30 log mel-band energies.
    """
    x = np.asarray(clip.samples, dtype=np.float64)
    sr = clip.sample_rate
    hop_s = HOP / sr
    if n_frames < 1:
        raise StructuralError("n_frames must be positive")
    if len(x) / sr < n_frames / fps - hop_s:
        raise StructuralError(
            f"clip of {len(x) / sr:.3f} s is too short for {n_frames} frames at {fps} fps")
    win = int(round(sr / fps))
    n_fft = 1 << int(np.ceil(np.log2(win)))
    half = win // 2
    xp = np.concatenate([np.zeros(half), x, np.zeros(win)])
    starts = np.round(np.arange(n_frames) * sr / fps).astype(np.int64)
    frames = xp[starts[:, None] + np.arange(win)[None, :]]
    energy = np.log(np.mean(frames * frames, axis=1) + LOG_FLOOR)
    power = np.abs(np.fft.rfft(frames * np.hanning(win), n=n_fft, axis=1)) ** 2
    bands = np.log(power @ mel_filterbank(n_fft, sr).T + LOG_FLOOR)

    env = onset_envelope(clip)
    onset = np.zeros(n_frames)
    if env.size:
        per = sr / HOP / fps
        for f in range(n_frames):
            lo = int(np.floor((f - 0.5) * per)) + 1
            hi = int(np.floor((f + 0.5) * per)) + 1
            seg = env[max(lo, 0):min(hi, env.size)]
            onset[f] = seg.max() if seg.size else 0.0
    return np.column_stack([energy, onset, bands])
