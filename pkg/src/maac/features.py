"""Log-mel features, SpecAugment masking and mixup."""

from __future__ import annotations

import hashlib
import json
import struct
import wave
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .numerics.rng import Rng


@dataclass(frozen=True)
class FeatureParams:
    sample_rate: int = 32000
    window: int = 1024
    hop: int = 320
    n_mels: int = 64
    f_min: float = 0.0
    f_max: float | None = None
    floor_eps: float = 1e-10

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("samples must be a non-empty mono vector")


@dataclass
class LogMel:
    frames: np.ndarray  # [T_frames, n_mels]
    params: FeatureParams


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(params: FeatureParams) -> np.ndarray:
    """Center frequency (Hz) of every mel band."""
    f_max = params.f_max if params.f_max is not None else params.sample_rate / 2
    pts = np.linspace(hz_to_mel(params.f_min), hz_to_mel(f_max), params.n_mels + 2)
    return mel_to_hz(pts[1:-1])


def mel_filterbank(params: FeatureParams) -> np.ndarray:
    """Triangular HTK-scale filters, peak 1 at each band center: [n_mels, n_fft//2+1]."""
    f_max = params.f_max if params.f_max is not None else params.sample_rate / 2
    pts = mel_to_hz(np.linspace(hz_to_mel(params.f_min), hz_to_mel(f_max), params.n_mels + 2))
    freqs = np.fft.rfftfreq(params.window, d=1.0 / params.sample_rate)
    fb = np.zeros((params.n_mels, freqs.size))
    for j in range(params.n_mels):
        lo, mid, hi = pts[j], pts[j + 1], pts[j + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[j] = np.maximum(0.0, np.minimum(up, down))
    return fb


def hann(n: int) -> np.ndarray:
    # periodic Hann, the usual STFT choice
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames(n_samples: int, params: FeatureParams) -> int:
    return 1 + (n_samples - params.window) // params.hop


def power_spectrogram(samples: np.ndarray, params: FeatureParams) -> np.ndarray:
    if samples.size < params.window:
        raise ValueError(f"signal of {samples.size} samples is shorter than the {params.window}-sample window")
    t = n_frames(samples.size, params)
    idx = np.arange(params.window)[None, :] + params.hop * np.arange(t)[:, None]
    frames = samples[idx] * hann(params.window)[None, :]
    spec = np.fft.rfft(frames, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def logmel(w: Waveform, params: FeatureParams = FeatureParams()) -> LogMel:
    if w.sample_rate != params.sample_rate:
        raise ValueError(f"waveform is {w.sample_rate} Hz, features expect {params.sample_rate} Hz")
    power = power_spectrogram(w.samples, params)
    mel = power @ mel_filterbank(params).T
    return LogMel(np.log(mel + params.floor_eps), params)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def spec_augment(
    x: LogMel,
    rng: Rng,
    n_time_masks: int = 2,
    max_time_w: int | None = None,
    n_freq_masks: int = 2,
    max_freq_w: int = 8,
    min_time_w: int = 1,
    min_freq_w: int = 1,
) -> LogMel:
    """Fill random time and mel stripes with the utterance mean.

    Widths are drawn uniformly from [min_w, max_w]; start positions uniformly
    over the valid range. Unmasked entries are returned bit-identical.
    """
    frames = x.frames
    t, f = frames.shape
    if max_time_w is None:
        max_time_w = max(1, -(-t // 10))
    if max_time_w > t or max_freq_w > f:
        raise ValueError(f"mask width ({max_time_w}, {max_freq_w}) exceeds feature size ({t}, {f})")
    if not (1 <= min_time_w <= max_time_w) or not (1 <= min_freq_w <= max_freq_w):
        raise ValueError("mask widths must satisfy 1 <= min <= max")
    out = frames.copy()
    fill = frames.mean()
    for _ in range(n_time_masks):
        width = int(rng.integers(min_time_w, max_time_w + 1))
        start = int(rng.integers(0, t - width + 1))
        out[start:start + width, :] = fill
    for _ in range(n_freq_masks):
        width = int(rng.integers(min_freq_w, max_freq_w + 1))
        start = int(rng.integers(0, f - width + 1))
        out[:, start:start + width] = fill
    return LogMel(out, x.params)


def mixup_batch(x1, y1, x2, y2, rng: Rng | None = None, alpha: float = 1.0, lam: float | None = None):
    """Convex combination of two examples with lam ~ Beta(alpha, alpha)."""
    x1, x2 = np.asarray(x1), np.asarray(x2)
    y1, y2 = np.asarray(y1, dtype=np.float64), np.asarray(y2, dtype=np.float64)
    if x1.shape != x2.shape or y1.shape != y2.shape:
        raise ValueError(f"mixup shape mismatch: {x1.shape}/{x2.shape}, {y1.shape}/{y2.shape}")
    if lam is None:
        if rng is None:
            raise ValueError("mixup needs an Rng or an explicit lam")
        lam = float(rng.beta(alpha, alpha))
    if lam == 1.0:
        return x1.copy(), y1.copy()
    if lam == 0.0:
        return x2.copy(), y2.copy()
    return lam * x1 + (1.0 - lam) * x2, lam * y1 + (1.0 - lam) * y2


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def read_wav(path) -> Waveform:
    """16-bit PCM WAV; stereo is averaged to mono, samples scaled to [-1, 1)."""
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM is supported")
        ch = wf.getnchannels()
        sr = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if ch > 1:
        data = data.reshape(-1, ch).mean(axis=1)
    return Waveform(data, sr)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(pcm.tobytes())


def resample_linear(w: Waveform, sample_rate: int) -> Waveform:
    if sample_rate == w.sample_rate:
        return w
    n_out = int(round(w.samples.size * sample_rate / w.sample_rate))
    t_out = np.arange(n_out) / sample_rate
    t_in = np.arange(w.samples.size) / w.sample_rate
    return Waveform(np.interp(t_out, t_in, w.samples), sample_rate)


FEATURE_MAGIC = b"MAACFEAT"


def save_features(path, x: LogMel) -> None:
    """Header JSON (shape, params, dtype) after magic + u32 length; body little-endian f8."""
    body = np.ascontiguousarray(x.frames, dtype="<f8")
    header = json.dumps({"shape": list(body.shape), "dtype": "<f8", "params": asdict(x.params)}).encode()
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(body.tobytes())


def load_features(path) -> LogMel:
    blob = Path(path).read_bytes()
    if blob[:8] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature file")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + hlen])
    shape = tuple(header["shape"])
    body = blob[12 + hlen:]
    expected = int(np.prod(shape)) * 8
    if len(body) != expected:
        raise ValueError(f"{path}: body has {len(body)} bytes, expected {expected}")
    frames = np.frombuffer(body, dtype=header["dtype"]).reshape(shape).astype(np.float64)
    return LogMel(frames, FeatureParams(**header["params"]))


def cached_logmel(audio_path, cache_dir, params: FeatureParams) -> LogMel:
    """Log-mel for a WAV file, cached on disk under a key of (file stem, params digest)."""
    cache_dir = Path(cache_dir)
    cache = cache_dir / f"{Path(audio_path).stem}.{params.digest()}.feat"
    if cache.exists():
        return load_features(cache)
    w = resample_linear(read_wav(audio_path), params.sample_rate)
    feats = logmel(w, params)
    cache_dir.mkdir(parents=True, exist_ok=True)
    save_features(cache, feats)
    return feats
