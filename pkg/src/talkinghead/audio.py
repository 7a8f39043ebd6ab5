"""Audio front end: per-video-frame windowing, MFCC, content embeddings."""
from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
from scipy.fft import dct

from .config import AudioConfig
from .errors import EmptyAudio, NonDivisible, ValidationError, WeightsShapeMismatch


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise ValidationError("waveform must be a non-empty 1-D sequence")
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate must be positive")
        if not np.all(np.isfinite(s)):
            raise ValidationError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", s)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class AudioWindow:
    frame_index: int
    center_sample: int
    samples: np.ndarray
    mfcc: Optional[np.ndarray] = None


@dataclass
class ContentEmbedding:
    vector: torch.Tensor
    frame_index: int = 0


def compute_stride(sample_rate: int, fps: int) -> int:
    if sample_rate <= 0 or fps <= 0:
        raise ValidationError("sample_rate and fps must be positive")
    if sample_rate % fps:
        raise NonDivisible(
            f"sample rate {sample_rate} is not a multiple of {fps} fps; resample before framing"
        )
    return sample_rate // fps


def window_length(sample_rate: int, window_ms: int) -> int:
    n = window_ms * sample_rate / 1000
    if n != int(n) or int(n) % 2:
        raise ValidationError(f"{window_ms} ms at {sample_rate} Hz is not an even sample count")
    return int(n)


def num_frames(n_samples: int, sample_rate: int, fps: int) -> int:
    # round-half-up on the exact rational duration * fps
    return (2 * n_samples * fps + sample_rate) // (2 * sample_rate)


def frame_windows(
    w: Waveform,
    fps: int = 25,
    window_ms: int = 200,
    cfg: Optional[AudioConfig] = None,
    with_mfcc: bool = True,
) -> list[AudioWindow]:
    """Slice ``w`` into one zero-padded window per video frame.

    Frame k is centred on sample ``stride/2 + k*stride``.
    """
    cfg = cfg or AudioConfig(sample_rate=w.sample_rate, fps=fps, window_ms=window_ms)
    stride = compute_stride(w.sample_rate, fps)
    win = window_length(w.sample_rate, window_ms)
    n = w.samples.size
    if n < stride:
        raise EmptyAudio(f"{n} samples is shorter than one stride ({stride})")
    count = num_frames(n, w.sample_rate, fps)
    half = win // 2
    padded = np.concatenate([np.zeros(half), w.samples, np.zeros(half + count * stride)])
    out = []
    for k in range(count):
        c = stride // 2 + k * stride
        sl = padded[c : c + win].copy()  # padded index c == original c - half
        mf = compute_mfcc(sl, cfg) if with_mfcc else None
        out.append(AudioWindow(frame_index=k, center_sample=c, samples=sl, mfcc=mf))
    return out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


_FB_CACHE: dict = {}


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters on the HTK mel scale, 0 Hz to Nyquist, peak height 1."""
    key = (n_mels, n_fft, sample_rate)
    if key not in _FB_CACHE:
        edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
        freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
        lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        _FB_CACHE[key] = np.maximum(0.0, np.minimum(up, down))
    return _FB_CACHE[key]


def compute_mfcc(samples: np.ndarray, cfg: Optional[AudioConfig] = None) -> np.ndarray:
    """MFCC matrix [ceil(len/hop) x n_mfcc] for one audio window.

    Analysis frames are Hamming-windowed and centred at ``hop/2 + k*hop``;
    the signal is zero-padded by half an analysis window on each side.
    """
    cfg = cfg or AudioConfig()
    x = np.asarray(samples, dtype=np.float64)
    sr = cfg.sample_rate
    flen = int(round(cfg.analysis_ms * sr / 1000))
    hop = int(round(cfg.hop_ms * sr / 1000))
    n = math.ceil(x.size / hop)
    half = flen // 2
    padded = np.concatenate([np.zeros(half), x, np.zeros(half + hop)])
    starts = hop // 2 + hop * np.arange(n)  # centre in original coords == start in padded coords
    frames = padded[starts[:, None] + np.arange(flen)[None, :]] * np.hamming(flen)
    power = np.abs(np.fft.rfft(frames, cfg.n_fft, axis=1)) ** 2 / cfg.n_fft
    mel = power @ mel_filterbank(cfg.n_mels, cfg.n_fft, sr).T
    return dct(np.log(mel + 1e-10), type=2, axis=1, norm="ortho")[:, : cfg.n_mfcc]


class ContentEncoder(nn.Module):
    """Two 1-D convolutions over time, a bidirectional GRU, and a linear head.

    Maps an MFCC window [T x n_mfcc] to a ``dim``-sized content vector.
    """

    def __init__(self, n_mfcc: int = 13, channels: int = 64, dim: int = 256, zero_init_head: bool = False):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv1d(n_mfcc, channels, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv1d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.rnn = nn.GRU(channels, channels // 2, batch_first=True, bidirectional=True)
        self.head = nn.Linear(channels, dim)
        self.dim = dim
        if zero_init_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, mfcc: torch.Tensor) -> torch.Tensor:
        # mfcc: (B, T, n_mfcc); features are scaled down to keep the GRU out of saturation
        h = self.convs(mfcc.transpose(1, 2) / 10.0).transpose(1, 2)
        h, _ = self.rnn(h)
        return self.head(h.mean(dim=1))

    def load_weights(self, path: str | Path) -> None:
        """Load exported weights from an ``.npz`` archive keyed like ``state_dict()``."""
        with np.load(path) as z:
            loaded = {k: torch.from_numpy(z[k]) for k in z.files}
        own = self.state_dict()
        if set(loaded) != set(own):
            raise WeightsShapeMismatch(
                f"weight names differ: missing {sorted(set(own) - set(loaded))}, "
                f"unexpected {sorted(set(loaded) - set(own))}"
            )
        for k, v in loaded.items():
            if tuple(v.shape) != tuple(own[k].shape):
                raise WeightsShapeMismatch(f"{k}: expected {tuple(own[k].shape)}, got {tuple(v.shape)}")
        self.load_state_dict({k: v.to(own[k].dtype) for k, v in loaded.items()})

    def export_weights(self, path: str | Path) -> None:
        np.savez(path, **{k: v.detach().cpu().numpy() for k, v in self.state_dict().items()})


def build_content_encoder(audio: AudioConfig, dim: int, channels: int) -> ContentEncoder:
    enc = ContentEncoder(audio.n_mfcc, channels, dim)
    if audio.encoder_weights:
        enc.load_weights(audio.encoder_weights)
    return enc


def encode_content(mfcc, encoder: ContentEncoder, frame_index: int = 0) -> ContentEmbedding:
    x = torch.as_tensor(np.asarray(mfcc), dtype=next(encoder.parameters()).dtype)
    if x.ndim == 2:
        x = x[None]
    return ContentEmbedding(vector=encoder(x)[0], frame_index=frame_index)


def read_wav(path: str | Path) -> Waveform:
    """Read 16-bit signed mono PCM."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValidationError(f"{path}: expected 16-bit mono PCM")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(data, rate)


def write_wav(path: str | Path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())
