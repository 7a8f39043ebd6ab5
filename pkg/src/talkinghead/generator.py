"""Audio-driven frame generator with spatially-adaptive normalization.

Only the content embedding seeds the latent; the identity image enters
through the per-block modulation maps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .audio import ContentEncoder, Waveform, build_content_encoder, frame_windows
from .config import AudioConfig, GenConfig
from .errors import DimensionMismatch, ShapeMismatch, ValidationError

NORM_EPS = 1e-5


@dataclass
class IdentityImage:
    pixels: torch.Tensor  # (3, H, W) in [-1, 1]
    pyramid: list  # (3, r, r) for r = 4, 8, ..., H

    @classmethod
    def from_array(cls, img) -> "IdentityImage":
        """Build from an HxWx3 array in [-1, 1] (or a CHW tensor)."""
        t = torch.as_tensor(np.asarray(img) if not torch.is_tensor(img) else img, dtype=torch.float32)
        if t.ndim == 3 and t.shape[-1] == 3 and t.shape[0] != 3:
            t = t.permute(2, 0, 1)
        if t.ndim != 3 or t.shape[0] != 3:
            raise ShapeMismatch(f"identity image must be HxWx3, got {tuple(t.shape)}")
        h, w = t.shape[1:]
        if h != w or h < 64 or h > 256 or h & (h - 1):
            raise ShapeMismatch(f"identity image must be square, power of 2 in [64, 256]; got {h}x{w}")
        return cls(t.contiguous(), [lvl[0] for lvl in build_pyramid(t[None])])


def build_pyramid(images: torch.Tensor) -> list[torch.Tensor]:
    """Area-resized copies of (B, 3, H, W) at 4, 8, ..., H (coarse to fine)."""
    h = images.shape[-1]
    levels = []
    r = 4
    while r < h:
        levels.append(F.adaptive_avg_pool2d(images, r))
        r *= 2
    levels.append(images)
    return levels


def param_free_norm(x: torch.Tensor, kind: str = "instance") -> torch.Tensor:
    if kind == "instance":
        dims = (2, 3)
    elif kind == "batch":
        dims = (0, 2, 3)
    else:
        raise ValidationError(f"unknown normalization {kind!r}")
    centred = x - x.mean(dim=dims, keepdim=True)
    # second pass removes the rounding left by the first, so constant channels map to exactly 0
    centred = centred - centred.mean(dim=dims, keepdim=True)
    var = centred.pow(2).mean(dim=dims, keepdim=True)
    return centred / torch.sqrt(var + NORM_EPS)


class SPADE(nn.Module):
    """norm(x) * (1 + gamma(cond)) + beta(cond); gamma/beta start at zero."""

    def __init__(self, channels: int, hidden: int = 32, cond_channels: int = 3, norm: str = "instance",
                 modulate: bool = True):
        super().__init__()
        self.norm = norm
        self.modulate = modulate
        self.shared = nn.Sequential(nn.Conv2d(cond_channels, hidden, 3, padding=1), nn.ReLU())
        self.gamma = nn.Conv2d(hidden, channels, 3, padding=1)
        self.beta = nn.Conv2d(hidden, channels, 3, padding=1)
        for conv in (self.gamma, self.beta):
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-2:] != x.shape[-2:]:
            raise ShapeMismatch(f"conditioning {tuple(cond.shape[-2:])} vs activations {tuple(x.shape[-2:])}")
        normed = param_free_norm(x, self.norm)
        if not self.modulate:
            return normed
        h = self.shared(cond)
        return normed * (1 + self.gamma(h)) + self.beta(h)


def spade_normalize(activations: torch.Tensor, cond: torch.Tensor, params: SPADE) -> torch.Tensor:
    """Single-sample convenience: (C, h, w) activations, (3, h, w) conditioning."""
    squeeze = activations.ndim == 3
    if squeeze:
        activations, cond = activations[None], cond[None]
    out = params(activations, cond)
    return out[0] if squeeze else out


class SPADEResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, hidden: int, norm: str, modulate: bool = True):
        super().__init__()
        mid = min(cin, cout)
        self.norm0 = SPADE(cin, hidden, norm=norm, modulate=modulate)
        self.conv0 = nn.Conv2d(cin, mid, 3, padding=1)
        self.norm1 = SPADE(mid, hidden, norm=norm, modulate=modulate)
        self.conv1 = nn.Conv2d(mid, cout, 3, padding=1)
        self.skip = None
        if cin != cout:
            self.norm_s = SPADE(cin, hidden, norm=norm, modulate=modulate)
            self.skip = nn.Conv2d(cin, cout, 1, bias=False)

    def forward(self, x, cond):
        s = x if self.skip is None else self.skip(self.norm_s(x, cond))
        h = self.conv0(F.leaky_relu(self.norm0(x, cond), 0.2))
        h = self.conv1(F.leaky_relu(self.norm1(h, cond), 0.2))
        return s + h


class SpadeGenerator(nn.Module):
    """Content vector -> 4x4 latent -> K upsampling SPADE blocks -> tanh image."""

    def __init__(self, cfg: GenConfig, modulate: bool = True):
        super().__init__()
        res = cfg.resolution
        if res < 8 or res & (res - 1):
            raise ValidationError(f"gen.resolution must be a power of 2, got {res}")
        self.cfg = cfg
        self.n_blocks = int(math.log2(res // 4))
        chans = [max(cfg.min_channels, cfg.base_channels >> i) for i in range(self.n_blocks + 1)]
        self.chans = chans
        self.fc = nn.Linear(cfg.audio_dim, chans[0] * 16)
        self.blocks = nn.ModuleList(
            SPADEResBlock(chans[i], chans[i + 1], cfg.spade_hidden, cfg.norm, modulate)
            for i in range(self.n_blocks)
        )
        self.norm_out = SPADE(chans[-1], cfg.spade_hidden, norm=cfg.norm, modulate=modulate)
        self.conv_out = nn.Conv2d(chans[-1], 3, 3, padding=1)

    def forward(self, content: torch.Tensor, pyramid: list[torch.Tensor]) -> torch.Tensor:
        if content.shape[-1] != self.cfg.audio_dim:
            raise DimensionMismatch(f"content embedding has {content.shape[-1]} dims, expected {self.cfg.audio_dim}")
        x = self.fc(content).view(content.shape[0], self.chans[0], 4, 4)
        for i, block in enumerate(self.blocks):
            x = block(x, pyramid[i])
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.leaky_relu(self.norm_out(x, pyramid[-1]), 0.2)
        return torch.tanh(self.conv_out(x))

    def modulation_parameters(self) -> Iterable[nn.Parameter]:
        for m in self.modules():
            if isinstance(m, SPADE):
                yield from m.parameters()


class AudioToFrame(nn.Module):
    """Content encoder + SPADE generator: MFCC windows and identity in, frames out."""

    def __init__(self, gen_cfg: GenConfig, audio_cfg: Optional[AudioConfig] = None, modulate: bool = True):
        super().__init__()
        audio_cfg = audio_cfg or AudioConfig()
        self.encoder = build_content_encoder(audio_cfg, gen_cfg.audio_dim, gen_cfg.encoder_channels)
        self.generator = SpadeGenerator(gen_cfg, modulate=modulate)
        self.audio_cfg = audio_cfg

    def forward(self, mfcc: torch.Tensor, identity: torch.Tensor) -> torch.Tensor:
        """mfcc (B, T, n_mfcc), identity (B, 3, H, W) -> frames (B, 3, H, W)."""
        return self.generator(self.encoder(mfcc), build_pyramid(identity))


@dataclass
class GeneratedFrame:
    pixels: torch.Tensor  # (3, H, W) in [-1, 1]
    frame_index: int


def generate_frame(audio, identity: IdentityImage, model: SpadeGenerator, frame_index: int = 0) -> GeneratedFrame:
    """One frame from a content embedding (ContentEmbedding or (D,) tensor)."""
    vec = audio
    if hasattr(audio, "vector"):
        vec, frame_index = audio.vector, audio.frame_index
    pyramid = [lvl[None] for lvl in identity.pyramid]
    out = model(vec[None].to(pyramid[0].dtype), pyramid)
    return GeneratedFrame(out[0], frame_index)


@torch.no_grad()
def generate_video(w: Waveform, identity: IdentityImage, model: AudioToFrame, batch_size: int = 32
                   ) -> list[GeneratedFrame]:
    """Frames for every audio window of ``w``; the generator is stateless across frames."""
    cfg = model.audio_cfg
    windows = frame_windows(w, cfg.fps, cfg.window_ms, cfg)
    mfcc = torch.tensor(np.stack([win.mfcc for win in windows]), dtype=torch.float32)
    ident = identity.pixels[None].to(torch.float32)
    frames = []
    for start in range(0, len(windows), batch_size):
        chunk = mfcc[start : start + batch_size]
        out = model(chunk, ident.expand(chunk.shape[0], -1, -1, -1))
        frames.extend(GeneratedFrame(out[i], start + i) for i in range(out.shape[0]))
    return frames
