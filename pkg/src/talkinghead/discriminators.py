"""Multi-scale frame discriminator, multi-scale temporal discriminator and the
two-stream audio/video synchronization network."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import spectral_norm

from .config import DiscConfig
from .errors import ShapeMismatch, ShortWindow

SYNC_FRAMES = 5


@dataclass
class DiscriminatorOutput:
    score_maps: list = field(default_factory=list)  # one logit map per scale
    features: list = field(default_factory=list)  # per scale: activations, shallow -> deep


def scale_pyramid(x: torch.Tensor, n_scales: int = 3) -> list[torch.Tensor]:
    """Sides S, S/2, S/4, ... by 2x2 average pooling."""
    levels = [x]
    for _ in range(n_scales - 1):
        levels.append(F.avg_pool2d(levels[-1], 2))
    return levels


class PatchDiscriminator(nn.Module):
    """Plain conv stack; the last of ``n_layers`` keeps resolution, the rest halve it."""

    def __init__(self, in_ch: int, ndf: int = 16, n_layers: int = 4, spectral: bool = True):
        super().__init__()
        wrap = spectral_norm if spectral else (lambda m: m)
        layers = []
        c = in_ch
        for i in range(n_layers):
            out = ndf * min(2 ** i, 4)
            stride = 2 if i < n_layers - 1 else 1
            layers.append(nn.Sequential(wrap(nn.Conv2d(c, out, 3, stride, 1)), nn.LeakyReLU(0.2)))
            c = out
        self.layers = nn.ModuleList(layers)
        self.score = wrap(nn.Conv2d(c, 1, 3, 1, 1))

    def forward(self, x):
        feats = []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        return self.score(x), feats


class MultiScaleDiscriminator(nn.Module):
    def __init__(self, in_ch: int, ndf: int, n_layers: int, n_scales: int, spectral: bool = True):
        super().__init__()
        self.n_scales = n_scales
        self.nets = nn.ModuleList(PatchDiscriminator(in_ch, ndf, n_layers, spectral) for _ in range(n_scales))

    def forward(self, x: torch.Tensor) -> DiscriminatorOutput:
        out = DiscriminatorOutput()
        for net, level in zip(self.nets, scale_pyramid(x, self.n_scales)):
            score, feats = net(level)
            out.score_maps.append(score)
            out.features.append(feats)
        return out


class FrameDiscriminator(MultiScaleDiscriminator):
    """Judges single frames at full, 1/2 and 1/4 resolution, conditioned on the
    identity image by channel concatenation."""

    def __init__(self, cfg: DiscConfig, resolution: int):
        super().__init__(6, cfg.frame_channels, cfg.frame_layers, 3, cfg.spectral_norm)
        self.resolution = resolution

    def forward(self, frame: torch.Tensor, identity: torch.Tensor) -> DiscriminatorOutput:
        if frame.shape[-2:] != (self.resolution, self.resolution) or identity.shape != frame.shape:
            raise ShapeMismatch(
                f"frame {tuple(frame.shape)} / identity {tuple(identity.shape)} vs resolution {self.resolution}"
            )
        return super().forward(torch.cat([frame, identity], dim=1))


class TemporalDiscriminator(MultiScaleDiscriminator):
    """Judges L channel-stacked consecutive frames at two spatial scales."""

    def __init__(self, cfg: DiscConfig):
        super().__init__(3 * cfg.temporal_window, cfg.temporal_channels, cfg.frame_layers, 2, cfg.spectral_norm)
        self.window = cfg.temporal_window

    def forward(self, frames: torch.Tensor) -> DiscriminatorOutput:
        # frames: (B, L', 3, H, W); the last L frames form the window ending at t
        if frames.shape[1] < self.window:
            raise ShortWindow(f"temporal window needs {self.window} frames, got {frames.shape[1]}")
        x = frames[:, -self.window :]
        return super().forward(x.reshape(x.shape[0], -1, *x.shape[-2:]))


def _conv_block(cin, cout, stride):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride, 1), nn.LeakyReLU(0.2))


def lower_half_crops(frames: torch.Tensor, size: int) -> torch.Tensor:
    """(B, 5, 3, H, W) -> (B, 15, size, size): rows [H/2, H) resized to a square."""
    b, n, c, h, w = frames.shape
    crop = frames[..., h // 2 :, :].reshape(b * n, c, h - h // 2, w)
    crop = F.interpolate(crop, size=(size, size), mode="bilinear", align_corners=False)
    return crop.reshape(b, n * c, size, size)


class SyncDiscriminator(nn.Module):
    """Two streams mapping 5 mouth crops and a 200 ms MFCC window to unit vectors."""

    def __init__(self, cfg: DiscConfig, n_mfcc: int = 13, mfcc_frames: int = 20):
        super().__init__()
        c = cfg.sync_channels
        self.size = cfg.sync_resolution
        self.mfcc_shape = (mfcc_frames, n_mfcc)
        self.video = nn.Sequential(
            _conv_block(3 * SYNC_FRAMES, c, 2),
            _conv_block(c, 2 * c, 2),
            _conv_block(2 * c, 4 * c, 2),
            _conv_block(4 * c, 4 * c, 2),
            nn.Flatten(),
        )
        side = self.size
        for _ in range(4):
            side = (side - 1) // 2 + 1
        self.video_fc = nn.Linear(4 * c * side * side, cfg.sync_dim)
        self.audio = nn.Sequential(
            _conv_block(1, c, 1),
            _conv_block(c, 2 * c, 2),
            _conv_block(2 * c, 4 * c, 1),
            _conv_block(4 * c, 4 * c, 2),
            nn.Flatten(),
        )
        ah, aw = mfcc_frames, n_mfcc
        for _ in range(2):
            ah, aw = (ah - 1) // 2 + 1, (aw - 1) // 2 + 1
        self.audio_fc = nn.Linear(4 * c * ah * aw, cfg.sync_dim)

    def embed_video(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.ndim != 5 or frames.shape[1] < SYNC_FRAMES:
            raise ShortWindow(f"sync video stream needs {SYNC_FRAMES} frames, got shape {tuple(frames.shape)}")
        x = lower_half_crops(frames[:, :SYNC_FRAMES], self.size)
        return F.normalize(self.video_fc(self.video(x)), dim=-1)

    def embed_audio(self, mfcc: torch.Tensor) -> torch.Tensor:
        if tuple(mfcc.shape[-2:]) != self.mfcc_shape:
            raise ShapeMismatch(f"sync audio stream expects MFCC {self.mfcc_shape}, got {tuple(mfcc.shape[-2:])}")
        return F.normalize(self.audio_fc(self.audio(mfcc[:, None] / 10.0)), dim=-1)

    def forward(self, frames, mfcc):
        return self.embed_video(frames), self.embed_audio(mfcc)


def sync_embed_video(frames: torch.Tensor, net: SyncDiscriminator) -> torch.Tensor:
    """5 consecutive frames (5, 3, H, W) -> unit vector."""
    if frames.ndim == 4:
        frames = frames[None]
    return net.embed_video(frames)[0]


def sync_embed_audio(mfcc: torch.Tensor, net: SyncDiscriminator) -> torch.Tensor:
    mfcc = torch.as_tensor(mfcc, dtype=next(net.parameters()).dtype)
    if mfcc.ndim == 2:
        mfcc = mfcc[None]
    return net.embed_audio(mfcc)[0]


def frame_disc(frame: torch.Tensor, identity: torch.Tensor, net: FrameDiscriminator) -> DiscriminatorOutput:
    if frame.ndim == 3:
        frame, identity = frame[None], identity[None]
    return net(frame, identity)


def temporal_disc(frames: torch.Tensor, net: TemporalDiscriminator) -> DiscriminatorOutput:
    if frames.ndim == 4:
        frames = frames[None]
    return net(frames)
