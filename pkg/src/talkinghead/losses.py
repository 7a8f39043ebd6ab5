"""Training losses.

Pixel and feature losses are per-element means so the weights do not depend on
resolution. ``ear`` works on numpy arrays and torch tensors alike.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DegenerateEye, EmptyBatch, ShapeMismatch, WeightsShapeMismatch

EAR_EPS = 1e-6


@dataclass
class SyncPair:
    v: torch.Tensor
    a: torch.Tensor
    y: float


def gan_loss(out_real, out_fake, side: str = "discriminator") -> torch.Tensor:
    """Binary cross-entropy on logit score maps, averaged over patches and summed over scales.

    ``side="discriminator"`` gives -[log D(x) + log(1 - D(G(z)))];
    ``side="generator"`` gives -log D(G(z)) and ignores ``out_real``.
    """
    fake_maps = out_fake.score_maps if hasattr(out_fake, "score_maps") else out_fake
    total = 0.0
    if side == "generator":
        for f in fake_maps:
            total = total + F.binary_cross_entropy_with_logits(f, torch.ones_like(f))
        return total
    if side != "discriminator":
        raise ValueError(f"side must be 'generator' or 'discriminator', got {side!r}")
    real_maps = out_real.score_maps if hasattr(out_real, "score_maps") else out_real
    for r, f in zip(real_maps, fake_maps, strict=True):
        total = total + F.binary_cross_entropy_with_logits(r, torch.ones_like(r))
        total = total + F.binary_cross_entropy_with_logits(f, torch.zeros_like(f))
    return total


def reconstruction_loss(real: torch.Tensor, gen: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over rows [H/2, H) of (..., C, H, W) images."""
    if real.shape != gen.shape:
        raise ShapeMismatch(f"{tuple(real.shape)} vs {tuple(gen.shape)}")
    h = real.shape[-2]
    return (real[..., h // 2 :, :] - gen[..., h // 2 :, :]).abs().mean()


def feature_matching_loss(real_feats: Sequence[Sequence[torch.Tensor]],
                          fake_feats: Sequence[Sequence[torch.Tensor]],
                          detach_real: bool = True) -> torch.Tensor:
    """Sum over scales and layers of ||D_i(x) - D_i(G(z))||_1 / N_i."""
    if len(real_feats) != len(fake_feats):
        raise ShapeMismatch("different number of scales")
    total = 0.0
    for rs, fs in zip(real_feats, fake_feats):
        if len(rs) != len(fs):
            raise ShapeMismatch("different number of layers")
        for r, f in zip(rs, fs):
            if r.shape != f.shape:
                raise ShapeMismatch(f"layer shapes {tuple(r.shape)} vs {tuple(f.shape)}")
            if detach_real:
                r = r.detach()
            total = total + (r - f).abs().mean()
    return total


class FeatureExtractor(nn.Module):
    """Frozen 4-level conv pyramid used for perceptual loss and identity embeddings.

    Random weights from a fixed seed by default; exported pretrained weights can
    be loaded from an ``.npz`` file with the same keys.
    """

    def __init__(self, seed: int = 1234, channels: Sequence[int] = (16, 32, 64, 64),
                 weights: Optional[str | Path] = None):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        cin = 3
        for c in channels:
            conv = nn.Conv2d(cin, c, 3, 2, 1)
            with torch.no_grad():
                bound = (6.0 / (cin * 9)) ** 0.5  # He-uniform keeps activations alive in depth
                conv.weight.copy_((torch.rand(conv.weight.shape, generator=gen) * 2 - 1) * bound)
                conv.bias.zero_()
            layers.append(conv)
            cin = c
        self.layers = nn.ModuleList(layers)
        if weights:
            with np.load(weights) as z:
                loaded = {k: torch.from_numpy(z[k]) for k in z.files}
            own = self.state_dict()
            if set(loaded) != set(own) or any(loaded[k].shape != own[k].shape for k in own):
                raise WeightsShapeMismatch(f"extractor weights in {weights} do not match the layer layout")
            self.load_state_dict(loaded)
        self.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # always frozen
        return super().train(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for conv in self.layers:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x)
        return feats

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Mean-pooled features of every level, concatenated."""
        return torch.cat([f.mean(dim=(-2, -1)) for f in self(x)], dim=-1)


def perceptual_loss(real: torch.Tensor, gen: torch.Tensor, extractor: FeatureExtractor,
                    weight: float = 1.0) -> torch.Tensor:
    """weight * sum over extractor levels of mean |F_i(real) - F_i(gen)|."""
    if weight == 0:
        return gen.new_zeros(())
    if real.ndim == 3:
        real, gen = real[None], gen[None]
    with torch.no_grad():
        real_feats = extractor(real)
    total = 0.0
    for r, g in zip(real_feats, extractor(gen)):
        total = total + (r - g).abs().mean()
    return weight * total


def _as_distances(pairs, v=None, a=None, y=None):
    if pairs is not None:
        if len(pairs) == 0:
            raise EmptyBatch("contrastive loss needs at least one pair")
        v = torch.stack([torch.as_tensor(p.v) for p in pairs])
        a = torch.stack([torch.as_tensor(p.a) for p in pairs])
        y = torch.tensor([float(p.y) for p in pairs], dtype=v.dtype)
    return torch.linalg.vector_norm(v - a, dim=-1), y


def contrastive_from_distances(d: torch.Tensor, y: torch.Tensor, margin: float = 1.0) -> torch.Tensor:
    if d.numel() == 0:
        raise EmptyBatch("contrastive loss needs at least one pair")
    y = y.to(d.dtype)
    terms = y * d ** 2 + (1 - y) * torch.clamp(margin - d, min=0) ** 2
    return terms.sum() / (2 * d.numel())


def contrastive_loss(pairs: Optional[Sequence[SyncPair]] = None, margin: float = 1.0, *,
                     v: Optional[torch.Tensor] = None, a: Optional[torch.Tensor] = None,
                     y: Optional[torch.Tensor] = None) -> torch.Tensor:
    """(1/2N) sum y d^2 + (1-y) max(margin - d, 0)^2 with d = ||v - a||_2.

    Pass either a list of ``SyncPair`` or batched ``v``, ``a``, ``y`` tensors.
    """
    if pairs is None and (v is None or v.shape[0] == 0):
        raise EmptyBatch("contrastive loss needs at least one pair")
    d, y = _as_distances(pairs, v, a, y)
    return contrastive_from_distances(d, y, margin)


def _dist(p, q):
    return ((p - q) ** 2).sum(-1) ** 0.5


def ear(eye):
    """Eye aspect ratio of six landmarks p1..p6, shape (..., 6, 2).

    (|p2 - p6| + |p3 - p5|) / |p1 - p4|
    """
    if not torch.is_tensor(eye):
        eye = np.asarray(eye, dtype=np.float64)
    p = [eye[..., i, :] for i in range(6)]
    width = _dist(p[0], p[3])
    if bool((width < EAR_EPS).any()) if torch.is_tensor(width) else bool(np.any(width < EAR_EPS)):
        raise DegenerateEye("eye width below 1e-6")
    return (_dist(p[1], p[5]) + _dist(p[2], p[4])) / width


def mean_ear(points):
    """Average EAR of both eyes from 12 points (..., 12, 2): left p1..p6 then right p1..p6."""
    return (ear(points[..., :6, :]) + ear(points[..., 6:, :])) / 2


def blink_loss(real_ear, gen_ear):
    """|m_r - m_g|, averaged when given batches."""
    diff = abs(real_ear - gen_ear)
    return diff.mean() if torch.is_tensor(diff) else float(np.mean(diff))
