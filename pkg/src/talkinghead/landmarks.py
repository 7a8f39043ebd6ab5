"""Differentiable eye-landmark regressor for the blink loss.

Predicts 12 heatmaps at quarter resolution and reads out coordinates with a
spatial soft-argmax, so EAR of a generated frame can backpropagate.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

N_POINTS = 12


class LandmarkRegressor(nn.Module):
    def __init__(self, resolution: int = 64, channels: int = 16):
        super().__init__()
        c = channels
        self.resolution = resolution
        self.net = nn.Sequential(
            nn.Conv2d(3, c, 3, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(c, 2 * c, 3, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, 2 * c, 3, 1, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, N_POINTS, 3, 1, 1),
        )
        # learnable sharpness of the soft-argmax
        self.log_temp = nn.Parameter(torch.tensor(1.0))

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> (B, 12, 2) pixel coordinates (x, y) in the input frame."""
        logits = self.net(frames)
        b, k, h, w = logits.shape
        prob = F.softmax(logits.reshape(b, k, -1) * self.log_temp.exp(), dim=-1).reshape(b, k, h, w)
        scale = frames.shape[-1] / w
        xs = (torch.arange(w, dtype=frames.dtype) + 0.5) * scale - 0.5
        ys = (torch.arange(h, dtype=frames.dtype) + 0.5) * scale - 0.5
        x = (prob.sum(dim=2) * xs).sum(-1)
        y = (prob.sum(dim=3) * ys).sum(-1)
        return torch.stack([x, y], dim=-1)

    def freeze(self):
        self.requires_grad_(False)
        self.eval()
