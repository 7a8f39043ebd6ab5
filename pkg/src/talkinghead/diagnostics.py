"""Post-training measurements on held-out clips."""
from __future__ import annotations

from typing import Optional

import numpy as np
import torch

from .data import ClipData, mouth_aperture_proxy, to_uint8, to_unit
from .discriminators import SYNC_FRAMES, SyncDiscriminator
from .generator import AudioToFrame


@torch.no_grad()
def generate_clip(model: AudioToFrame, clip: ClipData, batch_size: int = 32) -> np.ndarray:
    """Generated uint8 frames (N, H, W, 3) for every audio window of a clip."""
    model.eval()
    ident = torch.from_numpy(to_unit(clip.frames[clip.identity_frame]))[None]
    out = []
    for s in range(0, len(clip.mfcc), batch_size):
        m = torch.from_numpy(clip.mfcc[s : s + batch_size])
        out.append(to_uint8(model(m, ident.expand(m.shape[0], -1, -1, -1))))
    return np.concatenate(out)


@torch.no_grad()
def sync_distances(sync_d: SyncDiscriminator, clips: list[ClipData], offset: Optional[int] = 2, frames=None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """d_n for matched and shifted audio/video pairs over all clip positions.

    ``offset=None`` pairs each window with the audio half a clip away (the
    same kind of mismatch the sync discriminator is trained on); an int shifts
    by that many frames. ``frames`` optionally replaces each clip's real frames.
    """
    sync_d.eval()
    matched, shifted = [], []
    for ci, clip in enumerate(clips):
        fr = clip.frames if frames is None else frames[ci]
        n = len(fr)
        video = torch.from_numpy(to_unit(fr))
        for start in range(0, n - SYNC_FRAMES + 1):
            centre = start + SYNC_FRAMES // 2
            if offset is None:
                other = (centre + n // 2) % n
            else:
                other = centre + offset if centre + offset < n else centre - offset
            v = sync_d.embed_video(video[start : start + SYNC_FRAMES][None])
            a = sync_d.embed_audio(torch.from_numpy(clip.mfcc[[centre, other]]))
            d = torch.linalg.vector_norm(v - a, dim=-1)
            matched.append(d[0].item())
            shifted.append(d[1].item())
    return np.array(matched), np.array(shifted)


def audio_rms(clip: ClipData) -> np.ndarray:
    from .data import frame_rms

    w = clip.waveform
    return frame_rms(w.samples, w.sample_rate)[: len(clip.frames)]


def mouth_sync_correlation(model: AudioToFrame, clips: list[ClipData]) -> tuple[float, list[float]]:
    """Per-clip Pearson r between the generated mouth-aperture proxy and audio RMS; returns (mean, all)."""
    rs = []
    for clip in clips:
        proxy = mouth_aperture_proxy(generate_clip(model, clip))
        rms = audio_rms(clip)
        if np.std(proxy) == 0 or np.std(rms) == 0:
            rs.append(0.0)
            continue
        rs.append(float(np.corrcoef(proxy, rms)[0, 1]))
    return float(np.mean(rs)), rs
