"""Inference-time adaptation of a trained generator to an unseen identity.

No ground-truth video exists for the new face, so every generated frame is
pulled towards the identity image itself under the perceptual loss.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import checkpoint as ckio
from .audio import Waveform, frame_windows
from .config import AdaptConfig, Config
from .errors import ResolutionMismatch, UntrainedCheckpoint
from .generator import AudioToFrame, IdentityImage
from .losses import FeatureExtractor, perceptual_loss


@dataclass
class AdaptResult:
    checkpoint: ckio.Checkpoint  # derived checkpoint, generator tensors replaced
    model: AudioToFrame
    loss_history: list = field(default_factory=list)  # perceptual loss at epoch 0..epochs


def trained_phase(state: dict) -> int:
    """Last phase with at least one completed epoch (the stored phase may be the next one, not yet run)."""
    phase = state.get("phase", 1)
    if state.get("epoch", 0) > state.get("phase_start_epoch", 0):
        return phase
    return phase - 1


def _load_model(ck: ckio.Checkpoint, cfg: Config) -> tuple[AudioToFrame, FeatureExtractor]:
    # weights come from the checkpoint, never from the encoder file
    model = AudioToFrame(cfg.gen, dataclasses.replace(cfg.audio, encoder_weights=None))
    model.load_state_dict({k: v.clone() for k, v in ck.namespace("gen").items()})
    extractor = FeatureExtractor(cfg.loss.extractor_seed)
    extractor.load_state_dict(ck.namespace("aux.extractor"))
    return model, extractor


@torch.no_grad()
def _mean_loss(model, extractor, mfcc, ident, batch_size) -> float:
    model.eval()
    total, n = 0.0, 0
    for s in range(0, len(mfcc), batch_size):
        m = mfcc[s : s + batch_size]
        ref = ident.expand(m.shape[0], -1, -1, -1)
        total += perceptual_loss(ref, model(m, ref), extractor).item() * m.shape[0]
        n += m.shape[0]
    return total / n


def adapt(ckpt: ckio.Checkpoint | str | Path, unseen: IdentityImage, audio: Waveform,
          cfg: Optional[AdaptConfig] = None, seed: int = 0) -> AdaptResult:
    """Fine-tune the generator for ``cfg.epochs`` passes over the clip's audio windows."""
    if isinstance(ckpt, ckio.Checkpoint):
        source_digest = hashlib.sha256(ckio.encode(ckpt)).hexdigest()
    else:
        source_digest = ckio.file_digest(ckpt)
        ckpt = ckio.load_checkpoint(ckpt)
    full = Config.from_dict(ckpt.config)
    cfg = cfg or full.adapt
    if trained_phase(ckpt.state) < 2 and not cfg.allow_untrained:
        raise UntrainedCheckpoint("checkpoint has not reached phase 2; pass allow_untrained to override")
    res = full.gen.resolution
    if tuple(unseen.pixels.shape[-2:]) != (res, res):
        raise ResolutionMismatch(f"identity is {tuple(unseen.pixels.shape[-2:])}, generator makes {res}x{res}")

    torch.manual_seed(seed)
    model, extractor = _load_model(ckpt, full)
    windows = frame_windows(audio, full.audio.fps, full.audio.window_ms, full.audio)
    mfcc = torch.tensor(np.stack([w.mfcc for w in windows]), dtype=torch.float32)
    ident = unseen.pixels[None].to(torch.float32)
    if cfg.scope == "modulation_only":
        params = list(model.generator.modulation_parameters())
    else:
        params = list(model.parameters())
    model.requires_grad_(False)
    for p in params:
        p.requires_grad_(True)
    opt = torch.optim.Adam(params, lr=cfg.lr, betas=(full.train.beta1, full.train.beta2))
    history = [_mean_loss(model, extractor, mfcc, ident, cfg.batch_size)]
    rng = np.random.default_rng(seed)
    for _ in range(cfg.epochs):
        model.train()
        order = torch.from_numpy(rng.permutation(len(mfcc)))
        for s in range(0, len(mfcc), cfg.batch_size):
            m = mfcc[order[s : s + cfg.batch_size]]
            ref = ident.expand(m.shape[0], -1, -1, -1)
            loss = perceptual_loss(ref, model(m, ref), extractor)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
        history.append(_mean_loss(model, extractor, mfcc, ident, cfg.batch_size))
    model.requires_grad_(True)

    derived = ckio.Checkpoint(dict(ckpt.tensors), dict(ckpt.config), ckpt.fingerprint, dict(ckpt.state),
                              dict(ckpt.meta))
    if cfg.epochs > 0:
        derived.put("gen", model.state_dict())
    derived.meta["adaptation"] = {"source_sha256": source_digest, "config": asdict(cfg),
                                  "loss_history": history}
    return AdaptResult(derived, model, history)
