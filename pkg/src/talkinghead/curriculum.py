"""Three-phase curriculum training.

Phase 1 trains frame quality (adversarial, feature matching, perceptual).
Phase 2 adds reconstruction, contrastive sync and temporal adversarial losses.
Phase 3 adds the blink loss. Every step is one update of each active
discriminator followed by one generator update.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckio
from .audio import compute_stride, window_length
from .config import Config, LossConfig, TrainConfig
from .data import ClipData, load_dataset, sample_batches
from .discriminators import FrameDiscriminator, SyncDiscriminator, TemporalDiscriminator
from .errors import InvalidPhase, MissingLandmarks, NonFiniteLoss
from .generator import AudioToFrame
from .landmarks import LandmarkRegressor
from .losses import (
    FeatureExtractor,
    blink_loss,
    contrastive_from_distances,
    feature_matching_loss,
    gan_loss,
    mean_ear,
    perceptual_loss,
    reconstruction_loss,
)

log = logging.getLogger(__name__)

PHASE_LOSSES = {
    1: ("gan_frame", "fm", "pl"),
    2: ("gan_frame", "fm", "pl", "rl", "cl", "tal"),
    3: ("gan_frame", "fm", "pl", "rl", "cl", "tal", "bl"),
}
WEIGHT_KEY = {"gan_frame": "gan", "fm": "fm", "pl": "pl", "rl": "rl", "cl": "cl", "tal": "tal", "bl": "bl"}
ABLATIONS = {"BM": 1, "BM+CL+TAL": 2, "BM+CL+TAL+BL": 3}


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Constant for ``constant_epochs``, then linear decay to zero over ``decay_epochs``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < cfg.constant_epochs:
        return cfg.lr
    frac = (epoch - cfg.constant_epochs) / cfg.decay_epochs
    return cfg.lr * (1.0 - frac) if frac < 1.0 else 0.0


def phase_losses(phase: int, weights: Optional[LossConfig] = None) -> dict[str, float]:
    if phase not in PHASE_LOSSES:
        raise InvalidPhase(f"phase must be 1, 2 or 3, got {phase!r}")
    weights = weights or LossConfig()
    return {name: getattr(weights, WEIGHT_KEY[name]) for name in PHASE_LOSSES[phase]}


def plateau_detect(history, window: int = 5, rel_tol: float = 0.01) -> bool:
    """True when the last ``window`` entries span at most ``rel_tol * |mean|``.

    ``history`` is one list of epoch means, or a mapping of such lists, in
    which case every list has to satisfy the rule.
    """
    if isinstance(history, dict):
        return bool(history) and all(plateau_detect(h, window, rel_tol) for h in history.values())
    if len(history) == 0:
        raise ValueError("empty loss history")
    if len(history) < window:
        return False
    tail = np.asarray(history[-window:], dtype=np.float64)
    return bool(tail.max() - tail.min() <= rel_tol * abs(tail.mean()))


@dataclass
class CurriculumState:
    phase: int = 1
    epoch: int = 0  # completed epochs
    phase_start_epoch: int = 0
    active_losses: list = field(default_factory=lambda: list(PHASE_LOSSES[1]))
    loss_history: dict = field(default_factory=dict)  # name -> epoch means (whole run)
    rng_seed: int = 7
    max_phase: int = 3
    sync_epochs: int = 0
    landmarks_frozen: bool = False
    finished: bool = False

    def phase_history(self) -> dict:
        n = self.epoch - self.phase_start_epoch
        return {k: self.loss_history[k][-n:] for k in self.active_losses if k in self.loss_history and n > 0}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CurriculumState":
        return cls(**d)


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


class Trainer:
    """Owns every network, optimizer and the curriculum state of one run."""

    def __init__(self, cfg: Config):
        self.cfg = cfg
        torch.manual_seed(cfg.train.seed)
        res = cfg.gen.resolution
        a = cfg.audio
        mfcc_frames = math.ceil(window_length(a.sample_rate, a.window_ms) / (a.hop_ms * a.sample_rate // 1000))
        compute_stride(a.sample_rate, a.fps)
        self.model = AudioToFrame(cfg.gen, cfg.audio)
        self.frame_d = FrameDiscriminator(cfg.disc, res)
        self.temporal_d = TemporalDiscriminator(cfg.disc)
        self.sync_d = SyncDiscriminator(cfg.disc, a.n_mfcc, mfcc_frames)
        self.landmarks = LandmarkRegressor(res, cfg.disc.landmark_channels)
        self.extractor = FeatureExtractor(cfg.loss.extractor_seed, weights=cfg.loss.extractor_weights)
        t = cfg.train

        def adam(module, lr=t.lr):
            return torch.optim.Adam(module.parameters(), lr=lr, betas=(t.beta1, t.beta2))

        self.opts = {
            "gen": adam(self.model),
            "frame": adam(self.frame_d),
            "temporal": adam(self.temporal_d),
            "sync": adam(self.sync_d, t.sync_lr),
            "landmarks": adam(self.landmarks, t.landmark_lr),
        }
        self.state = CurriculumState(rng_seed=t.seed, max_phase=t.max_phase)

    # ------------------------------------------------------------------ modules

    def modules(self) -> dict:
        return {
            "gen": self.model,
            "disc.frame": self.frame_d,
            "disc.temporal": self.temporal_d,
            "disc.sync": self.sync_d,
            "aux.landmarks": self.landmarks,
            "aux.extractor": self.extractor,
        }

    def sync_trainable(self) -> bool:
        limit = self.cfg.disc.sync_freeze_after_epochs
        return limit is None or self.state.sync_epochs < limit

    def set_lr(self, epoch: int) -> float:
        t = self.cfg.train
        clock = epoch - self.state.phase_start_epoch if t.lr_restart_per_phase else epoch
        lr = lr_schedule(clock, t)
        base = {"landmarks": t.landmark_lr, "sync": t.sync_lr}
        for name, opt in self.opts.items():
            for g in opt.param_groups:
                g["lr"] = lr * base.get(name, t.lr) / t.lr
        return lr

    # ------------------------------------------------------------------ step

    def train_step(self, batch: dict, state: Optional[CurriculumState] = None) -> dict:
        """One discriminator update then one generator update; returns loss values."""
        state = state or self.state
        active = phase_losses(state.phase, self.cfg.loss)
        landmarks = batch.get("landmarks")
        if "bl" in active and landmarks is None:
            raise MissingLandmarks("phase 3 needs eye landmarks for every sample")
        ident = torch.as_tensor(batch["identity"])
        real = torch.as_tensor(batch["frames"])
        mfcc = torch.as_tensor(batch["mfcc"])
        b, L = real.shape[:2]
        img_shape = real.shape[2:]
        ident_rep = ident.repeat_interleave(L, dim=0)
        real_flat = real.reshape(b * L, *img_shape)

        self.model.train()
        fake_flat = self.model(mfcc.reshape(b * L, *mfcc.shape[2:]), ident_rep)
        fake = fake_flat.reshape(b, L, *img_shape)

        rec: dict = {}
        # ---- discriminators
        for net in (self.frame_d, self.temporal_d, self.sync_d):
            net.requires_grad_(True)
        d = gan_loss(self.frame_d(real_flat, ident_rep), self.frame_d(fake_flat.detach(), ident_rep))
        self._step("frame", d)
        rec["d_frame"] = d.item()
        if "tal" in active:
            d = gan_loss(self.temporal_d(real), self.temporal_d(fake.detach()))
            self._step("temporal", d)
            rec["d_temporal"] = d.item()
        if "cl" in active and self.sync_trainable():
            v = self.sync_d.embed_video(real)
            a_pos = self.sync_d.embed_audio(torch.as_tensor(batch["sync_pos"]))
            a_neg = self.sync_d.embed_audio(torch.as_tensor(batch["sync_neg"]))
            dist = torch.cat([torch.linalg.vector_norm(v - a_pos, dim=-1), torch.linalg.vector_norm(v - a_neg, dim=-1)])
            y = torch.cat([torch.ones(b), torch.zeros(b)])
            d = contrastive_from_distances(dist, y, self.cfg.loss.margin)
            self._step("sync", d)
            rec["d_sync"] = d.item()
        if not state.landmarks_frozen and landmarks is not None:
            pred = self.landmarks(real_flat)
            target = torch.as_tensor(landmarks).reshape(b * L, -1, 2)
            d = F.smooth_l1_loss(pred, target)
            self._step("landmarks", d)
            rec["landmark_fit"] = d.item()

        # ---- generator
        for net in (self.frame_d, self.temporal_d, self.sync_d):
            net.requires_grad_(False)
        ctx = {"b": b, "real": real, "fake": fake, "real_flat": real_flat, "fake_flat": fake_flat,
               "ident_rep": ident_rep, "batch": batch, "landmarks": landmarks}
        losses = {name: self._generator_term(name, w, ctx) for name, w in active.items()
                  if name != "bl" or self.cfg.loss.blink_grad}
        total = sum(losses.values())
        self._step("gen", total)
        for k, v in losses.items():
            rec[k] = v.item()
        rec["g_total"] = total.item()
        # inactive terms are evaluated without gradients so the full objective is logged every step
        objective = rec["g_total"]
        monitored = (self.frame_d, self.temporal_d, self.sync_d, self.landmarks)
        modes = [m.training for m in monitored]
        for m in monitored:
            m.eval()
        with torch.no_grad():
            for name in PHASE_LOSSES[3]:
                if name in losses or (name == "bl" and landmarks is None):
                    continue
                value = self._generator_term(name, getattr(self.cfg.loss, WEIGHT_KEY[name]), ctx).item()
                if name in active:
                    rec[name] = value
                else:
                    rec[f"monitor_{name}"] = value
                objective += value
        for m, mode in zip(monitored, modes):
            m.train(mode)
        rec["g_objective"] = objective
        bad = [k for k, v in rec.items() if not math.isfinite(v)]
        if bad:
            raise NonFiniteLoss(f"non-finite loss values {bad} in phase {state.phase}: {rec}")
        return rec

    def _generator_term(self, name: str, weight: float, ctx: dict) -> torch.Tensor:
        real_flat, fake_flat, ident_rep = ctx["real_flat"], ctx["fake_flat"], ctx["ident_rep"]
        if name == "gan_frame":
            return weight * gan_loss(None, self.frame_d(fake_flat, ident_rep), "generator")
        if name == "fm":
            with torch.no_grad():
                fd_real = self.frame_d(real_flat, ident_rep)
            return weight * feature_matching_loss(fd_real.features, self.frame_d(fake_flat, ident_rep).features)
        if name == "pl":
            return perceptual_loss(real_flat, fake_flat, self.extractor, weight)
        if name == "rl":
            return weight * reconstruction_loss(real_flat, fake_flat)
        if name == "tal":
            return weight * gan_loss(None, self.temporal_d(ctx["fake"]), "generator")
        if name == "cl":
            v = self.sync_d.embed_video(ctx["fake"])
            a_pos = self.sync_d.embed_audio(torch.as_tensor(ctx["batch"]["sync_pos"]))
            dist = torch.linalg.vector_norm(v - a_pos, dim=-1)
            return weight * contrastive_from_distances(dist, torch.ones(ctx["b"]), self.cfg.loss.margin)
        if name == "bl":
            lm = torch.as_tensor(ctx["landmarks"])
            m_r = mean_ear(lm.reshape(-1, lm.shape[-2], 2))
            return weight * blink_loss(m_r, mean_ear(self.landmarks(fake_flat)))
        raise InvalidPhase(f"unknown loss {name!r}")

    def _step(self, name: str, loss: torch.Tensor) -> None:
        opt = self.opts[name]
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

    # ------------------------------------------------------------------ epochs

    def run_epoch(self, clips: list[ClipData], log_fn: Optional[Callable[[dict], None]] = None) -> dict:
        st = self.state
        epoch = st.epoch
        lr = self.set_lr(epoch)
        if st.phase == 3 and not st.landmarks_frozen:
            self.landmarks.freeze()
            st.landmarks_frozen = True
        torch.manual_seed(_epoch_seed(st.rng_seed, epoch))
        rng = np.random.default_rng([st.rng_seed, epoch])
        t = self.cfg.train
        batches = sample_batches(clips, rng, t.batch_size, self.cfg.disc.temporal_window, t.samples_per_clip,
                                 self.cfg.disc.neg_min_shift, t.identity_frame)
        sums: dict = {}
        for i, batch in enumerate(batches):
            try:
                rec = self.train_step(batch, st)
            except NonFiniteLoss as e:
                if log_fn:
                    log_fn({"epoch": epoch + 1, "phase": st.phase, "step": i, "error": "NonFiniteLoss",
                            "detail": str(e)})
                raise
            if log_fn:
                log_fn({"epoch": epoch + 1, "phase": st.phase, "step": i, "lr": lr, "losses": rec,
                        "active": list(phase_losses(st.phase))})
            for k, v in rec.items():
                sums[k] = sums.get(k, 0.0) + v
        means = {k: v / len(batches) for k, v in sums.items()}
        for k, v in means.items():
            st.loss_history.setdefault(k, []).append(v)
        if "cl" in phase_losses(st.phase) and self.sync_trainable():
            st.sync_epochs += 1
        st.epoch += 1
        st.active_losses = list(phase_losses(st.phase))
        self._advance()
        return means

    def _advance(self) -> None:
        st = self.state
        t = self.cfg.train
        in_phase = st.epoch - st.phase_start_epoch
        cap = t.phase_max_epochs[st.phase - 1]
        done = in_phase >= cap or (in_phase >= t.phase_min_epochs and plateau_detect(
            st.phase_history(), t.plateau_window, t.plateau_rel_tol))
        if lr_schedule(st.epoch, t) == 0.0 and not t.lr_restart_per_phase:
            st.finished = True
        if not done:
            return
        if st.phase >= st.max_phase:
            st.finished = True
        else:
            st.phase += 1
            st.phase_start_epoch = st.epoch
            st.active_losses = list(phase_losses(st.phase))

    # ------------------------------------------------------------------ persistence

    def to_checkpoint(self) -> ckio.Checkpoint:
        ck = ckio.Checkpoint(config=self.cfg.to_dict(), fingerprint=self.cfg.fingerprint(), state=self.state.to_dict())
        for prefix, module in self.modules().items():
            ck.put(prefix, module.state_dict())
        groups = {}
        for name, opt in self.opts.items():
            tensors, pg = ckio.flatten_optimizer(opt)
            ck.put(f"opt.{name}", tensors)
            groups[name] = pg
        ck.meta["param_groups"] = groups
        return ck

    @classmethod
    def from_checkpoint(cls, ck: ckio.Checkpoint, cfg: Optional[Config] = None) -> "Trainer":
        cfg = cfg or Config.from_dict(ck.config)
        tr = cls(cfg)
        for prefix, module in tr.modules().items():
            module.load_state_dict(ck.namespace(prefix))
        for name, opt in tr.opts.items():
            ckio.restore_optimizer(opt, ck.namespace(f"opt.{name}"), ck.meta["param_groups"][name])
        tr.state = CurriculumState.from_dict(ck.state)
        if tr.state.landmarks_frozen:
            tr.landmarks.freeze()
        return tr


def train(manifest, cfg: Config, out_dir: str | Path, resume: Optional[str | Path] = None,
          clips: Optional[list[ClipData]] = None, max_epochs: Optional[int] = None) -> list[Path]:
    """Run the curriculum to completion; one checkpoint per epoch in ``out_dir``.

    Also writes ``train_log.jsonl`` (one record per step plus one per epoch).
    ``max_epochs`` stops early after that many total epochs (for resumption tests).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if clips is None:
        clips = load_dataset(manifest, cfg.audio)
    if resume is not None:
        trainer = Trainer.from_checkpoint(ckio.load_checkpoint(resume, cfg.fingerprint()), cfg)
    else:
        trainer = Trainer(cfg)
    paths = []
    with open(out / "train_log.jsonl", "a") as logf:

        def emit(rec):
            logf.write(json.dumps(rec, sort_keys=True) + "\n")

        while not trainer.state.finished:
            if max_epochs is not None and trainer.state.epoch >= max_epochs:
                break
            phase = trainer.state.phase
            means = trainer.run_epoch(clips, emit)
            st = trainer.state
            emit({"epoch": st.epoch, "phase": phase, "epoch_means": means, "active": list(phase_losses(phase)),
                  "lr": lr_schedule(st.epoch - 1, cfg.train)})
            log.info("epoch %d phase %d g_total %.4f g_objective %.4f", st.epoch, phase,
                     means.get("g_total", float("nan")), means.get("g_objective", float("nan")))
            paths.append(ckio.save_checkpoint(trainer.to_checkpoint(), out / f"epoch_{st.epoch:03d}.ckpt"))
    return paths
