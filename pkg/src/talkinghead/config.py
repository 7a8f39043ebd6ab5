"""Namespaced configuration (audio.*, gen.*, disc.*, loss.*, train.*, adapt.*).

A config file is YAML (JSON is valid YAML) with one mapping per namespace.
Keys that are missing fall back to the defaults below; unknown keys are an
error so typos never silently revert to defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError


@dataclass
class AudioConfig:
    sample_rate: int = 16000
    fps: int = 25
    window_ms: int = 200
    n_mfcc: int = 13
    hop_ms: int = 10
    analysis_ms: int = 25
    n_mels: int = 26
    n_fft: int = 512
    # optional file holding exported content-encoder weights
    encoder_weights: Optional[str] = None


@dataclass
class GenConfig:
    resolution: int = 64
    base_channels: int = 64
    audio_dim: int = 256
    norm: str = "instance"  # instance | batch
    spade_hidden: int = 32
    encoder_channels: int = 64
    min_channels: int = 16


@dataclass
class DiscConfig:
    frame_channels: int = 16
    frame_layers: int = 4
    # spectral normalization on the frame and temporal discriminators
    spectral_norm: bool = True
    temporal_window: int = 5
    temporal_channels: int = 16
    sync_resolution: int = 64
    sync_channels: int = 16
    sync_dim: int = 256
    # None: the sync discriminator keeps training; N: frozen after N epochs of training
    sync_freeze_after_epochs: Optional[int] = None
    neg_min_shift: int = 8
    landmark_channels: int = 16


@dataclass
class LossConfig:
    gan: float = 1.0
    fm: float = 10.0
    pl: float = 10.0
    rl: float = 50.0
    cl: float = 1.0
    tal: float = 1.0
    bl: float = 5.0
    margin: float = 1.0
    # False: blink loss is logged but does not backpropagate into the generator
    blink_grad: bool = True
    extractor_seed: int = 1234
    extractor_weights: Optional[str] = None

    def __post_init__(self):
        for name in ("gan", "fm", "pl", "rl", "cl", "tal", "bl"):
            v = getattr(self, name)
            if not (v >= 0 and v < float("inf")):
                raise ConfigError(f"loss.{name} must be finite and >= 0, got {v}")
        if not self.margin > 0:
            raise ConfigError(f"loss.margin must be > 0, got {self.margin}")


@dataclass
class TrainConfig:
    seed: int = 7
    lr: float = 0.002
    beta1: float = 0.0
    beta2: float = 0.90
    constant_epochs: int = 50
    decay_epochs: int = 100
    lr_restart_per_phase: bool = False
    batch_size: int = 4
    samples_per_clip: int = 1
    # None: each clip's manifest entry (frame 0 unless stated); an int overrides every clip
    identity_frame: Optional[int] = None
    phase_min_epochs: int = 3
    phase_max_epochs: list = field(default_factory=lambda: [5, 5, 5])
    plateau_window: int = 5
    plateau_rel_tol: float = 0.01
    # ablation cap: 1 = BM, 2 = BM+CL+TAL, 3 = BM+CL+TAL+BL
    max_phase: int = 3
    landmark_lr: float = 0.001
    # the sync network learns on real pairs only; it follows the same schedule scaled to this base rate
    sync_lr: float = 0.0005

    def __post_init__(self):
        if not (self.lr > 0 and self.sync_lr > 0 and self.landmark_lr > 0):
            raise ConfigError("train.lr, train.sync_lr and train.landmark_lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("train.beta1/beta2 must be in [0, 1)")
        if self.max_phase not in (1, 2, 3):
            raise ConfigError("train.max_phase must be 1, 2 or 3")
        if len(self.phase_max_epochs) != 3:
            raise ConfigError("train.phase_max_epochs needs one entry per phase")


@dataclass
class AdaptConfig:
    epochs: int = 5
    lr: float = 0.0002
    scope: str = "all_generator"  # all_generator | modulation_only
    batch_size: int = 8
    allow_untrained: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("adapt.epochs must be >= 0")
        if not self.lr > 0:
            raise ConfigError("adapt.lr must be > 0")
        if self.scope not in ("all_generator", "modulation_only"):
            raise ConfigError(f"unknown adapt.scope {self.scope!r}")


@dataclass
class Config:
    audio: AudioConfig = field(default_factory=AudioConfig)
    gen: GenConfig = field(default_factory=GenConfig)
    disc: DiscConfig = field(default_factory=DiscConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "Config":
        d = d or {}
        sections = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(d) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config namespaces: {sorted(unknown)}")
        kwargs = {}
        for f in dataclasses.fields(cls):
            sub = d.get(f.name) or {}
            if not isinstance(sub, dict):
                raise ConfigError(f"config namespace {f.name!r} must be a mapping")
            sub_cls = f.default_factory
            known = {sf.name for sf in dataclasses.fields(sub_cls)}
            bad = set(sub) - known
            if bad:
                raise ConfigError(f"unknown keys in {f.name}: {sorted(bad)}")
            kwargs[f.name] = sub_cls(**sub)
        return cls(**kwargs)

    def replace(self, **overrides: Any) -> "Config":
        """Copy with dotted-key overrides, e.g. ``replace(**{"train.seed": 3})``."""
        d = self.to_dict()
        for key, value in overrides.items():
            ns, _, name = key.partition(".")
            if ns not in d or name not in d[ns]:
                raise ConfigError(f"unknown config key {key!r}")
            d[ns][name] = value
        return Config.from_dict(d)

    def fingerprint(self) -> str:
        """Hash of the sections that define network shapes and feature extraction."""
        d = self.to_dict()
        core = {k: d[k] for k in ("audio", "gen", "disc")}
        blob = json.dumps(core, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path: Optional[str | Path]) -> Config:
    if path is None:
        return Config()
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping of namespaces")
    try:
        return Config.from_dict(raw)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def save_config(cfg: Config, path: str | Path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=True)
