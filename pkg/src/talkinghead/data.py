"""Dataset ingestion, synthetic corpus, frame/video IO and batch sampling."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .audio import Waveform, compute_stride, frame_windows, num_frames, read_wav, write_wav
from .config import AudioConfig
from .errors import (
    CountMismatch,
    FrameAudioMismatch,
    ManifestSyntax,
    MissingFile,
    ValidationError,
)

log = logging.getLogger(__name__)

FRAME_PATTERN = "frame_{:05d}.png"
N_EYE_POINTS = 12


@dataclass
class ClipManifestEntry:
    clip_id: str
    frames_path: Path
    audio_path: Path
    fps: int = 25
    landmarks_path: Optional[Path] = None
    identity_frame: int = 0
    aligned: bool = True


@dataclass
class ManifestReport:
    entries: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # (clip_id, error class name, message)


def list_frames(directory: str | Path) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")


def read_frame(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_frame(path: str | Path, pixels: np.ndarray) -> None:
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def read_landmarks(path: str | Path) -> np.ndarray:
    """One line per frame, 24 whitespace-separated numbers -> (N, 12, 2)."""
    rows = []
    with open(path) as f:
        for i, line in enumerate(f):
            if not line.strip():
                continue
            vals = line.split()
            if len(vals) != 2 * N_EYE_POINTS:
                raise ValidationError(f"{path}:{i + 1}: expected {2 * N_EYE_POINTS} numbers, got {len(vals)}")
            rows.append([float(v) for v in vals])
    return np.asarray(rows, dtype=np.float64).reshape(-1, N_EYE_POINTS, 2)


def write_landmarks(path: str | Path, points: np.ndarray) -> None:
    with open(path, "w") as f:
        for row in np.asarray(points).reshape(len(points), -1):
            f.write(" ".join(f"{v:.4f}" for v in row) + "\n")


def _entry_from_json(raw: dict, base: Path) -> ClipManifestEntry:
    try:
        lm = raw.get("landmarks_path")
        return ClipManifestEntry(
            clip_id=str(raw["clip_id"]),
            frames_path=base / raw["frames_path"],
            audio_path=base / raw["audio_path"],
            fps=int(raw.get("fps", 25)),
            landmarks_path=(base / lm) if lm else None,
            identity_frame=int(raw.get("identity_frame", 0)),
            aligned=bool(raw.get("aligned", True)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestSyntax(f"bad manifest entry {raw!r}: {e}") from e


def validate_entry(e: ClipManifestEntry) -> None:
    if not e.frames_path.is_dir():
        raise MissingFile(f"frames directory {e.frames_path} not found")
    if not e.audio_path.is_file():
        raise MissingFile(f"audio file {e.audio_path} not found")
    if e.landmarks_path is not None and not e.landmarks_path.is_file():
        raise MissingFile(f"landmarks file {e.landmarks_path} not found")
    if not e.aligned:
        raise ValidationError("entry is not marked aligned; face alignment happens before ingestion")
    n_frames = len(list_frames(e.frames_path))
    w = read_wav(e.audio_path)
    expected = w.duration_s * e.fps
    if abs(n_frames - expected) > 1:
        raise FrameAudioMismatch(f"{n_frames} frames vs {expected:.2f} expected from {w.duration_s:.3f} s audio")
    if not 0 <= e.identity_frame < n_frames:
        raise ValidationError(f"identity_frame {e.identity_frame} outside 0..{n_frames - 1}")
    if e.landmarks_path is not None:
        n_lm = len(read_landmarks(e.landmarks_path))
        if n_lm != n_frames:
            raise FrameAudioMismatch(f"{n_lm} landmark rows for {n_frames} frames")


def load_manifest(path: str | Path) -> ManifestReport:
    """Parse and validate a JSON manifest; invalid entries are reported, not returned."""
    path = Path(path)
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError as e:
        raise ManifestSyntax(f"manifest {path} not found") from e
    except json.JSONDecodeError as e:
        raise ManifestSyntax(f"manifest {path}: {e}") from e
    clips = raw.get("clips") if isinstance(raw, dict) else None
    if not isinstance(clips, list):
        raise ManifestSyntax("manifest must be an object with a 'clips' list")
    report = ManifestReport()
    for item in clips:
        entry = _entry_from_json(item, path.parent)
        try:
            validate_entry(entry)
        except ValidationError as err:
            report.errors.append((entry.clip_id, type(err).__name__, str(err)))
            log.warning("rejected clip %s: %s", entry.clip_id, err)
            continue
        report.entries.append(entry)
    return report


def write_manifest(path: str | Path, entries: list[ClipManifestEntry]) -> None:
    base = Path(path).parent

    def rel(p):
        return os.path.relpath(p, base) if p is not None else None

    clips = [
        {
            "clip_id": e.clip_id,
            "frames_path": rel(e.frames_path),
            "audio_path": rel(e.audio_path),
            "fps": e.fps,
            "landmarks_path": rel(e.landmarks_path),
            "identity_frame": e.identity_frame,
            "aligned": e.aligned,
        }
        for e in entries
    ]
    with open(path, "w") as f:
        json.dump({"clips": clips}, f, indent=1, sort_keys=True)


# ---------------------------------------------------------------- synthetic corpus

RES = 64


@dataclass
class FaceIdentity:
    background: tuple
    skin: tuple
    lips: tuple
    face_cx: float
    face_cy: float
    face_rx: float
    face_ry: float
    eye_dx: float
    eye_y: float
    eye_halfwidth: float
    eye_halfheight: float
    mouth_y: float
    mouth_halfwidth: float

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "FaceIdentity":
        cx = 32 + rng.uniform(-1.5, 1.5)
        cy = 32 + rng.uniform(-1.5, 1.5)
        return cls(
            background=tuple(rng.uniform(20, 120, 3).round(1)),
            skin=tuple((rng.uniform(150, 235) * np.array([1.0, rng.uniform(0.75, 0.9), rng.uniform(0.6, 0.8)])).round(1)),
            lips=tuple(rng.uniform([150, 40, 40], [200, 80, 80]).round(1)),
            face_cx=cx,
            face_cy=cy,
            face_rx=rng.uniform(19, 23),
            face_ry=rng.uniform(24, 28),
            eye_dx=rng.uniform(8.5, 10.5),
            eye_y=cy - rng.uniform(6, 8),
            eye_halfwidth=rng.uniform(3.5, 4.5),
            eye_halfheight=rng.uniform(2.2, 2.8),
            mouth_y=cy + rng.uniform(11, 13),
            mouth_halfwidth=rng.uniform(6, 8),
        )


def _soft_ellipse(xx, yy, cx, cy, rx, ry):
    """Anti-aliased ellipse coverage in [0, 1] (about one pixel of soft edge)."""
    rx, ry = max(rx, 1e-3), max(ry, 1e-3)
    r = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    # approximate signed distance in pixels: scale radial excess by local radius
    scale = np.sqrt(((xx - cx) / rx) ** 2 * rx ** 2 + ((yy - cy) / ry) ** 2 * ry ** 2) / np.maximum(r, 1e-9)
    return np.clip(0.5 - (r - 1.0) * scale, 0.0, 1.0)


def eye_landmarks(ident: FaceIdentity, openness: float) -> np.ndarray:
    """12 points (left eye p1..p6, right eye p1..p6) for the given openness in [0, 1]."""
    pts = []
    for sign in (-1, 1):
        ex, ey, a = ident.face_cx + sign * ident.eye_dx, ident.eye_y, ident.eye_halfwidth
        h = ident.eye_halfheight * openness * np.sqrt(0.75)
        pts += [(ex - a, ey), (ex - a / 2, ey - h), (ex + a / 2, ey - h),
                (ex + a, ey), (ex + a / 2, ey + h), (ex - a / 2, ey + h)]
    return np.asarray(pts, dtype=np.float64)


def render_face(ident: FaceIdentity, mouth_open: float, eye_open: float) -> np.ndarray:
    """64x64x3 uint8 frame; ``mouth_open`` is the mouth interior half-height in pixels."""
    yy, xx = np.mgrid[0:RES, 0:RES].astype(np.float64) + 0.5
    img = np.broadcast_to(np.asarray(ident.background), (RES, RES, 3)).astype(np.float64)

    def paint(mask, color):
        nonlocal img
        img = img * (1 - mask[..., None]) + np.asarray(color)[None, None, :] * mask[..., None]

    paint(_soft_ellipse(xx, yy, ident.face_cx, ident.face_cy, ident.face_rx, ident.face_ry), ident.skin)
    for sign in (-1, 1):
        ex = ident.face_cx + sign * ident.eye_dx
        paint(_soft_ellipse(xx, yy, ex, ident.eye_y, ident.eye_halfwidth + 1.0, ident.eye_halfheight + 1.0),
              np.asarray(ident.skin) * 0.8)
        paint(_soft_ellipse(xx, yy, ex, ident.eye_y, ident.eye_halfwidth,
                            max(ident.eye_halfheight * eye_open, 0.15)), (245, 245, 245))
        if eye_open > 0.3:
            paint(_soft_ellipse(xx, yy, ex, ident.eye_y, 1.4, 1.4 * min(1.0, eye_open)), (30, 30, 40))
    paint(_soft_ellipse(xx, yy, ident.face_cx, ident.mouth_y, ident.mouth_halfwidth + 1.5, mouth_open + 1.5),
          ident.lips)
    paint(_soft_ellipse(xx, yy, ident.face_cx, ident.mouth_y, ident.mouth_halfwidth, mouth_open), (35, 10, 15))
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def synth_waveform(rng: np.random.Generator, n_samples: int, sample_rate: int = 16000) -> np.ndarray:
    """Harmonic tone under a syllable-like amplitude envelope with pauses."""
    t = np.arange(n_samples) / sample_rate
    f0 = rng.uniform(100, 220)
    vib = 1 + 0.02 * np.sin(2 * np.pi * rng.uniform(3, 6) * t)
    phase = 2 * np.pi * np.cumsum(f0 * vib) / sample_rate
    amps = rng.uniform(0.3, 1.0, 4)
    tone = sum(a * np.sin((h + 1) * phase) for h, a in enumerate(amps)) / amps.sum()
    env = np.zeros(n_samples)
    pos = 0
    while pos < n_samples:
        length = int(rng.uniform(0.08, 0.26) * sample_rate)
        if rng.uniform() < 0.7:
            shape = np.sin(np.pi * np.linspace(0, 1, length)) ** 2
            seg = rng.uniform(0.35, 1.0) * shape
            env[pos : pos + length] = seg[: max(0, min(length, n_samples - pos))]
        pos += length
    noise = 0.01 * rng.standard_normal(n_samples)
    return 0.8 * env * tone + noise


def frame_rms(samples: np.ndarray, sample_rate: int = 16000, fps: int = 25, window_ms: int = 80) -> np.ndarray:
    """RMS of a ``window_ms`` slice centred on each video frame (zero-padded)."""
    stride = compute_stride(sample_rate, fps)
    n = num_frames(samples.size, sample_rate, fps)
    half = int(window_ms * sample_rate / 1000) // 2
    padded = np.concatenate([np.zeros(half), samples, np.zeros(half + stride)])
    centers = stride // 2 + stride * np.arange(n)
    return np.array([np.sqrt(np.mean(padded[c : c + 2 * half] ** 2)) for c in centers])


MOUTH_CLOSED = 0.4
MOUTH_GAIN = 14.0  # pixels of half-height per unit RMS
BLINK_PROFILE = (0.55, 0.12, 0.0, 0.12, 0.55)


def synth_clip(rng: np.random.Generator, ident: FaceIdentity, n_frames: int, sample_rate: int = 16000,
               fps: int = 25) -> dict:
    stride = compute_stride(sample_rate, fps)
    wav = np.clip(synth_waveform(rng, n_frames * stride, sample_rate), -1, 1)
    rms = frame_rms(wav, sample_rate, fps)
    mouth = MOUTH_CLOSED + MOUTH_GAIN * rms
    eye = np.ones(n_frames)
    blinks = []
    k = int(rng.integers(3, 12))
    while k + len(BLINK_PROFILE) <= n_frames:
        eye[k : k + len(BLINK_PROFILE)] = BLINK_PROFILE
        blinks.append(k + len(BLINK_PROFILE) // 2)
        k += len(BLINK_PROFILE) + int(rng.integers(12, 30))
    frames = np.stack([render_face(ident, m, e) for m, e in zip(mouth, eye)])
    landmarks = np.stack([eye_landmarks(ident, e) for e in eye])
    return {"frames": frames, "waveform": wav, "landmarks": landmarks, "mouth": mouth,
            "eye_open": eye, "blink_frames": blinks, "rms": rms}


def make_synthetic_corpus(n_clips: int, seed: int, out_dir: str | Path, min_frames: int = 25,
                          max_frames: int = 40, sample_rate: int = 16000, fps: int = 25) -> Path:
    """Render ``n_clips`` face clips with matching audio and eye landmarks; returns the manifest path."""
    if n_clips < 1:
        raise ValidationError("n_clips must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_clips):
        clip_id = f"clip_{i:04d}"
        ident = FaceIdentity.sample(rng)
        n_frames = int(rng.integers(min_frames, max_frames + 1))
        clip = synth_clip(rng, ident, n_frames, sample_rate, fps)
        cdir = out / clip_id
        fdir = cdir / "frames"
        fdir.mkdir(parents=True, exist_ok=True)
        for k, fr in enumerate(clip["frames"]):
            write_frame(fdir / FRAME_PATTERN.format(k), fr)
        write_wav(cdir / "audio.wav", Waveform(clip["waveform"], sample_rate))
        write_landmarks(cdir / "landmarks.txt", clip["landmarks"])
        meta = {"identity": asdict(ident), "mouth": clip["mouth"].round(6).tolist(),
                "eye_open": clip["eye_open"].tolist(), "blink_frames": clip["blink_frames"],
                "rms": clip["rms"].round(8).tolist()}
        with open(cdir / "meta.json", "w") as f:
            json.dump(meta, f, sort_keys=True)
        entries.append(ClipManifestEntry(clip_id, fdir, cdir / "audio.wav", fps, cdir / "landmarks.txt", 0))
    manifest = out / "manifest.json"
    write_manifest(manifest, entries)
    return manifest


def mouth_aperture_proxy(frames: np.ndarray) -> np.ndarray:
    """Darkness of the lower-half central band, per frame.

    ``frames``: (N, H, W, 3) uint8 or float in [0, 255]. The vertical intensity
    profile is the band's mean gray level per row; the proxy is one minus its
    mean, so an open (dark) mouth scores higher.
    """
    f = np.asarray(frames, dtype=np.float64)
    gray = f @ np.array([0.299, 0.587, 0.114])
    h, w = gray.shape[1:]
    band = gray[:, h // 2 :, w // 4 : 3 * w // 4]
    profile = band.mean(axis=2)
    return 1.0 - profile.mean(axis=1) / 255.0


# ---------------------------------------------------------------- video assembly


def assemble_video(frames, audio: Waveform, out_dir: str | Path, fps: int = 25, mux_hook=None) -> Path:
    """Write numbered PNG frames, the audio track and a ``video.json`` descriptor.

    ``frames``: iterable of HxWx3 uint8 arrays. ``mux_hook(descriptor_path)``
    may wrap the result into a container with an external tool.
    """
    frames = [np.asarray(f) for f in frames]
    expected = num_frames(audio.samples.size, audio.sample_rate, fps)
    if len(frames) != expected:
        raise CountMismatch(f"{len(frames)} frames for {audio.duration_s:.3f} s at {fps} fps (need {expected})")
    out = Path(out_dir)
    fdir = out / "frames"
    fdir.mkdir(parents=True, exist_ok=True)
    for k, fr in enumerate(frames):
        write_frame(fdir / FRAME_PATTERN.format(k), fr)
    write_wav(out / "audio.wav", audio)
    desc = {"fps": fps, "frame_count": len(frames), "audio_path": "audio.wav", "frames_path": "frames",
            "frame_pattern": FRAME_PATTERN}
    path = out / "video.json"
    with open(path, "w") as f:
        json.dump(desc, f, indent=1, sort_keys=True)
    if mux_hook is not None:
        mux_hook(path)
    return path


def to_uint8(frames) -> np.ndarray:
    """[-1, 1] images (..., 3, H, W) tensor/array -> (..., H, W, 3) uint8."""
    a = frames.detach().cpu().numpy() if hasattr(frames, "detach") else np.asarray(frames)
    a = np.moveaxis(a, -3, -1)
    return np.clip(np.round((a + 1.0) * 127.5), 0, 255).astype(np.uint8)


def to_unit(frames_u8: np.ndarray) -> np.ndarray:
    """(..., H, W, 3) uint8 -> (..., 3, H, W) float32 in [-1, 1]."""
    a = np.moveaxis(np.asarray(frames_u8, dtype=np.float32), -1, -3)
    return a / 127.5 - 1.0


# ---------------------------------------------------------------- in-memory dataset


@dataclass
class ClipData:
    clip_id: str
    frames: np.ndarray  # (N, H, W, 3) uint8
    mfcc: np.ndarray  # (N, T, n_mfcc) float32
    landmarks: Optional[np.ndarray]  # (N, 12, 2) or None
    waveform: Waveform
    identity_frame: int = 0


def load_clip(entry: ClipManifestEntry, audio_cfg: AudioConfig) -> ClipData:
    w = read_wav(entry.audio_path)
    if w.sample_rate != audio_cfg.sample_rate:
        raise ValidationError(f"{entry.clip_id}: {w.sample_rate} Hz audio, config expects {audio_cfg.sample_rate}")
    windows = frame_windows(w, audio_cfg.fps, audio_cfg.window_ms, audio_cfg)
    frames = np.stack([read_frame(p) for p in list_frames(entry.frames_path)])
    n = min(len(windows), len(frames))  # +-1 tolerance: trim to the common length
    lm = read_landmarks(entry.landmarks_path)[:n] if entry.landmarks_path else None
    mfcc = np.stack([win.mfcc for win in windows[:n]]).astype(np.float32)
    return ClipData(entry.clip_id, frames[:n], mfcc, lm, w, entry.identity_frame)


def load_dataset(manifest: str | Path, audio_cfg: AudioConfig) -> list[ClipData]:
    report = load_manifest(manifest)
    if not report.entries:
        raise ValidationError(f"manifest {manifest} has no valid clips ({len(report.errors)} rejected)")
    return [load_clip(e, audio_cfg) for e in report.entries]


def sample_batches(clips: list[ClipData], rng: np.random.Generator, batch_size: int, window: int = 5,
                   samples_per_clip: int = 1, neg_min_shift: int = 8, identity_frame: Optional[int] = None
                   ) -> list[dict]:
    """One epoch of training batches.

    Each sample is a ``window``-frame run ending at a random frame k, with its
    MFCC windows, the identity frame, and audio for a matched and a mismatched
    sync pair (the mismatched window is at least ``neg_min_shift`` frames from
    the centre of the run, same clip when possible).
    """
    picks = []
    for ci, clip in enumerate(clips):
        n = len(clip.frames)
        if n < window:
            continue
        for _ in range(samples_per_clip):
            picks.append((ci, int(rng.integers(window - 1, n))))
    order = rng.permutation(len(picks))
    picks = [picks[i] for i in order]
    batches = []
    for start in range(0, len(picks), batch_size):
        chunk = picks[start : start + batch_size]
        ident, frames, mfcc, pos, neg, lms = [], [], [], [], [], []
        for ci, k in chunk:
            clip = clips[ci]
            n = len(clip.frames)
            run = slice(k - window + 1, k + 1)
            centre = k - window // 2
            far = [j for j in range(n) if abs(j - centre) >= neg_min_shift]
            if far:
                neg_mfcc = clip.mfcc[far[int(rng.integers(len(far)))]]
            else:
                other = clips[(ci + 1 + int(rng.integers(max(1, len(clips) - 1)))) % len(clips)]
                neg_mfcc = other.mfcc[int(rng.integers(len(other.mfcc)))]
            idf = clip.identity_frame if identity_frame is None else identity_frame
            ident.append(clip.frames[min(idf, n - 1)])
            frames.append(clip.frames[run])
            mfcc.append(clip.mfcc[run])
            pos.append(clip.mfcc[centre])
            neg.append(neg_mfcc)
            lms.append(clip.landmarks[run] if clip.landmarks is not None else None)
        batches.append({
            "identity": to_unit(np.stack(ident)),
            "frames": to_unit(np.stack(frames)),
            "mfcc": np.stack(mfcc),
            "sync_pos": np.stack(pos),
            "sync_neg": np.stack(neg),
            "landmarks": None if any(l is None for l in lms) else np.stack(lms).astype(np.float32),
        })
    return batches
