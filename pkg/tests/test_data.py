import json

import numpy as np
import pytest
import torch

from talkinghead import checkpoint as ckio
from talkinghead.audio import Waveform, read_wav, write_wav
from talkinghead.config import Config
from talkinghead.data import (
    ClipManifestEntry,
    assemble_video,
    frame_rms,
    list_frames,
    load_manifest,
    make_synthetic_corpus,
    mouth_aperture_proxy,
    read_frame,
    read_landmarks,
    write_frame,
    write_manifest,
)
from talkinghead.errors import (
    CorruptArchive,
    CountMismatch,
    FingerprintMismatch,
    ManifestSyntax,
    VersionUnsupported,
)
from talkinghead.losses import mean_ear


def _clip_dir(root, n_frames, seconds, name="c0"):
    d = root / name
    (d / "frames").mkdir(parents=True)
    for k in range(n_frames):
        write_frame(d / "frames" / f"frame_{k:05d}.png", np.full((8, 8, 3), k, dtype=np.uint8))
    write_wav(d / "audio.wav", Waveform(np.zeros(int(16000 * seconds))))
    return ClipManifestEntry(name, d / "frames", d / "audio.wav")


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# ---- manifest

def test_manifest_accepts_and_rejects(tmp_path):
    good = _clip_dir(tmp_path, 25, 1.0, "good")
    short = _clip_dir(tmp_path, 20, 1.0, "short")
    gone = _clip_dir(tmp_path, 25, 1.0, "gone")
    (tmp_path / "gone" / "audio.wav").unlink()
    edge = _clip_dir(tmp_path, 26, 1.0, "edge")  # within the one-frame tolerance
    write_manifest(tmp_path / "m.json", [good, short, gone, edge])
    rep = load_manifest(tmp_path / "m.json")
    assert [e.clip_id for e in rep.entries] == ["good", "edge"]
    assert {(cid, kind) for cid, kind, _ in rep.errors} == {("short", "FrameAudioMismatch"), ("gone", "MissingFile")}


def test_manifest_landmark_rows_and_alignment(tmp_path):
    e = _clip_dir(tmp_path, 25, 1.0)
    (tmp_path / "lm.txt").write_text("0 " * 24 + "\n")
    e.landmarks_path = tmp_path / "lm.txt"
    e2 = _clip_dir(tmp_path, 25, 1.0, "c1")
    e2.aligned = False
    write_manifest(tmp_path / "m.json", [e, e2])
    rep = load_manifest(tmp_path / "m.json")
    assert rep.entries == []
    assert [kind for _, kind, _ in rep.errors] == ["FrameAudioMismatch", "ValidationError"]


def test_manifest_syntax(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ManifestSyntax):
        load_manifest(tmp_path / "bad.json")
    (tmp_path / "shape.json").write_text(json.dumps({"clips": [{"clip_id": "x"}]}))
    with pytest.raises(ManifestSyntax):
        load_manifest(tmp_path / "shape.json")
    with pytest.raises(ManifestSyntax):
        load_manifest(tmp_path / "missing.json")


# ---- synthetic corpus

def test_corpus_deterministic(tmp_path):
    a = make_synthetic_corpus(10, 3, tmp_path / "a")
    b = make_synthetic_corpus(10, 3, tmp_path / "b")
    assert _tree_bytes(a.parent) == _tree_bytes(b.parent)
    assert len(load_manifest(a).entries) == 10


def test_corpus_mouth_tracks_audio_and_blinks(small_corpus):
    rep = load_manifest(small_corpus)
    assert rep.errors == []
    for e in rep.entries:
        frames = np.stack([read_frame(p) for p in list_frames(e.frames_path)])
        w = read_wav(e.audio_path)
        rms = frame_rms(w.samples, w.sample_rate)[: len(frames)]
        proxy = mouth_aperture_proxy(frames)
        assert np.corrcoef(proxy, rms)[0, 1] > 0.9
        meta = json.loads((e.frames_path.parent / "meta.json").read_text())
        ears = mean_ear(read_landmarks(e.landmarks_path))
        baseline = np.median(ears)
        for k in meta["blink_frames"]:
            if k < len(ears):
                assert ears[k] < 0.5 * baseline


# ---- video assembly

def test_assemble_video(tmp_path, rng):
    frames = [rng.integers(0, 256, (16, 16, 3), dtype=np.uint8) for _ in range(50)]
    audio = Waveform(np.zeros(32000))
    desc = json.loads(assemble_video(frames, audio, tmp_path / "v").read_text())
    assert desc["frame_count"] == 50 and desc["fps"] == 25
    back = [read_frame(p) for p in list_frames(tmp_path / "v" / "frames")]
    assert all(np.array_equal(a, b) for a, b in zip(frames, back))
    with pytest.raises(CountMismatch):
        assemble_video(frames[:49], audio, tmp_path / "w")
    called = []
    assemble_video(frames, audio, tmp_path / "x", mux_hook=called.append)
    assert called == [tmp_path / "x" / "video.json"]


# ---- checkpoints

def _ckpt():
    cfg = Config()
    ck = ckio.Checkpoint(config=cfg.to_dict(), fingerprint=cfg.fingerprint(), state={"phase": 2, "epoch": 4})
    ck.put("gen", {"w": torch.randn(3, 4), "n": torch.tensor(5), "flag": torch.tensor([True, False])})
    ck.put("disc.frame", {"w": torch.randn(2, 2, dtype=torch.float64)})
    ck.meta["note"] = "x"
    return ck


def test_checkpoint_roundtrip_bytes(tmp_path):
    ck = _ckpt()
    p1 = ckio.save_checkpoint(ck, tmp_path / "a.ckpt")
    back = ckio.load_checkpoint(p1, ck.fingerprint)
    assert back.tensors.keys() == ck.tensors.keys()
    assert all(torch.equal(back.tensors[k], ck.tensors[k]) and back.tensors[k].dtype == ck.tensors[k].dtype
               for k in ck.tensors)
    assert back.state == ck.state and back.meta == ck.meta and back.config == ck.config
    p2 = ckio.save_checkpoint(back, tmp_path / "b.ckpt")
    assert p1.read_bytes() == p2.read_bytes()
    assert not list(tmp_path.glob(".tmp-*"))


def test_checkpoint_fingerprint(tmp_path):
    ck = _ckpt()
    p = ckio.save_checkpoint(ck, tmp_path / "a.ckpt")
    other = Config().replace(**{"gen.base_channels": 32}).fingerprint()
    with pytest.raises(FingerprintMismatch):
        ckio.load_checkpoint(p, other)
    ckio.load_checkpoint(p, other, allow_mismatch=True)
    # training-only settings do not change the fingerprint
    assert Config().replace(**{"train.batch_size": 16}).fingerprint() == ck.fingerprint


def test_checkpoint_corruption(tmp_path):
    data = ckio.encode(_ckpt())
    for bad in (data[:-10], data[: len(data) // 2], b"garbage" * 20):
        with pytest.raises(CorruptArchive):
            ckio.decode(bad)
    flipped = bytearray(data)
    flipped[len(flipped) // 2] ^= 0xFF
    with pytest.raises(CorruptArchive):
        ckio.decode(bytes(flipped))


def test_checkpoint_version(tmp_path):
    ck = _ckpt()
    ck.version = 99
    with pytest.raises(VersionUnsupported):
        ckio.decode(ckio.encode(ck))
