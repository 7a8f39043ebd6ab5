import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from oracles import psnr_direct, rise_width, ssim_direct
from talkinghead.errors import LengthMismatch, NoEdges, ShapeMismatch, TooShort, TooSmall
from talkinghead.metrics import (
    ACD_COSINE_THRESHOLD,
    MetricReport,
    acd,
    cpbd,
    detect_blinks,
    evaluate_clip,
    psnr,
    ssim,
)


def edge_image(rng, size=128):
    """Vertical edges with ramps 1-4 px wide and contrasts above 60 grey levels, 8-bit valued."""
    level = rng.uniform(0, 60)
    row = np.full(size, level)
    x = 4
    while x < size - 12:
        w = int(rng.integers(1, 5))
        new = np.clip(level + rng.choice([-1, 1]) * rng.uniform(80, 180), 0, 255)
        if abs(new - level) < 60:
            new = 255 - level
        row[x : x + w] = np.linspace(level, new, w + 1)[1:]
        row[x + w :] = new
        level = new
        x += w + int(rng.integers(8, 16))
    return np.round(np.tile(row, (size, 1)))


def blur(img, sigma):
    return np.round(ndimage.gaussian_filter(img, sigma))


# ---- PSNR

def test_psnr_examples():
    a = np.full((16, 16, 3), 100.0)
    assert psnr(a, a) == math.inf
    assert abs(psnr(a, a + 16) - 24.0484) < 1e-3
    assert abs(psnr(a, a + 16) - 10 * math.log10(65025 / 256)) < 1e-6


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_psnr_decreases_with_noise_amplitude(rng):
    a = rng.uniform(0, 255, (32, 32))
    noise = rng.choice([-1.0, 1.0], (32, 32))
    vals = [psnr(a, a + amp * noise) for amp in (1, 2, 4, 8)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


# ---- SSIM

def test_ssim_examples():
    i, j = np.indices((64, 64))
    board = ((i + j) % 2) * 255.0
    assert ssim(board, board) == 1.0
    c2 = (0.03 * 255) ** 2
    hand = (-2 * 127.5 ** 2 + c2) / (2 * 127.5 ** 2 + c2)
    assert abs(ssim(board, 255 - board) - hand) < 1e-3
    assert abs(ssim(board, 255 - board) - (-0.996)) < 1e-3


def test_ssim_errors():
    with pytest.raises(TooSmall):
        ssim(np.zeros((10, 10)), np.zeros((10, 10)))
    with pytest.raises(ShapeMismatch):
        ssim(np.zeros((20, 20)), np.zeros((20, 21)))


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_psnr_ssim_symmetric(seed):
    r = np.random.default_rng(seed)
    a, b = r.uniform(0, 255, (2, 24, 24, 3))
    assert psnr(a, b) == psnr(b, a)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12
    assert -1 <= ssim(a, b) <= 1


def test_against_direct_oracles(rng):
    for _ in range(5):
        a = rng.integers(0, 256, (20, 20, 3)).astype(np.float64)
        b = np.clip(a + rng.normal(0, 20, a.shape), 0, 255).round()
        assert abs(psnr(a, b) - psnr_direct(a, b)) < 1e-6
        assert abs(ssim(a, b) - ssim_direct(a, b)) < 1e-6


# ---- CPBD

def test_cpbd_no_edges_and_too_small():
    with pytest.raises(NoEdges):
        cpbd(np.full((64, 64), 128.0))
    with pytest.raises(TooSmall):
        cpbd(np.zeros((32, 64)))


def test_cpbd_sharp_step_beats_heavy_blur():
    img = np.zeros((64, 64))
    img[:, 32:] = 255
    heavy = blur(img, 3.0)
    # the blur really widened the edge, per an independent 10-90 % rise measurement
    assert rise_width(heavy[32]) > 3 * rise_width(img[32] + np.linspace(0, 1e-9, 64))
    assert cpbd(img) > cpbd(heavy)


def test_cpbd_deterministic_and_bounded(rng):
    img = edge_image(rng)
    assert cpbd(img) == cpbd(img.copy())
    assert 0 <= cpbd(img) <= 1


def test_cpbd_block_translation_invariance(rng):
    img = edge_image(rng, 128)
    assert cpbd(img) == cpbd(np.roll(img, 64, axis=0))


def test_cpbd_non_increasing_under_blur():
    rng = np.random.default_rng(42)
    for _ in range(10):
        img = edge_image(rng)
        vals = [cpbd(img)] + [cpbd(blur(img, s)) for s in (0.5, 1.0, 2.0)]
        assert all(x >= y for x, y in zip(vals, vals[1:])), vals


# ---- ACD

def _stub(vectors):
    table = {id(k): v for k, v in vectors}
    return lambda frames: np.stack([table[id(f)] for f in frames])


def test_acd_examples():
    f1, f2 = np.zeros((4, 4, 3)), np.ones((4, 4, 3))
    same = acd([f1], [f1], lambda fr: np.array([[1.0, 2.0]] * len(fr)))
    assert abs(same.cosine) < 1e-12 and same.euclidean == 0 and same.same_identity
    emb = _stub([(f1, np.array([1.0, 0.0])), (f2, np.array([0.0, 1.0]))])
    orth = acd([f1], [f2], emb, "stub")
    assert abs(orth.cosine - 1.0) < 1e-12
    assert abs(orth.euclidean - math.sqrt(2)) < 1e-12
    assert not orth.same_identity and orth.embedder == "stub"
    assert 0.01 <= ACD_COSINE_THRESHOLD


def test_acd_threshold_cosine_001():
    f1, f2 = np.zeros((2, 2, 3)), np.ones((2, 2, 3))
    theta = math.acos(1 - 0.01)
    emb = _stub([(f1, np.array([0.1, 0.0])), (f2, 0.1 * np.array([math.cos(theta), math.sin(theta)]))])
    res = acd([f1], [f2], emb)
    assert abs(res.cosine - 0.01) < 1e-9 and res.same_identity


def test_acd_length_mismatch():
    with pytest.raises(LengthMismatch):
        acd([np.zeros(3)], [], lambda fr: np.zeros((len(fr), 2)))


# ---- blinks

def test_blink_examples():
    assert detect_blinks([0.30] * 50) == 0
    one = [0.30] * 50
    one[20:23] = [0.10] * 3
    assert detect_blinks(one) == 1
    two = list(one)
    two[40:42] = [0.05, 0.05]
    assert detect_blinks(two) == 2
    with pytest.raises(TooShort):
        detect_blinks([0.3, 0.3])


@given(scale=st.floats(0.01, 100), seed=st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_blinks_scale_invariant(scale, seed):
    r = np.random.default_rng(seed)
    e = 0.3 + 0.02 * r.standard_normal(60)
    e[r.integers(0, 55) :][:3] *= 0.3
    assert detect_blinks(e) == detect_blinks(e * scale)


# ---- report

def test_report_excludes_infinite_psnr_and_missing_cpbd(rng):
    img = edge_image(rng, 64)
    flat = np.full((64, 64), 90.0)
    rep = evaluate_clip("c", [img, flat], [img, flat + 3])
    assert rep.psnr_infinite_frames == 1
    assert rep.means()["psnr_db"] == psnr(flat, flat + 3)
    assert rep.cpbd[1] is None and rep.means()["cpbd"] == rep.cpbd[0]
    rec = rep.to_record()
    assert rec["per_frame"]["psnr_db"][0] == "inf" and rec["wer"] is None
    with pytest.raises(LengthMismatch):
        evaluate_clip("c", [img], [])
    assert MetricReport("x").means() == {"ssim": None, "psnr_db": None, "cpbd": None}
