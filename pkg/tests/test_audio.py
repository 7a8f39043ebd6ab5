import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference_check, mfcc_direct
from talkinghead.audio import (
    AudioWindow,
    ContentEncoder,
    Waveform,
    compute_mfcc,
    compute_stride,
    encode_content,
    frame_windows,
    read_wav,
    write_wav,
)
from talkinghead.errors import EmptyAudio, NonDivisible, ValidationError, WeightsShapeMismatch


@pytest.mark.parametrize("sr, fps, stride", [(16000, 25, 640), (16000, 16, 1000)])
def test_compute_stride(sr, fps, stride):
    assert compute_stride(sr, fps) == stride


def test_compute_stride_non_divisible():
    with pytest.raises(NonDivisible):
        compute_stride(16000, 30)


def test_one_second_windows():
    w = Waveform(np.random.default_rng(0).uniform(-1, 1, 16000))
    wins = frame_windows(w, 25, 200)
    assert len(wins) == 25
    assert all(len(x.samples) == 3200 for x in wins)
    assert [x.center_sample for x in wins[:3]] == [320, 960, 1600]
    # overlap of consecutive windows: 3200 - 640 samples = 160 ms
    overlap = 3200 - (wins[1].center_sample - wins[0].center_sample)
    assert overlap == 2560 and overlap / 16000 == 0.16


def test_window_contents_and_zero_padding():
    x = np.arange(1, 16001) / 16001
    wins = frame_windows(Waveform(x), 25, 200, with_mfcc=False)
    first = wins[0].samples
    # window 0 spans samples [320 - 1600, 320 + 1600)
    assert np.all(first[:1280] == 0)
    np.testing.assert_array_equal(first[1280:], x[:1920])
    k = 10
    c = wins[k].center_sample
    np.testing.assert_array_equal(wins[k].samples, x[c - 1600 : c + 1600])


def test_two_seconds_fifty_windows():
    assert len(frame_windows(Waveform(np.zeros(32000)), 25, 200, with_mfcc=False)) == 50


def test_empty_audio():
    with pytest.raises(EmptyAudio):
        frame_windows(Waveform(np.zeros(160)), 25, 200)


def test_waveform_validation():
    with pytest.raises(ValidationError):
        Waveform(np.array([0.0, np.nan]))
    with pytest.raises(ValidationError):
        Waveform(np.array([]))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(640, 40000))
def test_stride_and_count_invariants(n):
    wins = frame_windows(Waveform(np.zeros(n)), 25, 200, with_mfcc=False)
    assert len(wins) == int(np.floor(n * 25 / 16000 + 0.5))
    centers = np.array([w.center_sample for w in wins])
    assert np.all(np.diff(centers) == 640)


@settings(max_examples=15, deadline=None)
@given(n=st.integers(640, 20000), extra=st.integers(1, 5000), seed=st.integers(0, 2**16))
def test_appending_silence_keeps_existing_windows(n, extra, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    # silence beyond the last window's reach
    reach = n + 1600 + 640
    base = frame_windows(Waveform(x), 25, 200, with_mfcc=False)
    longer = frame_windows(Waveform(np.concatenate([x, np.zeros(reach - n + extra)])), 25, 200, with_mfcc=False)
    for a, b in zip(base, longer):
        np.testing.assert_array_equal(a.samples, b.samples)


def test_mfcc_shape_and_silence():
    m = compute_mfcc(np.zeros(3200))
    assert m.shape == (20, 13)
    assert np.all(m == m[0])


def test_mfcc_matches_direct_evaluation(rng):
    t = np.arange(3200) / 16000
    for x in (np.sin(2 * np.pi * 440 * t), rng.uniform(-1, 1, 3200) * np.hanning(3200)):
        np.testing.assert_allclose(compute_mfcc(x), mfcc_direct(x), rtol=1e-6, atol=1e-6)


def test_mfcc_sine_is_steady_compared_with_noise(rng):
    t = np.arange(3200) / 16000
    sine = compute_mfcc(0.5 * np.sin(2 * np.pi * 440 * t))
    noise = compute_mfcc(0.5 * rng.uniform(-1, 1, 3200))
    assert np.all(np.isfinite(sine))
    # interior rows (away from the zero-padded edges) barely move for a steady tone
    row_variation = np.abs(np.diff(sine[2:-2], axis=0)).mean()
    contrast = np.abs(sine[2:-2].mean(0) - noise[2:-2].mean(0)).mean()
    assert row_variation < contrast


def test_mfcc_frame_count_by_hops():
    hop = 160
    assert len(range(0, 3200, hop)) == compute_mfcc(np.zeros(3200)).shape[0] == 20


def test_mfcc_deterministic(rng):
    x = rng.standard_normal(3200)
    assert compute_mfcc(x).tobytes() == compute_mfcc(x.copy()).tobytes()


def test_zero_input_zero_head_gives_zero_vector():
    enc = ContentEncoder(dim=16, channels=8, zero_init_head=True)
    emb = encode_content(np.zeros((20, 13)), enc)
    assert torch.count_nonzero(emb.vector) == 0
    assert emb.vector.shape == (16,)


def test_encode_content_deterministic(rng):
    torch.manual_seed(3)
    enc = ContentEncoder(dim=16, channels=8)
    m = rng.standard_normal((20, 13))
    a = encode_content(m, enc).vector
    b = encode_content(m, enc).vector
    assert torch.equal(a, b)
    assert torch.all(torch.isfinite(a))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_encoder_gradient_check(seed):
    torch.manual_seed(seed)
    enc = ContentEncoder(dim=8, channels=8).double()
    x = torch.randn(2, 20, 13, dtype=torch.float64) * 5
    head = torch.randn(8, dtype=torch.float64)
    err = central_difference_check(lambda: (enc(x) * head).sum(), list(enc.parameters()), 10,
                                   np.random.default_rng(seed))
    assert err < 1e-3


def test_encoder_weights_round_trip(tmp_path):
    a = ContentEncoder(dim=16, channels=8)
    a.export_weights(tmp_path / "w.npz")
    b = ContentEncoder(dim=16, channels=8)
    b.load_weights(tmp_path / "w.npz")
    for k, v in a.state_dict().items():
        assert torch.equal(v, b.state_dict()[k])
    c = ContentEncoder(dim=32, channels=8)
    with pytest.raises(WeightsShapeMismatch):
        c.load_weights(tmp_path / "w.npz")


def test_wav_round_trip(tmp_path, rng):
    x = np.round(rng.uniform(-1, 1, 1000) * 32767) / 32768
    write_wav(tmp_path / "a.wav", Waveform(x))
    w = read_wav(tmp_path / "a.wav")
    assert w.sample_rate == 16000
    np.testing.assert_array_equal(w.samples, x)
