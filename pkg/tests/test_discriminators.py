import numpy as np
import pytest
import torch

from oracles import central_difference_check
from talkinghead.config import DiscConfig
from talkinghead.discriminators import (
    FrameDiscriminator,
    SyncDiscriminator,
    TemporalDiscriminator,
    frame_disc,
    scale_pyramid,
    sync_embed_audio,
    sync_embed_video,
    temporal_disc,
)
from talkinghead.errors import ShapeMismatch, ShortWindow

CFG = DiscConfig(frame_channels=8, temporal_channels=8, sync_channels=4, sync_resolution=32, sync_dim=256)


def _frames(*shape, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(*shape, generator=g) * 2 - 1


def test_scale_pyramid_sides():
    levels = scale_pyramid(torch.zeros(1, 3, 64, 64))
    assert [lvl.shape[-1] for lvl in levels] == [64, 32, 16]


def test_frame_disc_scales_and_features():
    net = FrameDiscriminator(CFG, 64)
    out = frame_disc(_frames(3, 64, 64), _frames(3, 64, 64, seed=1), net)
    assert len(out.score_maps) == 3 and len(out.features) == 3
    assert all(len(f) == 4 for f in out.features)
    # each scale halves the effective input size, so score maps shrink accordingly
    sides = [m.shape[-1] for m in out.score_maps]
    assert sides == sorted(sides, reverse=True) and sides[0] == 2 * sides[1] == 4 * sides[2]
    assert all(torch.isfinite(m).all() for m in out.score_maps)


def test_frame_disc_deterministic():
    net = FrameDiscriminator(CFG, 64).eval()
    x, ident = _frames(2, 3, 64, 64), _frames(2, 3, 64, 64, seed=1)
    a, b = net(x, ident), net(x, ident)
    for ma, mb in zip(a.score_maps, b.score_maps):
        assert torch.equal(ma, mb)


def test_frame_disc_rejects_wrong_resolution():
    net = FrameDiscriminator(CFG, 64)
    with pytest.raises(ShapeMismatch):
        net(_frames(1, 3, 32, 32), _frames(1, 3, 32, 32))


def test_features_are_the_scoring_activations():
    """The last feature of each scale feeds the score conv directly."""
    net = FrameDiscriminator(CFG, 64).eval()
    out = net(_frames(1, 3, 64, 64), _frames(1, 3, 64, 64, seed=1))
    for sub, feats, score in zip(net.nets, out.features, out.score_maps):
        assert torch.equal(sub.score(feats[-1]), score)


def test_temporal_disc_shapes_and_short_window():
    net = TemporalDiscriminator(CFG)
    out = temporal_disc(_frames(5, 3, 64, 64), net)
    assert len(out.score_maps) == 2
    assert all(torch.isfinite(m).all() for m in out.score_maps)
    with pytest.raises(ShortWindow):
        net(_frames(1, 4, 3, 64, 64))


def test_sync_embeddings_unit_norm_and_deterministic():
    net = SyncDiscriminator(CFG)
    v = sync_embed_video(_frames(5, 3, 64, 64), net)
    a = sync_embed_audio(torch.zeros(20, 13), net)
    assert v.shape == (256,) and a.shape == (256,)
    assert abs(v.norm().item() - 1) < 1e-5 and abs(a.norm().item() - 1) < 1e-5
    assert torch.isfinite(a).all()
    assert torch.equal(v, sync_embed_video(_frames(5, 3, 64, 64), net))
    assert torch.equal(a, sync_embed_audio(torch.zeros(20, 13), net))
    d = (v - a).norm().item()
    assert 0 <= d <= 2


def test_sync_errors():
    net = SyncDiscriminator(CFG)
    with pytest.raises(ShortWindow):
        sync_embed_video(_frames(4, 3, 64, 64), net)
    with pytest.raises(ShapeMismatch):
        sync_embed_audio(torch.zeros(19, 13), net)


def _check(net, f, seed):
    net = net.double().eval()  # eval freezes the spectral-norm power iteration
    return central_difference_check(f, list(net.parameters()), 10, np.random.default_rng(seed))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_frame_disc_gradients(seed):
    torch.manual_seed(seed)
    net = FrameDiscriminator(CFG, 64)
    x, ident = _frames(2, 3, 64, 64, seed=seed).double(), _frames(2, 3, 64, 64, seed=seed + 9).double()
    assert _check(net, lambda: sum(m.sum() for m in net(x, ident).score_maps), seed) <= 1e-2


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_temporal_disc_gradients(seed):
    torch.manual_seed(seed)
    net = TemporalDiscriminator(CFG)
    x = _frames(1, 5, 3, 64, 64, seed=seed).double()
    assert _check(net, lambda: sum(m.sum() for m in net(x).score_maps), seed) <= 1e-2


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sync_disc_gradients(seed):
    torch.manual_seed(seed)
    net = SyncDiscriminator(CFG)
    x = _frames(2, 5, 3, 64, 64, seed=seed).double()
    m = (torch.randn(2, 20, 13, generator=torch.Generator().manual_seed(seed)) * 10).double()

    def f():
        v, a = net(x, m)
        return (v - a).norm(dim=-1).sum()

    assert _check(net, f, seed) <= 1e-2
