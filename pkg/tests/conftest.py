import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from talkinghead.config import Config  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def tiny_cfg() -> Config:
    """Small networks so unit tests run fast on CPU."""
    return Config().replace(**{
        "gen.base_channels": 32,
        "gen.audio_dim": 32,
        "gen.spade_hidden": 8,
        "gen.encoder_channels": 16,
        "gen.min_channels": 8,
        "disc.frame_channels": 8,
        "disc.temporal_channels": 8,
        "disc.sync_channels": 4,
        "disc.sync_resolution": 32,
        "disc.sync_dim": 32,
        "disc.landmark_channels": 8,
        "train.batch_size": 2,
    })


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    from talkinghead.data import make_synthetic_corpus

    return make_synthetic_corpus(6, 11, tmp_path_factory.mktemp("corpus"))


def pytest_terminal_summary(terminalreporter):
    from gates import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
