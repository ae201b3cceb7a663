# tests/conftest.py
from __future__ import annotations

import numpy as np
import pytest

from meel.config import SynthConfig, TrainConfig
from meel.data.synthetic import generate_synthetic


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def small_synth() -> SynthConfig:
    return SynthConfig(
        n_videos=60,
        captions_per_video=3,
        latent_dim=8,
        video_dim=12,
        text_dim=10,
        noise_std=0.3,
        seed=3,
        split_counts=(40, 10, 10),
    )


@pytest.fixture
def small_dataset(small_synth):
    return generate_synthetic(small_synth)


@pytest.fixture
def small_train_cfg() -> TrainConfig:
    return TrainConfig(d=16, hidden_dims=(24,), batch_size=8, queue_size=32, epochs=3, seed=1)
