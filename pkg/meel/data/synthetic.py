# meel/data/synthetic.py
"""
Synthetic video <-> multi-caption data with a shared latent cause.

Per video: z ~ N(0, I_latent); video feature x = A z + e_v; each caption
t = B z + e_t with fresh noise per caption. A (D_v x latent) and B
(D_t x latent) have N(0, 1/latent) entries, fixed by the seed, and
e ~ N(0, noise_std^2 I). Draw order on the stream: A, B, Z, video noise,
caption noise.
"""

from __future__ import annotations

import logging

import numpy as np

from ..config import SynthConfig
from ..numerics import make_stream
from .dataset import Dataset

log = logging.getLogger(__name__)

DEFAULT_SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


def _draw_maps(gen: np.random.Generator, cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    scale = 1.0 / np.sqrt(cfg.latent_dim)
    A = gen.standard_normal((cfg.video_dim, cfg.latent_dim)) * scale
    B = gen.standard_normal((cfg.text_dim, cfg.latent_dim)) * scale
    return A, B


def synthetic_maps(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """The generator's own (A, B) for this config."""
    return _draw_maps(make_stream(cfg.resolved_seed(), "synthetic").generator, cfg)


def split_counts_for(cfg: SynthConfig) -> tuple[int, int, int]:
    if cfg.split_counts is not None:
        return cfg.split_counts
    _, f_val, f_test = DEFAULT_SPLIT_FRACTIONS
    n_val = int(np.floor(cfg.n_videos * f_val))
    n_test = int(np.floor(cfg.n_videos * f_test))
    return cfg.n_videos - n_val - n_test, n_val, n_test


def _to_f32_precision(x: np.ndarray) -> np.ndarray:
    # features live on disk as float32; keep the in-memory copy identical
    return x.astype(np.float32).astype(np.float64)


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    gen = make_stream(cfg.resolved_seed(), "synthetic").generator
    A, B = _draw_maps(gen, cfg)

    n_v, c = cfg.n_videos, cfg.captions_per_video
    Z = gen.standard_normal((n_v, cfg.latent_dim))
    videos = Z @ A.T + cfg.noise_std * gen.standard_normal((n_v, cfg.video_dim))

    owner = np.repeat(np.arange(n_v, dtype=np.int64), c)
    captions = Z[owner] @ B.T + cfg.noise_std * gen.standard_normal((n_v * c, cfg.text_dim))

    n_train, n_val, n_test = split_counts_for(cfg)
    splits = {
        "train": np.arange(0, n_train),
        "val": np.arange(n_train, n_train + n_val),
        "test": np.arange(n_train + n_val, n_train + n_val + n_test),
    }
    ds = Dataset(_to_f32_precision(videos), _to_f32_precision(captions), owner, splits)
    log.debug(
        "Generated synthetic dataset: %d videos x %d captions, splits %s",
        n_v,
        c,
        (n_train, n_val, n_test),
    )
    return ds
