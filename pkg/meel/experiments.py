# meel/experiments.py
"""
Desk-scale experiment drivers: the loss-component ablation and the
memory-size sweep. Each run trains on a freshly generated synthetic dataset
(one per seed, shared across variants) and reports validation/test RSum.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from typing import Any

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .config import SynthConfig, TrainConfig, config_error_from
from .data.dataset import Dataset
from .data.synthetic import generate_synthetic
from .errors import InvalidArgumentError
from .evaluation import RetrievalReport, evaluate
from .trainer import fit

log = logging.getLogger(__name__)

# name -> TrainConfig overrides, in table order
ABLATION_VARIANTS: dict[str, dict[str, Any]] = {
    "triplet": {
        "use_infonce": False,
        "use_center": False,
        "use_momentum": False,
        "eval_encoder": "query",
    },
    "triplet+center": {
        "use_infonce": False,
        "use_center": True,
        "use_momentum": False,
        "eval_encoder": "query",
    },
    # momentum-trained, scored with the query encoders
    "triplet+memory": {
        "use_infonce": True,
        "use_center": False,
        "use_momentum": True,
        "eval_encoder": "query",
    },
    # momentum encoders hard-synced to the query encoders every step
    "triplet+memory+no-momentum": {
        "use_infonce": True,
        "use_center": False,
        "use_momentum": False,
        "eval_encoder": "momentum",
    },
    "triplet+memory+momentum": {
        "use_infonce": True,
        "use_center": False,
        "use_momentum": True,
        "eval_encoder": "momentum",
    },
    "full": {
        "use_infonce": True,
        "use_center": True,
        "use_momentum": True,
        "eval_encoder": "momentum",
    },
}

# Desk-scale study: 200 train x 5 captions, 20 val, 50 test. Latent causes
# outnumber the observed feature dims, so video and text share only part of
# their signal and retrieval does not saturate on 20 validation videos.
DESK_SYNTH = SynthConfig(
    n_videos=270,
    captions_per_video=5,
    latent_dim=48,
    video_dim=16,
    text_dim=16,
    noise_std=0.3,
    split_counts=(200, 20, 50),
)
# Six steps per epoch: the momentum encoders need a time constant of a few
# steps to track the query encoders within the run. The center loss sums over
# the batch, so its weight is the B=128 value scaled to B=32.
DESK_TRAIN = TrainConfig(
    batch_size=32,
    queue_size=256,
    epochs=15,
    learning_rate=2e-3,
    momentum_schedule=((1, 0.8), (4, 0.9)),
    center_weight=0.02,
    center_init_std=0.05,
)
DESK_SEEDS = (0, 1, 2, 3, 4)


def _derive(base: TrainConfig, **updates: Any) -> TrainConfig:
    try:
        return TrainConfig.model_validate({**base.model_dump(), **updates})
    except ValidationError as e:
        raise config_error_from(e, "train") from e


def _flatten(prefix: str, report: RetrievalReport | None) -> dict[str, float]:
    if report is None:
        return {f"{prefix}_rsum": np.nan}
    row = {f"{prefix}_rsum": report.rsum}
    for direction, metrics in (("t2v", report.t2v), ("v2t", report.v2t)):
        for name, value in vars(metrics).items():
            row[f"{prefix}_{direction}_{name}"] = value
    return row


def _run_once(dataset: Dataset, config: TrainConfig) -> dict[str, Any]:
    result = fit(dataset, config)
    test = None
    if dataset.split_videos("test").size:
        test = evaluate(result.state, dataset, "test", config.eval_encoder)
    row: dict[str, Any] = {"best_epoch": result.best_epoch}
    row.update(_flatten("val", result.best_report))
    row.update(_flatten("test", test))
    return row


def _datasets(synth_cfg: SynthConfig, seeds: Iterable[int]) -> dict[int, Dataset]:
    return {
        seed: generate_synthetic(synth_cfg.model_copy(update={"seed": seed})) for seed in seeds
    }


def run_ablation(
    synth_cfg: SynthConfig,
    base_train_cfg: TrainConfig,
    seeds: Sequence[int],
    variants: Sequence[str] | None = None,
) -> pd.DataFrame:
    """One row per (variant, seed)."""
    names = list(variants) if variants is not None else list(ABLATION_VARIANTS)
    unknown = [n for n in names if n not in ABLATION_VARIANTS]
    if unknown:
        raise InvalidArgumentError(f"unknown ablation variant(s): {', '.join(unknown)}")
    if not seeds:
        raise InvalidArgumentError("run_ablation needs at least one seed")

    datasets = _datasets(synth_cfg, seeds)
    rows = []
    for name in names:
        for seed in seeds:
            cfg = _derive(base_train_cfg, seed=seed, **ABLATION_VARIANTS[name])
            log.info("ablation variant=%s seed=%d", name, seed)
            rows.append({"variant": name, "seed": seed, **_run_once(datasets[seed], cfg)})
    return pd.DataFrame(rows)


def summarize_ablation(df: pd.DataFrame) -> pd.DataFrame:
    """Median val/test RSum per variant, in table order."""
    order = [v for v in ABLATION_VARIANTS if v in set(df["variant"])]
    out = df.groupby("variant")[["val_rsum", "test_rsum"]].median().reindex(order)
    out.columns = ["median_val_rsum", "median_test_rsum"]
    out["runs"] = df.groupby("variant").size().reindex(order)
    return out.reset_index()


def run_memory_sweep(
    synth_cfg: SynthConfig,
    base_train_cfg: TrainConfig,
    multiples: Sequence[int],
    seeds: Sequence[int],
) -> pd.DataFrame:
    """
    Train with memory losses and triplet only (no center memory) for
    queue_size = multiple * batch_size. One row per (queue_size, seed).
    """
    if not multiples or any(int(k) <= 0 for k in multiples):
        raise InvalidArgumentError("memory sweep multiples must be positive integers")
    if not seeds:
        raise InvalidArgumentError("run_memory_sweep needs at least one seed")

    datasets = _datasets(synth_cfg, seeds)
    B = base_train_cfg.batch_size
    rows = []
    for multiple in multiples:
        for seed in seeds:
            cfg = _derive(
                base_train_cfg,
                seed=seed,
                queue_size=int(multiple) * B,
                use_infonce=True,
                use_center=False,
            )
            log.info("memory sweep K=%d seed=%d", cfg.queue_size, seed)
            rows.append(
                {
                    "multiple": int(multiple),
                    "queue_size": cfg.queue_size,
                    "seed": seed,
                    **_run_once(datasets[seed], cfg),
                }
            )
    return pd.DataFrame(rows)


def summarize_memory_sweep(df: pd.DataFrame) -> pd.DataFrame:
    out = df.groupby("queue_size")[["val_rsum", "test_rsum"]].median()
    out.columns = ["median_val_rsum", "median_test_rsum"]
    return out.reset_index()
