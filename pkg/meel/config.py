# meel/config.py
from __future__ import annotations

import os
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .utils.paths import load_env

load_env()


class Settings:
    # -------- Logging --------
    LOG_LEVEL: str = os.getenv("MEEL_LOG_LEVEL", "INFO")
    LOG_FORMAT: str = os.getenv("MEEL_LOG_FORMAT", "%(levelname)s: %(message)s")
    PROGRESS: bool = os.getenv("MEEL_PROGRESS", "false").lower() in ("1", "true", "yes")

    # -------- Defaults --------
    DATA_DIR: str = os.getenv("MEEL_DATA_DIR", "data")
    DEFAULT_SEED: int = int(os.getenv("MEEL_DEFAULT_SEED", "0"))


settings = Settings()


# ---------------------------------------------------------------------------
# Run configuration (validated; unknown keys rejected)
# ---------------------------------------------------------------------------
class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SynthConfig(_Strict):
    """Synthetic correlated video / multi-caption generator settings."""

    n_videos: int = Field(default=300, gt=0)
    captions_per_video: int = Field(default=5, gt=0)
    latent_dim: int = Field(default=16, gt=0)
    video_dim: int = Field(default=64, gt=0)
    text_dim: int = Field(default=48, gt=0)
    noise_std: float = Field(default=0.3, ge=0.0)
    seed: int | None = None
    # explicit (train, val, test) video counts; None -> 70/10/20
    split_counts: tuple[int, int, int] | None = None

    @model_validator(mode="after")
    def _check_splits(self) -> SynthConfig:
        if self.split_counts is not None:
            n_train, n_val, n_test = self.split_counts
            if min(self.split_counts) < 0 or n_train == 0:
                raise ValueError("split_counts need train > 0 and val, test >= 0")
            if sum(self.split_counts) > self.n_videos:
                raise ValueError(
                    f"split_counts sum {sum(self.split_counts)} exceeds n_videos {self.n_videos}"
                )
        return self

    def resolved_seed(self) -> int:
        return settings.DEFAULT_SEED if self.seed is None else self.seed


class TrainConfig(_Strict):
    d: int = Field(default=128, gt=0)
    hidden_dims: tuple[int, ...] = (256,)
    activation: Literal["tanh", "relu"] = "tanh"
    batch_size: int = Field(default=64, ge=2)
    queue_size: int = Field(default=2560, gt=0)
    temperature: float = Field(default=0.07, gt=0.0)
    margin: float = Field(default=0.2, ge=0.0)
    center_weight: float = Field(default=0.005, ge=0.0)
    center_step: float = Field(default=0.5, gt=0.0, le=1.0)
    center_init_std: float = Field(default=1.0, gt=0.0)
    # (start_epoch, m): the last entry with start_epoch <= epoch applies
    momentum_schedule: tuple[tuple[int, float], ...] = ((1, 0.99), (3, 0.999))
    learning_rate: float = Field(default=1e-3, gt=0.0)
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    epochs: int = Field(default=20, gt=0)
    seed: int = 0
    eval_encoder: Literal["momentum", "query"] = "momentum"

    # component switches for the ablation rows
    use_infonce: bool = True
    use_center: bool = True
    use_momentum: bool = True

    @model_validator(mode="after")
    def _check(self) -> TrainConfig:
        if any(h <= 0 for h in self.hidden_dims):
            raise ValueError("hidden_dims entries must be > 0")
        if self.queue_size % self.batch_size != 0:
            raise ValueError(
                f"queue_size {self.queue_size} must be an integer multiple of "
                f"batch_size {self.batch_size}"
            )
        if not self.momentum_schedule:
            raise ValueError("momentum_schedule must not be empty")
        starts = [s for s, _ in self.momentum_schedule]
        values = [m for _, m in self.momentum_schedule]
        if starts[0] != 1:
            raise ValueError("momentum_schedule must start at epoch 1")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("momentum_schedule epochs must be strictly increasing")
        if any(not 0.0 <= m < 1.0 for m in values):
            raise ValueError("momentum values must lie in [0, 1)")
        if any(b < a for a, b in zip(values, values[1:])):
            raise ValueError("momentum values must be non-decreasing")
        b1, b2 = self.adam_betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ValueError("adam_betas must lie in [0, 1)")
        return self

    def momentum_at(self, epoch: int) -> float:
        m = self.momentum_schedule[0][1]
        for start, value in self.momentum_schedule:
            if start <= epoch:
                m = value
        return m


class EvalConfig(_Strict):
    split: Literal["train", "val", "test"] = "test"
    encoder: Literal["momentum", "query"] = "momentum"


class ManifestRef(_Strict):
    manifest: str


class CliConfigFile(_Strict):
    data: SynthConfig | ManifestRef = Field(default_factory=SynthConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)


_UNION_MEMBERS = ("SynthConfig", "ManifestRef")


def _is_field(part: str) -> bool:
    # union branches show up in loc as class names or "function-after[...]" labels
    return part not in _UNION_MEMBERS and "[" not in part and "(" not in part


def config_error_from(exc: ValidationError, prefix: str = "") -> ConfigError:
    """Collapse a pydantic ValidationError into a ConfigError naming the first bad field."""
    errs = exc.errors()
    first = errs[0] if errs else {"loc": (), "msg": str(exc)}
    loc = [p for p in map(str, first.get("loc", ())) if _is_field(p)]
    field = ".".join(p for p in (prefix, *loc) if p) or "<root>"
    return ConfigError(field, first.get("msg", "invalid value"))
