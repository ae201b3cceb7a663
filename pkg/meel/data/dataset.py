# meel/data/dataset.py
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from ..errors import (
    CountMismatchError,
    DanglingOwnerError,
    DatasetValidationError,
    EmptyCaptionSetError,
    EmptySplitError,
    OverlappingSplitsError,
)
from ..utils.io import write_json_atomic
from ..utils.paths import resolve_under
from .features import read_features, write_features

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    """
    Videos with one-to-many captions. `caption_owner[j]` is the video index of
    caption row j; `splits` maps train/val/test to disjoint video-index arrays.
    Immutable once validated.
    """

    video_features: np.ndarray  # n_v x D_v
    caption_features: np.ndarray  # n_t x D_t
    caption_owner: np.ndarray  # n_t, int64
    splits: dict[str, np.ndarray]
    captions_by_video: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.video_features = np.asarray(self.video_features, dtype=np.float64)
        self.caption_features = np.asarray(self.caption_features, dtype=np.float64)
        self.caption_owner = np.asarray(self.caption_owner, dtype=np.int64)
        self.splits = {
            name: np.asarray(self.splits.get(name, ()), dtype=np.int64) for name in SPLITS
        }
        self.validate()
        order = np.argsort(self.caption_owner, kind="stable")
        bounds = np.searchsorted(self.caption_owner[order], np.arange(self.n_videos + 1))
        self.captions_by_video = [order[bounds[v] : bounds[v + 1]] for v in range(self.n_videos)]

    # ---- shape helpers ----
    @property
    def n_videos(self) -> int:
        return self.video_features.shape[0]

    @property
    def n_captions(self) -> int:
        return self.caption_features.shape[0]

    @property
    def video_dim(self) -> int:
        return self.video_features.shape[1]

    @property
    def text_dim(self) -> int:
        return self.caption_features.shape[1]

    def split_videos(self, name: str) -> np.ndarray:
        if name not in self.splits:
            raise DatasetValidationError(f"unknown split {name!r}")
        return self.splits[name]

    def split_captions(self, name: str) -> np.ndarray:
        """Caption indices owned by the split's videos, ordered by video then caption."""
        vids = self.split_videos(name)
        if vids.size == 0:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([self.captions_by_video[v] for v in vids])

    # ---- validation ----
    def validate(self) -> None:
        if self.video_features.ndim != 2 or self.caption_features.ndim != 2:
            raise CountMismatchError("feature arrays must be matrices")
        n_v, n_t = self.n_videos, self.n_captions
        if self.caption_owner.shape != (n_t,):
            raise CountMismatchError(
                f"caption_owner has {self.caption_owner.size} entries but there are "
                f"{n_t} caption feature rows"
            )
        if n_t and (self.caption_owner.min() < 0 or self.caption_owner.max() >= n_v):
            bad = int(self.caption_owner[(self.caption_owner < 0) | (self.caption_owner >= n_v)][0])
            raise DanglingOwnerError(f"caption owner {bad} does not exist ({n_v} videos)")
        counts = np.bincount(self.caption_owner, minlength=n_v)
        if n_v and counts.min() == 0:
            raise EmptyCaptionSetError(f"video {int(np.argmin(counts))} has no captions")

        seen: dict[int, str] = {}
        for name in SPLITS:
            vids = self.splits[name]
            if vids.size and (vids.min() < 0 or vids.max() >= n_v):
                raise DanglingOwnerError(f"split {name!r} references a video outside [0, {n_v})")
            for v in vids.tolist():
                if v in seen:
                    raise OverlappingSplitsError(
                        f"video {v} appears in both {seen[v]!r} and {name!r}"
                        if seen[v] != name
                        else f"video {v} listed twice in split {name!r}"
                    )
                seen[v] = name

    def require_split(self, name: str) -> np.ndarray:
        vids = self.split_videos(name)
        if vids.size == 0:
            raise EmptySplitError(f"split {name!r} is empty")
        return vids

    def equals(self, other: Dataset) -> bool:
        return (
            np.array_equal(self.video_features, other.video_features)
            and np.array_equal(self.caption_features, other.caption_features)
            and np.array_equal(self.caption_owner, other.caption_owner)
            and all(np.array_equal(self.splits[s], other.splits[s]) for s in SPLITS)
        )


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------
class _SplitsDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    train: list[int] = []
    val: list[int] = []
    test: list[int] = []


class ManifestDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    video_features: str
    caption_features: str
    caption_owner: list[int]
    splits: _SplitsDoc


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Read a JSON manifest plus its two feature files; all invariants checked eagerly."""
    manifest_path = Path(manifest_path)
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetValidationError(f"{manifest_path}: not valid JSON ({e.msg})") from e
    try:
        doc = ManifestDoc.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise DatasetValidationError(f"{manifest_path}: {where}: {first['msg']}") from e

    base = manifest_path.parent
    videos = read_features(resolve_under(base, doc.video_features))
    captions = read_features(resolve_under(base, doc.caption_features))
    if len(doc.caption_owner) != captions.shape[0]:
        raise CountMismatchError(
            f"manifest lists {len(doc.caption_owner)} caption owners but "
            f"{doc.caption_features} has {captions.shape[0]} rows"
        )
    ds = Dataset(
        video_features=videos,
        caption_features=captions,
        caption_owner=np.asarray(doc.caption_owner, dtype=np.int64),
        splits={"train": doc.splits.train, "val": doc.splits.val, "test": doc.splits.test},
    )
    log.info(
        "Loaded %d videos / %d captions from %s (train=%d val=%d test=%d)",
        ds.n_videos,
        ds.n_captions,
        manifest_path,
        *(ds.splits[s].size for s in SPLITS),
    )
    return ds


def export_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write videos.feat, captions.feat and manifest.json (relative paths) into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_features(out_dir / "videos.feat", dataset.video_features)
    write_features(out_dir / "captions.feat", dataset.caption_features)
    doc = {
        "video_features": "videos.feat",
        "caption_features": "captions.feat",
        "caption_owner": dataset.caption_owner.tolist(),
        "splits": {s: dataset.splits[s].tolist() for s in SPLITS},
    }
    return write_json_atomic(out_dir / "manifest.json", doc)
