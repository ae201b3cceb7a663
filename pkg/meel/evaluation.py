# meel/evaluation.py
"""
Bidirectional retrieval evaluation.

Similarity matrix S is p videos x q texts (cosine, ranked descending; higher
is better). Ranks are 1-based and ties go to the lower candidate index.
Video-to-text uses the best-ranked ground-truth caption of each video.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np

from .data.dataset import Dataset
from .encoder import encode
from .errors import EmptySplitError, InvalidArgumentError, ShapeMismatchError
from .numerics import similarity_matrix

if TYPE_CHECKING:
    from .trainer import TrainState

log = logging.getLogger(__name__)

Direction = Literal["t2v", "v2t"]
RECALL_KS = (1, 5, 10)


@dataclass
class GroundTruth:
    """text_owner[j] is the (split-local) video of text j; video_texts[i] its texts."""

    text_owner: np.ndarray
    video_texts: list[np.ndarray]

    def __post_init__(self) -> None:
        self.text_owner = np.asarray(self.text_owner, dtype=np.int64)
        p, q = len(self.video_texts), self.text_owner.size
        if q and (self.text_owner.min() < 0 or self.text_owner.max() >= p):
            raise ShapeMismatchError("text owner outside the video range")
        seen = 0
        for i, texts in enumerate(self.video_texts):
            if texts.size == 0 or np.any(self.text_owner[texts] != i):
                raise ShapeMismatchError(f"video {i}: text sets disagree with text owners")
            seen += texts.size
        if seen != q:
            raise ShapeMismatchError("every text must belong to exactly one video")

    @property
    def n_videos(self) -> int:
        return len(self.video_texts)

    @property
    def n_texts(self) -> int:
        return self.text_owner.size

    @classmethod
    def from_owners(cls, text_owner, n_videos: int) -> GroundTruth:
        owner = np.asarray(text_owner, dtype=np.int64)
        texts = [np.flatnonzero(owner == i) for i in range(n_videos)]
        return cls(owner, texts)

    @classmethod
    def from_dataset(cls, dataset: Dataset, split: str) -> GroundTruth:
        videos = dataset.split_videos(split)
        captions = dataset.split_captions(split)
        local = np.full(dataset.n_videos, -1, dtype=np.int64)
        local[videos] = np.arange(videos.size)
        return cls.from_owners(local[dataset.caption_owner[captions]], videos.size)


@dataclass
class DirectionMetrics:
    r1: float
    r5: float
    r10: float
    medr: float
    meanr: float

    @property
    def recall_sum(self) -> float:
        return self.r1 + self.r5 + self.r10


@dataclass
class RetrievalReport:
    t2v: DirectionMetrics
    v2t: DirectionMetrics
    rsum: float

    def to_dict(self) -> dict:
        return {"t2v": asdict(self.t2v), "v2t": asdict(self.v2t), "rsum": self.rsum}


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------
def compute_ranks(S, gt: GroundTruth, direction: Direction) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.shape != (gt.n_videos, gt.n_texts):
        raise ShapeMismatchError(
            f"similarity matrix {S.shape} != ({gt.n_videos} videos, {gt.n_texts} texts)"
        )

    if direction == "t2v":
        p, q = S.shape
        cols = np.arange(q)
        target = S[gt.text_owner, cols]
        greater = np.count_nonzero(S > target[None, :], axis=0)
        ties_before = np.count_nonzero(
            (S == target[None, :]) & (np.arange(p)[:, None] < gt.text_owner[None, :]), axis=0
        )
        return (1 + greater + ties_before).astype(np.int64)

    if direction == "v2t":
        q = S.shape[1]
        idx = np.arange(q)
        ranks = np.empty(gt.n_videos, dtype=np.int64)
        for i, texts in enumerate(gt.video_texts):
            row = S[i]
            target = row[texts]
            greater = np.count_nonzero(row[None, :] > target[:, None], axis=1)
            ties_before = np.count_nonzero(
                (row[None, :] == target[:, None]) & (idx[None, :] < texts[:, None]), axis=1
            )
            ranks[i] = int(np.min(1 + greater + ties_before))
        return ranks

    raise InvalidArgumentError(f"unknown direction {direction!r}")


def _direction_metrics(ranks: np.ndarray) -> DirectionMetrics:
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise InvalidArgumentError("cannot summarize an empty rank list")
    recalls = [float(100.0 * np.mean(r <= k)) for k in RECALL_KS]
    return DirectionMetrics(*recalls, medr=float(np.median(r)), meanr=float(np.mean(r)))


def summarize_metrics(ranks_t2v, ranks_v2t) -> RetrievalReport:
    t2v = _direction_metrics(ranks_t2v)
    v2t = _direction_metrics(ranks_v2t)
    return RetrievalReport(t2v=t2v, v2t=v2t, rsum=t2v.recall_sum + v2t.recall_sum)


def report_from_similarity(S, gt: GroundTruth) -> RetrievalReport:
    return summarize_metrics(compute_ranks(S, gt, "t2v"), compute_ranks(S, gt, "v2t"))


# ---------------------------------------------------------------------------
# End-to-end evaluation of a training state
# ---------------------------------------------------------------------------
def encode_split(
    state: TrainState, dataset: Dataset, split: str, encoder: str = "momentum"
) -> tuple[np.ndarray, np.ndarray]:
    videos = dataset.split_videos(split)
    captions = dataset.split_captions(split)
    if videos.size == 0:
        raise EmptySplitError(f"split {split!r} is empty")
    V = encode(state.video_encoder.params(encoder), dataset.video_features[videos])
    T = encode(state.text_encoder.params(encoder), dataset.caption_features[captions])
    return V, T


def evaluate(
    state: TrainState, dataset: Dataset, split: str = "test", encoder: str = "momentum"
) -> RetrievalReport:
    """Encode a split with the momentum (default) or query encoders and score it."""
    V, T = encode_split(state, dataset, split, encoder)
    gt = GroundTruth.from_dataset(dataset, split)
    report = report_from_similarity(similarity_matrix(V, T), gt)
    log.debug("evaluate split=%s encoder=%s rsum=%.2f", split, encoder, report.rsum)
    return report
