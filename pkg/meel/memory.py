# meel/memory.py
"""
Non-parametric memory banks.

- ``CrossModalQueue``: fixed-capacity FIFO of (unit embedding, owner video id)
  used as global negatives. Ring buffer; always holds exactly K entries.
- ``CenterBank``: one center per training video (class); moved by the
  mini-batch center-loss update rule, never by gradient descent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, ShapeMismatchError
from .numerics import MASKED, PrngStream, l2_normalize_rows

log = logging.getLogger(__name__)

NO_OWNER = -1  # reserved; never assigned to a real video
UNIT_TOL = 1e-6


@dataclass
class CrossModalQueue:
    embeddings: np.ndarray  # K x d, storage order
    owners: np.ndarray  # K, int64
    cursor: int = 0  # next slot to overwrite == oldest entry

    def __post_init__(self) -> None:
        if self.embeddings.ndim != 2 or self.owners.shape != (self.embeddings.shape[0],):
            raise ShapeMismatchError(
                f"queue embeddings {self.embeddings.shape} / owners {self.owners.shape}"
            )
        if not 0 <= self.cursor < max(self.capacity, 1):
            raise InvalidArgumentError(f"cursor {self.cursor} outside [0, {self.capacity})")

    @property
    def capacity(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return self.capacity

    def ordered(self) -> tuple[np.ndarray, np.ndarray]:
        """Contents oldest -> newest."""
        order = (np.arange(self.capacity) + self.cursor) % self.capacity
        return self.embeddings[order], self.owners[order]

    def copy(self) -> CrossModalQueue:
        return CrossModalQueue(self.embeddings.copy(), self.owners.copy(), self.cursor)


def queue_init(K: int, d: int, stream: PrngStream) -> CrossModalQueue:
    """K random directions, uniform on the sphere; every slot owned by NO_OWNER."""
    if K <= 0 or d <= 0:
        raise InvalidArgumentError(f"queue needs K > 0 and d > 0, got K={K}, d={d}")
    raw = stream.generator.standard_normal((K, d))
    return CrossModalQueue(l2_normalize_rows(raw), np.full(K, NO_OWNER, dtype=np.int64))


def enqueue_dequeue(queue: CrossModalQueue, embeddings, owners) -> None:
    """Replace the B oldest slots with the batch, preserving its order."""
    E = np.asarray(embeddings, dtype=np.float64)
    ids = np.asarray(owners, dtype=np.int64)
    if E.ndim != 2 or E.shape[1] != queue.dim or ids.shape != (E.shape[0],):
        raise ShapeMismatchError(
            f"batch {E.shape} / owners {ids.shape} incompatible with queue dim {queue.dim}"
        )
    B = E.shape[0]
    if B > queue.capacity:
        raise InvalidArgumentError(f"batch size {B} exceeds queue capacity {queue.capacity}")
    if B == 0:
        return
    norms = np.linalg.norm(E, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise InvalidArgumentError("enqueued embeddings must be unit-norm")

    slots = (queue.cursor + np.arange(B)) % queue.capacity
    queue.embeddings[slots] = E
    queue.owners[slots] = ids
    queue.cursor = int((queue.cursor + B) % queue.capacity)


# ---------------------------------------------------------------------------
# Masked logits
# ---------------------------------------------------------------------------
@dataclass
class MaskedLogits:
    values: np.ndarray  # 1 + K; index 0 is the positive
    mask: np.ndarray  # 1 + K booleans; mask[0] is always False

    @property
    def masked_count(self) -> int:
        return int(self.mask.sum())


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise InvalidArgumentError(f"temperature must be > 0, got {tau}")


def masked_negative_logits(
    query,
    positive_key,
    queue: CrossModalQueue,
    query_owner_id: int,
    tau: float,
) -> MaskedLogits:
    """[q.k+ / tau | q.queue_i / tau], queue entries owned by the query's video masked."""
    _check_tau(tau)
    q = np.asarray(query, dtype=np.float64)
    k = np.asarray(positive_key, dtype=np.float64)
    if q.shape != (queue.dim,) or k.shape != q.shape:
        raise ShapeMismatchError(f"query {q.shape} / key {k.shape} vs queue dim {queue.dim}")

    values = np.empty(queue.capacity + 1)
    values[0] = float(q @ k) / tau
    values[1:] = (queue.embeddings @ q) / tau
    mask = np.zeros(queue.capacity + 1, dtype=bool)
    if query_owner_id != NO_OWNER:
        mask[1:] = queue.owners == query_owner_id
    values[mask] = MASKED
    return MaskedLogits(values, mask)


def masked_logits_batch(
    queries, positive_keys, queue: CrossModalQueue, owner_ids, tau: float
) -> MaskedLogits:
    """Batched masked_negative_logits: values and mask are B x (1 + K)."""
    _check_tau(tau)
    Q = np.asarray(queries, dtype=np.float64)
    Kp = np.asarray(positive_keys, dtype=np.float64)
    ids = np.asarray(owner_ids, dtype=np.int64)
    if Q.ndim != 2 or Q.shape != Kp.shape or Q.shape[1] != queue.dim:
        raise ShapeMismatchError(f"queries {Q.shape} / keys {Kp.shape} vs queue dim {queue.dim}")
    if ids.shape != (Q.shape[0],):
        raise ShapeMismatchError(f"owner ids {ids.shape} vs batch {Q.shape[0]}")

    values = np.empty((Q.shape[0], queue.capacity + 1))
    values[:, 0] = np.sum(Q * Kp, axis=1) / tau
    values[:, 1:] = (Q @ queue.embeddings.T) / tau
    mask = np.zeros_like(values, dtype=bool)
    mask[:, 1:] = (queue.owners[None, :] == ids[:, None]) & (ids[:, None] != NO_OWNER)
    values[mask] = MASKED
    return MaskedLogits(values, mask)


# ---------------------------------------------------------------------------
# Text center bank
# ---------------------------------------------------------------------------
@dataclass
class CenterBank:
    centers: np.ndarray  # H x d

    @property
    def class_count(self) -> int:
        return self.centers.shape[0]

    def copy(self) -> CenterBank:
        return CenterBank(self.centers.copy())


def center_bank_init(H: int, d: int, stream: PrngStream, std: float = 1.0) -> CenterBank:
    """H Gaussian rows with entry std `std`; not projected onto the sphere."""
    if H <= 0 or d <= 0:
        raise InvalidArgumentError(f"center bank needs H > 0 and d > 0, got H={H}, d={d}")
    if not std > 0.0:
        raise InvalidArgumentError(f"center init std must be > 0, got {std}")
    return CenterBank(std * stream.generator.standard_normal((H, d)))


def _check_labels(labels: np.ndarray, H: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= H):
        raise InvalidArgumentError(f"class index out of range [0, {H})")


def update_centers(bank: CenterBank, texts, labels, gamma: float) -> None:
    """
    Mini-batch center update:
        delta_j = sum_{y_i = j} (c_j - t_i) / (1 + n_j);  c_j <- c_j - gamma * delta_j
    Classes absent from the batch are left untouched.
    """
    if not 0.0 < gamma <= 1.0:
        raise InvalidArgumentError(f"center step must lie in (0, 1], got {gamma}")
    T = np.asarray(texts, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if T.ndim != 2 or T.shape[1] != bank.centers.shape[1] or y.shape != (T.shape[0],):
        raise ShapeMismatchError(
            f"texts {T.shape} / labels {y.shape} vs centers {bank.centers.shape}"
        )
    _check_labels(y, bank.class_count)
    if y.size == 0:
        return

    classes, inverse, counts = np.unique(y, return_inverse=True, return_counts=True)
    diff_sum = np.zeros((classes.size, T.shape[1]))
    np.add.at(diff_sum, inverse, bank.centers[y] - T)
    delta = diff_sum / (1.0 + counts)[:, None]
    bank.centers[classes] -= gamma * delta
