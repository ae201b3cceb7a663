# meel/objective.py
"""
Loss terms and their analytic gradients wrt embeddings.

All inputs are unit-norm rows (the encoders normalize), so dot products are
cosine similarities. Gradients returned here are wrt the embeddings; the
trainer pulls them back through the encoders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NonFiniteLossError, ShapeMismatchError
from .memory import CenterBank, CrossModalQueue, masked_logits_batch, masked_negative_logits
from .numerics import softmax_cross_entropy_rows, softmax_cross_entropy_with_grad


@dataclass
class LossParts:
    """Component losses and their embedding gradients, before weighting."""

    l_tri: float
    l_v2t: float
    l_t2v: float
    l_c: float
    grad_tri_v: np.ndarray
    grad_tri_t: np.ndarray
    grad_v2t_v: np.ndarray
    grad_t2v_t: np.ndarray
    grad_c_t: np.ndarray


@dataclass
class LossReport:
    l_tri: float
    l_v2t: float
    l_t2v: float
    l_c: float
    total: float
    center_weight: float
    grads_v: np.ndarray = field(repr=False)
    grads_t: np.ndarray = field(repr=False)

    def scalars(self) -> dict[str, float]:
        return {
            "l_tri": self.l_tri,
            "l_v2t": self.l_v2t,
            "l_t2v": self.l_t2v,
            "l_c": self.l_c,
            "total": self.total,
        }


# ---------------------------------------------------------------------------
# Triplet ranking with in-batch hardest negatives
# ---------------------------------------------------------------------------
def triplet_ranking_loss(V, T, margin: float) -> tuple[float, np.ndarray, np.ndarray]:
    """
    Row i of V pairs with row i of T. For each anchor the hardest in-batch
    negative (highest similarity, ties -> lowest index) is used in each direction:
        loss = mean_i [ max(0, margin - s_ii + s_i,t-) + max(0, margin - s_ii + s_v-,i) ]
    Returns (loss, grad_V, grad_T).
    """
    V = np.asarray(V, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if V.ndim != 2 or V.shape != T.shape:
        raise ShapeMismatchError(f"V {V.shape} and T {T.shape} must be equal-shaped matrices")
    B = V.shape[0]
    if B < 2:
        raise InvalidArgumentError("triplet loss needs a batch of at least 2 pairs")

    S = V @ T.T
    pos = np.diag(S).copy()
    off = S.copy()
    np.fill_diagonal(off, -np.inf)
    neg_t = np.argmax(off, axis=1)  # hardest text for video i
    neg_v = np.argmax(off, axis=0)  # hardest video for text i
    rows = np.arange(B)

    h_v2t = margin - pos + off[rows, neg_t]
    h_t2v = margin - pos + off[neg_v, rows]
    act_v2t = h_v2t > 0
    act_t2v = h_t2v > 0
    loss = float((np.sum(h_v2t[act_v2t]) + np.sum(h_t2v[act_t2v])) / B)

    # dS[i, j] = d loss / d s_ij
    dS = np.zeros_like(S)
    a = act_v2t.astype(np.float64) / B
    b = act_t2v.astype(np.float64) / B
    dS[rows, rows] -= a + b
    np.add.at(dS, (rows, neg_t), a)
    np.add.at(dS, (neg_v, rows), b)

    grad_V = dS @ T
    grad_T = dS.T @ V
    return loss, grad_V, grad_T


# ---------------------------------------------------------------------------
# InfoNCE over a memory queue
# ---------------------------------------------------------------------------
def infonce_loss(
    query, positive_key, queue: CrossModalQueue, owner_id: int, tau: float
) -> tuple[float, np.ndarray]:
    """
    Softmax cross-entropy (label 0) over [q.k+ | q.queue] / tau with the
    query owner's queue entries masked. Gradient only wrt the query; the key
    and queue come from momentum encoders and are treated as constants.
    Passing the text queue gives L_v2t, the video queue gives L_t2v.
    """
    logits = masked_negative_logits(query, positive_key, queue, owner_id, tau)
    loss, g = softmax_cross_entropy_with_grad(logits.values, 0)
    k = np.asarray(positive_key, dtype=np.float64)
    grad_query = (g[0] * k + queue.embeddings.T @ g[1:]) / tau
    return loss, grad_query


def infonce_batch(
    Q, K_pos, queue: CrossModalQueue, owner_ids, tau: float
) -> tuple[float, np.ndarray]:
    """Mean of infonce_loss over the rows of Q; returns (loss, grad wrt Q)."""
    Q = np.asarray(Q, dtype=np.float64)
    K_pos = np.asarray(K_pos, dtype=np.float64)
    B = Q.shape[0]
    logits = masked_logits_batch(Q, K_pos, queue, owner_ids, tau)
    losses, G = softmax_cross_entropy_rows(logits.values, np.zeros(B, dtype=np.int64))
    grad_Q = (G[:, :1] * K_pos + G[:, 1:] @ queue.embeddings) / (tau * B)
    return float(losses.mean()), grad_Q


# ---------------------------------------------------------------------------
# Text center loss
# ---------------------------------------------------------------------------
def center_loss(T, labels, bank: CenterBank) -> tuple[float, np.ndarray]:
    """loss = 1/2 sum_i ||t_i - c_{y_i}||^2; grad wrt t_i = t_i - c_{y_i}."""
    T = np.asarray(T, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if T.ndim != 2 or y.shape != (T.shape[0],) or T.shape[1] != bank.centers.shape[1]:
        raise ShapeMismatchError(
            f"texts {T.shape} / labels {y.shape} vs centers {bank.centers.shape}"
        )
    if y.size and (y.min() < 0 or y.max() >= bank.class_count):
        raise InvalidArgumentError(f"label out of range [0, {bank.class_count})")
    diff = T - bank.centers[y]
    return 0.5 * float(np.sum(diff * diff)), diff


# ---------------------------------------------------------------------------
# Combination
# ---------------------------------------------------------------------------
def total_loss(parts: LossParts, center_weight: float) -> LossReport:
    """total = l_tri + l_v2t + l_t2v + alpha_c * l_c, gradients summed the same way."""
    comps = (parts.l_tri, parts.l_v2t, parts.l_t2v, parts.l_c)
    if not all(math.isfinite(c) for c in comps) or not math.isfinite(center_weight):
        raise NonFiniteLossError(f"non-finite loss component in {comps} (alpha_c={center_weight})")
    total = parts.l_tri + parts.l_v2t + parts.l_t2v + center_weight * parts.l_c
    return LossReport(
        l_tri=parts.l_tri,
        l_v2t=parts.l_v2t,
        l_t2v=parts.l_t2v,
        l_c=parts.l_c,
        total=total,
        center_weight=center_weight,
        grads_v=parts.grad_tri_v + parts.grad_v2t_v,
        grads_t=parts.grad_tri_t + parts.grad_t2v_t + center_weight * parts.grad_c_t,
    )
