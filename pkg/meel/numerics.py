# meel/numerics.py
"""
Low-level numeric kernel: normalization with gradients, cosine similarity,
masked softmax cross-entropy with gradients and the seeded random streams.

Conventions
-----------
- Vectors are 1-D float64 numpy arrays, matrices 2-D float64 arrays (row-major).
- Masked logits carry ``-inf`` and are excluded from the partition sum; they
  always receive exactly zero gradient.
- Randomness comes from ``numpy.random.Generator`` over ``PCG64`` seeded with
  ``SeedSequence([seed, tag])``. The same (seed, tag) pair gives the same
  stream on every platform for a given numpy release.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError, ShapeMismatchError

EPS_NORM = 1e-12
MASKED = -np.inf

_U64 = (1 << 64) - 1

# purpose tags for independent sub-streams of one run seed
STREAM_TAGS = {
    "video_encoder": 1,
    "text_encoder": 2,
    "video_queue": 3,
    "text_queue": 4,
    "centers": 5,
    "batches": 6,
    "synthetic": 7,
}


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------
@dataclass
class PrngStream:
    seed: int
    tag: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        seq = np.random.SeedSequence([self.seed & _U64, self.tag & _U64])
        self.generator = np.random.Generator(np.random.PCG64(seq))

    @property
    def state(self) -> dict[str, Any]:
        return self.generator.bit_generator.state

    @state.setter
    def state(self, value: dict[str, Any]) -> None:
        self.generator.bit_generator.state = value

    def copy(self) -> PrngStream:
        other = PrngStream(self.seed, self.tag)
        other.state = self.state
        return other


def make_stream(seed: int, purpose: str | int = 0) -> PrngStream:
    tag = STREAM_TAGS[purpose] if isinstance(purpose, str) else int(purpose)
    return PrngStream(int(seed), tag)


def prng_gaussian(stream: PrngStream, n: int) -> np.ndarray:
    """n standard-normal samples; advances the stream."""
    if n < 0:
        raise InvalidArgumentError(f"sample count must be >= 0, got {n}")
    return stream.generator.standard_normal(n)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------
def _as_vector(x, name: str = "x") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ShapeMismatchError(f"{name} must be a non-empty vector, got shape {v.shape}")
    return v


def l2_normalize_with_grad(
    x,
) -> tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
    """
    Return (u, backward) with u = x / ||x||. ``backward(g)`` applies the
    Jacobian (I - u u^T) / ||x|| to an output gradient g.
    """
    v = _as_vector(x)
    norm = float(np.linalg.norm(v))
    if not norm > EPS_NORM:
        raise DegenerateInputError(f"cannot normalize vector with norm {norm:.3e}")
    unit = v / norm

    def backward(grad_unit: np.ndarray) -> np.ndarray:
        g = np.asarray(grad_unit, dtype=np.float64)
        if g.shape != unit.shape:
            raise ShapeMismatchError(f"gradient shape {g.shape} != {unit.shape}")
        return (g - unit * float(unit @ g)) / norm

    return unit, backward


def l2_normalize(x) -> np.ndarray:
    return l2_normalize_with_grad(x)[0]


def l2_normalize_rows_with_grad(
    X,
) -> tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
    """Row-wise version of l2_normalize_with_grad for B x d matrices."""
    M = np.asarray(X, dtype=np.float64)
    if M.ndim != 2:
        raise ShapeMismatchError(f"expected a matrix, got shape {M.shape}")
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    if M.shape[0] and not np.all(norms > EPS_NORM):
        bad = int(np.argmin(norms))
        raise DegenerateInputError(
            f"cannot normalize row {bad} with norm {float(norms[bad, 0]):.3e}"
        )
    U = M / norms

    def backward(grad_unit: np.ndarray) -> np.ndarray:
        G = np.asarray(grad_unit, dtype=np.float64)
        if G.shape != U.shape:
            raise ShapeMismatchError(f"gradient shape {G.shape} != {U.shape}")
        return (G - U * np.sum(U * G, axis=1, keepdims=True)) / norms

    return U, backward


def l2_normalize_rows(X) -> np.ndarray:
    return l2_normalize_rows_with_grad(X)[0]


# ---------------------------------------------------------------------------
# Similarity
# ---------------------------------------------------------------------------
def cosine_similarity(a, b) -> float:
    u = _as_vector(a, "a")
    v = _as_vector(b, "b")
    if u.shape != v.shape:
        raise ShapeMismatchError(f"length mismatch: {u.size} vs {v.size}")
    na = float(np.linalg.norm(u))
    nb = float(np.linalg.norm(v))
    if not (na > EPS_NORM and nb > EPS_NORM):
        raise DegenerateInputError(f"degenerate norm ({na:.3e}, {nb:.3e})")
    value = float(u @ v) / (na * nb)
    return float(np.clip(value, -1.0, 1.0))


def similarity_matrix(A, B) -> np.ndarray:
    """Cosine similarity of every row of A (p x d) with every row of B (q x d)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2:
        raise ShapeMismatchError(f"expected matrices, got {A.shape} and {B.shape}")
    if A.shape[1] != B.shape[1]:
        raise ShapeMismatchError(f"inner dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    S = l2_normalize_rows(A) @ l2_normalize_rows(B).T
    return np.clip(S, -1.0, 1.0)


# ---------------------------------------------------------------------------
# Softmax cross-entropy
# ---------------------------------------------------------------------------
def softmax_cross_entropy_with_grad(logits, label: int) -> tuple[float, np.ndarray]:
    """
    loss = -log softmax(logits)[label]; grad = softmax(logits) - onehot(label).
    Entries equal to -inf are masked: excluded from the partition sum, zero grad.
    """
    z = _as_vector(logits, "logits")
    n = z.size
    if not 0 <= label < n:
        raise InvalidArgumentError(f"label {label} out of range [0, {n})")
    masked = np.isneginf(z)
    if not np.all(np.isfinite(z) | masked):
        raise InvalidArgumentError("logits must be finite or -inf (masked)")
    if masked[label]:
        raise InvalidArgumentError(f"label position {label} is masked")

    live = ~masked
    zmax = float(np.max(z[live]))
    shifted = np.where(live, z - zmax, 0.0)
    expz = np.where(live, np.exp(shifted), 0.0)
    total = float(np.sum(expz))
    log_total = np.log(total)

    loss = max(float(log_total - shifted[label]), 0.0)
    grad = expz / total
    grad[label] -= 1.0
    grad[masked] = 0.0
    return loss, grad


def softmax_cross_entropy_rows(
    logits, labels
) -> tuple[np.ndarray, np.ndarray]:
    """
    Row-wise softmax cross-entropy. Returns (per-row losses, per-row grads).
    Same masking rules as softmax_cross_entropy_with_grad.
    """
    Z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if Z.ndim != 2 or y.shape != (Z.shape[0],):
        raise ShapeMismatchError(f"logits {Z.shape} and labels {y.shape} do not match")
    rows = np.arange(Z.shape[0])
    if np.any((y < 0) | (y >= Z.shape[1])):
        raise InvalidArgumentError("label out of range")
    masked = np.isneginf(Z)
    if not np.all(np.isfinite(Z) | masked):
        raise InvalidArgumentError("logits must be finite or -inf (masked)")
    if np.any(masked[rows, y]):
        raise InvalidArgumentError("label position is masked")

    live = ~masked
    zmax = np.max(np.where(live, Z, -np.inf), axis=1, keepdims=True)
    shifted = np.where(live, Z - zmax, 0.0)
    expz = np.where(live, np.exp(shifted), 0.0)
    totals = np.sum(expz, axis=1, keepdims=True)

    losses = np.maximum(np.log(totals[:, 0]) - shifted[rows, y], 0.0)
    grads = expz / totals
    grads[rows, y] -= 1.0
    grads[masked] = 0.0
    return losses, grads
