# meel/encoder.py
"""
Two-branch MLP encoders over precomputed features.

Each branch is an ``EncoderPair``: a query copy trained by back-propagation
and a momentum copy that only moves through ``momentum_update`` /
``sync_k_from_q``. Every forward pass ends with an L2-normalize layer, so all
embeddings (queue contents, loss inputs, evaluation) are unit-norm and dot
products equal cosine similarities.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, ShapeMismatchError
from .numerics import PrngStream, l2_normalize_rows_with_grad

log = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "relu")


@dataclass
class MlpParams:
    """Layer i maps h -> act(h @ W_i.T + b_i); W_i is out x in. Last layer is linear."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatchError("weights and biases must be non-empty and of equal length")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ShapeMismatchError(f"layer {i}: weight {W.shape} / bias {b.shape}")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeMismatchError(
                    f"layer {i} input {W.shape[1]} != layer {i - 1} output "
                    f"{self.weights[i - 1].shape[0]}"
                )

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def depth(self) -> int:
        return len(self.weights)

    def tensors(self) -> Iterator[np.ndarray]:
        for W, b in zip(self.weights, self.biases):
            yield W
            yield b

    def shapes(self) -> list[tuple[int, ...]]:
        return [t.shape for t in self.tensors()]

    def copy(self) -> MlpParams:
        return MlpParams(
            [W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activation
        )

    def zeros_like(self) -> MlpParams:
        return MlpParams(
            [np.zeros_like(W) for W in self.weights],
            [np.zeros_like(b) for b in self.biases],
            self.activation,
        )

    def checksum(self) -> float:
        return float(sum(np.sum(t, dtype=np.float64) for t in self.tensors()))


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer (B x in_i)
    pre_activations: list[np.ndarray]  # h @ W.T + b per layer
    normalize_backward: object = field(repr=False)
    shapes: list[tuple[int, ...]] = field(default_factory=list)
    squeeze: bool = False


@dataclass
class EncoderPair:
    q_params: MlpParams
    k_params: MlpParams

    def __post_init__(self) -> None:
        if self.q_params.shapes() != self.k_params.shapes():
            raise ShapeMismatchError("query and momentum encoders must share shapes")

    @property
    def input_dim(self) -> int:
        return self.q_params.input_dim

    @property
    def output_dim(self) -> int:
        return self.q_params.output_dim

    @classmethod
    def create(
        cls,
        input_dim: int,
        hidden_dims: Sequence[int],
        d: int,
        stream: PrngStream,
        activation: str = "tanh",
    ) -> EncoderPair:
        q = init_params(input_dim, hidden_dims, d, stream, activation=activation)
        return cls(q_params=q, k_params=q.copy())

    def params(self, which: str) -> MlpParams:
        if which == "query":
            return self.q_params
        if which == "momentum":
            return self.k_params
        raise InvalidArgumentError(f"unknown encoder {which!r}")


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------
def init_params(
    input_dim: int,
    hidden_dims: Sequence[int],
    d: int,
    stream: PrngStream,
    activation: str = "tanh",
) -> MlpParams:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases."""
    dims = [int(input_dim), *(int(h) for h in hidden_dims), int(d)]
    if any(x <= 0 for x in dims):
        raise InvalidArgumentError(f"all dimensions must be > 0, got {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = stream.generator.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, activation)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------
def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0).astype(np.float64)


def forward(params: MlpParams, x) -> tuple[np.ndarray, ForwardCache]:
    """
    Encode one vector (shape [in]) or a batch (shape [B, in]).
    Returns unit-norm embeddings of matching rank and a cache for backward.
    """
    X = np.asarray(x, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeMismatchError(
            f"input dimension {X.shape[-1]} != encoder input_dim {params.input_dim}"
        )

    inputs, pre = [], []
    h = X
    last = params.depth - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ W.T + b
        pre.append(z)
        h = z if i == last else _act(params.activation, z)

    U, norm_backward = l2_normalize_rows_with_grad(h)
    cache = ForwardCache(inputs, pre, norm_backward, params.shapes(), squeeze)
    return (U[0] if squeeze else U), cache


def backward(
    params: MlpParams, cache: ForwardCache, grad_embedding
) -> tuple[MlpParams, np.ndarray]:
    """Gradients of <grad_embedding, embedding> wrt every weight, bias and the input."""
    if cache.shapes != params.shapes():
        raise ShapeMismatchError("cache was produced by parameters of a different shape")
    G = np.asarray(grad_embedding, dtype=np.float64)
    if cache.squeeze:
        G = G[None, :]
    expected = (cache.inputs[0].shape[0], params.output_dim)
    if G.shape != expected:
        raise ShapeMismatchError(f"grad_embedding shape {G.shape} != {expected}")

    grads = params.zeros_like()
    delta = cache.normalize_backward(G)
    last = params.depth - 1
    for i in range(last, -1, -1):
        if i != last:
            delta = delta * _act_grad(params.activation, cache.pre_activations[i])
        grads.weights[i] = delta.T @ cache.inputs[i]
        grads.biases[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i]

    grad_input = delta[0] if cache.squeeze else delta
    return grads, grad_input


def encode(params: MlpParams, x) -> np.ndarray:
    return forward(params, x)[0]


# ---------------------------------------------------------------------------
# Momentum encoder maintenance
# ---------------------------------------------------------------------------
def momentum_update(pair: EncoderPair, m: float) -> None:
    """theta_k <- m * theta_k + (1 - m) * theta_q, in place, every tensor."""
    if not 0.0 <= m < 1.0:
        raise InvalidArgumentError(f"momentum must lie in [0, 1), got {m}")
    for tk, tq in zip(pair.k_params.tensors(), pair.q_params.tensors()):
        tk *= m
        tk += (1.0 - m) * tq


def sync_k_from_q(pair: EncoderPair) -> None:
    for tk, tq in zip(pair.k_params.tensors(), pair.q_params.tensors()):
        np.copyto(tk, tq)
