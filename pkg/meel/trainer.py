# meel/trainer.py
"""
Training loop for the memory-enhanced dual encoder.

One ``train_step`` runs, in this order:
  1. query-encoder forward for both modalities
  2. momentum-encoder forward for both modalities (no cache kept)
  3. InfoNCE against the opposite-modality queue (positive = momentum key)
  4. triplet ranking loss on the query embeddings
  5. center loss on the query text embeddings
  6. back-propagation of the weighted total into the query encoders
  7. Adam step on the query parameters
  8. momentum update of the momentum encoders (or a hard sync in the
     no-momentum ablation)
  9. enqueue the momentum embeddings into both queues
 10. mini-batch update of the text centers
"""

from __future__ import annotations

import copy
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from .config import TrainConfig, settings
from .data.dataset import Dataset
from .encoder import (
    EncoderPair,
    MlpParams,
    backward,
    encode,
    forward,
    momentum_update,
    sync_k_from_q,
)
from .errors import InvalidArgumentError, ShapeMismatchError
from .evaluation import RetrievalReport, evaluate
from .memory import (
    CenterBank,
    CrossModalQueue,
    center_bank_init,
    enqueue_dequeue,
    queue_init,
    update_centers,
)
from .numerics import PrngStream, make_stream
from .objective import (
    LossParts,
    LossReport,
    center_loss,
    infonce_batch,
    total_loss,
    triplet_ranking_loss,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------
@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams

    @classmethod
    def zeros_like(cls, params: MlpParams) -> AdamState:
        return cls(params.zeros_like(), params.zeros_like())


def adam_step(
    params: MlpParams,
    grads: MlpParams,
    moments: AdamState,
    lr: float,
    betas: tuple[float, float],
    eps: float,
    t: int,
) -> None:
    """Bias-corrected Adam, in place on `params` and `moments`. t is 1-based."""
    if t < 1:
        raise InvalidArgumentError(f"Adam step counter must be >= 1, got {t}")
    if not (params.shapes() == grads.shapes() == moments.m.shapes() == moments.v.shapes()):
        raise ShapeMismatchError("Adam: params, grads and moments differ in shape")
    b1, b2 = betas
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(
        params.tensors(), grads.tensors(), moments.m.tensors(), moments.v.tensors()
    ):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------
@dataclass
class Batch:
    labels: np.ndarray  # class y = position in the train split
    video_ids: np.ndarray  # dataset video index (queue owner id)
    caption_ids: np.ndarray
    video_features: np.ndarray
    caption_features: np.ndarray

    @property
    def size(self) -> int:
        return self.labels.size


@dataclass
class EpochPlan:
    labels: np.ndarray  # n_batches x B
    captions: np.ndarray  # n_batches x B

    @property
    def n_batches(self) -> int:
        return self.labels.shape[0]


def plan_epoch(dataset: Dataset, B: int, stream: PrngStream) -> EpochPlan:
    """
    Random permutation of the train videos cut into batches of B (last partial
    batch dropped); one caption per video drawn uniformly from its caption set.
    """
    train = dataset.require_split("train")
    if train.size < B:
        raise InvalidArgumentError(f"train split has {train.size} videos, fewer than B={B}")
    gen = stream.generator
    n_batches = train.size // B
    order = gen.permutation(train.size)[: n_batches * B]
    counts = np.array([dataset.captions_by_video[v].size for v in train[order]])
    picks = gen.integers(0, counts)
    captions = np.array(
        [dataset.captions_by_video[v][k] for v, k in zip(train[order], picks)], dtype=np.int64
    )
    return EpochPlan(order.reshape(n_batches, B), captions.reshape(n_batches, B))


def batch_from_plan(dataset: Dataset, plan: EpochPlan, index: int, train: np.ndarray) -> Batch:
    labels = plan.labels[index]
    video_ids = train[labels]
    caption_ids = plan.captions[index]
    return Batch(
        labels=labels,
        video_ids=video_ids,
        caption_ids=caption_ids,
        video_features=dataset.video_features[video_ids],
        caption_features=dataset.caption_features[caption_ids],
    )


def sample_minibatches(dataset: Dataset, B: int, stream: PrngStream) -> list[Batch]:
    """One epoch of batches: B distinct videos each, one caption per video."""
    train = dataset.require_split("train")
    plan = plan_epoch(dataset, B, stream)
    return [batch_from_plan(dataset, plan, i, train) for i in range(plan.n_batches)]


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------
@dataclass
class TrainState:
    config: TrainConfig
    video_encoder: EncoderPair
    text_encoder: EncoderPair
    video_queue: CrossModalQueue
    text_queue: CrossModalQueue
    center_bank: CenterBank
    video_adam: AdamState
    text_adam: AdamState
    stream: PrngStream  # batch sampling
    train_videos: np.ndarray  # class y -> dataset video index
    epoch: int = 1
    step: int = 0
    plan_epoch: int = 0  # epoch the current plan belongs to (0 = none drawn)
    plan: EpochPlan = field(
        default_factory=lambda: EpochPlan(np.zeros((0, 0), np.int64), np.zeros((0, 0), np.int64))
    )
    batch_cursor: int = 0
    # best validation RSum seen so far and the epoch it came from (0 = none yet)
    best_rsum: float = -math.inf
    best_epoch: int = 0

    def copy(self) -> TrainState:
        return copy.deepcopy(self)

    @property
    def epoch_finished(self) -> bool:
        return self.plan_epoch == self.epoch and self.batch_cursor >= self.plan.n_batches


def init_state(dataset: Dataset, config: TrainConfig) -> TrainState:
    train = dataset.require_split("train")
    if train.size < config.batch_size:
        raise InvalidArgumentError(
            f"train split has {train.size} videos, fewer than batch_size={config.batch_size}"
        )
    seed = config.seed
    video = EncoderPair.create(
        dataset.video_dim,
        config.hidden_dims,
        config.d,
        make_stream(seed, "video_encoder"),
        activation=config.activation,
    )
    text = EncoderPair.create(
        dataset.text_dim,
        config.hidden_dims,
        config.d,
        make_stream(seed, "text_encoder"),
        activation=config.activation,
    )
    return TrainState(
        config=config,
        video_encoder=video,
        text_encoder=text,
        video_queue=queue_init(config.queue_size, config.d, make_stream(seed, "video_queue")),
        text_queue=queue_init(config.queue_size, config.d, make_stream(seed, "text_queue")),
        center_bank=center_bank_init(
            train.size, config.d, make_stream(seed, "centers"), config.center_init_std
        ),
        video_adam=AdamState.zeros_like(video.q_params),
        text_adam=AdamState.zeros_like(text.q_params),
        stream=make_stream(seed, "batches"),
        train_videos=train.copy(),
    )


# ---------------------------------------------------------------------------
# One step
# ---------------------------------------------------------------------------
def train_step(state: TrainState, batch: Batch, config: TrainConfig) -> LossReport:
    B, d = batch.size, config.d
    m = config.momentum_at(state.epoch)

    # (1) query encoders, caches kept for backprop
    v_q, v_cache = forward(state.video_encoder.q_params, batch.video_features)
    t_q, t_cache = forward(state.text_encoder.q_params, batch.caption_features)

    # (2) momentum encoders, constants for this step
    v_k = encode(state.video_encoder.k_params, batch.video_features)
    t_k = encode(state.text_encoder.k_params, batch.caption_features)

    # (3) cross-modal memory losses
    if config.use_infonce:
        l_v2t, g_v2t = infonce_batch(
            v_q, t_k, state.text_queue, batch.video_ids, config.temperature
        )
        l_t2v, g_t2v = infonce_batch(
            t_q, v_k, state.video_queue, batch.video_ids, config.temperature
        )
    else:
        l_v2t, g_v2t = 0.0, np.zeros((B, d))
        l_t2v, g_t2v = 0.0, np.zeros((B, d))

    # (4) in-batch triplet ranking
    l_tri, g_tri_v, g_tri_t = triplet_ranking_loss(v_q, t_q, config.margin)

    # (5) text center loss
    l_c, g_c = center_loss(t_q, batch.labels, state.center_bank)

    report = total_loss(
        LossParts(l_tri, l_v2t, l_t2v, l_c, g_tri_v, g_tri_t, g_v2t, g_t2v, g_c),
        config.center_weight if config.use_center else 0.0,
    )

    # (6) backprop into the query encoders only
    grads_video, _ = backward(state.video_encoder.q_params, v_cache, report.grads_v)
    grads_text, _ = backward(state.text_encoder.q_params, t_cache, report.grads_t)

    # (7) Adam
    t = state.step + 1
    adam_args = (config.learning_rate, config.adam_betas, config.adam_eps, t)
    adam_step(state.video_encoder.q_params, grads_video, state.video_adam, *adam_args)
    adam_step(state.text_encoder.q_params, grads_text, state.text_adam, *adam_args)

    # (8) momentum encoders
    if config.use_momentum:
        momentum_update(state.video_encoder, m)
        momentum_update(state.text_encoder, m)
    else:
        sync_k_from_q(state.video_encoder)
        sync_k_from_q(state.text_encoder)

    # (9) queues take the momentum embeddings
    enqueue_dequeue(state.video_queue, v_k, batch.video_ids)
    enqueue_dequeue(state.text_queue, t_k, batch.video_ids)

    # (10) centers
    if config.use_center:
        update_centers(state.center_bank, t_q, batch.labels, config.center_step)

    state.step = t
    return report


def train_next(state: TrainState, dataset: Dataset, config: TrainConfig) -> LossReport:
    """Run train_step on the next planned batch, drawing a new epoch plan when needed."""
    if state.epoch_finished:
        state.epoch += 1
    if state.plan_epoch != state.epoch:
        state.plan = plan_epoch(dataset, config.batch_size, state.stream)
        state.plan_epoch = state.epoch
        state.batch_cursor = 0
    batch = batch_from_plan(dataset, state.plan, state.batch_cursor, state.train_videos)
    report = train_step(state, batch, config)
    state.batch_cursor += 1
    return report


def step_record(state: TrainState, report: LossReport, m: float) -> dict:
    return {
        "event": "step",
        "step": state.step,
        "epoch": state.epoch,
        **report.scalars(),
        "m": m,
    }


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------
@dataclass
class EpochRecord:
    epoch: int
    momentum: float
    mean_losses: dict[str, float]
    val: RetrievalReport | None

    def to_dict(self, best_epoch: int) -> dict:
        return {
            "event": "epoch",
            "epoch": self.epoch,
            "m": self.momentum,
            **{f"mean_{k}": v for k, v in self.mean_losses.items()},
            "val": self.val.to_dict() if self.val is not None else None,
            "best_epoch": best_epoch,
        }


@dataclass
class FitResult:
    state: TrainState  # best by validation RSum
    final_state: TrainState
    history: list[EpochRecord]
    best_epoch: int
    best_rsum: float = -math.inf

    @property
    def best_report(self) -> RetrievalReport | None:
        """Validation report of the best epoch; None if that epoch ran before a resume."""
        for rec in self.history:
            if rec.epoch == self.best_epoch:
                return rec.val
        return None


def fit(
    dataset: Dataset,
    config: TrainConfig,
    *,
    state: TrainState | None = None,
    sink=None,
    on_epoch: Callable[[TrainState, EpochRecord], None] | None = None,
) -> FitResult:
    """
    Train for config.epochs epochs, evaluating on the val split after each
    one with config.eval_encoder. Keeps a copy of the state with the highest
    validation RSum (earliest epoch wins ties). With an empty val split the
    last epoch is kept.

    A resumed state carries its best RSum forward, so later epochs must beat
    it. When the resumed state is itself that best epoch it stays the best
    candidate; otherwise, if nothing improves on it, the final state is
    returned with a warning.
    """
    state = state if state is not None else init_state(dataset, config)
    best_state: TrainState | None = None
    if state.best_epoch and state.best_epoch == state.epoch and state.epoch_finished:
        best_state = state.copy()
    if state.epoch_finished:
        # resumed from a state saved at the end of an epoch
        state.epoch += 1
    has_val = dataset.split_videos("val").size > 0
    if not has_val:
        log.warning("Validation split is empty; keeping the last epoch as the best state")

    history: list[EpochRecord] = []
    bar = tqdm(
        total=config.epochs,
        initial=state.epoch - 1,
        desc="epochs",
        disable=not settings.PROGRESS,
    )
    while state.epoch <= config.epochs:
        m = config.momentum_at(state.epoch)
        sums = {"l_tri": 0.0, "l_v2t": 0.0, "l_t2v": 0.0, "l_c": 0.0, "total": 0.0}
        n_steps = 0
        while not state.epoch_finished:
            report = train_next(state, dataset, config)
            for k, v in report.scalars().items():
                sums[k] += v
            n_steps += 1
            if sink is not None:
                sink.write(step_record(state, report, m))

        means = {k: v / max(n_steps, 1) for k, v in sums.items()}
        val = evaluate(state, dataset, "val", config.eval_encoder) if has_val else None
        if val is None or val.rsum > state.best_rsum:
            state.best_epoch = state.epoch
            if val is not None:
                state.best_rsum = val.rsum
            best_state = state.copy()

        record = EpochRecord(state.epoch, m, means, val)
        history.append(record)
        if sink is not None:
            sink.write(record.to_dict(state.best_epoch))
        log.info(
            "epoch %d/%d m=%.4f loss=%.4f val_rsum=%s best_epoch=%d",
            state.epoch,
            config.epochs,
            m,
            means["total"],
            f"{val.rsum:.2f}" if val is not None else "n/a",
            state.best_epoch,
        )
        if on_epoch is not None:
            on_epoch(state, record)
        state.epoch += 1
        bar.update(1)
    bar.close()

    if best_state is None:
        if state.best_epoch:
            log.warning(
                "No epoch beat the resumed best val RSum %.2f (epoch %d); "
                "returning the final state",
                state.best_rsum,
                state.best_epoch,
            )
        else:
            state.best_epoch = state.epoch - 1
        best_state = state.copy()
    return FitResult(
        state=best_state,
        final_state=state,
        history=history,
        best_epoch=state.best_epoch,
        best_rsum=state.best_rsum,
    )
