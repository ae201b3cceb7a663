"""
Training loop: Adam, batch planning, the ordered train step and fit.
"""

import numpy as np
import pytest

from meel.checkpoint import checkpoint_bytes
from meel.config import SynthConfig, TrainConfig
from meel.data.synthetic import generate_synthetic
from meel.encoder import MlpParams, backward, encode, forward
from meel.errors import InvalidArgumentError, ShapeMismatchError
from meel.numerics import make_stream
from meel.objective import triplet_ranking_loss
from meel.trainer import (
    AdamState,
    adam_step,
    batch_from_plan,
    fit,
    init_state,
    plan_epoch,
    sample_minibatches,
    train_next,
    train_step,
)
from meel.utils.logs import MemorySink


def _scalar_params(value):
    return MlpParams([np.full((1, 1), float(value))], [np.zeros(1)])


def _with(cfg: TrainConfig, **updates) -> TrainConfig:
    return TrainConfig.model_validate({**cfg.model_dump(), **updates})


# -------------------------------------------------------------------------------------------------
# Adam
# -------------------------------------------------------------------------------------------------


@pytest.mark.unit
class TestAdam:
    """Bias-corrected Adam on MLP-shaped tensors."""

    @pytest.mark.parametrize("g", [3.0, -0.5])
    def test_first_step_is_lr_sign(self, g):
        params = _scalar_params(1.0)
        grads = _scalar_params(g)
        moments = AdamState.zeros_like(params)
        adam_step(params, grads, moments, 1e-3, (0.9, 0.999), 1e-8, 1)
        assert params.weights[0][0, 0] == pytest.approx(1.0 - 1e-3 * np.sign(g), abs=1e-6)

    def test_zero_gradients(self):
        params = _scalar_params(2.0)
        moments = AdamState.zeros_like(params)
        adam_step(params, params.zeros_like(), moments, 1e-2, (0.9, 0.999), 1e-8, 1)
        assert params.weights[0][0, 0] == 2.0

    def test_moments_decay_under_zero_gradients(self):
        params = _scalar_params(2.0)
        moments = AdamState.zeros_like(params)
        adam_step(params, _scalar_params(1.0), moments, 1e-2, (0.9, 0.999), 1e-8, 1)
        m1 = moments.m.weights[0][0, 0]
        adam_step(params, params.zeros_like(), moments, 1e-2, (0.9, 0.999), 1e-8, 2)
        assert moments.m.weights[0][0, 0] == pytest.approx(0.9 * m1)

    def test_quadratic_bowl(self):
        params = MlpParams([np.array([[3.0, -2.0]])], [np.array([1.5])])
        moments = AdamState.zeros_like(params)

        def objective():
            return sum(float(np.sum(t * t)) for t in params.tensors())

        values = [objective()]
        for t in range(1, 11):
            grads = MlpParams([2.0 * params.weights[0]], [2.0 * params.biases[0]])
            adam_step(params, grads, moments, 0.1, (0.9, 0.999), 1e-8, t)
            values.append(objective())
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_step_counter_starts_at_one(self):
        params = _scalar_params(1.0)
        with pytest.raises(InvalidArgumentError):
            adam_step(params, params, AdamState.zeros_like(params), 1e-3, (0.9, 0.999), 1e-8, 0)

    def test_shape_mismatch(self):
        params = _scalar_params(1.0)
        other = MlpParams([np.zeros((2, 1))], [np.zeros(2)])
        with pytest.raises(ShapeMismatchError):
            adam_step(params, other, AdamState.zeros_like(params), 1e-3, (0.9, 0.999), 1e-8, 1)


# -------------------------------------------------------------------------------------------------
# Batches
# -------------------------------------------------------------------------------------------------


@pytest.mark.unit
class TestSampling:
    """Epoch plans over the train split."""

    def test_batches_hold_distinct_videos(self, small_dataset):
        batches = sample_minibatches(small_dataset, 8, make_stream(0, "batches"))
        assert len(batches) == 5
        seen = np.concatenate([b.video_ids for b in batches])
        assert np.unique(seen).size == 40
        for b in batches:
            assert np.unique(b.video_ids).size == 8
            np.testing.assert_array_equal(small_dataset.caption_owner[b.caption_ids], b.video_ids)
            np.testing.assert_array_equal(small_dataset.splits["train"][b.labels], b.video_ids)

    def test_last_partial_batch_dropped(self, small_dataset):
        plan = plan_epoch(small_dataset, 16, make_stream(0, "batches"))
        assert plan.labels.shape == (2, 16)

    def test_caption_frequencies(self):
        ds = generate_synthetic(
            SynthConfig(n_videos=40, captions_per_video=5, video_dim=4, text_dim=4, seed=0,
                        split_counts=(40, 0, 0))
        )
        stream = make_stream(1, "batches")
        counts = np.zeros(5)
        for _ in range(500):
            plan = plan_epoch(ds, 8, stream)
            positions = plan.captions.ravel() - 5 * ds.caption_owner[plan.captions.ravel()]
            counts += np.bincount(positions, minlength=5)
        freq = counts / counts.sum()
        assert np.all(np.abs(freq - 0.2) <= 0.02)

    def test_same_seed_same_sequence(self, small_dataset):
        a = plan_epoch(small_dataset, 8, make_stream(3, "batches"))
        b = plan_epoch(small_dataset, 8, make_stream(3, "batches"))
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.captions, b.captions)

    def test_fewer_videos_than_batch(self, small_dataset):
        with pytest.raises(InvalidArgumentError):
            plan_epoch(small_dataset, 64, make_stream(0))


# -------------------------------------------------------------------------------------------------
# Train step
# -------------------------------------------------------------------------------------------------


def _first_batch(state, dataset, cfg):
    plan = plan_epoch(dataset, cfg.batch_size, state.stream)
    return batch_from_plan(dataset, plan, 0, state.train_videos)


@pytest.mark.unit
class TestTrainStep:
    """Ordered step: forward, losses, Adam, momentum, enqueue, centers."""

    def test_total_equals_components(self, small_dataset, small_train_cfg):
        state = init_state(small_dataset, small_train_cfg)
        for _ in range(6):
            r = train_next(state, small_dataset, small_train_cfg)
            expected = r.l_tri + r.l_v2t + r.l_t2v + small_train_cfg.center_weight * r.l_c
            assert r.total == pytest.approx(expected, abs=1e-9)
            assert min(r.l_tri, r.l_v2t, r.l_t2v, r.l_c) >= 0.0
        assert state.step == 6

    def test_determinism(self, small_dataset, small_train_cfg):
        a = init_state(small_dataset, small_train_cfg)
        b = init_state(small_dataset, small_train_cfg)
        for _ in range(10):
            train_next(a, small_dataset, small_train_cfg)
            train_next(b, small_dataset, small_train_cfg)
        assert checkpoint_bytes(a) == checkpoint_bytes(b)

    def test_queues_receive_momentum_embeddings(self, small_dataset, small_train_cfg):
        state = init_state(small_dataset, small_train_cfg)
        batch = _first_batch(state, small_dataset, small_train_cfg)
        B = small_train_cfg.batch_size
        v_k = encode(state.video_encoder.k_params, batch.video_features)
        t_k = encode(state.text_encoder.k_params, batch.caption_features)
        v_before, _ = state.video_queue.ordered()
        t_before, _ = state.text_queue.ordered()

        train_step(state, batch, small_train_cfg)

        v_after, v_owners = state.video_queue.ordered()
        t_after, t_owners = state.text_queue.ordered()
        np.testing.assert_array_equal(v_after, np.vstack([v_before[B:], v_k]))
        np.testing.assert_array_equal(t_after, np.vstack([t_before[B:], t_k]))
        np.testing.assert_array_equal(v_owners[-B:], batch.video_ids)
        np.testing.assert_array_equal(t_owners[-B:], batch.video_ids)

    def test_momentum_encoder_moves_only_by_ema(self, small_dataset, small_train_cfg):
        state = init_state(small_dataset, small_train_cfg)
        batch = _first_batch(state, small_dataset, small_train_cfg)
        k_before = state.video_encoder.k_params.copy()
        train_step(state, batch, small_train_cfg)
        m = small_train_cfg.momentum_at(1)
        for tk, tk0, tq in zip(
            state.video_encoder.k_params.tensors(),
            k_before.tensors(),
            state.video_encoder.q_params.tensors(),
        ):
            np.testing.assert_allclose(tk, m * tk0 + (1.0 - m) * tq, rtol=1e-12, atol=1e-15)

    def test_no_momentum_syncs(self, small_dataset, small_train_cfg):
        cfg = _with(small_train_cfg, use_momentum=False)
        state = init_state(small_dataset, cfg)
        for _ in range(3):
            train_next(state, small_dataset, cfg)
        for pair in (state.video_encoder, state.text_encoder):
            for tk, tq in zip(pair.k_params.tensors(), pair.q_params.tensors()):
                np.testing.assert_array_equal(tk, tq)

    def test_triplet_only_matches_reference_step(self, small_dataset, small_train_cfg):
        cfg = _with(small_train_cfg, use_infonce=False, use_center=False)
        state = init_state(small_dataset, cfg)
        batch = _first_batch(state, small_dataset, cfg)
        centers_before = state.center_bank.centers.copy()

        ref_v = state.video_encoder.q_params.copy()
        ref_t = state.text_encoder.q_params.copy()
        V, v_cache = forward(ref_v, batch.video_features)
        T, t_cache = forward(ref_t, batch.caption_features)
        l_tri, gV, gT = triplet_ranking_loss(V, T, cfg.margin)
        grads_v, _ = backward(ref_v, v_cache, gV)
        grads_t, _ = backward(ref_t, t_cache, gT)
        adam_step(ref_v, grads_v, AdamState.zeros_like(ref_v), cfg.learning_rate,
                  cfg.adam_betas, cfg.adam_eps, 1)
        adam_step(ref_t, grads_t, AdamState.zeros_like(ref_t), cfg.learning_rate,
                  cfg.adam_betas, cfg.adam_eps, 1)

        report = train_step(state, batch, cfg)
        assert report.l_v2t == 0.0 and report.l_t2v == 0.0
        assert report.l_c > 0.0
        assert report.total == report.l_tri == pytest.approx(l_tri, abs=1e-15)
        for got, want in zip(state.video_encoder.q_params.tensors(), ref_v.tensors()):
            np.testing.assert_array_equal(got, want)
        for got, want in zip(state.text_encoder.q_params.tensors(), ref_t.tensors()):
            np.testing.assert_array_equal(got, want)
        np.testing.assert_array_equal(state.center_bank.centers, centers_before)

    def test_centers_move_when_enabled(self, small_dataset, small_train_cfg):
        state = init_state(small_dataset, small_train_cfg)
        batch = _first_batch(state, small_dataset, small_train_cfg)
        before = state.center_bank.centers.copy()
        train_step(state, batch, small_train_cfg)
        moved = np.any(state.center_bank.centers != before, axis=1)
        np.testing.assert_array_equal(np.flatnonzero(moved), np.sort(batch.labels))

    def test_plan_advances_across_epochs(self, small_dataset, small_train_cfg):
        state = init_state(small_dataset, small_train_cfg)
        for _ in range(5):
            train_next(state, small_dataset, small_train_cfg)
        assert state.epoch == 1 and state.epoch_finished
        train_next(state, small_dataset, small_train_cfg)
        assert state.epoch == 2 and state.plan_epoch == 2 and state.batch_cursor == 1


# -------------------------------------------------------------------------------------------------
# Fit
# -------------------------------------------------------------------------------------------------


class TestFit:
    """Epoch loop, momentum schedule and best-state selection."""

    @pytest.mark.unit
    def test_momentum_per_epoch(self, small_dataset, small_train_cfg):
        sink = MemorySink()
        fit(small_dataset, small_train_cfg, sink=sink)
        steps = [r for r in sink.records if r["event"] == "step"]
        assert len(steps) == 15
        by_epoch = {e: {r["m"] for r in steps if r["epoch"] == e} for e in (1, 2, 3)}
        assert by_epoch == {1: {0.99}, 2: {0.99}, 3: {0.999}}
        ms = [r["m"] for r in steps]
        assert ms == sorted(ms)

    @pytest.mark.unit
    def test_log_records(self, small_dataset, small_train_cfg):
        sink = MemorySink()
        result = fit(small_dataset, small_train_cfg, sink=sink)
        step = next(r for r in sink.records if r["event"] == "step")
        keys = ["event", "step", "epoch", "l_tri", "l_v2t", "l_t2v", "l_c", "total", "m"]
        assert list(step) == keys
        epochs = [r for r in sink.records if r["event"] == "epoch"]
        assert [r["epoch"] for r in epochs] == [1, 2, 3]
        assert epochs[-1]["best_epoch"] == result.best_epoch
        assert set(epochs[0]["val"]) == {"t2v", "v2t", "rsum"}

    @pytest.mark.unit
    def test_best_epoch_is_first_max(self, small_dataset, small_train_cfg):
        result = fit(small_dataset, small_train_cfg)
        rsums = [rec.val.rsum for rec in result.history]
        assert result.best_epoch == 1 + int(np.argmax(rsums))
        assert result.best_report.rsum == max(rsums)
        assert result.final_state.epoch == 4

    @pytest.mark.unit
    def test_empty_validation_keeps_last_epoch(self, small_train_cfg):
        ds = generate_synthetic(
            SynthConfig(n_videos=40, video_dim=6, text_dim=5, seed=0, split_counts=(32, 0, 8))
        )
        result = fit(ds, _with(small_train_cfg, epochs=2))
        assert result.best_epoch == 2
        assert result.best_report is None
        assert result.state.epoch == 2 and result.final_state.epoch == 3
        assert result.state.step == result.final_state.step == 8

    @pytest.mark.slow
    def test_training_loss_decreases(self):
        ds = generate_synthetic(
            SynthConfig(n_videos=80, captions_per_video=3, latent_dim=8, video_dim=12,
                        text_dim=10, seed=6, split_counts=(64, 8, 8))
        )
        cfg = TrainConfig(
            d=16,
            hidden_dims=(32,),
            batch_size=8,
            queue_size=32,
            epochs=5,
            learning_rate=3e-3,
            use_infonce=False,
            use_center=False,
        )
        history = fit(ds, cfg).history
        assert history[-1].mean_losses["total"] < history[0].mean_losses["total"]

    @pytest.mark.unit
    def test_resume_mid_epoch_matches_straight_run(self, small_dataset, small_train_cfg):
        straight = fit(small_dataset, small_train_cfg).final_state

        # one fitted epoch, then two steps into the next
        partial = fit(small_dataset, _with(small_train_cfg, epochs=1)).final_state
        partial.config = small_train_cfg
        for _ in range(2):
            train_next(partial, small_dataset, small_train_cfg)
        resumed = fit(small_dataset, small_train_cfg, state=partial).final_state
        assert checkpoint_bytes(resumed) == checkpoint_bytes(straight)

    @pytest.mark.unit
    def test_resume_from_best_keeps_it_when_nothing_improves(
        self, small_dataset, small_train_cfg
    ):
        result = fit(small_dataset, small_train_cfg)
        best = result.state.copy()
        best.best_rsum = 600.0
        snapshot = checkpoint_bytes(best)
        extended = fit(small_dataset, _with(small_train_cfg, epochs=best.epoch + 2), state=best)
        assert [rec.epoch for rec in extended.history] == [best.epoch + 1, best.epoch + 2]
        assert extended.best_epoch == result.best_epoch
        assert extended.best_rsum == 600.0
        assert checkpoint_bytes(extended.state) == snapshot
        assert extended.best_report is None

    @pytest.mark.unit
    def test_resume_from_final_state_warns_without_improvement(
        self, small_dataset, small_train_cfg, caplog
    ):
        result = fit(small_dataset, small_train_cfg)
        final = result.final_state
        final.best_rsum = 600.0
        with caplog.at_level("WARNING", logger="meel.trainer"):
            extended = fit(small_dataset, _with(small_train_cfg, epochs=4), state=final)
        assert "No epoch beat the resumed best" in caplog.text
        assert extended.best_epoch == result.best_epoch
        assert extended.state.epoch == 5

    @pytest.mark.unit
    def test_resume_must_beat_earlier_best(self, small_dataset, small_train_cfg):
        first = fit(small_dataset, small_train_cfg)
        extended = fit(small_dataset, _with(small_train_cfg, epochs=5), state=first.state.copy())
        assert extended.best_rsum >= first.best_rsum
        for rec in extended.history:
            if rec.epoch == extended.best_epoch:
                assert rec.val.rsum > first.best_rsum
