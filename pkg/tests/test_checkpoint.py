"""
Binary checkpoints: exact round trip, resume equality and format errors.
"""

import struct

import numpy as np
import pytest

from meel.checkpoint import (
    MAGIC,
    checkpoint_bytes,
    load_checkpoint,
    save_checkpoint,
    state_from_bytes,
)
from meel.errors import CheckpointFormatError
from meel.trainer import fit, init_state, train_next


@pytest.fixture
def trained_state(small_dataset, small_train_cfg):
    state = init_state(small_dataset, small_train_cfg)
    for _ in range(7):
        train_next(state, small_dataset, small_train_cfg)
    return state


def _mid_epoch_state(dataset, cfg):
    # one fitted epoch (so best tracking has seen it) plus two steps of the next
    state = fit(dataset, cfg.model_copy(update={"epochs": 1})).final_state
    state.config = cfg
    for _ in range(2):
        train_next(state, dataset, cfg)
    return state


@pytest.mark.unit
class TestRoundTrip:
    """save -> load -> save reproduces the same bytes."""

    def test_bytes_stable(self, tmp_path, trained_state):
        path = save_checkpoint(trained_state, tmp_path / "run.ckpt")
        again = save_checkpoint(load_checkpoint(path), tmp_path / "again.ckpt")
        assert path.read_bytes() == again.read_bytes()
        assert path.read_bytes()[:8] == MAGIC

    def test_fields_restored(self, tmp_path, trained_state):
        back = load_checkpoint(save_checkpoint(trained_state, tmp_path / "run.ckpt"))
        assert back.config == trained_state.config
        assert (back.epoch, back.step, back.batch_cursor) == (2, 7, 2)
        np.testing.assert_array_equal(back.plan.labels, trained_state.plan.labels)
        np.testing.assert_array_equal(back.plan.captions, trained_state.plan.captions)
        np.testing.assert_array_equal(back.text_queue.owners, trained_state.text_queue.owners)
        assert back.text_queue.cursor == trained_state.text_queue.cursor
        assert back.stream.state == trained_state.stream.state

    def test_no_temp_files_left(self, tmp_path, trained_state):
        save_checkpoint(trained_state, tmp_path / "run.ckpt")
        save_checkpoint(trained_state, tmp_path / "run.ckpt")
        assert [p.name for p in tmp_path.iterdir()] == ["run.ckpt"]

    def test_creates_parent_directory(self, tmp_path, trained_state):
        path = save_checkpoint(trained_state, tmp_path / "nested" / "dir" / "run.ckpt")
        assert path.is_file()


@pytest.mark.unit
class TestResume:
    """Training continued from a loaded checkpoint matches an uninterrupted run."""

    def test_mid_epoch(self, tmp_path, small_dataset, small_train_cfg):
        straight = fit(small_dataset, small_train_cfg).final_state
        mid = _mid_epoch_state(small_dataset, small_train_cfg)
        path = save_checkpoint(mid, tmp_path / "mid.ckpt")
        resumed = fit(small_dataset, small_train_cfg, state=load_checkpoint(path)).final_state
        assert checkpoint_bytes(resumed) == checkpoint_bytes(straight)

    def test_next_step_identical(self, tmp_path, small_dataset, small_train_cfg):
        a = init_state(small_dataset, small_train_cfg)
        for _ in range(5):
            train_next(a, small_dataset, small_train_cfg)
        b = load_checkpoint(save_checkpoint(a, tmp_path / "five.ckpt"))
        ra = train_next(a, small_dataset, small_train_cfg)
        rb = train_next(b, small_dataset, small_train_cfg)
        assert ra.scalars() == rb.scalars()
        assert checkpoint_bytes(a) == checkpoint_bytes(b)

    def test_best_survives_resume(self, tmp_path, small_dataset, small_train_cfg):
        first = fit(small_dataset, small_train_cfg.model_copy(update={"epochs": 6}))
        path = save_checkpoint(first.state, tmp_path / "best.ckpt")
        longer = small_train_cfg.model_copy(update={"epochs": first.best_epoch + 2})
        extended = fit(small_dataset, longer, state=load_checkpoint(path))
        assert extended.best_rsum >= first.best_rsum
        assert extended.state.best_rsum == extended.best_rsum
        if extended.best_epoch == first.best_epoch:
            assert checkpoint_bytes(extended.state) == path.read_bytes()
        else:
            assert extended.best_epoch > first.best_epoch

    def test_best_fields_round_trip(self, tmp_path, small_dataset, small_train_cfg):
        result = fit(small_dataset, small_train_cfg)
        back = load_checkpoint(save_checkpoint(result.final_state, tmp_path / "end.ckpt"))
        assert back.best_epoch == result.best_epoch
        assert back.best_rsum == result.best_rsum == result.best_report.rsum

    def test_end_of_run_extends(self, tmp_path, small_dataset, small_train_cfg):
        short = fit(small_dataset, small_train_cfg).final_state
        longer_cfg = small_train_cfg.model_copy(update={"epochs": 4})
        loaded = load_checkpoint(save_checkpoint(short, tmp_path / "end.ckpt"))
        extended = fit(small_dataset, longer_cfg, state=loaded)
        assert [rec.epoch for rec in extended.history] == [4]
        assert extended.final_state.step == 20


@pytest.mark.unit
class TestFormatErrors:
    """Corrupt or foreign files are rejected with CheckpointFormatError."""

    def test_bad_magic(self, trained_state):
        blob = b"NOTACKPT" + checkpoint_bytes(trained_state)[8:]
        with pytest.raises(CheckpointFormatError, match="bad magic"):
            state_from_bytes(blob)

    def test_wrong_version(self, trained_state):
        blob = bytearray(checkpoint_bytes(trained_state))
        blob[8:12] = struct.pack("<I", 99)
        with pytest.raises(CheckpointFormatError, match="version"):
            state_from_bytes(bytes(blob))

    @pytest.mark.parametrize("cut", [1, 100, 5000])
    def test_truncated(self, trained_state, cut):
        blob = checkpoint_bytes(trained_state)
        with pytest.raises(CheckpointFormatError):
            state_from_bytes(blob[:-cut])

    def test_header_only(self):
        with pytest.raises(CheckpointFormatError):
            state_from_bytes(MAGIC)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_checkpoint(tmp_path / "absent.ckpt")
