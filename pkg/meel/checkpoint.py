# meel/checkpoint.py
"""
Binary checkpoint of a full TrainState.

Layout (little-endian throughout):

    b"MEELCK01"   8 bytes magic
    u32           format version
    u64           payload length in bytes
    payload       sequence of records

Record: u16 key length, UTF-8 key, u8 tag, value. Tags:

    1  f64 scalar
    2  i64 scalar
    3  string         u32 length + UTF-8
    4  f64 array      u8 ndim, ndim x u32 dims, row-major data
    5  i64 array      same framing as tag 4
    6  u128 integer   16 bytes (PCG64 state words)

Records are written in a fixed order, so saving the same state twice yields
identical bytes.
"""

from __future__ import annotations

import logging
import struct
from collections.abc import Iterator
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from .config import TrainConfig
from .encoder import EncoderPair, MlpParams
from .errors import CheckpointFormatError, MeelError
from .memory import CenterBank, CrossModalQueue
from .numerics import PrngStream
from .trainer import AdamState, EpochPlan, TrainState
from .utils.io import write_bytes_atomic

log = logging.getLogger(__name__)

MAGIC = b"MEELCK01"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")

TAG_F64, TAG_I64, TAG_STR, TAG_F64_ARRAY, TAG_I64_ARRAY, TAG_U128 = 1, 2, 3, 4, 5, 6
_U128_MAX = (1 << 128) - 1


# ---------------------------------------------------------------------------
# Record encoding
# ---------------------------------------------------------------------------
class _Writer:
    def __init__(self) -> None:
        self.parts: list[bytes] = []

    def _key(self, key: str, tag: int) -> None:
        raw = key.encode("utf-8")
        self.parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", tag))

    def f64(self, key: str, value: float) -> None:
        self._key(key, TAG_F64)
        self.parts.append(struct.pack("<d", float(value)))

    def i64(self, key: str, value: int) -> None:
        self._key(key, TAG_I64)
        self.parts.append(struct.pack("<q", int(value)))

    def string(self, key: str, value: str) -> None:
        raw = value.encode("utf-8")
        self._key(key, TAG_STR)
        self.parts.append(struct.pack("<I", len(raw)) + raw)

    def array(self, key: str, value, integer: bool = False) -> None:
        arr = np.asarray(value, dtype="<i8" if integer else "<f8")
        self._key(key, TAG_I64_ARRAY if integer else TAG_F64_ARRAY)
        self.parts.append(struct.pack("<B", arr.ndim))
        self.parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        self.parts.append(np.ascontiguousarray(arr).tobytes())

    def u128(self, key: str, value: int) -> None:
        if not 0 <= value <= _U128_MAX:
            raise CheckpointFormatError(f"{key}: {value} does not fit in 128 bits")
        self._key(key, TAG_U128)
        self.parts.append(int(value).to_bytes(16, "little"))

    def payload(self) -> bytes:
        return b"".join(self.parts)


def _records(payload: bytes, source: str) -> Iterator[tuple[str, Any]]:
    pos, n = 0, len(payload)

    def take(size: int) -> bytes:
        nonlocal pos
        if pos + size > n:
            raise CheckpointFormatError(f"{source}: record runs past the end of the payload")
        chunk = payload[pos : pos + size]
        pos += size
        return chunk

    while pos < n:
        (klen,) = struct.unpack("<H", take(2))
        key = take(klen).decode("utf-8")
        (tag,) = struct.unpack("<B", take(1))
        if tag == TAG_F64:
            yield key, struct.unpack("<d", take(8))[0]
        elif tag == TAG_I64:
            yield key, struct.unpack("<q", take(8))[0]
        elif tag == TAG_STR:
            (slen,) = struct.unpack("<I", take(4))
            yield key, take(slen).decode("utf-8")
        elif tag in (TAG_F64_ARRAY, TAG_I64_ARRAY):
            (ndim,) = struct.unpack("<B", take(1))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            dtype = "<f8" if tag == TAG_F64_ARRAY else "<i8"
            count = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(take(8 * count), dtype=dtype).reshape(shape)
            yield key, data.astype(np.float64 if tag == TAG_F64_ARRAY else np.int64)
        elif tag == TAG_U128:
            yield key, int.from_bytes(take(16), "little")
        else:
            raise CheckpointFormatError(f"{source}: unknown record tag {tag} for key {key!r}")


# ---------------------------------------------------------------------------
# TrainState <-> records
# ---------------------------------------------------------------------------
def _write_config(w: _Writer, config: TrainConfig) -> None:
    for name, value in config.model_dump().items():
        key = f"config.{name}"
        if name == "momentum_schedule":
            w.array(f"{key}.start", [s for s, _ in value], integer=True)
            w.array(f"{key}.m", [m for _, m in value])
        elif isinstance(value, bool):
            w.i64(key, int(value))
        elif isinstance(value, int):
            w.i64(key, value)
        elif isinstance(value, float):
            w.f64(key, value)
        elif isinstance(value, str):
            w.string(key, value)
        elif isinstance(value, tuple):
            w.array(key, value, integer=all(isinstance(v, int) for v in value))
        else:
            raise CheckpointFormatError(f"cannot serialize config field {name!r}")


def _read_config(rec: dict[str, Any]) -> TrainConfig:
    raw: dict[str, Any] = {}
    for key, value in rec.items():
        if not key.startswith("config."):
            continue
        name = key[len("config.") :]
        if name.startswith("momentum_schedule."):
            continue
        raw[name] = tuple(value.tolist()) if isinstance(value, np.ndarray) else value
    starts = _get(rec, "config.momentum_schedule.start").tolist()
    values = _get(rec, "config.momentum_schedule.m").tolist()
    raw["momentum_schedule"] = tuple(zip(starts, values))
    for flag in ("use_infonce", "use_center", "use_momentum"):
        if flag in raw:
            raw[flag] = bool(raw[flag])
    try:
        return TrainConfig.model_validate(raw)
    except ValidationError as e:
        raise CheckpointFormatError(f"stored config is invalid: {e.errors()[0]['msg']}") from e


def _write_params(w: _Writer, prefix: str, params: MlpParams) -> None:
    w.i64(f"{prefix}.depth", params.depth)
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        w.array(f"{prefix}.W{i}", W)
        w.array(f"{prefix}.b{i}", b)


def _read_params(rec: dict[str, Any], prefix: str, activation: str) -> MlpParams:
    depth = int(_get(rec, f"{prefix}.depth"))
    weights = [_get(rec, f"{prefix}.W{i}") for i in range(depth)]
    biases = [_get(rec, f"{prefix}.b{i}") for i in range(depth)]
    return MlpParams(weights, biases, activation)


def _write_stream(w: _Writer, prefix: str, stream: PrngStream) -> None:
    st = stream.state
    if st.get("bit_generator") != "PCG64":
        raise CheckpointFormatError(f"unsupported bit generator {st.get('bit_generator')!r}")
    w.i64(f"{prefix}.seed", stream.seed)
    w.i64(f"{prefix}.tag", stream.tag)
    w.u128(f"{prefix}.state", st["state"]["state"])
    w.u128(f"{prefix}.inc", st["state"]["inc"])
    w.i64(f"{prefix}.has_uint32", st["has_uint32"])
    w.i64(f"{prefix}.uinteger", st["uinteger"])


def _read_stream(rec: dict[str, Any], prefix: str) -> PrngStream:
    stream = PrngStream(int(_get(rec, f"{prefix}.seed")), int(_get(rec, f"{prefix}.tag")))
    stream.state = {
        "bit_generator": "PCG64",
        "state": {"state": _get(rec, f"{prefix}.state"), "inc": _get(rec, f"{prefix}.inc")},
        "has_uint32": int(_get(rec, f"{prefix}.has_uint32")),
        "uinteger": int(_get(rec, f"{prefix}.uinteger")),
    }
    return stream


def _get(rec: dict[str, Any], key: str) -> Any:
    try:
        return rec[key]
    except KeyError:
        raise CheckpointFormatError(f"checkpoint is missing record {key!r}") from None


def checkpoint_bytes(state: TrainState) -> bytes:
    w = _Writer()
    _write_config(w, state.config)

    for modality, pair, adam in (
        ("video", state.video_encoder, state.video_adam),
        ("text", state.text_encoder, state.text_adam),
    ):
        _write_params(w, f"{modality}.q", pair.q_params)
        _write_params(w, f"{modality}.k", pair.k_params)
        _write_params(w, f"{modality}.adam_m", adam.m)
        _write_params(w, f"{modality}.adam_v", adam.v)

    for modality, queue in (("video", state.video_queue), ("text", state.text_queue)):
        w.array(f"{modality}_queue.embeddings", queue.embeddings)
        w.array(f"{modality}_queue.owners", queue.owners, integer=True)
        w.i64(f"{modality}_queue.cursor", queue.cursor)

    w.array("centers", state.center_bank.centers)
    w.array("train_videos", state.train_videos, integer=True)

    w.i64("epoch", state.epoch)
    w.i64("step", state.step)
    w.i64("plan_epoch", state.plan_epoch)
    w.i64("batch_cursor", state.batch_cursor)
    w.array("plan.labels", state.plan.labels, integer=True)
    w.array("plan.captions", state.plan.captions, integer=True)
    w.f64("best_rsum", state.best_rsum)
    w.i64("best_epoch", state.best_epoch)
    _write_stream(w, "stream", state.stream)

    payload = w.payload()
    return _HEADER.pack(MAGIC, VERSION, len(payload)) + payload


def state_from_bytes(blob: bytes, source: str = "<bytes>") -> TrainState:
    if len(blob) < _HEADER.size:
        raise CheckpointFormatError(f"{source}: file shorter than the checkpoint header")
    magic, version, length = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"{source}: unsupported checkpoint version {version}")
    payload = blob[_HEADER.size :]
    if len(payload) != length:
        raise CheckpointFormatError(
            f"{source}: payload length {len(payload)} != declared length {length}"
        )

    rec: dict[str, Any] = {}
    try:
        for key, value in _records(payload, source):
            if key in rec:
                raise CheckpointFormatError(f"{source}: duplicate record {key!r}")
            rec[key] = value
    except (struct.error, UnicodeDecodeError, ValueError) as e:
        if isinstance(e, CheckpointFormatError):
            raise
        raise CheckpointFormatError(f"{source}: malformed record ({e})") from e

    config = _read_config(rec)
    try:
        pairs, adams, queues = {}, {}, {}
        for modality in ("video", "text"):
            pairs[modality] = EncoderPair(
                _read_params(rec, f"{modality}.q", config.activation),
                _read_params(rec, f"{modality}.k", config.activation),
            )
            adams[modality] = AdamState(
                _read_params(rec, f"{modality}.adam_m", config.activation),
                _read_params(rec, f"{modality}.adam_v", config.activation),
            )
            if adams[modality].m.shapes() != pairs[modality].q_params.shapes():
                raise CheckpointFormatError(f"{source}: {modality} Adam moments mis-shaped")
            queues[modality] = CrossModalQueue(
                _get(rec, f"{modality}_queue.embeddings"),
                _get(rec, f"{modality}_queue.owners"),
                int(_get(rec, f"{modality}_queue.cursor")),
            )
        state = TrainState(
            config=config,
            video_encoder=pairs["video"],
            text_encoder=pairs["text"],
            video_queue=queues["video"],
            text_queue=queues["text"],
            center_bank=CenterBank(_get(rec, "centers")),
            video_adam=adams["video"],
            text_adam=adams["text"],
            stream=_read_stream(rec, "stream"),
            train_videos=_get(rec, "train_videos"),
            epoch=int(_get(rec, "epoch")),
            step=int(_get(rec, "step")),
            plan_epoch=int(_get(rec, "plan_epoch")),
            plan=EpochPlan(_get(rec, "plan.labels"), _get(rec, "plan.captions")),
            batch_cursor=int(_get(rec, "batch_cursor")),
            best_rsum=float(_get(rec, "best_rsum")),
            best_epoch=int(_get(rec, "best_epoch")),
        )
    except CheckpointFormatError:
        raise
    except MeelError as e:
        raise CheckpointFormatError(f"{source}: inconsistent shapes ({e})") from e

    if (
        state.video_encoder.output_dim != config.d
        or state.video_queue.dim != config.d
        or state.text_queue.dim != config.d
        or state.center_bank.centers.shape != (state.train_videos.size, config.d)
    ):
        raise CheckpointFormatError(f"{source}: stored tensors disagree with d={config.d}")
    return state


def save_checkpoint(state: TrainState, path: str | Path) -> Path:
    out = write_bytes_atomic(path, checkpoint_bytes(state))
    log.debug("Saved checkpoint %s (epoch=%d step=%d)", out, state.epoch, state.step)
    return out


def load_checkpoint(path: str | Path) -> TrainState:
    path = Path(path)
    state = state_from_bytes(path.read_bytes(), str(path))
    log.debug("Loaded checkpoint %s (epoch=%d step=%d)", path, state.epoch, state.step)
    return state
