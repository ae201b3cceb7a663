# meel/utils/logs.py
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import IO, Any

from ..config import settings


def setup_logging(level: str | None = None) -> None:
    """Human-readable logs go to stderr; stdout is reserved for JSON output."""
    level_name = (level or settings.LOG_LEVEL).strip().upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=settings.LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def _json_default(obj: Any):
    # numpy scalars and arrays sneak in from reductions
    if hasattr(obj, "tolist"):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps_record(record: dict[str, Any]) -> str:
    return json.dumps(record, separators=(",", ":"), default=_json_default)


class JsonlSink:
    """
    One compact JSON object per line. No timestamps, so identical runs write
    identical bytes. Opens lazily; `path=None` writes to `stream` (stdout).
    """

    def __init__(self, path: str | Path | None = None, stream: IO[str] | None = None):
        self.path = Path(path) if path is not None else None
        self._stream = stream
        self._fh: IO[str] | None = None

    def _handle(self) -> IO[str]:
        if self._fh is None:
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = self.path.open("w", encoding="utf-8", newline="\n")
            else:
                self._fh = self._stream or sys.stdout
        return self._fh

    def write(self, record: dict[str, Any]) -> None:
        fh = self._handle()
        fh.write(dumps_record(record) + "\n")

    def close(self) -> None:
        if self._fh is not None and self.path is not None:
            self._fh.close()
        self._fh = None

    def __enter__(self) -> JsonlSink:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class MemorySink:
    """Collects records in a list, for inspecting a run in-process."""

    def __init__(self) -> None:
        self.records: list[dict[str, Any]] = []

    def write(self, record: dict[str, Any]) -> None:
        self.records.append(dict(record))

    def close(self) -> None:
        pass
