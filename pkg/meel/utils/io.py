# meel/utils/io.py
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any


def write_bytes_atomic(path: str | Path, payload: bytes) -> Path:
    """Write into a temp file next to `path`, then swap it into place."""
    path = Path(path)
    dirpath = path.parent if str(path.parent) else Path(".")
    dirpath.mkdir(parents=True, exist_ok=True)

    with tempfile.NamedTemporaryFile(
        prefix=f".{path.name}.", suffix=".tmp", dir=dirpath, delete=False
    ) as tmp:
        tmp_path = tmp.name
        try:
            tmp.write(payload)
            tmp.flush()
            os.fsync(tmp.fileno())
        except BaseException:
            tmp.close()
            _silent_remove(tmp_path)
            raise

    try:
        # readers never see a half-written file
        os.replace(tmp_path, path)
    except BaseException:
        _silent_remove(tmp_path)
        raise
    return path


def write_json_atomic(path: str | Path, doc: Any) -> Path:
    text = json.dumps(doc, indent=2, sort_keys=False) + "\n"
    return write_bytes_atomic(path, text.encode("utf-8"))


def _silent_remove(path: str) -> None:
    try:
        os.remove(path)
    except OSError:
        pass
