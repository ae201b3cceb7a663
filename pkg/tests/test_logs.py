"""
Run-log sinks.
"""

import io
import json

import numpy as np
import pytest

from meel.utils.logs import JsonlSink, MemorySink, dumps_record


@pytest.mark.unit
class TestDumpsRecord:
    """Compact JSON with numpy values unwrapped."""

    def test_compact(self):
        assert dumps_record({"event": "step", "step": 1}) == '{"event":"step","step":1}'

    def test_numpy_values(self):
        doc = json.loads(dumps_record({"m": np.float64(0.5), "ids": np.arange(3)}))
        assert doc == {"m": 0.5, "ids": [0, 1, 2]}

    def test_unserializable(self):
        with pytest.raises(TypeError):
            dumps_record({"x": object()})


@pytest.mark.unit
class TestJsonlSink:
    """One object per line."""

    def test_file_is_created_lazily(self, tmp_path):
        path = tmp_path / "logs" / "run.jsonl"
        sink = JsonlSink(path)
        assert not path.exists()
        with sink:
            sink.write({"event": "config"})
            sink.write({"event": "epoch", "epoch": 1})
        lines = path.read_text().splitlines()
        assert [json.loads(line)["event"] for line in lines] == ["config", "epoch"]

    def test_stream(self):
        buf = io.StringIO()
        sink = JsonlSink(stream=buf)
        sink.write({"a": 1})
        sink.close()
        assert buf.getvalue() == '{"a":1}\n'
        assert not buf.closed


@pytest.mark.unit
class TestMemorySink:
    """In-process record list."""

    def test_records_are_copies(self):
        sink = MemorySink()
        record = {"event": "step", "step": 1}
        sink.write(record)
        record["step"] = 2
        sink.close()
        assert sink.records == [{"event": "step", "step": 1}]

    def test_no_file_output(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        sink = MemorySink()
        sink.write({"event": "config"})
        sink.close()
        assert list(tmp_path.iterdir()) == []
