"""
Install metadata: requirements.txt mirrors the pyproject dependency list.
"""

import re
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]


def _requirement_lines(text):
    return {line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")}


@pytest.mark.unit
class TestRequirements:
    """One version constraint per package."""

    def test_matches_pyproject(self):
        tomllib = pytest.importorskip("tomllib")
        project = tomllib.loads((ROOT / "pyproject.toml").read_text())["project"]
        pinned = _requirement_lines((ROOT / "requirements.txt").read_text())
        assert pinned == set(project["dependencies"])

    def test_no_exact_pins(self):
        pinned = _requirement_lines((ROOT / "requirements.txt").read_text())
        assert not [line for line in pinned if re.search(r"==", line)]
