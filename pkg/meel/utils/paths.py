# meel/utils/paths.py
from __future__ import annotations

import os
from functools import lru_cache
from pathlib import Path

# Files/folders that live at the meel repo root
_MARKERS = ("pyproject.toml", "meel", "tools")


@lru_cache(maxsize=1)
def get_project_root(start: str | Path | None = None) -> Path:
    # MEEL_PROJECT_ROOT wins (CI, containers)
    if env := os.getenv("MEEL_PROJECT_ROOT"):
        return Path(env).resolve()

    here = Path(start or __file__).resolve()
    for p in (here, *here.parents):
        if all((p / m).exists() for m in _MARKERS[:2]):
            return p

    return Path.cwd().resolve()


PROJECT_ROOT = get_project_root(__file__)
DOTENV_PATH = PROJECT_ROOT / ".env"


def load_env(override: bool = False) -> bool:
    """Load the repo-root .env once. Returns True when a file was read."""
    try:
        from dotenv import load_dotenv
    except ImportError:
        return False
    return bool(load_dotenv(DOTENV_PATH, override=override))


def resolve_under(base: str | Path, maybe_path: str | Path) -> Path:
    """Relative paths are taken relative to `base`; absolute paths are kept."""
    p = Path(maybe_path)
    if p.is_absolute():
        return p
    return Path(base) / p
