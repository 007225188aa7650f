from __future__ import annotations

import functools
from pathlib import Path

import pytest
from hypothesis import settings

from fbsdegame.config import read_config
from fbsdegame.game import problem_from_config

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parent
DATA = ROOT / "data"
CONFIGS = ROOT.parent / "src" / "fbsdegame" / "configs"
SHIPPED = sorted(p.stem for p in CONFIGS.glob("*.cfg"))
SPECIAL = [name for name in SHIPPED if name != "coupled"]


def config_path(name: str) -> Path:
    p = CONFIGS / f"{name}.cfg"
    return p if p.exists() else DATA / f"{name}.cfg"


@functools.lru_cache(maxsize=None)
def load_problem(name: str, nt: int | None = None, nx: int | None = None):
    return problem_from_config(read_config(config_path(name)), nt=nt, nx=nx)


@pytest.fixture(scope="session")
def problems():
    return load_problem
