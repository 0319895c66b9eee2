"""Shared fixtures and helpers for the test suite."""

from pathlib import Path

import pytest

from esmap import world
from esmap.geometry import ActionLimits

FIXTURES = Path(__file__).parent / "fixtures"


def load_maze(name: str) -> world.MazeMap:
    return world.parse_maze((FIXTURES / f"{name}.maze").read_text())


def load_traj(name: str, maze: world.MazeMap | None = None,
              limits: ActionLimits | None = None) -> world.Trajectory:
    return world.load_trajectory(
        (FIXTURES / f"{name}.csv").read_text(), limits or ActionLimits(), maze, name=name
    )


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def corridor() -> world.MazeMap:
    return load_maze("corridor")
