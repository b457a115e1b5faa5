from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qrelab import Game, scale_utilities


@pytest.fixture(scope="session")
def bos() -> Game:
    return Game(
        utilities=(
            np.array([[2.0, 0.0], [0.0, 1.0]]),
            np.array([[1.0, 0.0], [0.0, 2.0]]),
        ),
        players=("row", "column"),
        strategy_names=(("s1", "s2"), ("s1", "s2")),
    )


@pytest.fixture(scope="session")
def negated(bos: Game) -> Game:
    return scale_utilities(bos, (-1.0, -1.0))


def random_game(rng: np.random.Generator, counts=(2, 2), scale=2.0) -> Game:
    return Game(
        utilities=tuple(
            scale * rng.standard_normal(counts) for _ in range(len(counts))
        )
    )


def random_profile(rng: np.random.Generator, counts) -> "np.ndarray":
    from qrelab import StrategyProfile

    return StrategyProfile(
        tuple(rng.dirichlet(np.ones(k)) for k in counts)
    )
