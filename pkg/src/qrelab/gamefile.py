"""Game files (JSON) and CSV export of surfaces, traces, and welfare grids.

The game document is deliberately small: player names, per-player strategy
names, and one nested utility array per player in player-0-slowest joint
order.  Unknown keys are rejected so schema drift fails loudly.  All CSV
numbers print with 17 significant digits, which round-trips doubles exactly.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .continuation import PathTrace, SurfaceSample
from .game import Game, GameStructureError, scale_utilities
from .policy import WelfareReport

__all__ = [
    "BUNDLED_GAMES",
    "GameFileError",
    "format_float",
    "game_from_dict",
    "game_to_dict",
    "load_game",
    "save_game",
    "surface_csv_header",
    "trace_csv_header",
    "welfare_csv_header",
    "write_surface_csv",
    "write_trace_csv",
    "write_welfare_csv",
]


class GameFileError(ValueError):
    """A game document failed to parse or validate; the message names where."""


_ALLOWED_KEYS = {"players", "strategies", "utilities", "alphas"}


def _battle_of_sexes() -> Game:
    return Game(
        utilities=(
            np.array([[2.0, 0.0], [0.0, 1.0]]),
            np.array([[1.0, 0.0], [0.0, 2.0]]),
        ),
        players=("row", "column"),
        strategy_names=(("s1", "s2"), ("s1", "s2")),
    )


BUNDLED_GAMES = {
    "battle_of_sexes": _battle_of_sexes,
    "battle_of_sexes_negated": lambda: scale_utilities(_battle_of_sexes(), (-1.0, -1.0)),
}


def _nested_shape(value, path: str, expected: tuple[int, ...], player: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise GameFileError(f"{path}: utilities for player {player!r} are not numeric") from exc
    if arr.shape != expected:
        raise GameFileError(
            f"{path}: utilities for player {player!r} have shape {arr.shape}, "
            f"expected {expected} (player-0 slowest joint order)"
        )
    if not np.all(np.isfinite(arr)):
        raise GameFileError(f"{path}: utilities for player {player!r} contain non-finite entries")
    return arr


def game_from_dict(doc: dict, source: str = "<game>") -> Game:
    if not isinstance(doc, dict):
        raise GameFileError(f"{source}: top level must be an object")
    unknown = set(doc) - _ALLOWED_KEYS
    if unknown:
        raise GameFileError(f"{source}: unknown keys {sorted(unknown)}")
    for key in ("players", "strategies", "utilities"):
        if key not in doc:
            raise GameFileError(f"{source}: missing key {key!r}")
    players = doc["players"]
    if (
        not isinstance(players, list)
        or not players
        or not all(isinstance(p, str) for p in players)
    ):
        raise GameFileError(f"{source}: players must be a non-empty list of names")
    strategies = doc["strategies"]
    if (
        not isinstance(strategies, list)
        or len(strategies) != len(players)
        or not all(
            isinstance(s, list) and s and all(isinstance(x, str) for x in s)
            for s in strategies
        )
    ):
        raise GameFileError(
            f"{source}: strategies must list one non-empty name list per player"
        )
    shape = tuple(len(s) for s in strategies)
    utilities = doc["utilities"]
    if not isinstance(utilities, list) or len(utilities) != len(players):
        raise GameFileError(f"{source}: utilities must list one tensor per player")
    tensors = tuple(
        _nested_shape(u, f"{source}: utilities[{i}]", shape, players[i])
        for i, u in enumerate(utilities)
    )
    game = Game(
        utilities=tensors,
        players=tuple(players),
        strategy_names=tuple(tuple(s) for s in strategies),
    )
    if "alphas" in doc:
        alphas = doc["alphas"]
        if not isinstance(alphas, list) or len(alphas) != len(players):
            raise GameFileError(f"{source}: alphas must list one multiplier per player")
        game = scale_utilities(game, np.asarray(alphas, dtype=float))
    return game


def game_to_dict(game: Game) -> dict:
    return {
        "players": list(game.players),
        "strategies": [list(s) for s in game.strategy_names],
        "utilities": [u.tolist() for u in game.utilities],
    }


def load_game(name_or_path: str) -> Game:
    """Load a bundled game by name or a JSON game file by path."""
    if name_or_path in BUNDLED_GAMES:
        return BUNDLED_GAMES[name_or_path]()
    path = Path(name_or_path)
    if not path.exists():
        raise GameFileError(
            f"{name_or_path!r} is neither a bundled game "
            f"({', '.join(sorted(BUNDLED_GAMES))}) nor an existing file"
        )
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise GameFileError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return game_from_dict(doc, source=str(path))
    except GameStructureError as exc:
        raise GameFileError(f"{path}: {exc}") from exc


def save_game(game: Game, path: str | Path) -> None:
    Path(path).write_text(json.dumps(game_to_dict(game), indent=2) + "\n")


# ---------------------------------------------------------------------------
# CSV schemas (fixed): see README for the column contracts
# ---------------------------------------------------------------------------

def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def _q_columns(num_players: int, counts: Sequence[int]) -> list[str]:
    return [f"q{i}_{k}" for i in range(num_players) for k in range(counts[i])]


def surface_csv_header(game: Game) -> list[str]:
    n = game.num_players
    return (
        [f"beta_{i}" for i in range(n)]
        + ["branch_id"]
        + _q_columns(n, game.strategy_counts)
        + [f"eu_{i}" for i in range(n)]
        + ["fold_indicator"]
    )


def trace_csv_header(game: Game) -> list[str]:
    n = game.num_players
    return (
        ["t"]
        + surface_csv_header(game)
        + ["jump_flag"]
        + [f"dbeta_{i}" for i in range(n)]
    )


def welfare_csv_header() -> list[str]:
    return ["gamma", "Q_anarchy", "Q_socialism", "Q_market"]


def write_surface_csv(samples: Sequence[SurfaceSample], game: Game, out: IO[str]) -> None:
    out.write(",".join(surface_csv_header(game)) + "\n")
    for sample in samples:
        betas = [format_float(b) for b in sample.betas]
        for sol, ind in zip(sample.solutions, sample.fold_indicators):
            row = (
                betas
                + [str(sol.branch_id if sol.branch_id is not None else -1)]
                + [format_float(x) for x in sol.profile.flat()]
                + [format_float(x) for x in sol.expected_utilities]
                + [format_float(ind)]
            )
            out.write(",".join(row) + "\n")


def write_trace_csv(trace: PathTrace, game: Game, out: IO[str]) -> None:
    out.write(",".join(trace_csv_header(game)) + "\n")
    for step in trace.steps:
        sol = step.solution
        row = (
            [str(step.t)]
            + [format_float(b) for b in step.betas]
            + [str(sol.branch_id if sol.branch_id is not None else -1)]
            + [format_float(x) for x in sol.profile.flat()]
            + [format_float(x) for x in sol.expected_utilities]
            + [format_float(step.fold_indicator)]
            + [str(int(step.jump))]
            + [format_float(x) for x in step.dbeta]
        )
        out.write(",".join(row) + "\n")


def write_welfare_csv(report: WelfareReport, out: IO[str]) -> None:
    out.write(",".join(welfare_csv_header()) + "\n")
    q = report.q_by_procedure
    for i, gamma in enumerate(report.gammas):
        row = [
            format_float(gamma),
            format_float(q["anarchy"][i]),
            format_float(q["socialism"][i]),
            format_float(q["market"][i]),
        ]
        out.write(",".join(row) + "\n")
