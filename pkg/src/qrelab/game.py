"""Finite normal-form games, mixed-strategy profiles, and expected-utility algebra.

Utility tensors are stored one per player, indexed by the joint pure-strategy
profile with player 0 on the slowest axis.  All types are immutable after
construction and every operation is a pure function, so values can be shared
freely across parallel workers.
"""
from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "Game",
    "GameStructureError",
    "StrategyProfile",
    "conditional_expected_utility",
    "expected_utility",
    "pure_profile",
    "scale_utilities",
    "strategy_entropy",
    "tax_rates",
    "uniform_profile",
]

_PROB_SUM_TOL = 1e-12


class GameStructureError(ValueError):
    """Raised for structurally invalid games, profiles, or mismatched shapes."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Game:
    """N-player finite game: one payoff tensor per player over joint profiles.

    ``utilities[i]`` has shape ``strategy_counts`` (player 0 slowest) and holds
    player i's payoff for every joint pure-strategy profile.
    """

    utilities: tuple[np.ndarray, ...]
    players: tuple[str, ...] = ()
    strategy_names: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self) -> None:
        if not self.utilities:
            raise GameStructureError("a game needs at least one player")
        tensors = tuple(_readonly(u) for u in self.utilities)
        shape = tensors[0].shape
        n = len(tensors)
        if len(shape) != n:
            raise GameStructureError(
                f"utility tensor rank {len(shape)} does not match {n} players"
            )
        for i, u in enumerate(tensors):
            if u.shape != shape:
                raise GameStructureError(
                    f"player {i} utility tensor has shape {u.shape}, expected {shape}"
                )
            if not np.all(np.isfinite(u)):
                raise GameStructureError(f"player {i} utility tensor has non-finite entries")
        if any(k < 1 for k in shape):
            raise GameStructureError("every player needs at least one strategy")
        players = self.players or tuple(f"p{i}" for i in range(n))
        if len(players) != n:
            raise GameStructureError(f"{len(players)} player names for {n} players")
        strategy_names = self.strategy_names or tuple(
            tuple(f"s{k + 1}" for k in range(m)) for m in shape
        )
        if tuple(len(s) for s in strategy_names) != shape:
            raise GameStructureError("strategy name lists do not match strategy counts")
        object.__setattr__(self, "utilities", tensors)
        object.__setattr__(self, "players", tuple(players))
        object.__setattr__(self, "strategy_names", tuple(tuple(s) for s in strategy_names))

    @property
    def num_players(self) -> int:
        return len(self.utilities)

    @property
    def strategy_counts(self) -> tuple[int, ...]:
        return self.utilities[0].shape

    def check_player(self, player: int) -> None:
        if not 0 <= player < self.num_players:
            raise GameStructureError(
                f"player index {player} out of range for {self.num_players} players"
            )


@dataclass(frozen=True)
class StrategyProfile:
    """Product of per-player probability vectors over the pure strategies."""

    probs: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        vecs = []
        for i, q in enumerate(self.probs):
            v = _readonly(np.atleast_1d(q))
            if v.ndim != 1:
                raise GameStructureError(f"player {i} mixture must be a vector")
            if not np.all(np.isfinite(v)):
                raise GameStructureError(f"player {i} mixture has non-finite entries")
            if np.any(v < -_PROB_SUM_TOL) or np.any(v > 1 + _PROB_SUM_TOL):
                raise GameStructureError(f"player {i} mixture entries outside [0, 1]")
            if abs(float(v.sum()) - 1.0) > _PROB_SUM_TOL:
                raise GameStructureError(
                    f"player {i} mixture sums to {float(v.sum())!r}, not 1"
                )
            vecs.append(v)
        object.__setattr__(self, "probs", tuple(vecs))

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(q) for q in self.probs)

    def flat(self) -> np.ndarray:
        """All probabilities concatenated in player order."""
        return np.concatenate(self.probs)

    def check_for(self, game: Game) -> None:
        if self.counts != game.strategy_counts:
            raise GameStructureError(
                f"profile shape {self.counts} does not match game {game.strategy_counts}"
            )

    @staticmethod
    def from_flat(counts: Sequence[int], values: np.ndarray) -> "StrategyProfile":
        values = np.asarray(values, dtype=float)
        if values.shape != (int(np.sum(counts)),):
            raise GameStructureError(
                f"flat vector of length {values.shape} does not match counts {tuple(counts)}"
            )
        probs = []
        off = 0
        for m in counts:
            probs.append(values[off:off + m])
            off += m
        return StrategyProfile(tuple(probs))

    def sup_distance(self, other: "StrategyProfile") -> float:
        return float(np.max(np.abs(self.flat() - other.flat())))


def uniform_profile(game: Game) -> StrategyProfile:
    return StrategyProfile(tuple(np.full(m, 1.0 / m) for m in game.strategy_counts))


def pure_profile(game: Game, strategies: Sequence[int]) -> StrategyProfile:
    """Degenerate profile with every player pinned to one pure strategy."""
    if len(strategies) != game.num_players:
        raise GameStructureError("one pure strategy per player required")
    probs = []
    for m, s in zip(game.strategy_counts, strategies):
        if not 0 <= s < m:
            raise GameStructureError(f"strategy index {s} out of range for {m} strategies")
        v = np.zeros(m)
        v[s] = 1.0
        probs.append(v)
    return StrategyProfile(tuple(probs))


def _player_letters(n: int) -> str:
    if n > len(string.ascii_lowercase) - 1:
        raise GameStructureError("too many players for tensor contraction")
    return string.ascii_lowercase[:n]


def expected_utility(game: Game, profile: StrategyProfile, player: int) -> float:
    """Product-form expectation of ``player``'s utility under ``profile``."""
    game.check_player(player)
    profile.check_for(game)
    letters = _player_letters(game.num_players)
    subs = letters + "," + ",".join(letters) + "->"
    return float(np.einsum(subs, game.utilities[player], *profile.probs))


def conditional_expected_utility(
    game: Game, profile: StrategyProfile, player: int, strategy: int
) -> float:
    """Expected utility of ``player`` pinned to ``strategy``, opponents mixing.

    Reads only the opponents' mixtures; ``profile.probs[player]`` is ignored.
    """
    game.check_player(player)
    profile.check_for(game)
    if not 0 <= strategy < game.strategy_counts[player]:
        raise GameStructureError(
            f"strategy index {strategy} out of range for player {player}"
        )
    values = conditional_utility_vector(game, profile, player)
    return float(values[strategy])


def conditional_utility_vector(game: Game, profile: StrategyProfile, player: int) -> np.ndarray:
    """Vector of conditional expected utilities over ``player``'s strategies."""
    game.check_player(player)
    profile.check_for(game)
    letters = _player_letters(game.num_players)
    in_subs = [letters]
    ops: list[np.ndarray] = [game.utilities[player]]
    for j in range(game.num_players):
        if j == player:
            continue
        in_subs.append(letters[j])
        ops.append(profile.probs[j])
    subs = ",".join(in_subs) + "->" + letters[player]
    return np.einsum(subs, *ops)


def scale_utilities(game: Game, alphas: Sequence[float]) -> Game:
    """New game with player i's utilities multiplied by ``alphas[i]``."""
    a = np.asarray(alphas, dtype=float)
    if a.shape != (game.num_players,):
        raise GameStructureError(
            f"need one multiplier per player, got shape {a.shape}"
        )
    if not np.all(np.isfinite(a)):
        raise GameStructureError("scaling multipliers must be finite")
    return Game(
        utilities=tuple(a[i] * game.utilities[i] for i in range(game.num_players)),
        players=game.players,
        strategy_names=game.strategy_names,
    )


def tax_rates(alphas: Sequence[float]) -> np.ndarray:
    """Tax-rate view of a scaling vector: rate_i = 1 - alpha_i."""
    a = np.asarray(alphas, dtype=float)
    if not np.all(np.isfinite(a)):
        raise GameStructureError("scaling multipliers must be finite")
    return 1.0 - a


def strategy_entropy(profile: StrategyProfile) -> np.ndarray:
    """Per-player Shannon entropy of the mixtures, in nats (0*ln 0 = 0)."""
    out = np.empty(len(profile.probs))
    for i, q in enumerate(profile.probs):
        mask = q > 0
        out[i] = -float(np.sum(q[mask] * np.log(q[mask])))
    return out
