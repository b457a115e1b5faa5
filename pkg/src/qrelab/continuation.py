"""Tracing equilibrium branches over rationality-parameter space.

A surface sweep enumerates every fixed point on a grid and chains them into
branches by nearest-neighbour matching; a path trace follows one branch
adiabatically, re-solving from the previous profile at each parameter step.
When the corrector lands far from its seed the branch has been lost at a
fold: the step is marked as a jump and the new equilibrium is whatever the
damped adjustment dynamic converges to from the stale profile.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .game import Game, GameStructureError
from .solver import (
    QreSolution,
    SolverOptions,
    as_betas,
    enumerate_qre,
    fold_determinant,
    solve_qre,
)

__all__ = [
    "BetaGrid",
    "ContinuationError",
    "PathTrace",
    "SurfaceSample",
    "TraceStep",
    "build_beta_path",
    "fold_indicator",
    "locate_fold",
    "select_solution",
    "sweep_surface",
    "trace_branch",
]

DEFAULT_JUMP_THRESHOLD = 0.2
DEFAULT_MATCH_RADIUS = 0.2


class ContinuationError(RuntimeError):
    """Branch tracking failed or was called outside its preconditions."""


@dataclass(frozen=True)
class BetaGrid:
    """Axis-aligned grid of rationality vectors (inclusive linear ranges)."""

    mins: np.ndarray
    maxs: np.ndarray
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        mins = np.asarray(self.mins, dtype=float)
        maxs = np.asarray(self.maxs, dtype=float)
        counts = tuple(int(c) for c in self.counts)
        if mins.shape != maxs.shape or mins.ndim != 1 or len(counts) != mins.size:
            raise GameStructureError("grid mins/maxs/counts must have one entry per player")
        if np.any(mins > maxs):
            raise GameStructureError("grid mins must not exceed maxs")
        if any(c < 1 for c in counts):
            raise GameStructureError("grid needs at least one point per axis")
        mins.setflags(write=False)
        maxs.setflags(write=False)
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)
        object.__setattr__(self, "counts", counts)

    def axis(self, i: int) -> np.ndarray:
        if self.counts[i] == 1:
            return np.array([self.mins[i]])
        return np.linspace(self.mins[i], self.maxs[i], self.counts[i])

    def indices(self) -> Iterable[tuple[int, ...]]:
        return np.ndindex(*self.counts)

    def point(self, index: tuple[int, ...]) -> np.ndarray:
        return np.array([self.axis(i)[k] for i, k in enumerate(index)])


@dataclass(frozen=True)
class SurfaceSample:
    """Everything found at one grid point: solutions with branch ids and the
    fold determinant of each."""

    betas: np.ndarray
    solutions: tuple[QreSolution, ...]
    fold_indicators: tuple[float, ...]
    grid_index: tuple[int, ...]


@dataclass(frozen=True)
class TraceStep:
    t: int
    betas: np.ndarray
    solution: QreSolution
    jump: bool
    fold_indicator: float
    dbeta: np.ndarray
    gradient_fallback: bool = False


@dataclass(frozen=True)
class PathTrace:
    steps: tuple[TraceStep, ...]
    truncated: bool = False
    diagnostic: str = ""

    def __len__(self) -> int:
        return len(self.steps)

    def welfare(self) -> np.ndarray:
        """Total expected utility at every step."""
        return np.array(
            [float(np.sum(s.solution.expected_utilities)) for s in self.steps]
        )

    def expected_utilities(self) -> np.ndarray:
        """Per-step per-player expected utilities, shape (len, num_players)."""
        return np.array([s.solution.expected_utilities for s in self.steps])


def fold_indicator(game: Game, solution: QreSolution) -> float:
    """det(M - Id) of the composed response Jacobian at a converged solution.

    Crosses zero exactly where the branch folds (the fixed point stops being
    locally continuable in the parameters).
    """
    if not solution.converged:
        raise ContinuationError("fold indicator needs a converged solution")
    return fold_determinant(game, solution.profile, solution.betas)


def select_solution(solutions: Sequence[QreSolution], selector: str) -> QreSolution:
    """Pick a branch from enumerated solutions.

    Selectors: ``index:K`` (canonical order), ``max-euI``/``min-euI`` for
    player I's expected utility, ``max-welfare``/``min-welfare`` for the total.
    """
    if not solutions:
        raise ContinuationError("no solutions to select from")
    if selector.startswith("index:"):
        k = int(selector.split(":", 1)[1])
        if not 0 <= k < len(solutions):
            raise ContinuationError(
                f"branch index {k} out of range ({len(solutions)} solutions)"
            )
        return solutions[k]
    totals = [float(np.sum(s.expected_utilities)) for s in solutions]
    if selector == "max-welfare":
        return solutions[int(np.argmax(totals))]
    if selector == "min-welfare":
        return solutions[int(np.argmin(totals))]
    for prefix, pick in (("max-eu", np.argmax), ("min-eu", np.argmin)):
        if selector.startswith(prefix):
            player = int(selector[len(prefix):])
            values = [float(s.expected_utilities[player]) for s in solutions]
            return solutions[int(pick(values))]
    raise ContinuationError(f"unknown branch selector {selector!r}")


def _enum_point(payload: tuple[Game, np.ndarray, SolverOptions]) -> list[QreSolution]:
    game, betas, options = payload
    return enumerate_qre(game, betas, options)


def resolve_workers(workers: int | None) -> int:
    """Worker count: explicit argument, else QRE_THREADS (0 = auto), else auto."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("QRE_THREADS", "").strip()
    if env:
        n = int(env)
        if n > 0:
            return n
    return max(1, os.cpu_count() or 1)


def sweep_surface(
    game: Game,
    grid: BetaGrid,
    options: SolverOptions = SolverOptions(),
    *,
    match_radius: float = DEFAULT_MATCH_RADIUS,
    workers: int | None = None,
) -> list[SurfaceSample]:
    """Enumerate equilibria at every grid point and chain branch ids.

    Branch ids propagate by nearest-neighbour profile matching between
    adjacent grid points (sup-norm within ``match_radius``); unmatched
    solutions open new ids.  Points where enumeration found nothing are kept
    as empty samples rather than failing the sweep.  Output order and ids are
    deterministic regardless of worker scheduling.
    """
    if len(grid.counts) != game.num_players:
        raise GameStructureError("grid dimension must match the number of players")
    indices = list(grid.indices())
    payloads = [(game, grid.point(idx), options) for idx in indices]
    n_workers = min(resolve_workers(workers), len(payloads))
    if n_workers <= 1 or len(payloads) < 4:
        found = [_enum_point(p) for p in payloads]
    else:
        # small chunks: expensive multi-solution points cluster in one region
        # of the grid, and coarse chunking would serialise them on one worker
        chunk = max(1, min(16, len(payloads) // (8 * n_workers)))
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            found = list(pool.map(_enum_point, payloads, chunksize=chunk))
    by_index = dict(zip(indices, found))
    ndim = len(grid.counts)
    # causal neighbourhood: every already-visited point (row-major order) at
    # Chebyshev distance 1, diagonals included, so a slanting region boundary
    # cannot orphan branch ids between rows
    near_offsets = []
    for off in np.ndindex(*(3,) * ndim):
        delta = tuple(o - 1 for o in off)
        nonzero = [d for d in delta if d != 0]
        if nonzero and next(d for d in delta if d != 0) == -1:
            near_offsets.append(delta)
    # fallback lookback for boundaries that sweep across several cells per
    # row (steep fold curves near a wedge tip): the whole visited part of the
    # Chebyshev ball, so a pair born up-and-to-the-right is still found
    lookback = 8
    far_offsets = []
    for off in np.ndindex(*(2 * lookback + 1,) * ndim):
        delta = tuple(o - lookback for o in off)
        nonzero = [d for d in delta if d != 0]
        if not nonzero or next(d for d in delta if d != 0) != -1:
            continue
        if delta in near_offsets:
            continue
        far_offsets.append(delta)
    far_offsets.sort(key=lambda d: (max(abs(x) for x in d), d))

    def matches(idx, sols, offsets, skip: set[int]) -> list[tuple[float, int, int]]:
        out: list[tuple[float, int, int]] = []
        for delta in offsets:
            nb = tuple(k + d for k, d in zip(idx, delta))
            if any(k < 0 or k >= grid.counts[a] for a, k in enumerate(nb)):
                continue
            for t_pos, prev in enumerate(by_index[nb]):
                for s_pos, cur in enumerate(sols):
                    if s_pos in skip:
                        continue
                    dist = cur.profile.sup_distance(prev.profile)
                    if dist <= match_radius:
                        out.append((dist, s_pos, ids[nb][t_pos]))
        out.sort()
        return out

    ids: dict[tuple[int, ...], list[int]] = {}
    next_id = 0
    samples: list[SurfaceSample] = []
    for idx in indices:
        sols = by_index[idx]
        assigned: dict[int, int] = {}
        used: set[int] = set()
        for tier_offsets in (near_offsets, far_offsets):
            if len(assigned) == len(sols):
                break
            for _dist, s_pos, bid in matches(idx, sols, tier_offsets, set(assigned)):
                if s_pos not in assigned and bid not in used:
                    assigned[s_pos] = bid
                    used.add(bid)
        branch_ids = []
        for s_pos in range(len(sols)):
            if s_pos not in assigned:
                assigned[s_pos] = next_id
                next_id += 1
            branch_ids.append(assigned[s_pos])
        ids[idx] = branch_ids
    _merge_severed_branches(grid, indices, by_index, ids, near_offsets, match_radius)
    for idx in indices:
        sols = by_index[idx]
        tagged = tuple(
            replace(s, branch_id=ids[idx][i]) for i, s in enumerate(sols)
        )
        indicators = tuple(fold_indicator(game, s) for s in tagged)
        samples.append(
            SurfaceSample(
                betas=grid.point(idx),
                solutions=tagged,
                fold_indicators=indicators,
                grid_index=tuple(idx),
            )
        )
    return samples


def _merge_severed_branches(
    grid: BetaGrid,
    indices: list[tuple[int, ...]],
    by_index: dict,
    ids: dict,
    near_offsets: list[tuple[int, ...]],
    match_radius: float,
) -> None:
    """Relabel branch ids that are clearly the same sheet.

    Two ids are merged when solutions carrying them sit within the match
    radius at adjacent grid points and the ids never appear together at any
    single point: coexistence at a point proves two distinct sheets, while a
    touching pair that never coexists is one sheet whose id chain broke
    (as happens where a fold tip crosses between grid lines).  Ids are
    rewritten in place.
    """
    coexist: dict[int, set[int]] = {}
    for idx in indices:
        present = ids[idx]
        for a in present:
            coexist.setdefault(a, set()).update(b for b in present if b != a)
    parent: dict[int, int] = {bid: bid for bid in coexist}

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges: list[tuple[float, int, int]] = []
    for idx in indices:
        for delta in near_offsets:
            nb = tuple(k + d for k, d in zip(idx, delta))
            if any(k < 0 or k >= grid.counts[a] for a, k in enumerate(nb)):
                continue
            for s_pos, cur in enumerate(by_index[idx]):
                for t_pos, prev in enumerate(by_index[nb]):
                    a, b = ids[idx][s_pos], ids[nb][t_pos]
                    if a == b:
                        continue
                    dist = cur.profile.sup_distance(prev.profile)
                    if dist <= match_radius:
                        edges.append((dist, min(a, b), max(a, b)))
    edges.sort()
    classes: dict[int, set[int]] = {bid: {bid} for bid in coexist}
    for _dist, a, b in edges:
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        if any(y in coexist[x] for x in classes[ra] for y in classes[rb]):
            continue
        parent[rb] = ra
        classes[ra] |= classes[rb]
    # canonical relabel by first appearance in row-major order
    relabel: dict[int, int] = {}
    for idx in indices:
        new_row = []
        for bid in ids[idx]:
            root = find(bid)
            if root not in relabel:
                relabel[root] = len(relabel)
            new_row.append(relabel[root])
        ids[idx] = new_row


def continue_step(
    game: Game,
    solution: QreSolution,
    new_betas: np.ndarray,
    options: SolverOptions,
    jump_threshold: float = DEFAULT_JUMP_THRESHOLD,
) -> tuple[QreSolution | None, bool]:
    """One adiabatic continuation step, with the fall-off-the-edge jump rule.

    Re-solves at ``new_betas`` seeded from the current profile.  If that
    corrector stays within ``jump_threshold`` of the seed the branch was
    tracked; otherwise the equilibrium reached by the damped dynamic from the
    stale profile is adopted and the step is flagged as a jump.  Returns
    (solution, jumped); solution is None when even the dynamic fails.
    """
    corrector = solve_qre(game, new_betas, solution.profile, options)
    if (
        corrector.converged
        and corrector.profile.sup_distance(solution.profile) <= jump_threshold
    ):
        return corrector, False
    dynamic = solve_qre(game, new_betas, solution.profile, options, conservative=True)
    if dynamic.converged:
        return dynamic, True
    return None, True


def trace_branch(
    game: Game,
    beta_path: Sequence[Sequence[float]],
    start: QreSolution,
    options: SolverOptions = SolverOptions(),
    *,
    jump_threshold: float = DEFAULT_JUMP_THRESHOLD,
) -> PathTrace:
    """Predictor-corrector trace of one branch along an ordered parameter path."""
    if not len(beta_path):
        raise ContinuationError("beta_path must contain at least one point")
    if not start.converged:
        raise ContinuationError("trace must start from a converged solution")
    first = as_betas(game, beta_path[0])
    if not np.allclose(first, start.betas, atol=1e-9):
        raise ContinuationError("start solution does not sit at beta_path[0]")
    branch = start.branch_id if start.branch_id is not None else 0
    current = replace(start, branch_id=branch)
    steps = [
        TraceStep(
            t=0,
            betas=current.betas,
            solution=current,
            jump=False,
            fold_indicator=fold_indicator(game, current),
            dbeta=np.zeros(game.num_players),
        )
    ]
    for t, raw in enumerate(beta_path[1:], start=1):
        betas = as_betas(game, raw)
        nxt, jumped = continue_step(game, current, betas, options, jump_threshold)
        if nxt is None:
            return PathTrace(
                steps=tuple(steps),
                truncated=True,
                diagnostic=f"corrector failed at step {t}, beta={betas.tolist()}",
            )
        if jumped:
            branch += 1
        nxt = replace(nxt, branch_id=branch)
        steps.append(
            TraceStep(
                t=t,
                betas=betas,
                solution=nxt,
                jump=jumped,
                fold_indicator=fold_indicator(game, nxt),
                dbeta=betas - current.betas,
            )
        )
        current = nxt
    return PathTrace(steps=tuple(steps))


def build_beta_path(
    waypoints: Sequence[Sequence[float]], step: float
) -> list[np.ndarray]:
    """Piecewise-linear parameter path through waypoints, legs cut into steps
    of Euclidean length at most ``step``."""
    if step <= 0:
        raise GameStructureError("step must be positive")
    pts = [np.asarray(w, dtype=float) for w in waypoints]
    if not pts:
        raise GameStructureError("need at least one waypoint")
    path = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        dist = float(np.linalg.norm(b - a))
        n = max(1, int(np.ceil(dist / step - 1e-12)))
        for k in range(1, n + 1):
            path.append(a + (b - a) * (k / n))
    return path


def locate_fold(
    game: Game,
    step_a: TraceStep,
    step_b: TraceStep,
    options: SolverOptions = SolverOptions(),
    *,
    indicator_tol: float = 1e-8,
    beta_tol: float = 1e-10,
    jump_threshold: float = DEFAULT_JUMP_THRESHOLD,
    max_bisections: int = 200,
) -> tuple[np.ndarray, QreSolution]:
    """Bisect a bracketing branch segment down to the fold point.

    The two steps must carry fold indicators of opposite sign.  Each midpoint
    re-solves seeded from the current low side, so the branch is tracked
    through the bisection; losing it raises with the failing midpoint.
    """
    ia, ib = step_a.fold_indicator, step_b.fold_indicator
    if not (np.isfinite(ia) and np.isfinite(ib)) or ia * ib >= 0:
        raise ContinuationError(
            "locate_fold needs a segment whose fold indicators change sign"
        )
    beta_a = np.asarray(step_a.betas, dtype=float)
    beta_b = np.asarray(step_b.betas, dtype=float)
    sol_a = step_a.solution
    best = sol_a
    mid = beta_a
    first_failure: np.ndarray | None = None
    continued = False
    # on-branch midpoints converge via Newton almost immediately; a tight
    # iteration budget only cuts short the hopeless post-fold attempts
    mid_options = replace(options, max_iterations=min(options.max_iterations, 800))
    for _ in range(max_bisections):
        mid = 0.5 * (beta_a + beta_b)
        corr = solve_qre(game, mid, sol_a.profile, mid_options)
        if not corr.converged or corr.profile.sup_distance(sol_a.profile) > jump_threshold:
            # nothing continuable near the sheet: midpoint lies past the fold
            if first_failure is None:
                first_failure = mid
            beta_b = mid
        else:
            continued = True
            im = fold_determinant(game, corr.profile, corr.betas)
            best = corr
            if abs(im) <= indicator_tol:
                return mid, corr
            if (im > 0) == (ia > 0):
                beta_a, sol_a, ia = mid, corr, im
            else:
                beta_b, ib = mid, im
        if float(np.linalg.norm(beta_b - beta_a)) <= beta_tol:
            break
    if not continued:
        where = first_failure if first_failure is not None else mid
        raise ContinuationError(
            f"branch lost during fold bisection at beta={np.asarray(where).tolist()}"
        )
    return 0.5 * (beta_a + beta_b), best
