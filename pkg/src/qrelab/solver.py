"""Logit-response fixed points of finite games.

Each player's response to the opponents' mixtures is the softmax of their
conditional expected utilities scaled by a per-player rationality ``beta_i``
(inverse temperature).  A profile where every player's mixture equals their
own logit response is a logit quantal response equilibrium.

Solving strategy: a damped fixed-point iteration is the globally robust
phase, with guarded Newton steps (on simplex-reduced coordinates, one
coordinate dropped per player) attempted periodically to reach 1e-12
residuals and to capture unstable fixed points that the plain dynamic
repels.  Everything is deterministic given the inputs; multi-start
enumeration is vectorised across starts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .game import (
    Game,
    GameStructureError,
    StrategyProfile,
    uniform_profile,
)

__all__ = [
    "FoldProximityError",
    "QreSolution",
    "SolverOptions",
    "enumerate_qre",
    "logit_response",
    "qre_residual",
    "response_jacobian",
    "solve_qre",
]

# residual level below which Newton is allowed in conservative mode,
# i.e. once the damped dynamic has already picked a basin
_CONSERVATIVE_GATE = 1e-6
_NEWTON_PERIOD = 10
_NEWTON_MAX_STEPS = 16
_NEWTON_HALVINGS = 8
# re-attempt gate: after a failed Newton round a row must first get this
# close to a fixed point under the damped dynamic before trying again
# (unless its residual is already small, which overrides the backoff);
# rows that keep failing stop trying and leave it to the damped dynamic
_REATTEMPT_GATE = 0.2
_BACKOFF_OVERRIDE = 1e-3
_MAX_NEWTON_FAILURES = 3
_SINGULAR_DET = 1e-100


class FoldProximityError(RuntimeError):
    """Raised when a computation needs an invertible fixed-point linearisation
    but the solution sits (numerically) on a fold."""


@dataclass(frozen=True)
class SolverOptions:
    """Tuning knobs for the fixed-point solver. All defaults are deterministic."""

    tolerance: float = 1e-12
    max_iterations: int = 10_000
    damping: float = 0.5
    newton_polish: bool = True
    multistart_grid: int = 50
    dedupe_radius: float = 1e-6
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.multistart_grid < 1:
            raise ValueError("multistart_grid must be at least 1")
        if not self.dedupe_radius > 0:
            raise ValueError("dedupe_radius must be positive")


@dataclass(frozen=True)
class QreSolution:
    """A solved (or best-effort) logit fixed point at one rationality vector."""

    betas: np.ndarray
    profile: StrategyProfile
    residual_norm: float
    expected_utilities: np.ndarray
    converged: bool
    branch_id: int | None = None
    iterations: int = 0

    def __post_init__(self) -> None:
        b = np.array(self.betas, dtype=float)
        b.setflags(write=False)
        e = np.array(self.expected_utilities, dtype=float)
        e.setflags(write=False)
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "expected_utilities", e)


def as_betas(game: Game, betas: Sequence[float]) -> np.ndarray:
    """Validate a rationality vector for ``game`` (finite, one entry per player)."""
    b = np.asarray(betas, dtype=float)
    if b.shape != (game.num_players,):
        raise GameStructureError(
            f"need one rationality per player, got shape {b.shape}"
        )
    if not np.all(np.isfinite(b)):
        raise GameStructureError("rationalities must be finite")
    return b


# ---------------------------------------------------------------------------
# batched tensor kernel: rows are flattened profiles, one start per row
# ---------------------------------------------------------------------------

class _Layout:
    """Index bookkeeping for a game's flattened profile coordinates.

    For two-player games the conditional utilities of both players are one
    packed matmul (``rows @ cond_matrix``), and for 2x2 games the reduced
    response Jacobian degenerates to beta_i * g_i(1-g_i) * K_i with the
    game constants K_i precomputed here.
    """

    def __init__(self, game: Game):
        self.game = game
        self.counts = game.strategy_counts
        self.n = game.num_players
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)])
        self.total = int(self.offsets[-1])
        self.red_counts = tuple(m - 1 for m in self.counts)
        self.red_offsets = np.concatenate([[0], np.cumsum(self.red_counts)])
        self.red_total = int(self.red_offsets[-1])
        self.uniform_two = all(m == 2 for m in self.counts)
        self.is_2x2 = self.n == 2 and self.counts == (2, 2)
        if self.n == 2:
            u0, u1 = game.utilities
            m = np.zeros((self.total, self.total))
            m[self.offsets[1]:, : self.offsets[1]] = u0.T
            m[: self.offsets[1], self.offsets[1]:] = u1
            self.cond_matrix = m
        if self.is_2x2:
            u0, u1 = game.utilities
            self.k0 = float(u0[0, 0] - u0[1, 0] - u0[0, 1] + u0[1, 1])
            self.k1 = float(u1[0, 0] - u1[0, 1] - u1[1, 0] + u1[1, 1])

    def split(self, rows: np.ndarray) -> list[np.ndarray]:
        return [rows[:, self.offsets[i]:self.offsets[i + 1]] for i in range(self.n)]

    def reduce(self, rows: np.ndarray) -> np.ndarray:
        parts = [rows[:, self.offsets[i]:self.offsets[i + 1] - 1] for i in range(self.n)]
        return np.concatenate(parts, axis=1) if parts else rows[:, :0]

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        out = np.empty((reduced.shape[0], self.total))
        for i in range(self.n):
            block = reduced[:, self.red_offsets[i]:self.red_offsets[i + 1]]
            out[:, self.offsets[i]:self.offsets[i + 1] - 1] = block
            out[:, self.offsets[i + 1] - 1] = 1.0 - block.sum(axis=1)
        return out


def _cond_rows(lay: _Layout, rows: np.ndarray) -> list[np.ndarray]:
    """Conditional expected utilities for every player, batched over rows."""
    game = lay.game
    if lay.n == 2:
        packed = rows @ lay.cond_matrix
        return [packed[:, : lay.offsets[1]], packed[:, lay.offsets[1]:]]
    by_player = lay.split(rows)
    out = []
    letters = "abcdefghijklmnopqrstuvwxy"[: lay.n]
    for i in range(lay.n):
        subs_in = [letters]
        ops: list[np.ndarray] = [game.utilities[i]]
        for j in range(lay.n):
            if j == i:
                continue
            subs_in.append("Z" + letters[j])
            ops.append(by_player[j])
        subs = ",".join(subs_in) + "->Z" + letters[i]
        out.append(np.einsum(subs, *ops))
    return out


def _logit_rows(
    lay: _Layout, rows: np.ndarray, betas: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Stacked logit responses (and the conditional utilities they used)."""
    cond = _cond_rows(lay, rows)
    if lay.uniform_two:
        z = np.repeat(betas, 2, axis=1) * np.concatenate(cond, axis=1)
        z3 = z.reshape(rows.shape[0], lay.n, 2)
        z3 = z3 - z3.max(axis=2, keepdims=True)
        e = np.exp(z3)
        out = (e / e.sum(axis=2, keepdims=True)).reshape(rows.shape[0], lay.total)
        return out, cond
    out = np.empty_like(rows)
    for i in range(lay.n):
        z = betas[:, i:i + 1] * cond[i]
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        out[:, lay.offsets[i]:lay.offsets[i + 1]] = e / e.sum(axis=1, keepdims=True)
    return out, cond


def _pairwise_cond(lay: _Layout, rows: np.ndarray, i: int, j: int) -> np.ndarray:
    """E(u_i | x_i, x_j) with players i and j pinned, batched: (B, n_i, n_j)."""
    game = lay.game
    if lay.n == 2:
        u = game.utilities[i]
        if i < j:
            return np.broadcast_to(u, (rows.shape[0],) + u.shape)
        return np.broadcast_to(u.T, (rows.shape[0],) + u.T.shape)
    by_player = lay.split(rows)
    letters = "abcdefghijklmnopqrstuvwxy"[: lay.n]
    subs_in = [letters]
    ops: list[np.ndarray] = [game.utilities[i]]
    for k in range(lay.n):
        if k in (i, j):
            continue
        subs_in.append("Z" + letters[k])
        ops.append(by_player[k])
    subs = ",".join(subs_in) + "->Z" + letters[i] + letters[j]
    return np.einsum(subs, *ops)


def _response_block(
    lay: _Layout,
    rows: np.ndarray,
    betas: np.ndarray,
    logits: np.ndarray,
    i: int,
    j: int,
) -> np.ndarray:
    """d(logit_i)/d(q_j) in full coordinates, batched: (B, n_i, n_j)."""
    g = logits[:, lay.offsets[i]:lay.offsets[i + 1]]
    if lay.n == 2:
        u = lay.game.utilities[i] if i < j else lay.game.utilities[i].T
        mbar = g @ u
        return betas[:, i, None, None] * g[:, :, None] * (u[None, :, :] - mbar[:, None, :])
    d = _pairwise_cond(lay, rows, i, j)
    mbar = np.einsum("Zc,Zcb->Zb", g, d)
    return betas[:, i, None, None] * g[:, :, None] * (d - mbar[:, None, :])


def _reduce_block(block: np.ndarray) -> np.ndarray:
    return block[:, :-1, :-1] - block[:, :-1, -1:]


def _reduced_jacobian_rows(
    lay: _Layout, rows: np.ndarray, betas: np.ndarray, logits: np.ndarray
) -> np.ndarray:
    """Response Jacobian in reduced simplex coordinates: (B, d, d), zero diagonal."""
    b = rows.shape[0]
    if lay.is_2x2:
        jac = np.zeros((b, 2, 2))
        g0 = logits[:, 0]
        g1 = logits[:, 2]
        jac[:, 0, 1] = betas[:, 0] * g0 * (1.0 - g0) * lay.k0
        jac[:, 1, 0] = betas[:, 1] * g1 * (1.0 - g1) * lay.k1
        return jac
    jac = np.zeros((b, lay.red_total, lay.red_total))
    for i in range(lay.n):
        for j in range(lay.n):
            if i == j or lay.red_counts[i] == 0 or lay.red_counts[j] == 0:
                continue
            blk = _reduce_block(_response_block(lay, rows, betas, logits, i, j))
            jac[
                :,
                lay.red_offsets[i]:lay.red_offsets[i + 1],
                lay.red_offsets[j]:lay.red_offsets[j + 1],
            ] = blk
    return jac


def _residual_norms(rows: np.ndarray, logits: np.ndarray) -> np.ndarray:
    if rows.shape[1] == 0:
        return np.zeros(rows.shape[0])
    return np.max(np.abs(rows - logits), axis=1)


def _newton_batch(
    lay: _Layout,
    betas: np.ndarray,
    rows0: np.ndarray,
    tol: float,
    max_steps: int = _NEWTON_MAX_STEPS,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Guarded Newton on the reduced residual y - g(y) for every row.

    Returns (rows, success, residual_norm); rows are meaningful only where
    success is set.  Iterates may leave the simplex (the multilinear payoff
    extension stays well-defined); each step must shrink the residual norm.
    """
    b = rows0.shape[0]
    rows_out = rows0.copy()
    rn_out = np.full(b, np.inf)
    success = np.zeros(b, dtype=bool)
    if lay.red_total == 0:
        logits, _ = _logit_rows(lay, rows0, betas)
        return logits, np.ones(b, dtype=bool), _residual_norms(logits, logits)
    alive = np.arange(b)
    y = lay.reduce(rows0).copy()
    rows = lay.expand(y)
    logits, _ = _logit_rows(lay, rows, betas)
    rn = _residual_norms(rows, logits)
    eye = np.eye(lay.red_total)
    for _ in range(max_steps):
        if alive.size == 0:
            break
        done = rn <= tol
        if np.any(done):
            gid = alive[done]
            rows_out[gid] = rows[done]
            rn_out[gid] = rn[done]
            success[gid] = True
            keep = ~done
            alive, y, rows, logits, rn = (
                alive[keep], y[keep], rows[keep], logits[keep], rn[keep]
            )
            if alive.size == 0:
                break
        jac = _reduced_jacobian_rows(lay, rows, betas[alive], logits)
        a = eye[None] - jac
        if lay.red_total == 2:
            dets = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
        else:
            dets = np.linalg.det(a)
        good_det = np.abs(dets) >= _SINGULAR_DET
        if not np.all(good_det):
            alive, y, rows, logits, rn, a, dets = (
                alive[good_det], y[good_det], rows[good_det],
                logits[good_det], rn[good_det], a[good_det], dets[good_det],
            )
            if alive.size == 0:
                break
        r_red = lay.reduce(rows) - lay.reduce(logits)
        if lay.red_total == 2:
            rhs0, rhs1 = -r_red[:, 0], -r_red[:, 1]
            step = np.stack(
                [
                    (a[:, 1, 1] * rhs0 - a[:, 0, 1] * rhs1) / dets,
                    (a[:, 0, 0] * rhs1 - a[:, 1, 0] * rhs0) / dets,
                ],
                axis=1,
            )
        else:
            step = np.linalg.solve(a, -r_red[..., None])[..., 0]
        # backtracking line search; accepted trials become the next iterate
        t = np.ones(alive.size)
        pending = np.arange(alive.size)
        accepted = np.zeros(alive.size, dtype=bool)
        for _half in range(_NEWTON_HALVINGS):
            if pending.size == 0:
                break
            trial_y = y[pending] + t[pending, None] * step[pending]
            trial_rows = lay.expand(trial_y)
            trial_logits, _ = _logit_rows(lay, trial_rows, betas[alive[pending]])
            trial_rn = _residual_norms(trial_rows, trial_logits)
            good = trial_rn <= (1.0 - 1e-4 * t[pending]) * rn[pending]
            gpos = pending[good]
            y[gpos] = trial_y[good]
            rows[gpos] = trial_rows[good]
            logits[gpos] = trial_logits[good]
            rn[gpos] = trial_rn[good]
            accepted[gpos] = True
            pending = pending[~good]
            t[pending] *= 0.5
        if not np.all(accepted):
            alive, y, rows, logits, rn = (
                alive[accepted], y[accepted], rows[accepted],
                logits[accepted], rn[accepted],
            )
    if alive.size:
        done = rn <= tol
        gid = alive[done]
        rows_out[gid] = rows[done]
        rn_out[gid] = rn[done]
        success[gid] = True
    return rows_out, success, rn_out


def _solve_batch(
    game: Game,
    betas: np.ndarray,
    rows0: np.ndarray,
    options: SolverOptions,
    conservative: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Damped fixed-point iteration over a batch of starts, with Newton assists.

    ``betas`` has one rationality vector per row.  In conservative mode Newton
    only runs once a row's residual is below a small gate, so the damped
    dynamic itself selects the basin (used for post-fold jump resolution).

    Returns (rows, converged, residual_norms, iterations).
    """
    lay = _Layout(game)
    b = rows0.shape[0]
    rows = rows0.astype(float).copy()
    lam = options.damping
    tol = options.tolerance
    best_rows = rows.copy()
    best_rn = np.full(b, np.inf)
    iters = np.zeros(b, dtype=int)
    converged = np.zeros(b, dtype=bool)
    # failed Newton rounds back off exponentially per row; re-attempts also
    # wait for the row to come near some fixed point under the dynamic
    next_attempt = np.zeros(b, dtype=np.int64)
    fail_count = np.zeros(b, dtype=np.int64)
    for k in range(options.max_iterations + 1):
        active = np.flatnonzero(~converged)
        if active.size == 0:
            break
        logits, _ = _logit_rows(lay, rows[active], betas[active])
        rn = _residual_norms(rows[active], logits)
        better = rn < best_rn[active]
        bid = active[better]
        best_rows[bid] = rows[bid]
        best_rn[bid] = rn[better]
        hit = rn <= tol
        if np.any(hit):
            gid = active[hit]
            converged[gid] = True
            iters[gid] = k
            keep = ~hit
            active, logits, rn = active[keep], logits[keep], rn[keep]
            if active.size == 0:
                break
        if k == options.max_iterations:
            break
        if options.newton_polish:
            if conservative:
                ready = rn <= _CONSERVATIVE_GATE
            else:
                ready = (
                    ((next_attempt[active] <= k) | (rn <= _BACKOFF_OVERRIDE))
                    & ((k == 0) | (rn <= _REATTEMPT_GATE))
                    & (fail_count[active] < _MAX_NEWTON_FAILURES)
                )
            cand = active[ready]
            if cand.size and k % _NEWTON_PERIOD == 0:
                nrows, ok, nrn = _newton_batch(lay, betas[cand], rows[cand], tol)
                gid = cand[ok]
                failed = cand[~ok]
                if failed.size:
                    wait = np.maximum(next_attempt[failed] - k + _NEWTON_PERIOD, _NEWTON_PERIOD)
                    next_attempt[failed] = k + 2 * wait
                    fail_count[failed] += 1
                if gid.size:
                    rows[gid] = nrows[ok]
                    best_rows[gid] = nrows[ok]
                    best_rn[gid] = nrn[ok]
                    converged[gid] = True
                    iters[gid] = k
                    still = ~np.isin(active, gid)
                    active, logits = active[still], logits[still]
                    if active.size == 0:
                        break
        rows[active] = (1.0 - lam) * rows[active] + lam * logits
    out = np.where(converged[:, None], rows, best_rows)
    # converged rows already carry their final residual in best_rn
    return out, converged, best_rn, iters


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def logit_response(
    game: Game, profile: StrategyProfile, player: int, beta_i: float
) -> np.ndarray:
    """Softmax of ``beta_i`` times the player's conditional utilities.

    Uses max-subtraction, so arbitrarily large |beta| cannot overflow; the
    output is strictly interior and sums to 1.  Only the opponents' mixtures
    are read.
    """
    game.check_player(player)
    profile.check_for(game)
    if not np.isfinite(beta_i):
        raise GameStructureError("beta must be finite")
    lay = _Layout(game)
    rows = profile.flat()[None, :]
    betas = np.zeros((1, game.num_players))
    betas[0, player] = beta_i
    logits, _ = _logit_rows(lay, rows, betas)
    return logits[0, lay.offsets[player]:lay.offsets[player + 1]]


def qre_residual(game: Game, profile: StrategyProfile, betas: Sequence[float]) -> np.ndarray:
    """Stacked residual q - logit_response(q) over all players."""
    profile.check_for(game)
    b = as_betas(game, betas)
    lay = _Layout(game)
    rows = profile.flat()[None, :]
    logits, _ = _logit_rows(lay, rows, b[None, :])
    return (rows - logits)[0]


def response_jacobian(
    game: Game, profile: StrategyProfile, betas: Sequence[float]
) -> np.ndarray:
    """Full-coordinate block matrix of d(logit_i)/d(q_j); diagonal blocks zero.

    Derivatives are of the multilinear payoff extension composed with the
    softmax, so they match central finite differences of ``logit_response``
    taken coordinate-wise.
    """
    profile.check_for(game)
    b = as_betas(game, betas)
    lay = _Layout(game)
    rows = profile.flat()[None, :]
    logits, _ = _logit_rows(lay, rows, b[None, :])
    out = np.zeros((lay.total, lay.total))
    for i in range(lay.n):
        for j in range(lay.n):
            if i == j:
                continue
            blk = _response_block(lay, rows, b[None, :], logits, i, j)[0]
            out[lay.offsets[i]:lay.offsets[i + 1], lay.offsets[j]:lay.offsets[j + 1]] = blk
    return out


def _profile_from_row(game: Game, row: np.ndarray) -> StrategyProfile:
    lay = _Layout(game)
    cleaned = np.clip(row, 0.0, 1.0)
    return StrategyProfile.from_flat(lay.counts, cleaned)


def _expected_utilities_row(game: Game, row: np.ndarray) -> np.ndarray:
    lay = _Layout(game)
    cond = _cond_rows(lay, row[None, :])
    by_player = lay.split(row[None, :])
    return np.array(
        [float(np.sum(by_player[i][0] * cond[i][0])) for i in range(lay.n)]
    )


def _solution_from_row(
    game: Game,
    betas: np.ndarray,
    row: np.ndarray,
    converged: bool,
    residual: float,
    iterations: int,
) -> QreSolution:
    return QreSolution(
        betas=betas,
        profile=_profile_from_row(game, row),
        residual_norm=float(residual),
        expected_utilities=_expected_utilities_row(game, row),
        converged=bool(converged),
        iterations=int(iterations),
    )


def solve_qre(
    game: Game,
    betas: Sequence[float],
    init: StrategyProfile | None = None,
    options: SolverOptions = SolverOptions(),
    *,
    conservative: bool = False,
) -> QreSolution:
    """Solve the coupled logit fixed point from one starting profile.

    Damped iteration with Newton assists; non-convergence is reported in the
    returned solution (``converged`` flag), never raised.  In conservative
    mode the damped dynamic alone chooses the attractor and Newton only
    polishes, which is what post-fold jump resolution wants.
    """
    if game.num_players < 2:
        raise GameStructureError("solving needs at least two players")
    b = as_betas(game, betas)
    start = init if init is not None else uniform_profile(game)
    start.check_for(game)
    rows0 = start.flat()[None, :]
    rows, conv, rn, iters = _solve_batch(game, b[None, :], rows0, options, conservative)
    return _solution_from_row(game, b, rows[0], conv[0], rn[0], iters[0])


def _multistart_rows(game: Game, options: SolverOptions) -> np.ndarray:
    """Deterministic starting profiles: a per-player grid for 2x2 games,
    seeded random mixtures (plus uniform and softened corners) otherwise."""
    lay = _Layout(game)
    m = options.multistart_grid
    if lay.n == 2 and lay.counts == (2, 2):
        t = (np.arange(m) + 0.5) / m
        p, c = np.meshgrid(t, t, indexing="ij")
        rows = np.empty((m * m, 4))
        rows[:, 0] = p.ravel()
        rows[:, 1] = 1.0 - p.ravel()
        rows[:, 2] = c.ravel()
        rows[:, 3] = 1.0 - c.ravel()
        return rows
    rng = np.random.default_rng(options.rng_seed)
    n_random = m * m
    parts = []
    uniform = np.concatenate([np.full(k, 1.0 / k) for k in lay.counts])
    parts.append(uniform[None, :])
    n_corners = int(np.prod(lay.counts))
    if n_corners <= 256:
        corners = np.zeros((n_corners, lay.total))
        for flat_idx, joint in enumerate(np.ndindex(*lay.counts)):
            for i, s in enumerate(joint):
                block = np.full(lay.counts[i], 0.1 / max(lay.counts[i] - 1, 1))
                block[s] = 0.9
                corners[flat_idx, lay.offsets[i]:lay.offsets[i + 1]] = block
        parts.append(corners)
    randoms = np.empty((n_random, lay.total))
    for i, k in enumerate(lay.counts):
        randoms[:, lay.offsets[i]:lay.offsets[i + 1]] = rng.dirichlet(
            np.ones(k), size=n_random
        )
    parts.append(randoms)
    return np.concatenate(parts, axis=0)


def enumerate_qre(
    game: Game, betas: Sequence[float], options: SolverOptions = SolverOptions()
) -> list[QreSolution]:
    """All distinct logit fixed points found from a deterministic multi-start.

    Converged results are deduplicated within ``options.dedupe_radius``
    (sup-norm, profile space) and sorted lexicographically by profile.
    """
    if game.num_players < 2:
        raise GameStructureError("solving needs at least two players")
    b = as_betas(game, betas)
    rows0 = _multistart_rows(game, options)
    nb = np.broadcast_to(b, (rows0.shape[0], b.size))
    rows, conv, rn, iters = _solve_batch(game, nb, rows0, options)
    good = np.flatnonzero(conv)
    if good.size == 0:
        return []
    grows, grn, giters = rows[good], rn[good], iters[good]
    # collapse near-bit-identical results first (cheap), then cluster the few
    # survivors by sup-norm; representative = lowest residual in the cluster
    rounded = np.round(grows, 9)
    _, inv = np.unique(rounded, axis=0, return_inverse=True)
    reps: list[tuple[np.ndarray, float, int]] = []
    for u in range(inv.max() + 1):
        members = np.flatnonzero(inv == u)
        best = members[np.argmin(grn[members])]
        reps.append((grows[best], float(grn[best]), int(giters[best])))
    clusters: list[tuple[np.ndarray, float, int]] = []
    for vec, resid, its in reps:
        matched = False
        for ci, (rep, rep_resid, rep_iters) in enumerate(clusters):
            if float(np.max(np.abs(vec - rep))) < options.dedupe_radius:
                matched = True
                if resid < rep_resid:
                    clusters[ci] = (vec, resid, its)
                break
        if not matched:
            clusters.append((vec, resid, its))
    clusters.sort(key=lambda item: tuple(item[0]))
    return [
        _solution_from_row(game, b, rep, True, resid, its)
        for rep, resid, its in clusters
    ]


# ---------------------------------------------------------------------------
# shared linear algebra for continuation and policy modules
# ---------------------------------------------------------------------------

def reduced_response_jacobian(
    game: Game, profile: StrategyProfile, betas: Sequence[float]
) -> np.ndarray:
    """Response Jacobian in reduced simplex coordinates (one dropped per player)."""
    profile.check_for(game)
    b = as_betas(game, betas)
    lay = _Layout(game)
    rows = profile.flat()[None, :]
    logits, _ = _logit_rows(lay, rows, b[None, :])
    return _reduced_jacobian_rows(lay, rows, b[None, :], logits)[0]


def fold_determinant(game: Game, profile: StrategyProfile, betas: Sequence[float]) -> float:
    """det(M - Id) for the composed two-player response map (reduced coords),
    or det(J - Id) of the full reduced Jacobian for three or more players.
    Zero exactly when the fixed point cannot be continued in the parameters.
    """
    if game.num_players < 2:
        raise GameStructureError("fold analysis needs at least two players")
    lay = _Layout(game)
    if lay.n == 2:
        profile.check_for(game)
        b = as_betas(game, betas)
        rows = profile.flat()[None, :]
        logits, _ = _logit_rows(lay, rows, b[None, :])
        b01 = _reduce_block(_response_block(lay, rows, b[None, :], logits, 0, 1))[0]
        b10 = _reduce_block(_response_block(lay, rows, b[None, :], logits, 1, 0))[0]
        m = b01 @ b10
        return float(np.linalg.det(m - np.eye(m.shape[0])))
    jac = reduced_response_jacobian(game, profile, betas)
    return float(np.linalg.det(jac - np.eye(jac.shape[0])))


def beta_response_derivative(
    game: Game, profile: StrategyProfile, betas: Sequence[float]
) -> np.ndarray:
    """Reduced-coordinate d(logit)/d(beta_j): shape (d, num_players).

    Column j is nonzero only in player j's own block since only g_j depends
    directly on beta_j.
    """
    profile.check_for(game)
    b = as_betas(game, betas)
    lay = _Layout(game)
    rows = profile.flat()[None, :]
    logits, cond = _logit_rows(lay, rows, b[None, :])
    out = np.zeros((lay.red_total, lay.n))
    for j in range(lay.n):
        g = logits[0, lay.offsets[j]:lay.offsets[j + 1]]
        c = cond[j][0]
        dg = g * (c - float(np.dot(g, c)))
        out[lay.red_offsets[j]:lay.red_offsets[j + 1], j] = dg[:-1]
    return out


def utility_profile_gradient(
    game: Game, profile: StrategyProfile, utility_player: int
) -> np.ndarray:
    """Gradient of E(u_i) with respect to reduced profile coordinates: (d,)."""
    game.check_player(utility_player)
    profile.check_for(game)
    lay = _Layout(game)
    letters = "abcdefghijklmnopqrstuvwxy"[: lay.n]
    out = np.zeros(lay.red_total)
    for k in range(lay.n):
        subs_in = [letters]
        ops: list[np.ndarray] = [game.utilities[utility_player]]
        for j in range(lay.n):
            if j == k:
                continue
            subs_in.append(letters[j])
            ops.append(profile.probs[j])
        subs = ",".join(subs_in) + "->" + letters[k]
        cross = np.einsum(subs, *ops)
        out[lay.red_offsets[k]:lay.red_offsets[k + 1]] = cross[:-1] - cross[-1]
    return out
