"""Tax-rate update procedures over the equilibrium surface.

Three one-step-lookahead rules move the rationality vector: players acting
independently on their own utility gradients (anarchy), a regulator ascending
the total-welfare gradient (socialism), and a bargained step maximising the
product of both players' first-order gains over a disc of moves (market).
Realised paths are scored by the discounted sum of total expected utility.

Utility gradients with respect to the rationality parameters come from
implicit differentiation of the fixed point; near a fold the linearisation is
singular and callers must treat the step as a jump instead.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .continuation import (
    DEFAULT_JUMP_THRESHOLD,
    PathTrace,
    TraceStep,
    continue_step,
    fold_indicator,
)
from .game import Game, GameStructureError
from .solver import (
    FoldProximityError,
    QreSolution,
    SolverOptions,
    _cond_rows,
    _Layout,
    _logit_rows,
    _profile_from_row,
    _residual_norms,
    _solve_batch,
    beta_response_derivative,
    fold_determinant,
    reduced_response_jacobian,
    utility_profile_gradient,
)

__all__ = [
    "PROCEDURES",
    "ProcedureConfig",
    "WelfareReport",
    "compare_procedures",
    "find_pareto_path",
    "run_procedure",
    "step_anarchy",
    "step_market",
    "step_socialism",
    "utility_beta_gradient",
    "welfare_Q",
]

PROCEDURES = ("anarchy", "socialism", "market")

_FOLD_GRADIENT_TOL = 1e-8
_CAP_SLACK = 1e-12
_GAIN_TOL = 1e-12


@dataclass(frozen=True)
class ProcedureConfig:
    procedure: str
    delta: float
    start_betas: np.ndarray
    gamma: float = 1.0
    t_max: int = 10_000
    enforce_start_cap: bool = True
    stationarity_eps: float = 1e-9

    def __post_init__(self) -> None:
        if self.procedure not in PROCEDURES:
            raise ValueError(f"procedure must be one of {PROCEDURES}")
        if not self.delta >= 0:
            raise ValueError("delta must be non-negative")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        b = np.asarray(self.start_betas, dtype=float)
        if not np.all(np.isfinite(b)):
            raise ValueError("start betas must be finite")
        b.setflags(write=False)
        object.__setattr__(self, "start_betas", b)


@dataclass(frozen=True)
class WelfareReport:
    """Discounted welfare of all three procedures across a discount grid."""

    gammas: np.ndarray
    q_by_procedure: dict[str, np.ndarray]
    traces: dict[str, PathTrace]

    @property
    def soc_minus_market(self) -> np.ndarray:
        return self.q_by_procedure["socialism"] - self.q_by_procedure["market"]


def utility_beta_gradient(game: Game, solution: QreSolution) -> np.ndarray:
    """Matrix of dE(u_i)/d(beta_j) by implicit differentiation, shape (N, N).

    Solves (Id - J) dq = dg/dbeta in reduced simplex coordinates and chains
    through the multilinear expected utility.  Raises FoldProximityError when
    the fixed-point linearisation is (numerically) singular, i.e. at a fold.
    """
    if not solution.converged:
        raise GameStructureError("gradient needs a converged solution")
    ind = fold_determinant(game, solution.profile, solution.betas)
    if not np.isfinite(ind) or abs(ind) <= _FOLD_GRADIENT_TOL:
        raise FoldProximityError(
            f"fold indicator {ind:.3e}: treat this step as a jump"
        )
    jac = reduced_response_jacobian(game, solution.profile, solution.betas)
    a = np.eye(jac.shape[0]) - jac
    rhs = beta_response_derivative(game, solution.profile, solution.betas)
    try:
        dq = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise FoldProximityError(f"singular fixed-point linearisation: {exc}") from exc
    n = game.num_players
    w = np.stack(
        [utility_profile_gradient(game, solution.profile, i) for i in range(n)]
    )
    return w @ dq


def step_anarchy(
    gradient: np.ndarray,
    current_betas: np.ndarray,
    start_betas: np.ndarray,
    delta: float,
    enforce_cap: bool = True,
) -> np.ndarray:
    """Each player follows the sign of their own-rationality utility gradient.

    Moves are exactly -delta, 0, or +delta per player; a zero derivative gives
    a zero move, and upward moves that would exceed the starting rationality
    are suppressed when the cap is on.
    """
    own = np.diag(np.asarray(gradient, dtype=float))
    out = np.where(own > 0, delta, np.where(own < 0, -delta, 0.0))
    if enforce_cap:
        blocked = (out > 0) & (current_betas + delta > start_betas + _CAP_SLACK)
        out = np.where(blocked, 0.0, out)
    return out


def _clip_to_cap(
    step: np.ndarray, current_betas: np.ndarray, start_betas: np.ndarray
) -> np.ndarray:
    headroom = start_betas - current_betas
    return np.where(step > 0, np.minimum(step, np.maximum(headroom, 0.0)), step)


def step_socialism(
    gradient: np.ndarray,
    current_betas: np.ndarray,
    start_betas: np.ndarray,
    delta: float,
    enforce_cap: bool = True,
    stationarity_eps: float = 1e-9,
) -> np.ndarray:
    """Regulator's move: total-welfare gradient scaled to norm sqrt(2)*delta.

    Coordinates pinned at the start cap (and pushing above it) are projected
    to zero before normalising; positive components are finally clipped to the
    remaining headroom so the cap can never be crossed mid-range.
    """
    g = np.asarray(gradient, dtype=float).sum(axis=0)
    if enforce_cap:
        capped = (g > 0) & (current_betas >= start_betas - _CAP_SLACK)
        g = np.where(capped, 0.0, g)
    norm = float(np.linalg.norm(g))
    if norm < stationarity_eps:
        return np.zeros_like(g)
    step = np.sqrt(2.0) * delta * g / norm
    if enforce_cap:
        step = _clip_to_cap(step, current_betas, start_betas)
    return step


def _unit_directions(n_angles: int) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(n_angles) / n_angles
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


def step_market(
    gradient: np.ndarray,
    current_betas: np.ndarray,
    start_betas: np.ndarray,
    delta: float,
    enforce_cap: bool = True,
    n_angles: int = 720,
) -> np.ndarray:
    """Bargained move: maximise the product of first-order utility gains.

    Only directions giving every player a strictly positive gain are
    admissible (the current point is the disagreement outcome, so the step is
    zero when no such direction exists).  Two-player games scan a dense
    angular grid with golden-section refinement; larger games use a seeded
    local ascent over the move sphere.
    """
    grad = np.asarray(gradient, dtype=float)
    n = grad.shape[0]
    radius = np.sqrt(2.0) * delta
    if n != 2:
        return _market_ascent(grad, current_betas, start_betas, radius, enforce_cap)

    def feasible(step: np.ndarray) -> bool:
        if not enforce_cap:
            return True
        return bool(np.all(current_betas + step <= start_betas + _CAP_SLACK))

    def product(step: np.ndarray) -> float:
        gains = grad @ step
        if np.any(gains <= 0) or not feasible(step):
            return -np.inf
        return float(np.prod(gains))

    dirs = radius * _unit_directions(n_angles)
    values = np.array([product(d) for d in dirs])
    best = int(np.argmax(values))
    if not np.isfinite(values[best]):
        return np.zeros(n)
    theta0 = 2.0 * np.pi * (best - 1) / n_angles
    theta1 = 2.0 * np.pi * (best + 1) / n_angles

    def f(theta: float) -> float:
        return product(radius * np.array([np.cos(theta), np.sin(theta)]))

    lo, hi = theta0, theta1
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(80):
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = f(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = f(x1)
    theta = x1 if f1 >= f2 else x2
    step = radius * np.array([np.cos(theta), np.sin(theta)])
    if product(step) == -np.inf:
        step = radius * _unit_directions(n_angles)[best]
    if enforce_cap:
        step = _clip_to_cap(step, current_betas, start_betas)
    return step


def _market_ascent(
    grad: np.ndarray,
    current_betas: np.ndarray,
    start_betas: np.ndarray,
    radius: float,
    enforce_cap: bool,
) -> np.ndarray:
    """Deterministic seeded search for the all-positive product maximiser."""
    n = grad.shape[1]
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((4096, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    steps = radius * dirs
    gains = steps @ grad.T
    ok = np.all(gains > 0, axis=1)
    if enforce_cap:
        ok &= np.all(current_betas + steps <= start_betas + _CAP_SLACK, axis=1)
    if not np.any(ok):
        return np.zeros(n)
    logprod = np.where(ok, np.sum(np.log(np.where(ok[:, None], gains, 1.0)), axis=1), -np.inf)
    x = steps[int(np.argmax(logprod))]
    for _ in range(200):
        g = grad @ x
        grad_log = grad.T @ (1.0 / g)
        tangent = grad_log - (grad_log @ x) * x / (radius * radius)
        ng = float(np.linalg.norm(tangent))
        if ng < 1e-14:
            break
        trial = x + (0.1 * radius) * tangent / ng
        trial *= radius / float(np.linalg.norm(trial))
        tg = grad @ trial
        if np.any(tg <= 0):
            break
        if enforce_cap and not np.all(
            current_betas + trial <= start_betas + _CAP_SLACK
        ):
            break
        if float(np.sum(np.log(tg))) <= float(np.sum(np.log(g))):
            break
        x = trial
    if enforce_cap:
        x = _clip_to_cap(x, current_betas, start_betas)
    return x


def welfare_Q(trace: PathTrace, gamma: float) -> float:
    """Discounted total-utility score of a realised path.

    Q = sum_{t'=1..T} (1+gamma)^(-t') W(t')  +  (1+gamma)^(-T) W(T)/gamma,
    with W the per-step total expected utility and the second term the exact
    geometric tail of a path stationary from its final step on.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not len(trace.steps):
        raise ValueError("trace must contain at least the starting step")
    w = trace.welfare()
    t_final = len(w) - 1
    if t_final == 0:
        return float(w[0] / gamma)
    tt = np.arange(1, t_final + 1)
    weights = (1.0 + gamma) ** (-tt.astype(float))
    return float(np.sum(weights * w[1:]) + (1.0 + gamma) ** (-t_final) * w[t_final] / gamma)


def _step_rule(
    config: ProcedureConfig,
) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    start = config.start_betas

    def rule(gradient: np.ndarray, betas: np.ndarray) -> np.ndarray:
        if config.procedure == "anarchy":
            # the no-higher-than-start constraint is part of the anarchy rule
            # itself; the config flag only frees the regulated procedures
            return step_anarchy(gradient, betas, start, config.delta, True)
        if config.procedure == "socialism":
            return step_socialism(
                gradient, betas, start, config.delta,
                config.enforce_start_cap, config.stationarity_eps,
            )
        return step_market(
            gradient, betas, start, config.delta, config.enforce_start_cap
        )

    return rule


def run_procedure(
    game: Game,
    config: ProcedureConfig,
    initial: QreSolution,
    options: SolverOptions = SolverOptions(),
    *,
    jump_threshold: float = DEFAULT_JUMP_THRESHOLD,
) -> tuple[PathTrace, float]:
    """Iterate one procedure from a converged start until stationary or t_max.

    Each step computes the utility gradients, applies the procedure's rule,
    and re-solves adiabatically (with the jump rule) at the shifted betas.
    If the gradient is unavailable because the path sits on a fold, the last
    valid gradient drives the step and the step is flagged.
    """
    if not initial.converged:
        raise GameStructureError("procedures must start from a converged solution")
    if not np.allclose(initial.betas, config.start_betas, atol=1e-9):
        raise GameStructureError("initial solution does not sit at start_betas")
    rule = _step_rule(config)
    betas = np.asarray(config.start_betas, dtype=float)
    branch = initial.branch_id if initial.branch_id is not None else 0
    current = replace(initial, branch_id=branch)
    steps = [
        TraceStep(
            t=0,
            betas=betas,
            solution=current,
            jump=False,
            fold_indicator=fold_indicator(game, current),
            dbeta=np.zeros(game.num_players),
        )
    ]
    truncated = False
    diagnostic = ""
    last_gradient: np.ndarray | None = None
    for t in range(1, config.t_max + 1):
        fallback = False
        try:
            gradient = utility_beta_gradient(game, current)
            last_gradient = gradient
        except FoldProximityError:
            if last_gradient is None:
                truncated = True
                diagnostic = f"no usable gradient at step {t} (fold at the start)"
                break
            gradient = last_gradient
            fallback = True
        dbeta = rule(gradient, betas)
        if float(np.linalg.norm(dbeta)) < config.stationarity_eps:
            break
        new_betas = betas + dbeta
        nxt, jumped = continue_step(game, current, new_betas, options, jump_threshold)
        if nxt is None:
            truncated = True
            diagnostic = f"continuation failed at step {t}, beta={new_betas.tolist()}"
            break
        if jumped:
            branch += 1
        nxt = replace(nxt, branch_id=branch)
        steps.append(
            TraceStep(
                t=t,
                betas=new_betas,
                solution=nxt,
                jump=jumped,
                fold_indicator=fold_indicator(game, nxt),
                dbeta=dbeta,
                gradient_fallback=fallback,
            )
        )
        betas = new_betas
        current = nxt
    trace = PathTrace(steps=tuple(steps), truncated=truncated, diagnostic=diagnostic)
    return trace, welfare_Q(trace, config.gamma)


def _batched_candidates(
    game: Game,
    current: QreSolution,
    betas_matrix: np.ndarray,
    options: SolverOptions,
    jump_threshold: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Re-solve from the current profile at many beta vectors at once.

    Returns (ok, profiles, expected_utilities): ok marks candidates that
    converged without leaving the adiabatic tube around the seed.
    """
    lay = _Layout(game)
    k = betas_matrix.shape[0]
    seed = np.broadcast_to(current.profile.flat(), (k, lay.total)).copy()
    rows, conv, _rn, _it = _solve_batch(game, betas_matrix, seed, options)
    dist = np.max(np.abs(rows - seed), axis=1) if lay.total else np.zeros(k)
    ok = conv & (dist <= jump_threshold)
    cond = _cond_rows(lay, rows)
    eus = np.stack(
        [np.sum(rows[:, lay.offsets[i]:lay.offsets[i + 1]] * cond[i], axis=1)
         for i in range(lay.n)],
        axis=1,
    )
    return ok, rows, eus


def find_pareto_path(
    game: Game,
    start: QreSolution,
    delta: float,
    options: SolverOptions = SolverOptions(),
    *,
    jump_threshold: float = DEFAULT_JUMP_THRESHOLD,
    n_angles: int = 720,
    max_steps: int = 10_000,
) -> PathTrace:
    """Greedy path search: every step must help every player.

    Candidate moves live on a disc of radius sqrt(2)*delta (scanned at
    ``n_angles`` directions for two players).  A candidate survives when the
    rationalities stay at or below their starting values, the adiabatic
    corrector succeeds without a jump, and both the linearised and the
    realised utility changes of every player are strictly positive (the
    realised check keeps the output monotone, which the trace contract
    promises).  Among survivors a Pareto-dominant candidate wins if one
    exists, then the largest total gain, then lexicographic order of the
    move.  The trace is empty beyond the start when no candidate survives.
    """
    if not start.converged:
        raise GameStructureError("path search must start from a converged solution")
    if game.num_players != 2:
        raise GameStructureError("the direction scan is implemented for two players")
    betas = np.asarray(start.betas, dtype=float)
    start_betas = betas.copy()
    branch = start.branch_id if start.branch_id is not None else 0
    current = replace(start, branch_id=branch)
    steps = [
        TraceStep(
            t=0,
            betas=betas,
            solution=current,
            jump=False,
            fold_indicator=fold_indicator(game, current),
            dbeta=np.zeros(game.num_players),
        )
    ]
    if delta > 0:
        moves_all = np.sqrt(2.0) * delta * _unit_directions(n_angles)
        for t in range(1, max_steps + 1):
            feasible = np.all(
                betas + moves_all <= start_betas + _CAP_SLACK, axis=1
            )
            moves = moves_all[feasible]
            if not moves.shape[0]:
                break
            try:
                gradient = utility_beta_gradient(game, current)
            except FoldProximityError:
                gradient = None
            ok, rows, eus = _batched_candidates(
                game, current, betas + moves, options, jump_threshold
            )
            realized = eus - current.expected_utilities[None, :]
            if gradient is not None:
                linear = moves @ gradient.T
            else:
                linear = realized
            survive = (
                ok
                & np.all(linear > _GAIN_TOL, axis=1)
                & np.all(realized > _GAIN_TOL, axis=1)
            )
            cand = np.flatnonzero(survive)
            if cand.size == 0:
                break
            gains = linear[cand]
            col_max = gains.max(axis=0)
            dominant = np.flatnonzero(np.all(gains >= col_max - 1e-15, axis=1))
            if dominant.size:
                pool = cand[dominant]
            else:
                total = gains.sum(axis=1)
                pool = cand[np.flatnonzero(total >= total.max() - 1e-15)]
            order = np.lexsort(
                tuple(moves[pool][:, c] for c in range(moves.shape[1] - 1, -1, -1))
            )
            pick = int(pool[order[0]])
            betas = betas + moves[pick]
            sol = QreSolution(
                betas=betas,
                profile=_profile_from_row(game, rows[pick]),
                residual_norm=0.0,
                expected_utilities=eus[pick],
                converged=True,
                branch_id=branch,
            )
            sol = _with_residual(game, sol)
            steps.append(
                TraceStep(
                    t=t,
                    betas=betas,
                    solution=sol,
                    jump=False,
                    fold_indicator=fold_indicator(game, sol),
                    dbeta=moves[pick],
                )
            )
            current = sol
    return PathTrace(steps=tuple(steps))


def _with_residual(game: Game, sol: QreSolution) -> QreSolution:
    lay = _Layout(game)
    rows = sol.profile.flat()[None, :]
    logits, _ = _logit_rows(lay, rows, np.asarray(sol.betas)[None, :])
    rn = float(_residual_norms(rows, logits)[0])
    return replace(sol, residual_norm=rn)


def compare_procedures(
    game: Game,
    start_betas: Sequence[float],
    delta: float,
    gammas: Sequence[float],
    options: SolverOptions = SolverOptions(),
    *,
    initial: QreSolution | None = None,
    t_max: int = 10_000,
    enforce_start_cap: bool = True,
    jump_threshold: float = DEFAULT_JUMP_THRESHOLD,
) -> WelfareReport:
    """Run all three procedures from one shared start and score them per gamma.

    The paths themselves do not depend on the discount factor, so each
    procedure runs once and is re-scored across the grid.  When no initial
    solution is supplied the lowest-total-welfare equilibrium at the start is
    used (the poor equilibrium the procedures are meant to escape).
    """
    from .continuation import select_solution
    from .solver import enumerate_qre

    g = np.asarray(gammas, dtype=float)
    if g.size == 0 or np.any(g <= 0):
        raise ValueError("gamma grid must be non-empty and positive")
    if initial is None:
        initial = select_solution(
            enumerate_qre(game, start_betas, options), "min-welfare"
        )
    traces: dict[str, PathTrace] = {}
    qs: dict[str, np.ndarray] = {}
    for name in PROCEDURES:
        config = ProcedureConfig(
            procedure=name,
            delta=delta,
            start_betas=np.asarray(start_betas, dtype=float),
            gamma=float(g[0]),
            t_max=t_max,
            enforce_start_cap=enforce_start_cap,
        )
        trace, _ = run_procedure(
            game, config, initial, options, jump_threshold=jump_threshold
        )
        traces[name] = trace
        qs[name] = np.array([welfare_Q(trace, gamma) for gamma in g])
    return WelfareReport(gammas=g, q_by_procedure=qs, traces=traces)
