from __future__ import annotations

import numpy as np
import pytest

from qrelab import (
    BetaGrid,
    ContinuationError,
    SolverOptions,
    StrategyProfile,
    build_beta_path,
    enumerate_qre,
    fold_indicator,
    locate_fold,
    logit_response,
    select_solution,
    solve_qre,
    sweep_surface,
    trace_branch,
)
from qrelab.continuation import TraceStep

from conftest import random_game, random_profile
from oracles import BOS_FOLD_BCOL4, attractors_2x2, scan_qre_2x2


def test_fold_indicator_at_zero_beta(bos):
    sol = solve_qre(bos, [0.0, 0.0])
    ind = fold_indicator(bos, sol)
    assert abs(abs(ind) - 1.0) <= 1e-12
    assert ind == pytest.approx(-1.0, abs=1e-12)


def test_fold_indicator_requires_convergence(bos):
    sol = solve_qre(bos, [5.0, 5.0], options=SolverOptions(max_iterations=1, newton_polish=False))
    with pytest.raises(ContinuationError):
        fold_indicator(bos, sol)


def _fd_fold_indicator(game, sol, h=1e-7):
    """Fold determinant rebuilt from finite differences of the logit map."""
    counts = game.strategy_counts
    base = [np.array(q) for q in sol.profile.probs]

    def response(player, probs):
        prof = StrategyProfile.__new__(StrategyProfile)
        object.__setattr__(prof, "probs", tuple(np.asarray(p) for p in probs))
        return logit_response(game, prof, player, sol.betas[player])

    blocks = {}
    for i, j in ((0, 1), (1, 0)):
        blk = np.zeros((counts[i], counts[j]))
        for b in range(counts[j]):
            plus = [q.copy() for q in base]
            minus = [q.copy() for q in base]
            plus[j][b] += h
            minus[j][b] -= h
            blk[:, b] = (response(i, plus) - response(i, minus)) / (2 * h)
        blocks[(i, j)] = blk[:-1, :-1] - blk[:-1, -1:]
    m = blocks[(0, 1)] @ blocks[(1, 0)]
    return float(np.linalg.det(m - np.eye(m.shape[0])))


def test_fold_indicator_matches_finite_differences():
    rng = np.random.default_rng(17)
    for _ in range(5):
        game = random_game(rng, (2, 2))
        betas = rng.uniform(0.2, 3.0, size=2)
        sol = solve_qre(game, betas, random_profile(rng, (2, 2)))
        assert sol.converged
        assert fold_indicator(game, sol) == pytest.approx(
            _fd_fold_indicator(game, sol), abs=1e-6
        )


def test_indicator_sign_change_brackets_count_change(bos):
    # along beta_col = 4: one solution below the fold, three above
    low = enumerate_qre(bos, [0.7, 4.0])
    high = enumerate_qre(bos, [1.1, 4.0])
    assert (len(low), len(high)) == (1, 3)
    prod_low = np.prod([fold_indicator(bos, s) for s in low])
    prod_high = np.prod([fold_indicator(bos, s) for s in high])
    assert prod_low * prod_high < 0


def test_sweep_single_point_equals_enumerate(bos):
    grid = BetaGrid(np.array([5.0, 5.0]), np.array([5.0, 5.0]), (1, 1))
    samples = sweep_surface(bos, grid, workers=1)
    assert len(samples) == 1
    sols = enumerate_qre(bos, [5.0, 5.0])
    assert len(samples[0].solutions) == len(sols)
    for a, b in zip(samples[0].solutions, sols):
        assert a.profile.sup_distance(b.profile) == 0.0
    assert [s.branch_id for s in samples[0].solutions] == [0, 1, 2]


def test_sweep_counts_match_scan_oracle(bos):
    grid = BetaGrid(np.array([0.0, 0.0]), np.array([5.0, 5.0]), (8, 8))
    samples = sweep_surface(bos, grid, SolverOptions(multistart_grid=25), workers=1)
    assert all(len(s.solutions) in (1, 3) for s in samples)
    rng = np.random.default_rng(4)
    picks = rng.choice(len(samples), size=20, replace=True)
    for k in picks:
        sample = samples[k]
        oracle = scan_qre_2x2(
            bos.utilities[0], bos.utilities[1], sample.betas[0], sample.betas[1]
        )
        assert len(sample.solutions) == len(oracle)


def test_sweep_stable_solutions_match_plain_iteration_attractors(bos):
    betas = (3.0, 4.0)
    sols = enumerate_qre(bos, list(betas))
    stable = sorted(
        (float(s.profile.flat()[0]), float(s.profile.flat()[2]))
        for s in sols
        if fold_indicator(bos, s) < 0
    )
    oracle = attractors_2x2(bos.utilities[0], bos.utilities[1], *betas, grid=30)
    assert len(stable) == len(oracle)
    for a, b in zip(stable, oracle):
        assert a[0] == pytest.approx(b[0], abs=1e-6)
        assert a[1] == pytest.approx(b[1], abs=1e-6)


def test_branch_count_stable_under_refinement(bos, negated):
    opts = SolverOptions(multistart_grid=15)

    def branch_count(game, n):
        grid = BetaGrid(np.array([0.0, 0.0]), np.array([5.0, 5.0]), (n, n))
        samples = sweep_surface(game, grid, opts, workers=2)
        return len({s.branch_id for smp in samples for s in smp.solutions})

    assert branch_count(bos, 24) == branch_count(bos, 48) == 4
    assert branch_count(negated, 24) == branch_count(negated, 48) == 3


def test_trace_constant_path_has_no_jumps(bos):
    start = select_solution(enumerate_qre(bos, [5.0, 5.0]), "index:0")
    path = [np.array([5.0, 5.0])] * 6
    trace = trace_branch(bos, path, start)
    assert len(trace.steps) == 6
    assert not any(s.jump for s in trace.steps)
    for s in trace.steps:
        assert s.solution.profile.sup_distance(start.profile) <= 1e-9


def test_trace_requires_matching_start(bos):
    start = select_solution(enumerate_qre(bos, [5.0, 5.0]), "index:0")
    with pytest.raises(ContinuationError):
        trace_branch(bos, [np.array([4.0, 4.0]), np.array([4.1, 4.0])], start)


def test_trace_jump_free_steps_stay_within_threshold(bos):
    start = select_solution(enumerate_qre(bos, [5.0, 5.0]), "max-eu1")
    path = build_beta_path([[5.0, 5.0], [0.0, 5.0]], 0.05)
    trace = trace_branch(bos, path, start)
    assert not any(s.jump for s in trace.steps)
    lipschitz = 10.0  # generous slope bound for this game's surface
    for prev, cur in zip(trace.steps[:-1], trace.steps[1:]):
        assert cur.solution.profile.sup_distance(prev.solution.profile) <= 0.2
        dbeta = float(np.linalg.norm(cur.betas - prev.betas))
        deu = np.abs(cur.solution.expected_utilities - prev.solution.expected_utilities)
        assert np.all(deu <= lipschitz * dbeta)


def test_resolve_workers_env(monkeypatch):
    from qrelab.continuation import resolve_workers

    assert resolve_workers(3) == 3
    monkeypatch.setenv("QRE_THREADS", "5")
    assert resolve_workers(None) == 5
    monkeypatch.setenv("QRE_THREADS", "0")
    assert resolve_workers(None) >= 1
    monkeypatch.delenv("QRE_THREADS")
    assert resolve_workers(None) >= 1


def test_hysteresis_loop(bos):
    start = select_solution(enumerate_qre(bos, [5.0, 5.0]), "max-eu0")
    path = build_beta_path([[5.0, 5.0], [0.0, 5.0], [5.0, 5.0]], 0.1)
    trace = trace_branch(bos, path, start)
    jumps = [s for s in trace.steps if s.jump]
    assert len(jumps) == 1
    assert jumps[0].t <= len(path) // 2
    end_dist = trace.steps[-1].solution.profile.sup_distance(trace.steps[0].solution.profile)
    assert end_dist > 0.1
    # expected utility of the row player drops discontinuously at the jump
    t = jumps[0].t
    eu0 = trace.expected_utilities()[:, 0]
    assert eu0[t] < eu0[t - 1] - 0.5


def test_build_beta_path_step_bound():
    path = build_beta_path([[5.0, 5.0], [0.0, 5.0], [5.0, 5.0]], 0.05)
    assert len(path) == 201
    for a, b in zip(path[:-1], path[1:]):
        assert np.linalg.norm(b - a) <= 0.05 + 1e-12


def test_locate_fold_on_bos(bos):
    mid = select_solution(enumerate_qre(bos, [2.0, 4.0]), "index:1")
    trace = trace_branch(bos, build_beta_path([[2.0, 4.0], [0.5, 4.0]], 0.05), mid)
    pair = next(
        (
            (a, b)
            for a, b in zip(trace.steps[:-1], trace.steps[1:])
            if a.fold_indicator * b.fold_indicator < 0
        ),
        None,
    )
    assert pair is not None
    beta_fold, sol = locate_fold(bos, pair[0], pair[1])
    assert beta_fold[0] == pytest.approx(BOS_FOLD_BCOL4, abs=1e-6)
    assert beta_fold[1] == 4.0
    beta_again, _ = locate_fold(bos, pair[0], pair[1])
    assert float(beta_again[0]) == float(beta_fold[0])


def test_locate_fold_symmetric_pair(bos):
    # swapping the players maps the fold at (x, 4) to the fold at (4, x)
    mid = select_solution(enumerate_qre(bos, [4.0, 2.0]), "index:1")
    trace = trace_branch(bos, build_beta_path([[4.0, 2.0], [4.0, 0.5]], 0.05), mid)
    pair = next(
        (
            (a, b)
            for a, b in zip(trace.steps[:-1], trace.steps[1:])
            if a.fold_indicator * b.fold_indicator < 0
        ),
        None,
    )
    assert pair is not None
    beta_fold, _ = locate_fold(bos, pair[0], pair[1])
    assert beta_fold[1] == pytest.approx(BOS_FOLD_BCOL4, abs=1e-6)


def test_locate_fold_requires_sign_change(bos):
    sol = select_solution(enumerate_qre(bos, [5.0, 5.0]), "index:0")
    step = TraceStep(
        t=0,
        betas=sol.betas,
        solution=sol,
        jump=False,
        fold_indicator=fold_indicator(bos, sol),
        dbeta=np.zeros(2),
    )
    with pytest.raises(ContinuationError):
        locate_fold(bos, step, step)


def test_grid_validation():
    with pytest.raises(Exception):
        BetaGrid(np.array([1.0, 0.0]), np.array([0.0, 5.0]), (5, 5))
    with pytest.raises(Exception):
        BetaGrid(np.array([0.0]), np.array([5.0, 5.0]), (5, 5))
