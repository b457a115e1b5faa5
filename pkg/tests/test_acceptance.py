"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and timings.  Expensive artifacts (surface sweeps, procedure runs) are
computed once per session and shared; criterion 10 recomputes the whole
pipeline a second time and byte-compares every CSV export.

Documented experiment choices (see README):
- hysteresis loop starts on the high-E(u_row) branch of battle_of_sexes
  (the branch whose fold the path (5,5)->(0,5) actually crosses);
- pareto path starts at (4,4) on the lowest-welfare branch of the negated
  game with step 0.05;
- procedure comparisons run on the negated game from starts (4.6,2.8),
  (2.8,4.6), (4.2,3.0) with delta=0.2 over gammas 0.01:2.0:50.
"""
from __future__ import annotations

import io
import time
from pathlib import Path

import numpy as np
import pytest

from qrelab import (
    BetaGrid,
    SolverOptions,
    build_beta_path,
    compare_procedures,
    enumerate_qre,
    find_pareto_path,
    fold_indicator,
    load_game,
    scale_utilities,
    select_solution,
    solve_qre,
    sweep_surface,
    trace_branch,
    uniform_profile,
    utility_beta_gradient,
)
from qrelab.gamefile import write_surface_csv, write_trace_csv, write_welfare_csv
from qrelab.solver import FoldProximityError

from conftest import random_game
from oracles import scan_qre_2x2

GRID_50 = BetaGrid(np.array([0.0, 0.0]), np.array([5.0, 5.0]), (50, 50))
PARETO_START = np.array([4.0, 4.0])
PARETO_DELTA = 0.05
COMPARE_STARTS = [np.array([4.6, 2.8]), np.array([2.8, 4.6]), np.array([4.2, 3.0])]
COMPARE_DELTA = 0.2
COMPARE_GAMMAS = np.linspace(0.01, 2.0, 50)
HYSTERESIS_WAYPOINTS = [[5.0, 5.0], [0.0, 5.0], [5.0, 5.0]]
HYSTERESIS_STEP = 0.05


def report(criterion: str, ok: bool, detail: str = "") -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")


def run_pipeline(outdir: Path) -> dict:
    """Compute every CSV-producing acceptance artifact and export it."""
    bos = load_game("battle_of_sexes")
    neg = load_game("battle_of_sexes_negated")
    options = SolverOptions()
    times: dict[str, float] = {}
    art: dict = {"times": times, "bos": bos, "neg": neg}

    t0 = time.perf_counter()
    art["c1_solutions"] = enumerate_qre(bos, [0.0, 0.0], options)
    times["c1"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    art["c2_solutions"] = enumerate_qre(bos, [50.0, 50.0], options)
    times["c2"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    art["c3_samples"] = sweep_surface(bos, GRID_50, options)
    times["c3"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    start = select_solution(enumerate_qre(bos, [5.0, 5.0], options), "max-eu0")
    path = build_beta_path(HYSTERESIS_WAYPOINTS, HYSTERESIS_STEP)
    art["c6_trace"] = trace_branch(bos, path, start, options)
    times["c6"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    art["c7_samples"] = sweep_surface(neg, GRID_50, options)
    times["c7"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pareto_start = select_solution(
        enumerate_qre(neg, PARETO_START, options), "min-welfare"
    )
    art["c8_trace"] = find_pareto_path(neg, pareto_start, PARETO_DELTA, options)
    times["c8"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    art["c9_reports"] = [
        compare_procedures(neg, start, COMPARE_DELTA, COMPARE_GAMMAS, options)
        for start in COMPARE_STARTS
    ]
    times["c9"] = time.perf_counter() - t0

    def export(name: str, writer) -> None:
        buf = io.StringIO()
        writer(buf)
        (outdir / name).write_text(buf.getvalue())

    def solutions_csv(sols, betas, game, buf):
        from dataclasses import replace

        from qrelab.continuation import SurfaceSample

        tagged = tuple(replace(s, branch_id=i) for i, s in enumerate(sols))
        sample = SurfaceSample(
            betas=np.asarray(betas, dtype=float),
            solutions=tagged,
            fold_indicators=tuple(fold_indicator(game, s) for s in tagged),
            grid_index=(0, 0),
        )
        write_surface_csv([sample], game, buf)

    export("c1_solve.csv", lambda b: solutions_csv(art["c1_solutions"], [0, 0], bos, b))
    export("c2_solve.csv", lambda b: solutions_csv(art["c2_solutions"], [50, 50], bos, b))
    export("c3_surface.csv", lambda b: write_surface_csv(art["c3_samples"], bos, b))
    export("c6_trace.csv", lambda b: write_trace_csv(art["c6_trace"], bos, b))
    export("c7_surface.csv", lambda b: write_surface_csv(art["c7_samples"], neg, b))
    export("c8_pareto.csv", lambda b: write_trace_csv(art["c8_trace"], neg, b))
    for k, rep in enumerate(art["c9_reports"]):
        export(f"c9_welfare_{k}.csv", lambda b, rep=rep: write_welfare_csv(rep, b))
    return art


@pytest.fixture(scope="session")
def run_a(tmp_path_factory) -> dict:
    outdir = tmp_path_factory.mktemp("acceptance_run_a")
    art = run_pipeline(outdir)
    art["outdir"] = outdir
    return art


def test_criterion_01_uniform_limit(run_a):
    sols = run_a["c1_solutions"]
    elapsed = run_a["times"]["c1"]
    ok = len(sols) == 1
    sol = sols[0]
    uniform = uniform_profile(run_a["bos"])
    ok = ok and sol.profile.sup_distance(uniform) <= 1e-10
    ok = ok and np.all(np.abs(sol.expected_utilities - 0.75) <= 1e-10)
    ok = ok and elapsed < 1.0
    report("1 (uniform limit)", ok, f"{len(sols)} solution(s), {elapsed:.2f}s")
    assert len(sols) == 1
    assert sol.profile.sup_distance(uniform) <= 1e-10
    assert np.all(np.abs(sol.expected_utilities - 0.75) <= 1e-10)
    assert elapsed < 1.0


NASH_SET = [
    np.array([1.0, 0.0, 1.0, 0.0]),
    np.array([0.0, 1.0, 0.0, 1.0]),
    np.array([2 / 3, 1 / 3, 1 / 3, 2 / 3]),
]


def _nash_distances(sols):
    out = []
    for sol in sols:
        flat = sol.profile.flat()
        out.append(min(float(np.max(np.abs(flat - ne))) for ne in NASH_SET))
    return out


def test_criterion_02_nash_limit_structure(run_a):
    """The parts of criterion 2 that hold: count, pure-branch distances,
    and the beta -> infinity trend of the mixed branch."""
    sols = run_a["c2_solutions"]
    elapsed = run_a["times"]["c2"]
    assert len(sols) == 3
    dists = _nash_distances(sols)
    assert dists[0] <= 1e-3 and dists[2] <= 1e-3, "pure branches"
    # the interior solution sits ~ln(2)/(3*beta) from the mixed equilibrium:
    # 4.49e-3 at beta=50, inside 1e-3 only once beta exceeds ~231
    assert dists[1] == pytest.approx(np.log(2) / 150, rel=0.03)
    far = enumerate_qre(run_a["bos"], [500.0, 500.0])
    assert max(_nash_distances(far)) <= 1e-3
    assert elapsed < 5.0
    report(
        "2 (nash limit, attainable part)",
        True,
        f"3 solutions, pure dists {dists[0]:.1e}/{dists[2]:.1e}, "
        f"mixed dist {dists[1]:.2e} (= ln2/(3*50)), {elapsed:.2f}s",
    )


@pytest.mark.xfail(
    strict=True,
    reason="spec tolerance unattainable: at beta=(50,50) the interior QRE sits "
    "ln(2)/(3*50) = 4.6e-3 from the mixed Nash equilibrium, so the stated "
    "1e-3 sup-norm bound cannot hold (see decisions ledger)",
)
def test_criterion_02_nash_limit_as_stated(run_a):
    sols = run_a["c2_solutions"]
    dists = _nash_distances(sols)
    ok = len(sols) == 3 and max(dists) <= 1e-3
    report("2 (nash limit, as stated)", ok, f"max distance {max(dists):.2e} > 1e-3")
    assert len(sols) == 3
    assert max(dists) <= 1e-3


def _count_and_indproduct(samples, shape):
    counts = np.zeros(shape, dtype=int)
    prods = np.ones(shape)
    for s in samples:
        counts[s.grid_index] = len(s.solutions)
        prods[s.grid_index] = float(np.prod(s.fold_indicators)) if s.solutions else np.nan
    return counts, prods


def test_criterion_03_solution_count_structure(run_a):
    samples = run_a["c3_samples"]
    elapsed = run_a["times"]["c3"]
    counts, prods = _count_and_indproduct(samples, (50, 50))
    ok_counts = np.all((counts == 1) | (counts == 3))
    boundaries = 0
    sign_changes = 0
    for axis in (0, 1):
        rolled = np.roll(counts, -1, axis=axis)
        prod_next = np.roll(prods, -1, axis=axis)
        sl = [slice(None)] * 2
        sl[axis] = slice(0, -1)
        sl = tuple(sl)
        boundary = (counts[sl] != rolled[sl])
        boundaries += int(boundary.sum())
        flip = (np.sign(prods[sl]) != np.sign(prod_next[sl]))
        sign_changes += int((boundary & flip).sum())
    ok = bool(ok_counts) and boundaries > 0 and sign_changes == boundaries
    report(
        "3 (count structure)",
        ok and elapsed < 60,
        f"counts in {{1,3}}: {bool(ok_counts)}, {sign_changes}/{boundaries} "
        f"boundaries flip indicator sign, {elapsed:.1f}s",
    )
    assert ok_counts
    assert boundaries > 0
    assert sign_changes == boundaries
    assert elapsed < 60


def test_criterion_04_scaling_equivalence():
    rng = np.random.default_rng(2024)
    options = SolverOptions()
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        counts = (2, 2) if rng.uniform() < 0.7 else (2, 3)
        game = random_game(rng, counts)
        betas = rng.uniform(0.1, 3.0, size=2)
        alphas = rng.uniform(0.25, 4.0, size=2)
        init = uniform_profile(game)
        a = solve_qre(game, betas, init, options)
        b = solve_qre(scale_utilities(game, alphas), betas / alphas, init, options)
        assert a.converged and b.converged
        worst = max(worst, a.profile.sup_distance(b.profile))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 10
    report("4 (scaling equivalence)", ok, f"worst distance {worst:.2e}, {elapsed:.1f}s")
    assert worst <= 1e-9
    assert elapsed < 10


def test_criterion_05_gradient_oracle(run_a):
    bos = run_a["bos"]
    rng = np.random.default_rng(77)
    options = SolverOptions()
    h = 1e-5
    t0 = time.perf_counter()
    checked = 0
    worst = 0.0
    while checked < 20:
        betas = rng.uniform(0.3, 5.0, size=2)
        sol = solve_qre(bos, betas, options=options)
        if not sol.converged or abs(fold_indicator(bos, sol)) <= 1e-3:
            continue
        grad = utility_beta_gradient(bos, sol)
        fd = np.zeros((2, 2))
        for j in range(2):
            bp, bm = betas.copy(), betas.copy()
            bp[j] += h
            bm[j] -= h
            sp = solve_qre(bos, bp, sol.profile, options)
            sm = solve_qre(bos, bm, sol.profile, options)
            assert sp.converged and sm.converged
            fd[:, j] = (sp.expected_utilities - sm.expected_utilities) / (2 * h)
        err = np.abs(grad - fd) / np.maximum(1.0, np.abs(fd))
        worst = max(worst, float(err.max()))
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 30
    report("5 (gradient oracle)", ok, f"20 points, worst rel err {worst:.2e}, {elapsed:.1f}s")
    assert worst <= 1e-6
    assert elapsed < 30


def test_criterion_06_hysteresis(run_a):
    trace = run_a["c6_trace"]
    elapsed = run_a["times"]["c6"]
    outbound_len = 100  # (5,5) -> (0,5) in steps of 0.05
    jumps = [s for s in trace.steps if s.jump]
    outbound_jumps = [s for s in jumps if s.t <= outbound_len]
    end_dist = trace.steps[-1].solution.profile.sup_distance(
        trace.steps[0].solution.profile
    )
    # endpoints must be the two oracle branches of the surface at (5,5)
    oracle = scan_qre_2x2(
        run_a["bos"].utilities[0], run_a["bos"].utilities[1], 5.0, 5.0
    )
    start_p = float(trace.steps[0].solution.profile.flat()[0])
    final_p = float(trace.steps[-1].solution.profile.flat()[0])
    d_start = min(abs(start_p - p) for p, _ in oracle)
    d_final = min(abs(final_p - p) for p, _ in oracle)
    ok = (
        len(outbound_jumps) >= 1
        and end_dist > 0.1
        and d_start <= 1e-6
        and d_final <= 1e-6
        and not trace.truncated
        and elapsed < 30
    )
    report(
        "6 (hysteresis)",
        ok,
        f"{len(outbound_jumps)} outbound jump(s) at t={[s.t for s in outbound_jumps]}, "
        f"loop-end distance {end_dist:.3f}, {elapsed:.1f}s",
    )
    assert len(outbound_jumps) >= 1
    assert end_dist > 0.1
    assert d_start <= 1e-6 and d_final <= 1e-6
    assert elapsed < 30


def test_criterion_07_less_is_more_sign(run_a):
    samples = run_a["c7_samples"]
    neg = run_a["neg"]
    elapsed = run_a["times"]["c7"]
    t0 = time.perf_counter()
    found = None
    for sample in samples:
        if len(sample.solutions) < 3:
            continue
        for sol, ind in zip(sample.solutions, sample.fold_indicators):
            if abs(ind) <= 1e-3:
                continue
            try:
                grad = utility_beta_gradient(neg, sol)
            except FoldProximityError:
                continue
            if grad[0, 0] < 0:
                found = (sample.betas, grad[0, 0])
                break
        if found:
            break
    elapsed += time.perf_counter() - t0
    ok = found is not None and elapsed < 60
    report(
        "7 (less-is-more sign)",
        ok,
        f"dE(u_row)/dbeta_row = {found[1]:.4f} at beta={found[0].tolist()}, "
        f"{elapsed:.1f}s" if found else "no negative own-gradient found",
    )
    assert found is not None
    assert elapsed < 60


def test_criterion_08_pareto_path(run_a):
    trace = run_a["c8_trace"]
    elapsed = run_a["times"]["c8"]
    eus = trace.expected_utilities()
    nonempty = len(trace.steps) > 1
    monotone = bool(np.all(np.diff(eus, axis=0) > -1e-9))
    capped = all(np.all(s.betas <= PARETO_START + 1e-12) for s in trace.steps)
    ok = nonempty and monotone and capped and elapsed < 60
    report(
        "8 (pareto path)",
        ok,
        f"{len(trace.steps) - 1} steps, eu ({eus[0][0]:.3f},{eus[0][1]:.3f}) -> "
        f"({eus[-1][0]:.3f},{eus[-1][1]:.3f}), {elapsed:.1f}s",
    )
    assert nonempty
    assert monotone
    assert capped
    assert elapsed < 60


def test_criterion_09_procedure_ordering(run_a):
    reports = run_a["c9_reports"]
    elapsed = run_a["times"]["c9"]
    crossings = []
    for start, rep in zip(COMPARE_STARTS, reports):
        qa = rep.q_by_procedure["anarchy"]
        qs = rep.q_by_procedure["socialism"]
        qm = rep.q_by_procedure["market"]
        d = rep.soc_minus_market
        assert np.all(qa <= qs + 1e-12), f"anarchy beats socialism at start {start}"
        assert np.all(qa <= qm + 1e-12), f"anarchy beats market at start {start}"
        assert np.any(d > 0) and np.any(d < 0), f"no sign change at start {start}"
        assert d[-1] < 0, f"market not better at the large-gamma end at {start}"
        flip = int(np.flatnonzero(np.sign(d[:-1]) != np.sign(d[1:]))[0])
        crossings.append(float(COMPARE_GAMMAS[flip + 1]))
    ok = elapsed < 300
    report(
        "9 (procedure ordering)",
        ok,
        f"anarchy worst everywhere; soc-market crossings at gamma ~ "
        f"{[round(c, 3) for c in crossings]}, {elapsed:.1f}s",
    )
    assert elapsed < 300


def test_criterion_10_determinism(run_a, tmp_path_factory):
    outdir_b = tmp_path_factory.mktemp("acceptance_run_b")
    t0 = time.perf_counter()
    run_pipeline(outdir_b)
    elapsed = time.perf_counter() - t0
    files_a = sorted(Path(run_a["outdir"]).glob("*.csv"))
    mismatches = []
    for fa in files_a:
        fb = outdir_b / fa.name
        if fa.read_bytes() != fb.read_bytes():
            mismatches.append(fa.name)
    ok = not mismatches
    report(
        "10 (determinism)",
        ok,
        f"{len(files_a)} CSV exports byte-identical across re-run "
        f"(second run {elapsed:.0f}s)" if ok else f"mismatch: {mismatches}",
    )
    assert not mismatches
    assert len(files_a) == 9
