"""Command-line interface.

Subcommands: solve, sweep, trace, procedure, compare, pareto-path.  All
inputs come from flags and files (never stdin); bulk numeric output is CSV on
stdout or --output, errors go to stderr as one JSON object with a nonzero
exit code.  Identical inputs and seeds give byte-identical output.
"""
from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path

import numpy as np

from .continuation import (
    BetaGrid,
    build_beta_path,
    select_solution,
    sweep_surface,
    trace_branch,
)
from .gamefile import (
    GameFileError,
    load_game,
    write_surface_csv,
    write_trace_csv,
    write_welfare_csv,
)
from .policy import (
    PROCEDURES,
    ProcedureConfig,
    compare_procedures,
    find_pareto_path,
    run_procedure,
)
from .solver import SolverOptions, enumerate_qre

__all__ = ["main"]


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - argparse hook
        raise CliError(message, code=2)


def _parse_vector(text: str, name: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")], dtype=float)
    except ValueError as exc:
        raise CliError(
            f"invalid {name} {text!r}: expected comma-separated numbers", code=2
        ) from exc


def _parse_range(text: str, name: str) -> np.ndarray:
    """start:stop:count inclusive linear range."""
    parts = text.split(":")
    if len(parts) != 3:
        raise CliError(f"invalid {name} {text!r}: expected start:stop:count", code=2)
    try:
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise CliError(
            f"invalid {name} {text!r}: expected start:stop:count", code=2
        ) from exc
    if count < 1:
        raise CliError(f"invalid {name} {text!r}: count must be at least 1", code=2)
    return np.linspace(start, stop, count)


def _parse_waypoints(text: str) -> list[np.ndarray]:
    return [_parse_vector(part, "waypoint") for part in text.split(";") if part]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--game", required=True, help="bundled game name or JSON file path")
    parser.add_argument("--output", default=None, help="CSV output path (default: stdout)")
    parser.add_argument("--force", action="store_true", help="overwrite an existing output file")
    parser.add_argument("--tol", type=float, default=1e-12)
    parser.add_argument("--max-iter", type=int, default=10_000)
    parser.add_argument("--damping", type=float, default=0.5)
    parser.add_argument("--no-newton-polish", action="store_true")
    parser.add_argument("--multistart", type=int, default=50)
    parser.add_argument("--dedupe-radius", type=float, default=1e-6)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jump-threshold", type=float, default=0.2)


def _options(ns: argparse.Namespace) -> SolverOptions:
    return SolverOptions(
        tolerance=ns.tol,
        max_iterations=ns.max_iter,
        damping=ns.damping,
        newton_polish=not ns.no_newton_polish,
        multistart_grid=ns.multistart,
        dedupe_radius=ns.dedupe_radius,
        rng_seed=ns.seed,
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="qrelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="enumerate equilibria at one rationality vector")
    _add_common(p)
    p.add_argument("--beta", required=True, help="comma-separated rationalities, e.g. 5,5")

    p = sub.add_parser("sweep", help="enumerate equilibria over a rationality grid")
    _add_common(p)
    p.add_argument(
        "--grid", required=True,
        help="per-player start:stop:count ranges joined by commas of ranges, "
             "e.g. 0:5:50,0:5:50",
    )
    p.add_argument("--match-radius", type=float, default=0.2)
    p.add_argument("--workers", type=int, default=None,
                   help="parallel workers (default: QRE_THREADS or all cores)")

    p = sub.add_parser("trace", help="trace a branch along a piecewise-linear path")
    _add_common(p)
    p.add_argument("--waypoints", required=True, help="e.g. 5,5;0,5;5,5")
    p.add_argument("--step", type=float, required=True, help="path step length")
    p.add_argument("--start-branch", default="index:0")

    p = sub.add_parser("procedure", help="run one tax-update procedure")
    _add_common(p)
    p.add_argument("--procedure", required=True, choices=PROCEDURES)
    p.add_argument("--start", required=True, help="starting rationalities, e.g. 4,4")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--t-max", type=int, default=10_000)
    p.add_argument("--start-branch", default="min-welfare")
    p.add_argument("--no-start-cap", action="store_true")

    p = sub.add_parser("compare", help="run all three procedures over a gamma grid")
    _add_common(p)
    p.add_argument("--start", required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--gamma", required=True, help="gamma grid start:stop:count, e.g. 0.01:2.0:50")
    p.add_argument("--t-max", type=int, default=10_000)
    p.add_argument("--start-branch", default="min-welfare")
    p.add_argument("--no-start-cap", action="store_true")

    p = sub.add_parser("pareto-path", help="greedy path improving every player")
    _add_common(p)
    p.add_argument("--start", required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--start-branch", default="min-welfare")
    p.add_argument("--max-steps", type=int, default=10_000)

    return parser


def _open_output(ns: argparse.Namespace):
    if ns.output is None:
        return None
    path = Path(ns.output)
    if path.exists() and not ns.force:
        raise CliError(f"output file {path} exists; pass --force to overwrite")
    return path


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _start_solution(game, betas, options, selector):
    solutions = enumerate_qre(game, betas, options)
    if not solutions:
        raise CliError(f"no equilibrium found at beta={betas.tolist()}")
    return select_solution(solutions, selector)


def _cmd_solve(ns: argparse.Namespace) -> int:
    game = load_game(ns.game)
    options = _options(ns)
    betas = _parse_vector(ns.beta, "--beta")
    solutions = enumerate_qre(game, betas, options)
    from dataclasses import replace
    from .continuation import SurfaceSample, fold_indicator

    tagged = tuple(replace(s, branch_id=i) for i, s in enumerate(solutions))
    sample = SurfaceSample(
        betas=betas,
        solutions=tagged,
        fold_indicators=tuple(fold_indicator(game, s) for s in tagged),
        grid_index=(0,) * game.num_players,
    )
    buf = io.StringIO()
    write_surface_csv([sample], game, buf)
    _emit(buf.getvalue(), _open_output(ns))
    return 0


def _cmd_sweep(ns: argparse.Namespace) -> int:
    game = load_game(ns.game)
    options = _options(ns)
    axes = [_parse_range(part, "--grid axis") for part in ns.grid.split(",")]
    if len(axes) != game.num_players:
        raise CliError(f"--grid needs one range per player ({game.num_players})")
    grid = BetaGrid(
        mins=np.array([a[0] for a in axes]),
        maxs=np.array([a[-1] for a in axes]),
        counts=tuple(len(a) for a in axes),
    )
    samples = sweep_surface(
        game, grid, options, match_radius=ns.match_radius, workers=ns.workers
    )
    buf = io.StringIO()
    write_surface_csv(samples, game, buf)
    _emit(buf.getvalue(), _open_output(ns))
    return 0


def _cmd_trace(ns: argparse.Namespace) -> int:
    game = load_game(ns.game)
    options = _options(ns)
    waypoints = _parse_waypoints(ns.waypoints)
    if not waypoints:
        raise CliError("--waypoints is empty")
    path = build_beta_path(waypoints, ns.step)
    start = _start_solution(game, waypoints[0], options, ns.start_branch)
    trace = trace_branch(game, path, start, options, jump_threshold=ns.jump_threshold)
    buf = io.StringIO()
    write_trace_csv(trace, game, buf)
    _emit(buf.getvalue(), _open_output(ns))
    if trace.truncated:
        sys.stderr.write(json.dumps({"warning": trace.diagnostic}) + "\n")
    return 0


def _cmd_procedure(ns: argparse.Namespace) -> int:
    game = load_game(ns.game)
    options = _options(ns)
    start_betas = _parse_vector(ns.start, "--start")
    config = ProcedureConfig(
        procedure=ns.procedure,
        delta=ns.delta,
        start_betas=start_betas,
        gamma=ns.gamma,
        t_max=ns.t_max,
        enforce_start_cap=not ns.no_start_cap,
    )
    initial = _start_solution(game, start_betas, options, ns.start_branch)
    trace, q = run_procedure(
        game, config, initial, options, jump_threshold=ns.jump_threshold
    )
    out = _open_output(ns)
    if out is None:
        raise CliError("procedure requires --output for the trace CSV")
    buf = io.StringIO()
    write_trace_csv(trace, game, buf)
    _emit(buf.getvalue(), out)
    sys.stdout.write(
        json.dumps(
            {
                "procedure": ns.procedure,
                "Q": float(q),
                "gamma": ns.gamma,
                "steps": len(trace.steps) - 1,
                "jumps": int(sum(s.jump for s in trace.steps)),
                "truncated": trace.truncated,
            },
            sort_keys=True,
        )
        + "\n"
    )
    return 0


def _cmd_compare(ns: argparse.Namespace) -> int:
    game = load_game(ns.game)
    options = _options(ns)
    start_betas = _parse_vector(ns.start, "--start")
    gammas = _parse_range(ns.gamma, "--gamma")
    initial = _start_solution(game, start_betas, options, ns.start_branch)
    report = compare_procedures(
        game,
        start_betas,
        ns.delta,
        gammas,
        options,
        initial=initial,
        t_max=ns.t_max,
        enforce_start_cap=not ns.no_start_cap,
        jump_threshold=ns.jump_threshold,
    )
    buf = io.StringIO()
    write_welfare_csv(report, buf)
    _emit(buf.getvalue(), _open_output(ns))
    return 0


def _cmd_pareto(ns: argparse.Namespace) -> int:
    game = load_game(ns.game)
    options = _options(ns)
    start_betas = _parse_vector(ns.start, "--start")
    start = _start_solution(game, start_betas, options, ns.start_branch)
    trace = find_pareto_path(
        game,
        start,
        ns.delta,
        options,
        jump_threshold=ns.jump_threshold,
        max_steps=ns.max_steps,
    )
    buf = io.StringIO()
    write_trace_csv(trace, game, buf)
    _emit(buf.getvalue(), _open_output(ns))
    return 0


_COMMANDS = {
    "solve": _cmd_solve,
    "sweep": _cmd_sweep,
    "trace": _cmd_trace,
    "procedure": _cmd_procedure,
    "compare": _cmd_compare,
    "pareto-path": _cmd_pareto,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        return _COMMANDS[ns.command](ns)
    except CliError as exc:
        sys.stderr.write(
            json.dumps({"error": "usage" if exc.code == 2 else "runtime",
                        "message": str(exc)}, sort_keys=True) + "\n"
        )
        return exc.code
    except (GameFileError, ValueError, RuntimeError) as exc:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)},
                       sort_keys=True) + "\n"
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
