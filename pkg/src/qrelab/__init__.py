"""Logit quantal response equilibria of finite normal-form games.

Solver, parameter-surface continuation with fold detection and hysteresis
tracing, and adiabatic tax-update procedures scored by discounted welfare.
"""
from .game import (
    Game,
    GameStructureError,
    StrategyProfile,
    conditional_expected_utility,
    expected_utility,
    pure_profile,
    scale_utilities,
    strategy_entropy,
    tax_rates,
    uniform_profile,
)
from .solver import (
    FoldProximityError,
    QreSolution,
    SolverOptions,
    enumerate_qre,
    logit_response,
    qre_residual,
    response_jacobian,
    solve_qre,
)
from .continuation import (
    BetaGrid,
    ContinuationError,
    PathTrace,
    SurfaceSample,
    TraceStep,
    build_beta_path,
    fold_indicator,
    locate_fold,
    select_solution,
    sweep_surface,
    trace_branch,
)
from .policy import (
    PROCEDURES,
    ProcedureConfig,
    WelfareReport,
    compare_procedures,
    find_pareto_path,
    run_procedure,
    step_anarchy,
    step_market,
    step_socialism,
    utility_beta_gradient,
    welfare_Q,
)
from .gamefile import (
    BUNDLED_GAMES,
    GameFileError,
    load_game,
    save_game,
)

__version__ = "0.1.0"
