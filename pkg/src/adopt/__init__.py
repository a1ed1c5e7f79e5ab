"""Asynchronous decentralized composite optimization over directed graphs.

A seeded, deterministic discrete-event simulator plus the numerical pieces
around it: graph and mixing-matrix generation, synthetic problem builders,
closed-form local subproblem solvers, robust asynchronous gradient
tracking, a centralized reference solver, and convergence-rate fitting.
"""

from .engine import (
    EngineError,
    Packet,
    RunResult,
    Schedule,
    StopRule,
    TRACE_COLUMNS,
    run_async,
    run_sync,
)
from .localsolve import (
    SubproblemInput,
    SurrogateSpec,
    UnsupportedSubproblem,
    group_soft_threshold,
    project_l2_ball,
    prox_l1_in_ball,
    prox_regularized,
    relax,
    soft_threshold,
    solve_subproblem,
)
from .metrics import (
    RateFit,
    RateFitError,
    ReferenceError,
    ReferenceSolution,
    diagnostics,
    fit_rate,
    merit,
    prox_residual,
    solve_reference,
    time_to_threshold,
)
from .netgraph import (
    NetworkTopology,
    TopologyError,
    gen_directed_ring_plus,
    gen_erdos_renyi,
    is_strongly_connected,
    metropolis_hastings_weights,
)
from .objective import (
    AllSpace,
    ElasticNet,
    GroundTruth,
    L1,
    L2Ball,
    LogisticLocal,
    NoRegularizer,
    ProblemError,
    ProblemInstance,
    QuadraticLocal,
    SparseGroupLasso,
    WelschLocal,
    batch_objective,
    eval_objective,
    grad_local,
    hess_diag_local,
    lipschitz_local,
    make_lasso,
    make_logistic,
    make_mestimator,
    problem_from_json,
    problem_to_json,
)
from .tracking import (
    TrackingError,
    TrackingNetwork,
    TrackingState,
    sync_mass_identities,
    sync_track_update,
)

__version__ = "0.1.0"
