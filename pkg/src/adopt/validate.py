"""Self-contained invariant suite behind ``adopt validate``.

Each check builds its own small fixtures, exercises one contract of the
package against an independent computation, and reports pass/fail with a
measured detail string.  The suite is deterministic.
"""

from __future__ import annotations

import numpy as np

from . import metrics, oracles
from .engine import Schedule, run_async, run_sync
from .localsolve import (
    SubproblemInput,
    SurrogateSpec,
    prox_l1_in_ball,
    solve_subproblem,
)
from .netgraph import gen_directed_ring_plus, gen_erdos_renyi
from .objective import (
    AllSpace,
    ElasticNet,
    L1,
    L2Ball,
    NoRegularizer,
    SparseGroupLasso,
    grad_local,
    make_lasso,
    make_logistic,
    make_mestimator,
)


def check_mixing_matrices() -> tuple[bool, str]:
    from .netgraph import TopologyError

    worst = 0.0
    try:
        for topo in (gen_erdos_renyi(20, 0.3, seed=0),
                     gen_directed_ring_plus(20, 10, seed=0)):
            topo.validate()  # support/diagonal/connectivity invariants
            worst = max(worst,
                        float(np.max(np.abs(topo.W.sum(axis=1) - 1.0))),
                        float(np.max(np.abs(topo.A.sum(axis=0) - 1.0))))
    except TopologyError as exc:
        return False, f"invariant breach: {exc}"
    return worst <= 1e-12, f"max stochasticity deviation {worst:.3e}"


def check_gradients() -> tuple[bool, str]:
    instances = [
        make_lasso(rows_per_agent=4, n=12, num_agents=3, seed=1)[0],
        make_logistic(samples_per_agent=4, n=10, num_agents=3, seed=2)[0],
        make_mestimator(samples_per_agent=5, n=10, num_agents=3, seed=3)[0],
    ]
    rng = np.random.default_rng(7)
    worst = 0.0
    for problem in instances:
        for _ in range(10):
            x = rng.standard_normal(problem.dim)
            i = int(rng.integers(problem.num_agents))
            g = grad_local(problem, i, x)
            fd = oracles.finite_difference_grad(problem.locals[i].value, x)
            rel = np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(g))
            worst = max(worst, float(rel))
    return worst <= 1e-5, f"max relative FD mismatch {worst:.3e}"


def _subproblem_cases(rng, count_per_combo=3):
    groups = ((0, 1), (2,))
    combos = [
        ("linearized", L1(0.7), AllSpace()),
        ("linearized", NoRegularizer(), AllSpace()),
        ("linearized", ElasticNet(0.5, 0.3), AllSpace()),
        ("linearized", SparseGroupLasso(groups, (0.6, 0.4), 0.3), AllSpace()),
        ("linearized", L1(0.5), L2Ball(1.5)),
        ("diagonal_hessian", L1(0.7), AllSpace()),
        ("diagonal_hessian", NoRegularizer(), AllSpace()),
        ("diagonal_hessian", ElasticNet(0.5, 0.3), AllSpace()),
        ("diagonal_hessian", SparseGroupLasso(groups, (0.6, 0.4), 0.3), AllSpace()),
    ]
    for kind, reg, cons in combos:
        for _ in range(count_per_combo):
            n = 3
            spec = SurrogateSpec(kind, float(rng.uniform(0.5, 4.0)))
            diag = rng.uniform(0.0, 3.0, n) if kind == "diagonal_hessian" else None
            inp = SubproblemInput(
                x_center=rng.standard_normal(n),
                tracked_term=rng.standard_normal(n),
                local_grad=rng.standard_normal(n),
                regularizer=reg, constraint=cons, diag_hessian=diag,
            )
            yield spec, inp


def check_subproblem_oracle() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    worst_gap, worst_vi = 0.0, 0.0
    for spec, inp in _subproblem_cases(rng):
        x = solve_subproblem(spec, inp)
        ref = oracles.grid_minimize_subproblem(spec, inp, half_width=6.0)
        worst_gap = max(worst_gap, float(np.max(np.abs(x - ref))))
        worst_vi = max(worst_vi, oracles.variational_inequality_residual(
            spec, inp, x, rng))
    ok = worst_gap <= 1e-4 and worst_vi <= 1e-8
    return ok, f"max grid gap {worst_gap:.3e}, max VI residual {worst_vi:.3e}"


def check_prox_ball() -> tuple[bool, str]:
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 8))
        v = 3.0 * rng.standard_normal(n)
        lam = float(rng.uniform(0.0, 1.5))
        radius = float(rng.uniform(0.3, 3.0))
        got = prox_l1_in_ball(v, lam, radius)
        ref = oracles.prox_l1_ball_subgradient(v, lam, radius)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return worst <= 1e-6, f"max oracle mismatch {worst:.3e}"


def _tiny_async(seed=5, horizon=2000):
    problem, _ = make_lasso(rows_per_agent=4, n=20, num_agents=5, lam=0.5, seed=2)
    topo = gen_directed_ring_plus(5, 2, seed=3)
    spec = SurrogateSpec("linearized", 10.0)
    sched = Schedule(horizon_iters=horizon, seed=seed)
    return run_async(problem, topo, spec, 0.05, sched,
                     trace_every=10, audit_every=1)


def check_mass_conservation() -> tuple[bool, str]:
    res = _tiny_async()
    worst = max(res.summary["worst_mass_gap_z"], res.summary["worst_mass_gap_phi"])
    return worst <= 1e-8, f"worst asynchronous conservation gap {worst:.3e}"


def check_sync_identities() -> tuple[bool, str]:
    problem, _ = make_lasso(rows_per_agent=4, n=20, num_agents=5, lam=0.5, seed=2)
    topo = gen_erdos_renyi(5, 0.6, seed=4)
    res = run_sync(problem, topo, SurrogateSpec("linearized", 10.0), 0.05, 300)
    worst = max(res.summary["worst_mass_gap_z"], res.summary["worst_mass_gap_phi"])
    return worst <= 1e-10, f"worst synchronous identity gap {worst:.3e}"


def check_determinism() -> tuple[bool, str]:
    a = _tiny_async(horizon=500).trace_csv()
    b = _tiny_async(horizon=500).trace_csv()
    return a == b, "trace bytes identical" if a == b else "trace bytes differ"


ALL_CHECKS = {
    "mixing_matrices": check_mixing_matrices,
    "gradient_finite_difference": check_gradients,
    "subproblem_oracle": check_subproblem_oracle,
    "prox_ball_composition": check_prox_ball,
    "mass_conservation_async": check_mass_conservation,
    "sync_identities": check_sync_identities,
    "determinism": check_determinism,
}


def run_all_checks() -> dict:
    report = {}
    for name, fn in ALL_CHECKS.items():
        try:
            passed, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            passed, detail = False, f"exception: {exc!r}"
        report[name] = {"passed": bool(passed), "detail": detail}
    return report
