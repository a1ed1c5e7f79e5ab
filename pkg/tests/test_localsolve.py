import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adopt import oracles
from adopt.localsolve import (
    SubproblemInput,
    SurrogateSpec,
    UnsupportedSubproblem,
    group_soft_threshold,
    optimality_residual,
    project_l2_ball,
    prox_l1_in_ball,
    prox_regularized,
    relax,
    soft_threshold,
    solve_subproblem,
    subproblem_smooth_grad,
    subproblem_value,
)
from adopt.objective import (
    AllSpace,
    ElasticNet,
    L1,
    L2Ball,
    NoRegularizer,
    SparseGroupLasso,
)


# ---------------------------------------------------------------------------
# proximal primitives
# ---------------------------------------------------------------------------

def test_soft_threshold_examples():
    assert soft_threshold(np.array([2.0]), 1.5)[0] == pytest.approx(0.5)
    assert soft_threshold(np.array([-0.3]), 0.5)[0] == 0.0
    v = np.array([1.0, -2.0, 0.25])
    assert np.array_equal(soft_threshold(v, 0.0), v)
    with pytest.raises(ValueError):
        soft_threshold(v, -0.1)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 12),
              elements=st.floats(-50, 50)),
       st.floats(0, 10))
def test_soft_threshold_properties(v, t):
    out = soft_threshold(v, t)
    # shrinkage never grows magnitude or flips sign
    assert np.all(np.abs(out) <= np.abs(v) + 1e-12)
    assert np.all(out * v >= 0.0)
    assert np.all((np.abs(v) <= t) == (out == 0.0))


def test_group_soft_threshold_group_kill():
    v = np.array([3.0, 4.0])
    groups, n = ((0, 1),), 2
    # group weight at the norm of the shrunk point kills the group
    assert np.allclose(group_soft_threshold(v, groups, [5.0], 0.0), 0.0)
    assert np.allclose(group_soft_threshold(v, groups, [6.0], 0.0), 0.0)
    # zero group weights reduce to the plain soft threshold
    out = group_soft_threshold(v, groups, [0.0], 1.0)
    assert np.allclose(out, soft_threshold(v, 1.0))


def test_group_soft_threshold_matches_iterative_oracle():
    rng = np.random.default_rng(3)
    groups = ((0, 2), (1,))
    for _ in range(20):
        v = 2.0 * rng.standard_normal(3)
        w = rng.uniform(0, 1.5, 2)
        lam = float(rng.uniform(0, 1.0))
        got = group_soft_threshold(v, groups, w, lam)
        reg = SparseGroupLasso(groups, tuple(w), lam)
        spec = SurrogateSpec("linearized", 1.0)
        inp = SubproblemInput(v, np.zeros(3), np.zeros(3), reg, AllSpace())
        ref = oracles.grid_minimize_subproblem(spec, inp, half_width=5.0)
        assert np.max(np.abs(got - ref)) <= 1e-4


def test_project_l2_ball_examples():
    assert np.allclose(project_l2_ball(np.array([3.0, 4.0]), 10.0), [3.0, 4.0])
    assert np.allclose(project_l2_ball(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])
    assert np.allclose(project_l2_ball(np.zeros(4), 2.0), 0.0)
    with pytest.raises(ValueError):
        project_l2_ball(np.ones(2), 0.0)


def test_prox_l1_in_ball_reductions():
    rng = np.random.default_rng(5)
    v = rng.standard_normal(6)
    assert np.allclose(prox_l1_in_ball(v, 0.0, 0.5), project_l2_ball(v, 0.5))
    assert np.allclose(prox_l1_in_ball(v, 0.3, np.inf), soft_threshold(v, 0.3))


def test_prox_l1_in_ball_matches_subgradient_oracle_boundary():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(60):
        n = int(rng.integers(2, 6))
        v = 2.5 * rng.standard_normal(n)
        lam = float(rng.uniform(0.0, 1.2))
        shrunk_norm = float(np.linalg.norm(soft_threshold(v, lam)))
        # half the draws sit near the boundary ||soft(v, lam)|| ~ radius
        if shrunk_norm > 0 and rng.random() < 0.5:
            radius = shrunk_norm * float(rng.uniform(0.98, 1.02))
        else:
            radius = float(rng.uniform(0.3, 3.0))
        got = prox_l1_in_ball(v, lam, radius)
        ref = oracles.prox_l1_ball_subgradient(v, lam, radius)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    assert worst <= 1e-6


# ---------------------------------------------------------------------------
# the subproblem solver
# ---------------------------------------------------------------------------

def _combo_cases(rng, per_combo):
    groups = ((0, 1), (2,))
    combos = [
        ("linearized", NoRegularizer(), AllSpace()),
        ("linearized", L1(0.7), AllSpace()),
        ("linearized", ElasticNet(0.5, 0.3), AllSpace()),
        ("linearized", SparseGroupLasso(groups, (0.6, 0.4), 0.3), AllSpace()),
        ("linearized", L1(0.5), L2Ball(1.5)),
        ("diagonal_hessian", NoRegularizer(), AllSpace()),
        ("diagonal_hessian", L1(0.7), AllSpace()),
        ("diagonal_hessian", ElasticNet(0.5, 0.3), AllSpace()),
        ("diagonal_hessian", SparseGroupLasso(groups, (0.6, 0.4), 0.3), AllSpace()),
    ]
    for kind, reg, cons in combos:
        for _ in range(per_combo):
            spec = SurrogateSpec(kind, float(rng.uniform(0.5, 4.0)))
            diag = rng.uniform(0.0, 3.0, 3) if kind == "diagonal_hessian" else None
            yield spec, SubproblemInput(
                x_center=rng.standard_normal(3),
                tracked_term=rng.standard_normal(3),
                local_grad=rng.standard_normal(3),
                regularizer=reg, constraint=cons, diag_hessian=diag)


def test_solve_subproblem_single_coordinate_example():
    # linearized, L1(1), mu=1, center 0, tracked gradient estimate [-2]:
    # argmin 1/2 (x + (-2)/1 ... ) -> soft(2, 1) = 1
    spec = SurrogateSpec("linearized", 1.0)
    inp = SubproblemInput(np.zeros(1), np.array([-2.0]), np.zeros(1),
                          L1(1.0), AllSpace())
    assert solve_subproblem(spec, inp)[0] == pytest.approx(1.0)
    ref = oracles.grid_minimize_subproblem(spec, inp)
    assert ref[0] == pytest.approx(1.0, abs=1e-4)


def test_solve_subproblem_stationary_center():
    # zero effective gradient and no regularizer: the center is optimal
    spec = SurrogateSpec("linearized", 2.0)
    x = np.array([0.3, -1.2])
    inp = SubproblemInput(x, -np.array([0.1, 0.2]), np.array([0.1, 0.2]),
                          NoRegularizer(), AllSpace())
    assert np.allclose(solve_subproblem(spec, inp), x)


def test_diagonal_hessian_zero_reduces_to_linearized():
    rng = np.random.default_rng(17)
    for _ in range(50):
        mu = float(rng.uniform(0.5, 3.0))
        base = dict(x_center=rng.standard_normal(4),
                    tracked_term=rng.standard_normal(4),
                    local_grad=rng.standard_normal(4),
                    regularizer=L1(0.4), constraint=AllSpace())
        lin = solve_subproblem(SurrogateSpec("linearized", mu),
                               SubproblemInput(**base))
        dh = solve_subproblem(SurrogateSpec("diagonal_hessian", mu),
                              SubproblemInput(**base, diag_hessian=np.zeros(4)))
        assert np.allclose(lin, dh, atol=1e-14)


def test_solve_subproblem_against_grid_oracle():
    rng = np.random.default_rng(29)
    for spec, inp in _combo_cases(rng, per_combo=2):
        x = solve_subproblem(spec, inp)
        ref = oracles.grid_minimize_subproblem(spec, inp)
        assert np.max(np.abs(x - ref)) <= 1e-4
        assert oracles.variational_inequality_residual(spec, inp, x, rng) <= 1e-8


def test_solve_subproblem_optimality_over_probes():
    rng = np.random.default_rng(31)
    for spec, inp in _combo_cases(rng, per_combo=1):
        x = solve_subproblem(spec, inp)
        vx = subproblem_value(spec, inp, x)
        for _ in range(25):
            z = x + rng.standard_normal(3)
            if isinstance(inp.constraint, L2Ball):
                z = project_l2_ball(z, inp.constraint.radius)
            assert vx <= subproblem_value(spec, inp, z) + 1e-9


def test_descent_seed_inequality():
    # (x~ - x).(grad_model(x~) - grad_model(x)) >= mu ||x~ - x||^2
    rng = np.random.default_rng(37)
    for spec, inp in _combo_cases(rng, per_combo=1):
        x = solve_subproblem(spec, inp)
        dx = x - inp.x_center
        lhs = float(dx @ (subproblem_smooth_grad(spec, inp, x)
                          - subproblem_smooth_grad(spec, inp, inp.x_center)))
        assert lhs >= spec.strong_convexity * float(dx @ dx) - 1e-9


def test_optimality_residual_helper():
    rng = np.random.default_rng(41)
    spec = SurrogateSpec("linearized", 1.5)
    inp = SubproblemInput(rng.standard_normal(3), rng.standard_normal(3),
                          rng.standard_normal(3), L1(0.5), AllSpace())
    x = solve_subproblem(spec, inp)
    probes = x + rng.standard_normal((50, 3))
    assert optimality_residual(spec, inp, x, probes) >= -1e-9


def test_unsupported_combination_error_lists_table():
    spec = SurrogateSpec("diagonal_hessian", 1.0)
    inp = SubproblemInput(np.zeros(2), np.zeros(2), np.zeros(2),
                          L1(0.5), L2Ball(1.0), diag_hessian=np.ones(2))
    with pytest.raises(UnsupportedSubproblem, match="supported table"):
        solve_subproblem(spec, inp)
    with pytest.raises(UnsupportedSubproblem):
        SurrogateSpec("linearized", 0.0)
    with pytest.raises(UnsupportedSubproblem):
        SurrogateSpec("quadratic", 1.0)


def test_prox_regularized_unsupported_pair():
    with pytest.raises(UnsupportedSubproblem):
        prox_regularized(ElasticNet(0.1, 0.1), L2Ball(1.0), np.ones(2))


def test_relax_basics():
    x = np.zeros(2)
    xt = np.array([2.0, -2.0])
    assert np.allclose(relax(x, xt, 1.0), xt)
    assert np.allclose(relax(x, xt, 0.5), [1.0, -1.0])
    with pytest.raises(ValueError):
        relax(x, xt, 0.0)
    with pytest.raises(ValueError):
        relax(x, xt, 1.01)


def test_relax_stays_in_ball():
    rng = np.random.default_rng(43)
    for _ in range(100):
        x = project_l2_ball(rng.standard_normal(4), 1.0)
        xt = project_l2_ball(rng.standard_normal(4), 1.0)
        gamma = float(rng.uniform(0.01, 1.0))
        assert np.linalg.norm(relax(x, xt, gamma)) <= 1.0 + 1e-12
