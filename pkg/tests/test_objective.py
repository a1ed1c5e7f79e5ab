import numpy as np
import pytest

from adopt import oracles
from adopt.objective import (
    ProblemError,
    batch_objective,
    eval_objective,
    grad_local,
    hess_diag_local,
    lipschitz_local,
    make_lasso,
    make_logistic,
    make_mestimator,
    power_iteration_gram,
    problem_from_json,
    problem_to_json,
    L1,
    QuadraticLocal,
    WelschLocal,
)


@pytest.fixture(scope="module")
def lasso_default():
    return make_lasso(seed=3)


def test_lasso_shapes_and_rank_deficiency(lasso_default):
    problem, truth = lasso_default
    assert problem.dim == 300 and problem.num_agents == 20
    for f in problem.locals:
        assert f.M.shape == (10, 300)
    # 10 * 20 < 300: the stacked design cannot have full column rank
    assert problem._stacked.M.shape[0] < problem.dim
    assert int(np.sum(truth.x0 != 0)) == 90


def test_lasso_identity_covariance_variances():
    problem, _ = make_lasso(omega=0.0, seed=11)
    M = problem._stacked.M
    col_var = M.var(axis=0)
    assert abs(float(col_var.mean()) - 1.0) <= 3.0 / np.sqrt(M.shape[0])


def test_lasso_density_edges():
    with pytest.raises(ProblemError):
        make_lasso(density=0.0, seed=0)
    problem, truth = make_lasso(n=40, density=1.0, seed=0,
                                rows_per_agent=2, num_agents=3)
    assert np.all(truth.x0 != 0)


def test_generated_data_bitwise_reproducible():
    a, ta = make_lasso(seed=9)
    b, tb = make_lasso(seed=9)
    assert np.array_equal(ta.x0, tb.x0)
    for fa, fb in zip(a.locals, b.locals):
        assert np.array_equal(fa.M, fb.M) and np.array_equal(fa.b, fb.b)


def test_logistic_counts_and_zero_x0_gradient():
    problem, _ = make_logistic(seed=4)
    assert sum(f.feats.shape[0] for f in problem.locals) == 60
    # at x = 0 the sigmoid factor is 1/2 exactly
    for i in range(3):
        f = problem.locals[i]
        expected = -0.5 * (f.feats.T @ f.labels)
        assert np.allclose(grad_local(problem, i, np.zeros(100)), expected)


def test_welsch_scalar_properties():
    # loss value and slope vanish at zero residual
    f = WelschLocal(np.array([[1.0]]), np.array([0.0]), alpha=0.5, scale=1.0)
    assert f.value(np.zeros(1)) == pytest.approx(0.0)
    assert grad_local_single(f, np.zeros(1)) == pytest.approx(0.0)
    # alpha -> 0 limit reduces to half squared error
    g = WelschLocal(np.array([[1.0]]), np.array([0.0]), alpha=1e-8, scale=1.0)
    assert g.value(np.ones(1)) == pytest.approx(0.5, abs=1e-7)


def grad_local_single(local, x):
    return float(local.grad(x)[0])


def test_welsch_zero_residual_gradient():
    problem, truth = make_mestimator(samples_per_agent=3, n=8, num_agents=2,
                                     noise_sd=0.0, seed=5)
    for i in range(2):
        g = grad_local(problem, i, truth.x0)
        assert np.linalg.norm(g) <= 1e-12


def test_mestimator_counts(lasso_default):
    problem, truth = make_mestimator(seed=5)
    assert sum(f.feats.shape[0] for f in problem.locals) == 300
    assert np.linalg.norm(truth.x0) == pytest.approx(1.0)
    assert problem.constraint.radius == 2.0


def test_quadratic_gradient_simple():
    f = QuadraticLocal(np.eye(1), np.zeros(1))
    assert f.grad(np.array([1.0]))[0] == pytest.approx(2.0)


@pytest.mark.parametrize("maker,seed", [
    (lambda: make_lasso(rows_per_agent=4, n=12, num_agents=3, seed=1)[0], 101),
    (lambda: make_logistic(samples_per_agent=4, n=10, num_agents=3, seed=2)[0], 102),
    (lambda: make_mestimator(samples_per_agent=5, n=10, num_agents=3, seed=3)[0], 103),
])
def test_gradients_match_finite_differences(maker, seed):
    problem = maker()
    rng = np.random.default_rng(seed)
    for _ in range(10):
        x = rng.standard_normal(problem.dim)
        i = int(rng.integers(problem.num_agents))
        g = grad_local(problem, i, x)
        fd = oracles.finite_difference_grad(problem.locals[i].value, x)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


def test_hess_diag_matches_finite_differences():
    problem, _ = make_logistic(samples_per_agent=4, n=6, num_agents=2, seed=8)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(6)
    hd = hess_diag_local(problem, 0, x)
    h = 1e-5
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        fd = (grad_local(problem, 0, x + e)[j] - grad_local(problem, 0, x - e)[j]) / (2 * h)
        assert hd[j] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_eval_objective_values(lasso_default):
    problem, _ = lasso_default
    value, violation = eval_objective(problem, np.zeros(problem.dim))
    assert violation == 0.0
    assert value == pytest.approx(sum(float(f.b @ f.b) for f in problem.locals))
    # L1 term adds lam for a basis vector
    e1 = np.zeros(problem.dim)
    e1[0] = 1.0
    v1, _ = eval_objective(problem, e1)
    smooth = sum(f.value(e1) for f in problem.locals)
    assert v1 == pytest.approx(smooth + problem.regularizer.lam)


def test_eval_objective_reports_violation():
    problem, _ = make_mestimator(samples_per_agent=2, n=5, num_agents=2, seed=1)
    x = np.full(5, 10.0)
    _, violation = eval_objective(problem, x)
    assert violation == pytest.approx(np.linalg.norm(x) - 2.0)


def test_eval_objective_convex_along_segments():
    problem, _ = make_lasso(rows_per_agent=3, n=10, num_agents=4, seed=6)
    rng = np.random.default_rng(1)
    for _ in range(100):
        a = rng.standard_normal(10)
        b = rng.standard_normal(10)
        mid, _ = eval_objective(problem, 0.5 * (a + b))
        va, _ = eval_objective(problem, a)
        vb, _ = eval_objective(problem, b)
        assert mid <= 0.5 * (va + vb) + 1e-12


def test_batch_objective_matches_pointwise(lasso_default):
    problem, _ = lasso_default
    rng = np.random.default_rng(2)
    X = rng.standard_normal((problem.num_agents, problem.dim))
    vals = batch_objective(problem, X)
    for i in range(0, problem.num_agents, 5):
        direct, _ = eval_objective(problem, X[i])
        assert vals[i] == pytest.approx(direct, rel=1e-12)


def test_lipschitz_constants():
    f = QuadraticLocal(np.eye(3), np.zeros(3))
    assert f.lipschitz() == pytest.approx(2.0, rel=1e-7)
    problem, _ = make_logistic(samples_per_agent=1, n=2, num_agents=2, seed=0)
    g = problem.locals[0]
    assert g.lipschitz() == pytest.approx(0.25 * float(np.sum(g.feats ** 2)))


def test_power_iteration_matches_dense_eigensolver():
    rng = np.random.default_rng(14)
    M = rng.standard_normal((10, 300)) * np.power(np.arange(1, 301.0), -0.55)
    lam = power_iteration_gram(M)
    dense = float(np.linalg.eigvalsh(M.T @ M).max())
    assert lam == pytest.approx(dense, rel=1e-6)


def test_smoothness_aggregation(lasso_default):
    problem, _ = lasso_default
    assert problem.lipschitz_local_max == pytest.approx(max(
        lipschitz_local(problem, i) for i in range(problem.num_agents)))
    assert problem.lipschitz_total == pytest.approx(20 * problem.lipschitz_local_max)


@pytest.mark.parametrize("maker", [
    lambda: make_lasso(rows_per_agent=3, n=8, num_agents=2, seed=2),
    lambda: make_logistic(samples_per_agent=2, n=6, num_agents=2, seed=3),
    lambda: make_mestimator(samples_per_agent=2, n=6, num_agents=2, seed=4),
])
def test_problem_json_round_trip(maker):
    problem, _ = maker()
    back = problem_from_json(problem_to_json(problem))
    assert back.dim == problem.dim
    assert back.meta == problem.meta
    rng = np.random.default_rng(0)
    x = rng.standard_normal(problem.dim)
    for i in range(problem.num_agents):
        assert np.allclose(grad_local(back, i, x), grad_local(problem, i, x))
    assert eval_objective(back, x) == eval_objective(problem, x)


def test_regularizer_value_l1():
    reg = L1(2.0)
    assert reg.value(np.array([1.0, -3.0])) == pytest.approx(8.0)
