"""Composite problems: per-agent smooth losses, shared regularizer, constraint.

A problem is ``min_{x in K}  sum_i f_i(x) + G(x)`` where each agent owns one
smooth loss f_i.  Three loss families are supported (quadratic residual,
logistic, Welsch robust loss) together with generators that draw synthetic
instances matching the experiment setups, exact analytic gradients, and
power-iteration smoothness estimates.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ProblemError(ValueError):
    """Raised on invalid problem parameters or non-convergent estimates."""


# ---------------------------------------------------------------------------
# regularizers and constraint sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoRegularizer:
    def value(self, x: np.ndarray) -> float:
        return 0.0


@dataclass(frozen=True)
class L1:
    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ProblemError("L1 weight must be >= 0")

    def value(self, x: np.ndarray) -> float:
        return self.lam * float(np.abs(x).sum())


@dataclass(frozen=True)
class ElasticNet:
    lam1: float
    lam2: float

    def __post_init__(self):
        if self.lam1 < 0 or self.lam2 < 0:
            raise ProblemError("elastic-net weights must be >= 0")

    def value(self, x: np.ndarray) -> float:
        return self.lam1 * float(np.abs(x).sum()) + self.lam2 * float(x @ x)


@dataclass(frozen=True)
class SparseGroupLasso:
    """G(x) = sum_S w_S ||x_S||_2 + lam ||x||_1 over a partition of [n]."""

    groups: tuple[tuple[int, ...], ...]
    weights: tuple[float, ...]
    lam: float

    def __post_init__(self):
        if len(self.groups) != len(self.weights):
            raise ProblemError("one weight per group required")
        if self.lam < 0 or any(w < 0 for w in self.weights):
            raise ProblemError("group-lasso weights must be >= 0")

    def check_partition(self, n: int) -> None:
        seen = sorted(idx for g in self.groups for idx in g)
        if seen != list(range(n)):
            raise ProblemError("groups must partition the coordinate set exactly")

    def value(self, x: np.ndarray) -> float:
        total = self.lam * float(np.abs(x).sum())
        for g, w in zip(self.groups, self.weights):
            total += w * float(np.linalg.norm(x[list(g)]))
        return total


@dataclass(frozen=True)
class AllSpace:
    def violation(self, x: np.ndarray) -> float:
        return 0.0

    def project(self, x: np.ndarray) -> np.ndarray:
        return x


@dataclass(frozen=True)
class L2Ball:
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ProblemError("ball radius must be > 0")

    def violation(self, x: np.ndarray) -> float:
        return max(0.0, float(np.linalg.norm(x)) - self.radius)

    def project(self, x: np.ndarray) -> np.ndarray:
        nrm = float(np.linalg.norm(x))
        if nrm <= self.radius:
            return x
        return x * (self.radius / nrm)


# ---------------------------------------------------------------------------
# per-agent smooth losses
# ---------------------------------------------------------------------------

@dataclass
class QuadraticLocal:
    """f(x) = ||M x - b||^2."""

    M: np.ndarray
    b: np.ndarray

    def value(self, x):
        r = self.M @ x - self.b
        return float(r @ r)

    def grad(self, x):
        return kernels.grad_quadratic(self.M, self.b, x)

    def hess_diag(self, x):
        return 2.0 * np.einsum("sj,sj->j", self.M, self.M)

    def lipschitz(self):
        return 2.0 * power_iteration_gram(self.M)


def _stable_softplus(t):
    # log(1 + e^t) without overflow
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _sigmoid(t):
    e = np.exp(-np.abs(t))
    return np.where(t >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class LogisticLocal:
    """f(x) = sum_s log(1 + exp(-y_s u_s.x)), labels y in {-1, +1}."""

    feats: np.ndarray
    labels: np.ndarray

    def value(self, x):
        m = self.labels * (self.feats @ x)
        return float(_stable_softplus(-m).sum())

    def grad(self, x):
        return kernels.grad_logistic(self.feats, self.labels, x)

    def hess_diag(self, x):
        s = _sigmoid(self.feats @ x)
        w = s * (1.0 - s)
        return np.einsum("s,sj,sj->j", w, self.feats, self.feats)

    def lipschitz(self):
        return 0.25 * float(np.einsum("sj,sj->", self.feats, self.feats))


@dataclass
class WelschLocal:
    """f(x) = scale * sum_s (1 - exp(-alpha (u_s.x - y_s)^2 / 2)) / alpha."""

    feats: np.ndarray
    targets: np.ndarray
    alpha: float
    scale: float

    def value(self, x):
        r = self.feats @ x - self.targets
        return self.scale * float(np.sum(-np.expm1(-0.5 * self.alpha * r * r)) / self.alpha)

    def grad(self, x):
        return kernels.grad_welsch(self.feats, self.targets, x, self.alpha, self.scale)

    def hess_diag(self, x):
        r = self.feats @ x - self.targets
        w = (1.0 - self.alpha * r * r) * np.exp(-0.5 * self.alpha * r * r)
        return self.scale * np.einsum("s,sj,sj->j", w, self.feats, self.feats)

    def lipschitz(self):
        # |second derivative of the scalar loss| <= 1
        return self.scale * float(np.einsum("sj,sj->", self.feats, self.feats))


def power_iteration_gram(M: np.ndarray, tol: float = 1e-8, max_iters: int = 10_000) -> float:
    """Largest eigenvalue of M^T M by power iteration on v -> M^T (M v)."""
    n = M.shape[1]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(max_iters):
        w = M.T @ (M @ v)
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v_new = w / nrm
        lam_new = float(v_new @ (M.T @ (M @ v_new)))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam, v = lam_new, v_new
    raise ProblemError(
        f"power iteration did not converge within {max_iters} steps (last={lam})"
    )


# ---------------------------------------------------------------------------
# problem container
# ---------------------------------------------------------------------------

@dataclass
class ProblemInstance:
    """Immutable-after-build description of one decentralized problem."""

    dim: int
    num_agents: int
    locals: tuple
    regularizer: object
    constraint: object
    meta: dict = field(default_factory=dict)
    lipschitz_locals: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.locals) != self.num_agents:
            raise ProblemError("one local loss per agent required")
        if isinstance(self.regularizer, SparseGroupLasso):
            self.regularizer.check_partition(self.dim)
        if not self.lipschitz_locals:
            self.lipschitz_locals = tuple(f.lipschitz() for f in self.locals)
        self._stacked = _stack_locals(self.locals)

    # -- smoothness ---------------------------------------------------------
    @property
    def lipschitz_local_max(self) -> float:
        return max(self.lipschitz_locals)

    @property
    def lipschitz_total(self) -> float:
        return self.num_agents * self.lipschitz_local_max

    # -- full objective (all agents) ----------------------------------------
    def full_smooth_value(self, x: np.ndarray) -> float:
        return self._stacked.value(x)

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        return self._stacked.grad(x)

    def probe_gradients(self, seed: int = 0) -> None:
        """Spot-check that local gradients are finite at a few points."""
        rng = np.random.default_rng(seed)
        probes = [np.zeros(self.dim)] + [rng.standard_normal(self.dim) for _ in range(2)]
        for i in range(self.num_agents):
            for x in probes:
                g = grad_local(self, i, x)
                if not np.all(np.isfinite(g)):
                    raise ProblemError(f"non-finite gradient for agent {i}")


class _StackedQuadratic:
    def __init__(self, locals_):
        self.M = np.ascontiguousarray(np.vstack([f.M for f in locals_]))
        self.b = np.concatenate([f.b for f in locals_])

    def value(self, x):
        r = self.M @ x - self.b
        return float(r @ r)

    def grad(self, x):
        return 2.0 * (self.M.T @ (self.M @ x - self.b))


class _StackedLogistic:
    def __init__(self, locals_):
        self.feats = np.ascontiguousarray(np.vstack([f.feats for f in locals_]))
        self.labels = np.concatenate([f.labels for f in locals_])

    def value(self, x):
        m = self.labels * (self.feats @ x)
        return float(_stable_softplus(-m).sum())

    def grad(self, x):
        s = _sigmoid(-self.labels * (self.feats @ x))
        return -(self.feats.T @ (self.labels * s))


class _StackedWelsch:
    def __init__(self, locals_):
        self.feats = np.ascontiguousarray(np.vstack([f.feats for f in locals_]))
        self.targets = np.concatenate([f.targets for f in locals_])
        self.alpha = locals_[0].alpha
        self.scale = locals_[0].scale

    def value(self, x):
        r = self.feats @ x - self.targets
        return self.scale * float(np.sum(-np.expm1(-0.5 * self.alpha * r * r)) / self.alpha)

    def grad(self, x):
        r = self.feats @ x - self.targets
        w = r * np.exp(-0.5 * self.alpha * r * r)
        return self.scale * (self.feats.T @ w)


def _stack_locals(locals_):
    kind = type(locals_[0])
    if any(type(f) is not kind for f in locals_):
        raise ProblemError("all agents must share one loss family")
    if kind is QuadraticLocal:
        return _StackedQuadratic(locals_)
    if kind is LogisticLocal:
        return _StackedLogistic(locals_)
    if kind is WelschLocal:
        return _StackedWelsch(locals_)
    raise ProblemError(f"unsupported loss family {kind.__name__}")


# ---------------------------------------------------------------------------
# spec operations over instances
# ---------------------------------------------------------------------------

def grad_local(problem: ProblemInstance, agent: int, x: np.ndarray) -> np.ndarray:
    """Exact analytic gradient of agent's smooth loss at x."""
    return problem.locals[agent].grad(x)


def hess_diag_local(problem: ProblemInstance, agent: int, x: np.ndarray) -> np.ndarray:
    """Diagonal of the local Hessian at x (used by the curvature surrogate)."""
    return problem.locals[agent].hess_diag(x)


def lipschitz_local(problem: ProblemInstance, agent: int) -> float:
    """Gradient-Lipschitz bound of one agent's loss."""
    return problem.lipschitz_locals[agent]


def eval_objective(problem: ProblemInstance, x: np.ndarray) -> tuple[float, float]:
    """Composite objective value and constraint-violation magnitude at x.

    The value is the exact finite composite (smooth sum plus regularizer);
    infeasibility is reported separately rather than as an infinite value.
    """
    value = problem.full_smooth_value(x) + problem.regularizer.value(x)
    return value, problem.constraint.violation(x)


def batch_objective(problem: ProblemInstance, X: np.ndarray) -> np.ndarray:
    """Composite objective at each row of X (one point per agent), as one
    stacked evaluation instead of a per-agent loop."""
    st = problem._stacked
    XT = np.ascontiguousarray(X.T)
    if isinstance(st, _StackedQuadratic):
        R = st.M @ XT - st.b[:, None]
        vals = np.einsum("si,si->i", R, R)
    elif isinstance(st, _StackedLogistic):
        Mg = st.labels[:, None] * (st.feats @ XT)
        vals = _stable_softplus(-Mg).sum(axis=0)
    else:
        R = st.feats @ XT - st.targets[:, None]
        vals = st.scale * np.sum(-np.expm1(-0.5 * st.alpha * R * R), axis=0) / st.alpha
    return vals + np.array([problem.regularizer.value(x) for x in X])


# ---------------------------------------------------------------------------
# synthetic data generators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruth:
    x0: np.ndarray
    density: float
    noise_scale: float


def _sparse_signal(rng, n, density, unit_norm=False):
    if not (0.0 < density <= 1.0):
        raise ProblemError(f"density must be in (0, 1], got {density}")
    k = int(round(density * n))
    k = max(k, 1)
    support = rng.choice(n, size=k, replace=False)
    x0 = np.zeros(n)
    x0[np.sort(support)] = rng.standard_normal(k)
    if unit_norm:
        x0 /= np.linalg.norm(x0)
    return x0


def make_lasso(rows_per_agent: int = 10, n: int = 300, num_agents: int = 20,
               lam: float = 2.0, omega: float = 1.1, density: float = 0.3,
               noise_sd: float = 0.1, seed: int = 0):
    """Sparse linear regression: sum_i ||M_i x - b_i||^2 + lam ||x||_1.

    Row covariance is diagonal with entry j equal to (j+1)^-omega, which
    controls the conditioning; b_i = M_i x0 + noise with the given standard
    deviation.  Defaults give a rank-deficient (not strongly convex) smooth
    term: rows_per_agent * num_agents < n.
    """
    if min(rows_per_agent, n, num_agents) <= 0 or lam < 0 or noise_sd < 0:
        raise ProblemError("lasso parameters must be positive")
    rng = np.random.default_rng(seed)
    x0 = _sparse_signal(rng, n, density)
    sqrt_cov = np.power(np.arange(1, n + 1, dtype=float), -omega / 2.0)
    M_all = rng.standard_normal((num_agents * rows_per_agent, n)) * sqrt_cov
    noise = noise_sd * rng.standard_normal(num_agents * rows_per_agent)
    locals_ = []
    for i in range(num_agents):
        Mi = np.ascontiguousarray(M_all[i * rows_per_agent:(i + 1) * rows_per_agent])
        bi = Mi @ x0 + noise[i * rows_per_agent:(i + 1) * rows_per_agent]
        locals_.append(QuadraticLocal(Mi, bi))
    meta = {"family": "lasso", "rows_per_agent": rows_per_agent, "n": n,
            "num_agents": num_agents, "lam": lam, "omega": omega,
            "density": density, "noise_sd": noise_sd, "seed": seed}
    problem = ProblemInstance(n, num_agents, tuple(locals_), L1(lam), AllSpace(), meta)
    problem.probe_gradients()
    return problem, GroundTruth(x0, density, noise_sd)


def make_logistic(samples_per_agent: int = 3, n: int = 100, num_agents: int = 20,
                  lam: float = 0.01, density: float = 0.3, seed: int = 0):
    """Sparse logistic regression with synthetic Bernoulli labels.

    Labels are +1 with probability sigmoid(u_s . x0), else -1.
    """
    if min(samples_per_agent, n, num_agents) <= 0 or lam < 0:
        raise ProblemError("logistic parameters must be positive")
    rng = np.random.default_rng(seed)
    x0 = _sparse_signal(rng, n, density)
    total = num_agents * samples_per_agent
    feats = rng.standard_normal((total, n))
    draws = rng.random(total)
    labels = np.where(draws < _sigmoid(feats @ x0), 1.0, -1.0)
    locals_ = []
    for i in range(num_agents):
        sl = slice(i * samples_per_agent, (i + 1) * samples_per_agent)
        locals_.append(LogisticLocal(np.ascontiguousarray(feats[sl]), labels[sl].copy()))
    meta = {"family": "logistic", "samples_per_agent": samples_per_agent, "n": n,
            "num_agents": num_agents, "lam": lam, "density": density, "seed": seed}
    problem = ProblemInstance(n, num_agents, tuple(locals_), L1(lam), AllSpace(), meta)
    problem.probe_gradients()
    return problem, GroundTruth(x0, density, 1.0)


def make_mestimator(samples_per_agent: int = 10, n: int = 100, num_agents: int = 30,
                    alpha: float = 0.1, radius: float = 2.0, lam: float = 0.01,
                    density: float = 0.1, noise_sd: float = 0.1, seed: int = 0):
    """Robust regression with the Welsch loss inside an L2 ball.

    The nonconvex scalar loss is (1 - exp(-alpha t^2 / 2)) / alpha, averaged
    over the global sample count; the planted signal has unit norm.
    """
    if min(samples_per_agent, n, num_agents) <= 0 or alpha <= 0 or radius <= 0 or lam < 0:
        raise ProblemError("m-estimator parameters must be positive")
    rng = np.random.default_rng(seed)
    x0 = _sparse_signal(rng, n, density, unit_norm=True)
    total = num_agents * samples_per_agent
    feats = rng.standard_normal((total, n))
    targets = feats @ x0 + noise_sd * rng.standard_normal(total)
    scale = 1.0 / total
    locals_ = []
    for i in range(num_agents):
        sl = slice(i * samples_per_agent, (i + 1) * samples_per_agent)
        locals_.append(WelschLocal(np.ascontiguousarray(feats[sl]), targets[sl].copy(),
                                   alpha, scale))
    meta = {"family": "mestimator", "samples_per_agent": samples_per_agent, "n": n,
            "num_agents": num_agents, "alpha": alpha, "radius": radius, "lam": lam,
            "density": density, "noise_sd": noise_sd, "seed": seed}
    problem = ProblemInstance(n, num_agents, tuple(locals_), L1(lam), L2Ball(radius), meta)
    problem.probe_gradients()
    return problem, GroundTruth(x0, density, noise_sd)


# ---------------------------------------------------------------------------
# serialization: JSON with base64-packed arrays
# ---------------------------------------------------------------------------

def _pack(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {"dtype": str(a.dtype), "shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _unpack(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()


def _regularizer_to_json(reg) -> dict:
    if isinstance(reg, NoRegularizer):
        return {"kind": "none"}
    if isinstance(reg, L1):
        return {"kind": "l1", "lam": reg.lam}
    if isinstance(reg, ElasticNet):
        return {"kind": "elastic_net", "lam1": reg.lam1, "lam2": reg.lam2}
    if isinstance(reg, SparseGroupLasso):
        return {"kind": "sparse_group_lasso", "groups": [list(g) for g in reg.groups],
                "weights": list(reg.weights), "lam": reg.lam}
    raise ProblemError(f"unknown regularizer {reg!r}")


def _regularizer_from_json(d: dict):
    kind = d["kind"]
    if kind == "none":
        return NoRegularizer()
    if kind == "l1":
        return L1(d["lam"])
    if kind == "elastic_net":
        return ElasticNet(d["lam1"], d["lam2"])
    if kind == "sparse_group_lasso":
        return SparseGroupLasso(tuple(tuple(g) for g in d["groups"]),
                                tuple(d["weights"]), d["lam"])
    raise ProblemError(f"unknown regularizer kind {kind!r}")


def problem_to_json(problem: ProblemInstance) -> str:
    locs = []
    for f in problem.locals:
        if isinstance(f, QuadraticLocal):
            locs.append({"kind": "quadratic", "M": _pack(f.M), "b": _pack(f.b)})
        elif isinstance(f, LogisticLocal):
            locs.append({"kind": "logistic", "feats": _pack(f.feats),
                         "labels": _pack(f.labels)})
        elif isinstance(f, WelschLocal):
            locs.append({"kind": "welsch", "feats": _pack(f.feats),
                         "targets": _pack(f.targets), "alpha": f.alpha,
                         "scale": f.scale})
        else:
            raise ProblemError(f"unknown local loss {f!r}")
    constraint = ({"kind": "all_space"} if isinstance(problem.constraint, AllSpace)
                  else {"kind": "l2_ball", "radius": problem.constraint.radius})
    payload = {
        "dim": problem.dim,
        "num_agents": problem.num_agents,
        "locals": locs,
        "regularizer": _regularizer_to_json(problem.regularizer),
        "constraint": constraint,
        "meta": problem.meta,
    }
    return json.dumps(payload, sort_keys=True)


def problem_from_json(text: str) -> ProblemInstance:
    payload = json.loads(text)
    locals_ = []
    for d in payload["locals"]:
        if d["kind"] == "quadratic":
            locals_.append(QuadraticLocal(_unpack(d["M"]), _unpack(d["b"])))
        elif d["kind"] == "logistic":
            locals_.append(LogisticLocal(_unpack(d["feats"]), _unpack(d["labels"])))
        elif d["kind"] == "welsch":
            locals_.append(WelschLocal(_unpack(d["feats"]), _unpack(d["targets"]),
                                       d["alpha"], d["scale"]))
        else:
            raise ProblemError(f"unknown local loss kind {d['kind']!r}")
    cons = payload["constraint"]
    constraint = AllSpace() if cons["kind"] == "all_space" else L2Ball(cons["radius"])
    return ProblemInstance(payload["dim"], payload["num_agents"], tuple(locals_),
                           _regularizer_from_json(payload["regularizer"]),
                           constraint, payload.get("meta", {}))
