"""Closed-form solvers for the per-agent strongly convex subproblem.

Each activation minimizes a surrogate of the composite objective around the
agent's current point: a linearized model with a proximal term, or the same
model augmented with the diagonal of the local Hessian.  The supported
(surrogate, regularizer, constraint) combinations all admit exact solutions
(coordinatewise formulas, plus a one-dimensional root-find for the grouped
regularizer under non-uniform curvature); anything else raises.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .objective import (
    AllSpace,
    ElasticNet,
    L1,
    L2Ball,
    NoRegularizer,
    SparseGroupLasso,
)

LINEARIZED = "linearized"
DIAGONAL_HESSIAN = "diagonal_hessian"

SUPPORTED_COMBINATIONS = (
    "{linearized, diagonal_hessian} x {none, l1, elastic_net, sparse_group_lasso}"
    " x {all_space}  and  {linearized} x {l1} x {l2_ball}"
)


class UnsupportedSubproblem(ValueError):
    pass


@dataclass(frozen=True)
class SurrogateSpec:
    """Which local model to minimize and how strongly convex to make it."""

    kind: str
    strong_convexity: float

    def __post_init__(self):
        if self.kind not in (LINEARIZED, DIAGONAL_HESSIAN):
            raise UnsupportedSubproblem(f"unknown surrogate kind {self.kind!r}")
        if self.strong_convexity <= 0:
            raise UnsupportedSubproblem("strong convexity must be > 0")


@dataclass
class SubproblemInput:
    """Everything one activation needs to state its local subproblem.

    ``tracked_term`` is the network-gradient estimate minus the local
    gradient, so ``local_grad + tracked_term`` is the effective linear
    coefficient of the model.  ``diag_hessian`` (clipped at zero upstream)
    is only consulted by the curvature surrogate.
    """

    x_center: np.ndarray
    tracked_term: np.ndarray
    local_grad: np.ndarray
    regularizer: object
    constraint: object
    diag_hessian: np.ndarray | None = None


# ---------------------------------------------------------------------------
# proximal building blocks
# ---------------------------------------------------------------------------

def soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    """Componentwise sign(v) * max(|v| - t, 0)."""
    if t < 0:
        raise ValueError("threshold must be >= 0")
    return kernels.soft_threshold(np.asarray(v, dtype=float), float(t))


def group_soft_threshold(v, groups, weights, lam) -> np.ndarray:
    """Prox of the grouped sparsity penalty: L1 shrink, then group L2 shrink."""
    u = soft_threshold(v, lam)
    for g, w in zip(groups, weights):
        if w == 0:
            continue
        idx = list(g)
        nrm = float(np.linalg.norm(u[idx]))
        if nrm <= w:
            u[idx] = 0.0
        else:
            u[idx] *= 1.0 - w / nrm
    return u


def project_l2_ball(v: np.ndarray, radius: float) -> np.ndarray:
    if radius <= 0:
        raise ValueError("radius must be > 0")
    nrm = float(np.linalg.norm(v))
    if nrm <= radius:
        return np.asarray(v, dtype=float).copy()
    return v * (radius / nrm)


def prox_l1_in_ball(v: np.ndarray, lam: float, radius: float) -> np.ndarray:
    """Prox of lam*||.||_1 restricted to the centered L2 ball.

    Computed as shrink-then-project; radius=inf degenerates to the plain
    soft threshold.  The composition is exercised against an iterative
    oracle in the test suite rather than assumed.
    """
    shrunk = soft_threshold(v, lam)
    if np.isinf(radius):
        return shrunk
    return project_l2_ball(shrunk, radius)


def prox_regularized(regularizer, constraint, v: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Prox of t*G restricted to K, for the pairs the experiments use."""
    if isinstance(constraint, AllSpace):
        if isinstance(regularizer, NoRegularizer):
            return np.asarray(v, dtype=float).copy()
        if isinstance(regularizer, L1):
            return soft_threshold(v, t * regularizer.lam)
        if isinstance(regularizer, ElasticNet):
            return soft_threshold(v, t * regularizer.lam1) / (1.0 + 2.0 * t * regularizer.lam2)
        if isinstance(regularizer, SparseGroupLasso):
            return group_soft_threshold(v, regularizer.groups,
                                        [t * w for w in regularizer.weights],
                                        t * regularizer.lam)
    if isinstance(constraint, L2Ball):
        if isinstance(regularizer, NoRegularizer):
            return project_l2_ball(v, constraint.radius)
        if isinstance(regularizer, L1):
            return prox_l1_in_ball(v, t * regularizer.lam, constraint.radius)
    raise UnsupportedSubproblem(
        f"no prox for ({type(regularizer).__name__}, {type(constraint).__name__})"
    )


def _group_prox_nonuniform(x_center, linear, qdiag, reg: SparseGroupLasso):
    # coordinatewise L1 part: u_j = soft(q_j c_j - lin_j, lam); group block is
    # zero iff ||u_S|| <= w_S, else x_j = u_j / (q_j + w_S / t) with t = ||x_S||
    # found by bisection (the map t -> ||u / (q + w/t)|| is increasing).
    u = soft_threshold(qdiag * x_center - linear, reg.lam)
    out = np.zeros_like(u)
    for g, w in zip(reg.groups, reg.weights):
        idx = list(g)
        ug, qg = u[idx], qdiag[idx]
        if w == 0:
            out[idx] = ug / qg
            continue
        if float(np.linalg.norm(ug)) <= w:
            continue
        hi = float(np.linalg.norm(ug / qg))
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            if float(np.linalg.norm(ug / (qg + w / mid))) > mid:
                lo = mid
            else:
                hi = mid
        t = 0.5 * (lo + hi)
        out[idx] = ug / (qg + w / t)
    return out


# ---------------------------------------------------------------------------
# the subproblem itself
# ---------------------------------------------------------------------------

def solve_subproblem(spec: SurrogateSpec, inp: SubproblemInput) -> np.ndarray:
    """Exact minimizer of the surrogate composite model over the constraint."""
    mu = spec.strong_convexity
    linear = inp.local_grad + inp.tracked_term
    reg, cons = inp.regularizer, inp.constraint

    if spec.kind == LINEARIZED:
        if isinstance(cons, AllSpace):
            p = inp.x_center - linear / mu
            if isinstance(reg, NoRegularizer):
                return p
            if isinstance(reg, L1):
                return soft_threshold(p, reg.lam / mu)
            if isinstance(reg, ElasticNet):
                return soft_threshold(p, reg.lam1 / mu) / (1.0 + 2.0 * reg.lam2 / mu)
            if isinstance(reg, SparseGroupLasso):
                return group_soft_threshold(p, reg.groups,
                                            [w / mu for w in reg.weights],
                                            reg.lam / mu)
        if isinstance(cons, L2Ball) and isinstance(reg, L1):
            p = inp.x_center - linear / mu
            return prox_l1_in_ball(p, reg.lam / mu, cons.radius)

    if spec.kind == DIAGONAL_HESSIAN:
        if inp.diag_hessian is None:
            raise UnsupportedSubproblem("curvature surrogate needs diag_hessian")
        q = inp.diag_hessian + mu
        if isinstance(cons, AllSpace):
            if isinstance(reg, NoRegularizer):
                return inp.x_center - linear / q
            if isinstance(reg, L1):
                return kernels.coordinate_prox_l1(inp.x_center, linear, q, reg.lam)
            if isinstance(reg, ElasticNet):
                return soft_threshold(q * inp.x_center - linear, reg.lam1) / (q + 2.0 * reg.lam2)
            if isinstance(reg, SparseGroupLasso):
                return _group_prox_nonuniform(inp.x_center, linear, q, reg)

    raise UnsupportedSubproblem(
        f"({spec.kind}, {type(reg).__name__}, {type(cons).__name__}) is not in the "
        f"supported table: {SUPPORTED_COMBINATIONS}"
    )


def relax(x_center: np.ndarray, x_tilde: np.ndarray, gamma: float) -> np.ndarray:
    """Convex combination x + gamma (x_tilde - x) with gamma in (0, 1]."""
    if not (0.0 < gamma <= 1.0):
        raise ValueError(f"step size must be in (0, 1], got {gamma}")
    return x_center + gamma * (x_tilde - x_center)


# ---------------------------------------------------------------------------
# model evaluation helpers (used by optimality checks and oracles)
# ---------------------------------------------------------------------------

def subproblem_value(spec: SurrogateSpec, inp: SubproblemInput, z: np.ndarray) -> float:
    """Value of the surrogate composite model at z (constraint not included)."""
    d = z - inp.x_center
    mu = spec.strong_convexity
    smooth = float(inp.local_grad @ d) + 0.5 * mu * float(d @ d)
    if spec.kind == DIAGONAL_HESSIAN:
        smooth += 0.5 * float(d @ (inp.diag_hessian * d))
    smooth += float(inp.tracked_term @ d)
    reg = inp.regularizer.value(z) if not isinstance(inp.regularizer, NoRegularizer) else 0.0
    return smooth + reg


def subproblem_smooth_grad(spec: SurrogateSpec, inp: SubproblemInput, z: np.ndarray) -> np.ndarray:
    """Gradient of the smooth part of the surrogate model at z."""
    d = z - inp.x_center
    g = inp.local_grad + inp.tracked_term + spec.strong_convexity * d
    if spec.kind == DIAGONAL_HESSIAN:
        g = g + inp.diag_hessian * d
    return g


def optimality_residual(spec: SurrogateSpec, inp: SubproblemInput, x_tilde: np.ndarray,
                        probes: np.ndarray) -> float:
    """Worst violation of the first-order variational inequality at x_tilde.

    For each feasible probe z the quantity
    grad(x_tilde).(z - x_tilde) + G(z) - G(x_tilde) must be >= 0; the return
    value is the most negative left-hand side (0 when all hold).
    """
    g = subproblem_smooth_grad(spec, inp, x_tilde)
    g_reg = inp.regularizer.value(x_tilde) if not isinstance(inp.regularizer, NoRegularizer) else 0.0
    worst = 0.0
    for z in probes:
        z_reg = inp.regularizer.value(z) if not isinstance(inp.regularizer, NoRegularizer) else 0.0
        lhs = float(g @ (z - x_tilde)) + z_reg - g_reg
        worst = min(worst, lhs)
    return worst
