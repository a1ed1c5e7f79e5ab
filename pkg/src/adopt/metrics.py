"""Optimality measures, a high-accuracy centralized reference solver, and
convergence-rate fits over run traces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .localsolve import prox_regularized
from .objective import NoRegularizer, ProblemInstance, WelschLocal


class ReferenceError(RuntimeError):
    """Reference solver failed to reach its residual tolerance."""

    def __init__(self, message, best_residual):
        super().__init__(message)
        self.best_residual = best_residual


@dataclass(frozen=True)
class ReferenceSolution:
    """Centralized solution used as the optimality yardstick.

    ``kkt_residual`` is the fixed-point residual of the unit-step proximal
    gradient map at ``x_star``.  ``certified`` is False for nonconvex
    problems, where the solver only returns a stationary point.
    """

    x_star: np.ndarray
    U_star: float
    kkt_residual: float
    iterations: int
    certified: bool


def prox_residual(problem: ProblemInstance, x: np.ndarray) -> float:
    """|| x - prox_G(x - grad F(x)) || with the prox taken over K."""
    step = x - problem.full_grad(x)
    return float(np.linalg.norm(x - prox_regularized(problem.regularizer,
                                                     problem.constraint, step)))


def solve_reference(problem: ProblemInstance, tolerance: float = 1e-12,
                    max_iters: int = 200_000, l0: float | None = None,
                    backtrack_factor: float = 2.0,
                    use_restart: bool = True) -> ReferenceSolution:
    """Accelerated proximal gradient with backtracking and gradient restart.

    Runs until the unit-step prox residual drops below ``tolerance``; raises
    ReferenceError (carrying the best residual seen) if the budget runs out.
    For the nonconvex robust loss the momentum restarts keep the iteration
    monotone enough to reach a stationary point, but the result is flagged
    as not certified.
    """
    n = problem.dim
    reg, cons = problem.regularizer, problem.constraint
    convex = not isinstance(problem.locals[0], WelschLocal)
    x = prox_regularized(reg, cons, np.zeros(n))
    y = x.copy()
    t = 1.0
    L = float(l0) if l0 is not None else max(problem.lipschitz_locals[0], 1e-6)
    best_residual = np.inf
    fy = problem.full_smooth_value(y)
    for it in range(1, max_iters + 1):
        gy = problem.full_grad(y)
        while True:
            x_new = prox_regularized(reg, cons, y - gy / L, 1.0 / L)
            d = x_new - y
            quad = fy + float(gy @ d) + 0.5 * L * float(d @ d)
            if problem.full_smooth_value(x_new) <= quad + 1e-12 * max(1.0, abs(quad)):
                break
            L *= backtrack_factor
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y_next = x_new + ((t - 1.0) / t_new) * (x_new - x)
        if use_restart and float((y - x_new) @ (x_new - x)) > 0.0:
            t_new = 1.0
            y_next = x_new.copy()
        residual = prox_residual(problem, x_new)
        best_residual = min(best_residual, residual)
        x, y, t = x_new, y_next, t_new
        fy = problem.full_smooth_value(y)
        if residual <= tolerance:
            u_star = problem.full_smooth_value(x) + reg.value(x)
            return ReferenceSolution(x, u_star, residual, it, convex)
    raise ReferenceError(
        f"reference solver missed tolerance {tolerance} in {max_iters} iterations "
        f"(best residual {best_residual:.3e})", best_residual)


def merit(problem: ProblemInstance, X: np.ndarray, xbar: np.ndarray | None = None) -> float:
    """Stationarity-and-consensus merit at the stacked states X (I, n).

    max of the squared prox residual at the mean iterate and the total
    squared consensus disagreement; zero exactly at consensual stationary
    points.
    """
    if xbar is None:
        xbar = X.mean(axis=0)
    residual = prox_residual(problem, xbar)
    disagreement = float(np.sum((X - xbar) ** 2))
    return max(residual * residual, disagreement)


def diagnostics(problem: ProblemInstance, X: np.ndarray, Y: np.ndarray,
                acting_agent: int | None = None,
                gradients: np.ndarray | None = None) -> dict:
    """Per-snapshot error quantities: consensus spread, tracking error of
    the acting agent (max over agents when None), and the squared gap
    between the scaled tracker and the full gradient."""
    I = problem.num_agents
    if gradients is None:
        gradients = np.stack([problem.locals[i].grad(X[i]) for i in range(I)])
    xbar = X.mean(axis=0)
    gbar = gradients.mean(axis=0)
    consensus_err = float(np.max(np.linalg.norm(X - xbar, axis=1)))
    if acting_agent is None:
        tracking_err = float(np.max(np.linalg.norm(Y - gbar, axis=1)))
        worst = int(np.argmax(np.linalg.norm(Y - gbar, axis=1)))
    else:
        tracking_err = float(np.linalg.norm(Y[acting_agent] - gbar))
        worst = acting_agent
    full_gap = I * Y[worst] - problem.full_grad(X[worst])
    return {
        "consensus_err": consensus_err,
        "tracking_err": tracking_err,
        "grad_tracking_gap_sq": float(full_gap @ full_gap),
    }


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    """Least-squares line through (k, log10 q): slope, fit quality, and the
    implied per-iteration geometric factor."""

    window: tuple[int, int]
    slope: float
    r_squared: float
    rate: float
    points: int


class RateFitError(ValueError):
    pass


def _window_from_values(ks, qs, hi, lo):
    running = np.minimum.accumulate(qs)
    start = np.flatnonzero(running <= hi)
    stop = np.flatnonzero(running <= lo)
    if start.size == 0 or stop.size == 0:
        raise RateFitError(
            f"quantity never spans the value range [{lo}, {hi}]: "
            f"min seen {running[-1]:.3e}")
    return int(ks[start[0]]), int(ks[stop[0]])


def fit_rate(trace: dict, quantity: str, window: tuple[int, int] | None = None,
             value_range: tuple[float, float] | None = None) -> RateFit:
    """Fit log10(quantity) against the global iteration counter.

    ``window`` is an inclusive (k_lo, k_hi) range; alternatively
    ``value_range`` = (hi, lo) selects the window where the running minimum
    first crosses hi and lo.  Requires at least 10 positive points.
    """
    ks = np.asarray(trace["k"], dtype=float)
    qs = np.asarray(trace[quantity], dtype=float)
    if value_range is not None:
        hi, lo = value_range
        k_lo, k_hi = _window_from_values(ks, qs, hi, lo)
    elif window is not None:
        k_lo, k_hi = window
    else:
        k_lo, k_hi = int(ks[0]), int(ks[-1])
    mask = (ks >= k_lo) & (ks <= k_hi) & (qs > 0.0) & np.isfinite(qs)
    if mask.sum() < 10:
        raise RateFitError(
            f"need at least 10 positive points in window [{k_lo}, {k_hi}], "
            f"got {int(mask.sum())}")
    kk = ks[mask]
    logq = np.log10(qs[mask])
    slope, intercept = np.polyfit(kk, logq, 1)
    pred = slope * kk + intercept
    ss_res = float(np.sum((logq - pred) ** 2))
    ss_tot = float(np.sum((logq - logq.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit((k_lo, k_hi), float(slope), float(r2), float(10.0 ** slope),
                   int(mask.sum()))


def time_to_threshold(trace: dict, quantity: str, deltas) -> dict:
    """First global iteration at which the running minimum of a traced
    quantity reaches each threshold (None where never reached)."""
    ks = np.asarray(trace["k"])
    qs = np.asarray(trace[quantity], dtype=float)
    running = np.minimum.accumulate(qs)
    out = {}
    for d in deltas:
        hits = np.flatnonzero(running <= d)
        out[float(d)] = int(ks[hits[0]]) if hits.size else None
    return out
