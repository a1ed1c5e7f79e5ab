"""Event-driven simulator for decentralized composite optimization.

Asynchronous mode replays the physical timing model: every agent computes
for a uniformly drawn duration, then atomically (a) solves its local
subproblem, (b) mixes its relaxed iterate with the freshest received
neighbor iterates, (c) runs the robust tracking update, and (d) emits
packets (iterate plus cumulative mass counters) to all out-neighbors with
exponentially distributed transit times.  A hidden global counter advances
by one per activation; delays are measured a posteriori in units of that
counter.  Synchronous mode updates all agents simultaneously with no
delays.  Both are bit-deterministic given (config, seed).
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels, metrics
from .localsolve import (
    DIAGONAL_HESSIAN,
    SubproblemInput,
    SurrogateSpec,
    relax,
    solve_subproblem,
)
from .netgraph import NetworkTopology
from .objective import ProblemInstance, batch_objective, grad_local, hess_diag_local
from .tracking import TrackingNetwork, sync_mass_identities, sync_track_update

ARRIVAL, COMPUTE = 0, 1

TRACE_COLUMNS = (
    "k", "sim_time_ms", "agent", "U_mean", "U_gap", "merit", "consensus_err",
    "tracking_err", "delta_norm", "mass_gap_z", "mass_gap_phi",
    "max_delay_obs", "max_gap_obs",
)

FEASIBILITY_TOL = 1e-12


class EngineError(RuntimeError):
    """Fatal state corruption (NaN/Inf); carries a recent-event dump."""

    def __init__(self, message, event_dump=()):
        super().__init__(message)
        self.event_dump = list(event_dump)


@dataclass(frozen=True)
class Schedule:
    """Timing model of the asynchronous runs (milliseconds).

    Compute durations are Uniform[p_min, p_max]; packet transit times are
    exponential with mean d_tv.  ``d_tv == 0`` is the documented sentinel
    for instantaneous delivery (zero-delay degenerate schedule).  The
    horizon caps the number of activations (global iterations) and/or the
    simulated clock.
    """

    p_min: float = 5.0
    p_max: float = 15.0
    d_tv: float = 30.0
    seed: int = 0
    horizon_iters: int | None = None
    horizon_time_ms: float | None = None

    def __post_init__(self):
        if not (0.0 < self.p_min <= self.p_max):
            raise ValueError("need 0 < p_min <= p_max")
        if self.d_tv < 0.0:
            raise ValueError("mean transit delay must be >= 0 (0 = instantaneous)")
        if self.horizon_iters is None and self.horizon_time_ms is None:
            raise ValueError("schedule needs an iteration or time horizon")


@dataclass(frozen=True)
class StopRule:
    """Stop early once a traced quantity reaches a threshold."""

    quantity: str
    threshold: float

    def __post_init__(self):
        if self.quantity not in TRACE_COLUMNS[3:]:
            raise ValueError(f"unknown stop quantity {self.quantity!r}")


@dataclass(slots=True)
class Packet:
    sender: int
    receiver: int
    edge: int
    generation: int
    v: np.ndarray
    rho: np.ndarray
    sigma: float
    send_time: float
    arrival_time: float


@dataclass
class RunResult:
    """Final states plus the per-iteration trace of one run."""

    mode: str
    trace: dict
    X: np.ndarray
    V: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    phi: np.ndarray
    summary: dict
    tracking: TrackingNetwork | None = None
    mail_generation: np.ndarray | None = None

    def trace_csv(self) -> str:
        lines = [",".join(TRACE_COLUMNS)]
        cols = [self.trace[c] for c in TRACE_COLUMNS]
        for row in zip(*cols):
            parts = []
            for c, v in zip(TRACE_COLUMNS, row):
                if c in ("k", "agent", "max_delay_obs", "max_gap_obs"):
                    parts.append(str(int(v)))
                else:
                    parts.append(f"{v:.17g}")
            lines.append(",".join(parts))
        return "\n".join(lines) + "\n"

    def write_trace(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.trace_csv())


def _empty_trace() -> dict:
    return {c: [] for c in TRACE_COLUMNS}


def _check_inputs(problem: ProblemInstance, topology: NetworkTopology, gamma: float):
    if topology.num_agents != problem.num_agents:
        raise ValueError("problem and topology disagree on the number of agents")
    if topology.num_agents < 2:
        raise ValueError("at least 2 agents required")
    if not (0.0 <= gamma <= 1.0):
        raise ValueError(f"step size must be in [0, 1], got {gamma}")


def _init_states(problem: ProblemInstance, x0) -> np.ndarray:
    I, n = problem.num_agents, problem.dim
    if x0 is None:
        return np.zeros((I, n))
    x0 = np.asarray(x0, dtype=float)
    if x0.shape == (n,):
        return np.tile(x0, (I, 1))
    if x0.shape == (I, n):
        return x0.copy()
    raise ValueError(f"x0 must have shape ({n},) or ({I}, {n})")


def run_async(problem: ProblemInstance, topology: NetworkTopology,
              spec: SurrogateSpec, gamma: float, schedule: Schedule,
              stop: StopRule | None = None, u_star: float | None = None,
              trace_every: int = 1, audit_every: int = 1,
              x0=None) -> RunResult:
    """Simulate the asynchronous algorithm under the given timing model.

    ``gamma == 0`` freezes the iterates (the tracking layer still runs),
    which is the degenerate mode used to observe pure gradient tracking.
    Traces are recorded every ``trace_every`` activations (plus the final
    one); the mass-conservation audit runs every ``audit_every``
    activations and on every trace row.
    """
    _check_inputs(problem, topology, gamma)
    I, n = problem.num_agents, problem.dim
    X = _init_states(problem, x0)
    V = X.copy()
    G_last = np.stack([grad_local(problem, i, X[i]) for i in range(I)])
    tracking = TrackingNetwork(topology, G_last)
    E = tracking.num_edges
    edge_receiver = tracking.edge_receiver
    in_edges = tracking.in_edge_ids
    out_edges = tracking.out_edge_ids
    w_self = np.diag(topology.W).copy()
    w_in = np.array([topology.W[r, s] for s, r in
                     zip(tracking.edge_sender, edge_receiver)], dtype=float)

    mail_v = np.zeros((E, n))
    mail_rho = np.zeros((E, n))
    mail_sigma = np.zeros(E)
    mail_gen = np.full(E, -1, dtype=np.int64)
    has_mail = np.zeros(E, dtype=np.bool_)

    use_dh = spec.kind == DIAGONAL_HESSIAN
    reg, cons = problem.regularizer, problem.constraint
    radius = getattr(cons, "radius", None)

    rng = np.random.default_rng(schedule.seed)
    heap: list = []
    seq = 0
    recent = deque(maxlen=100)

    # one compute round per agent starts at t=0; initial packets carry the
    # initial iterate (generation 0) so neighbors never mix a stale zero
    # unless a packet is still in flight
    for i in range(I):
        dur = rng.uniform(schedule.p_min, schedule.p_max)
        heapq.heappush(heap, (dur, COMPUTE, i, seq, None))
        seq += 1
        for e in out_edges[i]:
            transit = rng.exponential(schedule.d_tv) if schedule.d_tv > 0 else 0.0
            pkt = Packet(i, int(edge_receiver[e]), int(e), 0, X[i], np.zeros(n),
                         0.0, 0.0, transit)
            heapq.heappush(heap, (transit, ARRIVAL, int(edge_receiver[e]), seq, pkt))
            seq += 1

    trace = _empty_trace()
    k = 0
    now = 0.0
    max_delay_obs = 0
    max_gap_obs = 0
    last_update_k = np.full(I, -1, dtype=np.int64)
    worst_z_gap = 0.0
    worst_phi_gap = 0.0
    z_gap = phi_gap = 0.0
    stop_reason = "horizon"
    max_iters = schedule.horizon_iters if schedule.horizon_iters is not None else np.inf
    max_time = schedule.horizon_time_ms if schedule.horizon_time_ms is not None else np.inf

    def record_row(agent: int, delta: float):
        values = batch_objective(problem, X)
        u_mean = float(values.mean())
        u_gap = u_mean - u_star if u_star is not None else float("nan")
        xbar = X.mean(axis=0)
        mf = metrics.merit(problem, X, xbar=xbar)
        consensus_err = float(np.max(np.linalg.norm(X - xbar, axis=1)))
        gbar = G_last.mean(axis=0)
        tracking_err = float(np.linalg.norm(tracking.Y[agent] - gbar))
        trace["k"].append(k)
        trace["sim_time_ms"].append(now)
        trace["agent"].append(agent)
        trace["U_mean"].append(u_mean)
        trace["U_gap"].append(u_gap)
        trace["merit"].append(mf)
        trace["consensus_err"].append(consensus_err)
        trace["tracking_err"].append(tracking_err)
        trace["delta_norm"].append(delta)
        trace["mass_gap_z"].append(z_gap)
        trace["mass_gap_phi"].append(phi_gap)
        trace["max_delay_obs"].append(max_delay_obs)
        trace["max_gap_obs"].append(max_gap_obs)

    while heap and k < max_iters and now <= max_time:
        now, kind, key, _, payload = heapq.heappop(heap)
        if now > max_time:
            stop_reason = "time_horizon"
            break
        recent.append((now, kind, key))
        if kind == ARRIVAL:
            pkt: Packet = payload
            e = pkt.edge
            if pkt.generation > mail_gen[e]:
                mail_gen[e] = pkt.generation
                mail_v[e] = pkt.v
                mail_rho[e] = pkt.rho
                mail_sigma[e] = pkt.sigma
                has_mail[e] = True
            continue

        # ---- compute completion: this activation is global iteration k ----
        i = key
        for e in in_edges[i]:
            if has_mail[e]:
                d = k - int(mail_gen[e])
                if d > max_delay_obs:
                    max_delay_obs = d
        gap = int(k - last_update_k[i])
        if gap > max_gap_obs:
            max_gap_obs = gap
        last_update_k[i] = k

        diag_h = None
        if use_dh:
            diag_h = np.maximum(hess_diag_local(problem, i, X[i]), 0.0)
        tracked_term = problem.num_agents * tracking.Y[i] - G_last[i]
        inp = SubproblemInput(X[i], tracked_term, G_last[i], reg, cons, diag_h)
        x_tilde = solve_subproblem(spec, inp)
        delta = float(np.linalg.norm(x_tilde - X[i]))
        v_new = relax(X[i], x_tilde, gamma) if gamma > 0.0 else X[i].copy()
        V[i] = v_new

        x_new = kernels.consensus_mix(v_new, float(w_self[i]), w_in, mail_v,
                                      has_mail, in_edges[i])
        g_new = grad_local(problem, i, x_new)
        eps = g_new - G_last[i]
        G_last[i] = g_new
        tracking.robust_track_update(i, mail_rho, mail_sigma, has_mail, eps)
        X[i] = x_new

        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(tracking.Z[i]))):
            raise EngineError(
                f"non-finite state at agent {i}, iteration {k}", recent
            )

        gen_out = k + 1
        dur = rng.uniform(schedule.p_min, schedule.p_max)
        heapq.heappush(heap, (now + dur, COMPUTE, i, seq, None))
        seq += 1
        for e in out_edges[i]:
            transit = rng.exponential(schedule.d_tv) if schedule.d_tv > 0 else 0.0
            r = int(edge_receiver[e])
            pkt = Packet(i, r, int(e), gen_out, v_new, tracking.ledger_rho[e].copy(),
                         float(tracking.ledger_sigma[e]), now, now + transit)
            heapq.heappush(heap, (now + transit, ARRIVAL, r, seq, pkt))
            seq += 1

        is_trace_row = (k % trace_every == 0) or (k + 1 >= max_iters)
        if is_trace_row or (audit_every > 0 and k % audit_every == 0):
            z_gap, phi_gap = tracking.mass_conservation_audit(G_last)
            worst_z_gap = max(worst_z_gap, z_gap)
            worst_phi_gap = max(worst_phi_gap, phi_gap)
        if is_trace_row:
            if radius is not None:
                nrm = float(np.linalg.norm(x_new))
                if nrm > radius + FEASIBILITY_TOL:
                    raise EngineError(
                        f"iterate left the feasible ball at iteration {k}: "
                        f"norm {nrm} > {radius}", recent)
            record_row(i, delta)
            if stop is not None and trace[stop.quantity][-1] <= stop.threshold:
                stop_reason = "target"
                k += 1
                break
        k += 1

    summary = {
        "mode": "async",
        "global_iters": int(k),
        "sim_time_ms": float(now),
        "max_delay_obs": int(max_delay_obs),
        "max_gap_obs": int(max_gap_obs),
        "phi_min": float(tracking.phi_min),
        "worst_mass_gap_z": float(worst_z_gap),
        "worst_mass_gap_phi": float(worst_phi_gap),
        "stop_reason": stop_reason,
        "final": {c: trace[c][-1] for c in TRACE_COLUMNS} if trace["k"] else {},
    }
    return RunResult("async", trace, X, V, tracking.Y.copy(), tracking.Z.copy(),
                     tracking.phi.copy(), summary, tracking, mail_gen.copy())


def run_sync(problem: ProblemInstance, topology: NetworkTopology,
             spec: SurrogateSpec, gamma: float, iterations: int,
             stop: StopRule | None = None, u_star: float | None = None,
             trace_every: int = 1, x0=None) -> RunResult:
    """Run the synchronous baseline: all agents update simultaneously.

    One trace row per iteration (``sim_time_ms`` carries the iteration
    index; there is no timing model in this mode).
    """
    _check_inputs(problem, topology, gamma)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    I, n = problem.num_agents, problem.dim
    X = _init_states(problem, x0)
    G = np.stack([grad_local(problem, i, X[i]) for i in range(I)])
    Z = G.copy()
    phi = np.ones(I)
    Y = Z / phi[:, None]
    W, A = topology.W, topology.A
    use_dh = spec.kind == DIAGONAL_HESSIAN
    reg, cons = problem.regularizer, problem.constraint
    radius = getattr(cons, "radius", None)
    V = X.copy()

    trace = _empty_trace()
    stop_reason = "horizon"
    z_gap = phi_gap = 0.0
    worst_z_gap = worst_phi_gap = 0.0

    def record_row(k: int, delta: float):
        values = batch_objective(problem, X)
        u_mean = float(values.mean())
        u_gap = u_mean - u_star if u_star is not None else float("nan")
        xbar = X.mean(axis=0)
        mf = metrics.merit(problem, X, xbar=xbar)
        consensus_err = float(np.max(np.linalg.norm(X - xbar, axis=1)))
        gbar = G.mean(axis=0)
        tracking_err = float(np.max(np.linalg.norm(Y - gbar, axis=1)))
        trace["k"].append(k)
        trace["sim_time_ms"].append(float(k))
        trace["agent"].append(-1)
        trace["U_mean"].append(u_mean)
        trace["U_gap"].append(u_gap)
        trace["merit"].append(mf)
        trace["consensus_err"].append(consensus_err)
        trace["tracking_err"].append(tracking_err)
        trace["delta_norm"].append(delta)
        trace["mass_gap_z"].append(z_gap)
        trace["mass_gap_phi"].append(phi_gap)
        trace["max_delay_obs"].append(0)
        trace["max_gap_obs"].append(1)

    for k in range(iterations):
        delta_max = 0.0
        for i in range(I):
            diag_h = None
            if use_dh:
                diag_h = np.maximum(hess_diag_local(problem, i, X[i]), 0.0)
            tracked_term = I * Y[i] - G[i]
            inp = SubproblemInput(X[i], tracked_term, G[i], reg, cons, diag_h)
            x_tilde = solve_subproblem(spec, inp)
            delta_max = max(delta_max, float(np.linalg.norm(x_tilde - X[i])))
            V[i] = relax(X[i], x_tilde, gamma) if gamma > 0.0 else X[i]
        X = W @ V
        G_new = np.stack([grad_local(problem, i, X[i]) for i in range(I)])
        Z, phi, Y = sync_track_update(Z, phi, A, G_new, G)
        G = G_new
        if not np.all(np.isfinite(X)):
            raise EngineError(f"non-finite state at iteration {k}")
        if radius is not None:
            worst = float(np.max(np.linalg.norm(X, axis=1)))
            if worst > radius + FEASIBILITY_TOL:
                raise EngineError(f"iterate left the feasible ball at iteration {k}")
        if k % trace_every == 0 or k == iterations - 1:
            z_gap, phi_gap = sync_mass_identities(Z, phi, G)
            worst_z_gap = max(worst_z_gap, z_gap)
            worst_phi_gap = max(worst_phi_gap, phi_gap)
            record_row(k, delta_max)
            if stop is not None and trace[stop.quantity][-1] <= stop.threshold:
                stop_reason = "target"
                break

    summary = {
        "mode": "sync",
        "global_iters": int(trace["k"][-1]) + 1 if trace["k"] else 0,
        "sim_time_ms": float(trace["k"][-1]) if trace["k"] else 0.0,
        "max_delay_obs": 0,
        "max_gap_obs": 1,
        "phi_min": float(phi.min()),
        "worst_mass_gap_z": float(worst_z_gap),
        "worst_mass_gap_phi": float(worst_phi_gap),
        "stop_reason": stop_reason,
        "final": {c: trace[c][-1] for c in TRACE_COLUMNS} if trace["k"] else {},
    }
    return RunResult("sync", trace, X, V.copy(), Y.copy(), Z.copy(), phi.copy(),
                     summary)
