"""Network-average gradient tracking over a digraph.

Asynchronous mode follows a push-sum recursion made robust to delayed and
dropped packets by cumulative per-edge mass counters: each sender keeps a
running total of the mass pushed along every out-edge, each receiver keeps
a buffer of the counter value it last absorbed, and consuming the
difference makes delivery idempotent.  The ratio y = z / phi then tracks
the average of the agents' current gradients.  Synchronous mode is the
plain column-stochastic recursion; both preserve total mass, which the
audit verifies from the raw state arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .netgraph import NetworkTopology


class TrackingError(RuntimeError):
    """Scalar mass became nonpositive: protocol invariant breached."""


@dataclass
class TrackingState:
    """Read-only snapshot of one agent's tracking variables."""

    z: np.ndarray
    phi: float
    y: np.ndarray
    rho_out: dict
    sigma_out: dict
    rho_buf: dict
    sigma_buf: dict


class TrackingNetwork:
    """All agents' tracking state in flat per-edge arrays.

    Edge e runs from ``edge_sender[e]`` to ``edge_receiver[e]``; the sender
    owns ``ledger_*[e]`` (cumulative pushed mass), the receiver owns
    ``buf_*[e]`` (last absorbed counter value).
    """

    def __init__(self, topology: NetworkTopology, init_gradients: np.ndarray):
        I = topology.num_agents
        n = init_gradients.shape[1]
        if init_gradients.shape[0] != I:
            raise ValueError("one initial gradient row per agent required")
        senders, receivers = [], []
        for i, j in topology.edges():
            senders.append(i)
            receivers.append(j)
        E = len(senders)
        self.topology = topology
        self.num_agents = I
        self.dim = n
        self.num_edges = E
        self.edge_sender = np.array(senders, dtype=np.int64)
        self.edge_receiver = np.array(receivers, dtype=np.int64)
        self.in_edge_ids = [
            np.flatnonzero(self.edge_receiver == i).astype(np.int64) for i in range(I)
        ]
        self.out_edge_ids = [
            np.flatnonzero(self.edge_sender == i).astype(np.int64) for i in range(I)
        ]
        self.a_self = np.ascontiguousarray(np.diag(topology.A))
        self.a_out = np.array(
            [topology.A[r, s] for s, r in zip(senders, receivers)], dtype=float
        )
        self.Z = np.ascontiguousarray(init_gradients, dtype=float).copy()
        self.phi = np.ones(I)
        self.Y = self.Z / self.phi[:, None]
        self.ledger_rho = np.zeros((E, n))
        self.ledger_sigma = np.zeros(E)
        self.buf_rho = np.zeros((E, n))
        self.buf_sigma = np.zeros(E)
        self.phi_min = 1.0

    def robust_track_update(self, agent: int, mail_rho: np.ndarray,
                            mail_sigma: np.ndarray, has_mail: np.ndarray,
                            eps: np.ndarray) -> np.ndarray:
        """One asynchronous update for ``agent``; returns its new ratio y.

        ``mail_*`` are (E, n)/(E,) arrays holding, per in-edge, the freshest
        received counters; ``has_mail`` marks edges with any delivery yet.
        ``eps`` is the local gradient change injected this activation.
        Freshness ordering is the caller's responsibility.
        """
        new_phi = kernels.track_update(
            agent, self.Z, self.phi, self.Y,
            self.in_edge_ids[agent], self.out_edge_ids[agent],
            mail_rho, mail_sigma, has_mail,
            self.buf_rho, self.buf_sigma,
            self.ledger_rho, self.ledger_sigma,
            float(self.a_self[agent]), self.a_out, eps,
        )
        if not new_phi > 0.0:
            raise TrackingError(
                f"agent {agent} scalar mass {new_phi} <= 0 after update"
            )
        if new_phi < self.phi_min:
            self.phi_min = new_phi
        return self.Y[agent]

    def mass_conservation_audit(self, gradients: np.ndarray) -> tuple[float, float]:
        """Distance of the global mass identities from zero.

        z side: || sum_i z_i + sum_edges (ledger - buffer) - sum_i grad_i ||;
        phi side: the same with unit masses against the agent count.  Exact
        in exact arithmetic at every event; float drift is what is measured.
        """
        return kernels.mass_audit(self.Z, self.phi, self.ledger_rho, self.buf_rho,
                                  self.ledger_sigma, self.buf_sigma, gradients)

    def state(self, agent: int) -> TrackingState:
        rho_out = {int(self.edge_receiver[e]): self.ledger_rho[e].copy()
                   for e in self.out_edge_ids[agent]}
        sigma_out = {int(self.edge_receiver[e]): float(self.ledger_sigma[e])
                     for e in self.out_edge_ids[agent]}
        rho_buf = {int(self.edge_sender[e]): self.buf_rho[e].copy()
                   for e in self.in_edge_ids[agent]}
        sigma_buf = {int(self.edge_sender[e]): float(self.buf_sigma[e])
                     for e in self.in_edge_ids[agent]}
        return TrackingState(self.Z[agent].copy(), float(self.phi[agent]),
                             self.Y[agent].copy(), rho_out, sigma_out,
                             rho_buf, sigma_buf)


def sync_track_update(Z: np.ndarray, phi: np.ndarray, A: np.ndarray,
                      grad_new: np.ndarray, grad_old: np.ndarray):
    """One synchronous tracking round for all agents simultaneously.

    Implements z <- A (z + grad change), phi <- A phi, y = z / phi; the
    column stochasticity of A preserves both totals exactly.
    """
    Z_new = A @ (Z + grad_new - grad_old)
    phi_new = A @ phi
    if np.min(phi_new) <= 0.0:
        raise TrackingError("scalar mass <= 0 in synchronous update")
    return Z_new, phi_new, Z_new / phi_new[:, None]


def sync_mass_identities(Z: np.ndarray, phi: np.ndarray,
                         gradients: np.ndarray) -> tuple[float, float]:
    """Synchronous-mode conservation gaps (no in-flight counters)."""
    z_gap = float(np.linalg.norm(Z.sum(axis=0) - gradients.sum(axis=0)))
    phi_gap = abs(float(phi.sum()) - Z.shape[0])
    return z_gap, phi_gap
