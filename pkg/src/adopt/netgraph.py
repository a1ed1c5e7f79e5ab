"""Communication graphs and mixing matrices for the agent network.

Two generators are provided: undirected Erdos-Renyi graphs (realized as
bidirectional edge pairs) with a Metropolis-Hastings doubly stochastic
weight matrix, and directed ring-plus-random-out-edges graphs with uniform
row-stochastic consensus weights and uniform column-stochastic tracking
weights.  Every accepted topology is strongly connected, has no self-loops
in its adjacency, and carries strictly positive weight-matrix diagonals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import json

import numpy as np

STOCHASTICITY_TOL = 1e-12


class TopologyError(ValueError):
    """Raised when a graph cannot be generated or fails its invariants."""


@dataclass(frozen=True)
class NetworkTopology:
    """A fixed directed communication graph with its two mixing matrices.

    Attributes
    ----------
    num_agents : int
        Number of agents I (>= 2).
    out_neighbors : tuple[tuple[int, ...], ...]
        For each agent i, the sorted agents j with a directed edge i -> j.
    in_neighbors : tuple[tuple[int, ...], ...]
        Inverse adjacency, derived from ``out_neighbors``.
    W : ndarray, shape (I, I)
        Row-stochastic consensus weights; W[i, j] > 0 iff j == i or j -> i.
    A : ndarray, shape (I, I)
        Column-stochastic tracking weights with the same support rule.
    meta : dict
        Generator provenance (kind, parameters, seed, resample count).
    """

    num_agents: int
    out_neighbors: tuple[tuple[int, ...], ...]
    in_neighbors: tuple[tuple[int, ...], ...]
    W: np.ndarray
    A: np.ndarray
    meta: dict = field(default_factory=dict)

    def edges(self) -> list[tuple[int, int]]:
        """Directed edges (sender, receiver) in deterministic order."""
        return [(i, j) for i in range(self.num_agents) for j in self.out_neighbors[i]]

    def validate(self) -> None:
        """Check all construction invariants; raise TopologyError on breach."""
        I = self.num_agents
        if I < 2:
            raise TopologyError(f"need at least 2 agents, got {I}")
        for i in range(I):
            if i in self.out_neighbors[i]:
                raise TopologyError(f"self-loop at agent {i}")
        for M, name, axis in ((self.W, "W", 1), (self.A, "A", 0)):
            sums = M.sum(axis=axis)
            if np.max(np.abs(sums - 1.0)) > STOCHASTICITY_TOL:
                raise TopologyError(f"{name} not stochastic along axis {axis}")
            if np.min(np.diag(M)) <= 0.0:
                raise TopologyError(f"{name} has a nonpositive diagonal entry")
            for i in range(I):
                for j in range(I):
                    has_edge = (i == j) or (j in self.in_neighbors[i])
                    if (M[i, j] > 0.0) != has_edge:
                        raise TopologyError(
                            f"{name}[{i},{j}] support mismatch with adjacency"
                        )
        if not is_strongly_connected(self):
            raise TopologyError("graph is not strongly connected")

    def to_json(self) -> str:
        payload = {
            "num_agents": self.num_agents,
            "edges": self.edges(),
            "W": self.W.ravel().tolist(),
            "A": self.A.ravel().tolist(),
            "meta": self.meta,
        }
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "NetworkTopology":
        payload = json.loads(text)
        I = payload["num_agents"]
        out_nbrs = [[] for _ in range(I)]
        for i, j in payload["edges"]:
            out_nbrs[i].append(j)
        W = np.array(payload["W"], dtype=float).reshape(I, I)
        A = np.array(payload["A"], dtype=float).reshape(I, I)
        return _assemble(I, [sorted(o) for o in out_nbrs], W, A, payload.get("meta", {}))


def _invert_adjacency(out_neighbors: list[list[int]], num_agents: int) -> list[list[int]]:
    in_nbrs: list[list[int]] = [[] for _ in range(num_agents)]
    for i, outs in enumerate(out_neighbors):
        for j in outs:
            in_nbrs[j].append(i)
    return [sorted(v) for v in in_nbrs]


def _assemble(I, out_neighbors, W, A, meta) -> NetworkTopology:
    topo = NetworkTopology(
        num_agents=I,
        out_neighbors=tuple(tuple(o) for o in out_neighbors),
        in_neighbors=tuple(tuple(v) for v in _invert_adjacency(out_neighbors, I)),
        W=W,
        A=A,
        meta=meta,
    )
    topo.validate()
    topo.W.setflags(write=False)
    topo.A.setflags(write=False)
    return topo


def is_strongly_connected(topology_or_adj) -> bool:
    """True iff every ordered pair of agents is connected by a directed path.

    Accepts a NetworkTopology or a plain out-neighbor list of lists.
    """
    if isinstance(topology_or_adj, NetworkTopology):
        out_nbrs = topology_or_adj.out_neighbors
        I = topology_or_adj.num_agents
    else:
        out_nbrs = topology_or_adj
        I = len(out_nbrs)
    if I == 0:
        return False
    in_nbrs = _invert_adjacency([list(o) for o in out_nbrs], I)
    return _reaches_all(out_nbrs, I) and _reaches_all(in_nbrs, I)


def _reaches_all(adj, I) -> bool:
    seen = [False] * I
    seen[0] = True
    stack = [0]
    count = 1
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                count += 1
                stack.append(v)
    return count == I


def metropolis_hastings_weights(out_neighbors: list[list[int]], I: int) -> np.ndarray:
    """Doubly stochastic weights for a symmetric adjacency.

    w_ij = 1 / (1 + max(deg_i, deg_j)) on edges, diagonal takes the slack.
    """
    deg = [len(o) for o in out_neighbors]
    W = np.zeros((I, I))
    for i in range(I):
        for j in out_neighbors[i]:
            W[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
        W[i, i] = 1.0 - W[i].sum()
    return W


def gen_erdos_renyi(I: int, p: float, seed: int, resample_budget: int = 1000) -> NetworkTopology:
    """Undirected Erdos-Renyi graph, realized as a bidirectional digraph.

    Each undirected edge appears with probability ``p``; disconnected draws
    are resampled with an incremented sub-seed until connected, up to
    ``resample_budget`` attempts.  W = A = Metropolis-Hastings matrix.
    """
    if I < 2:
        raise TopologyError(f"need at least 2 agents, got {I}")
    if not (0.0 < p <= 1.0):
        raise TopologyError(f"edge probability must be in (0, 1], got {p}")
    for attempt in range(resample_budget):
        rng = np.random.default_rng((seed, attempt))
        out_nbrs: list[list[int]] = [[] for _ in range(I)]
        for i in range(I):
            for j in range(i + 1, I):
                if rng.random() < p:
                    out_nbrs[i].append(j)
                    out_nbrs[j].append(i)
        if is_strongly_connected(out_nbrs):
            W = metropolis_hastings_weights(out_nbrs, I)
            meta = {
                "kind": "erdos_renyi",
                "I": I,
                "p": p,
                "seed": seed,
                "resamples": attempt,
            }
            return _assemble(I, out_nbrs, W, W.copy(), meta)
    raise TopologyError(
        f"no connected Erdos-Renyi draw for I={I}, p={p}, seed={seed} "
        f"within {resample_budget} resamples"
    )


def gen_directed_ring_plus(I: int, extra_out: int, seed: int) -> NetworkTopology:
    """Directed cycle 0 -> 1 -> ... -> I-1 -> 0 plus random extra out-edges.

    Each agent gains ``extra_out`` distinct random out-neighbors (never
    itself, never its cycle successor).  Consensus weights are uniform per
    row over {i} and the in-neighbors; tracking weights are uniform per
    column over {i} and the out-neighbors.
    """
    if I < 2:
        raise TopologyError(f"need at least 2 agents, got {I}")
    if not (0 <= extra_out <= I - 2):
        raise TopologyError(f"extra_out must be in [0, {I - 2}], got {extra_out}")
    rng = np.random.default_rng(seed)
    out_nbrs: list[list[int]] = []
    for i in range(I):
        succ = (i + 1) % I
        outs = {succ}
        candidates = np.array([j for j in range(I) if j != i and j != succ])
        if extra_out:
            picks = rng.choice(candidates, size=extra_out, replace=False)
            outs.update(int(j) for j in picks)
        out_nbrs.append(sorted(outs))
    in_nbrs = _invert_adjacency(out_nbrs, I)
    W = np.zeros((I, I))
    for i in range(I):
        w = 1.0 / (1.0 + len(in_nbrs[i]))
        W[i, i] = w
        for j in in_nbrs[i]:
            W[i, j] = w
    A = np.zeros((I, I))
    for i in range(I):
        a = 1.0 / (1.0 + len(out_nbrs[i]))
        A[i, i] = a
        for j in out_nbrs[i]:
            A[j, i] = a
    meta = {"kind": "directed_ring_plus", "I": I, "extra_out": extra_out, "seed": seed}
    return _assemble(I, out_nbrs, W, A, meta)
