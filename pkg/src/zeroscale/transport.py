"""Transportation linear programs by the network simplex method.

Minimizes sum_ij x_ij c_ij subject to row sums ``supply`` and column sums
``demand``.  The basis is a spanning tree of the bipartite row/column
graph started from the northwest-corner rule.  The entering cell has the
most negative reduced cost (ties to the lowest flat index) and the leaving
cell the smallest flow on the cycle (ties to the lowest flat index); after
a run of degenerate pivots the entering rule switches to the first
improving cell to rule out cycling.

Forbidden cells are handled lexicographically: the primary objective is
the mass placed on forbidden cells, the secondary objective the cost.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InfeasibleMarginals, InputError

DEGENERATE_SWITCH = 50


@dataclass
class TransportSolution:
    flow: np.ndarray
    objective: float
    forbidden_mass: float
    iterations: int


def _northwest(supply, demand):
    m, n = supply.size, demand.size
    s, d = supply.copy(), demand.copy()
    flow = np.zeros((m, n))
    basis = []
    i = j = 0
    while True:
        x = min(s[i], d[j])
        flow[i, j] = x
        basis.append((i, j))
        s[i] -= x
        d[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif s[i] <= d[j]:
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(basis, costs, m, n):
    """Row and column potentials with u_0 = 0, one set per cost layer."""
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    pot = [np.full(m + n, np.nan) for _ in costs]
    for p in pot:
        p[0] = 0.0
    seen = np.zeros(m + n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        a = queue.popleft()
        for b in adj[a]:
            if seen[b]:
                continue
            seen[b] = True
            i, j = (a, b - m) if a < m else (b, a - m)
            for p, c in zip(pot, costs):
                p[b] = c[i, j] - p[a]
            queue.append(b)
    return [(p[:m], p[m:]) for p in pot], adj


def _tree_path(adj, start, goal):
    prev = {start: None}
    queue = deque([start])
    while queue:
        a = queue.popleft()
        if a == goal:
            break
        for b in adj[a]:
            if b not in prev:
                prev[b] = a
                queue.append(b)
    path = [goal]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def solve_transport(costs: np.ndarray, supply, demand, forbidden: Optional[np.ndarray] = None,
                    max_iter: int = 100000) -> TransportSolution:
    """Minimum-cost coupling of ``supply`` and ``demand``."""
    c = np.asarray(costs, dtype=float)
    supply = np.asarray(supply, dtype=float).ravel()
    demand = np.asarray(demand, dtype=float).ravel()
    m, n = supply.size, demand.size
    if c.shape != (m, n):
        raise InputError(f"cost matrix has shape {c.shape}, expected {(m, n)}")
    if not np.isfinite(c).all():
        raise InputError("costs must be finite")
    if (supply < 0).any() or (demand < 0).any():
        raise InfeasibleMarginals("negative marginal mass")
    if abs(supply.sum() - demand.sum()) > 1e-12 * max(1.0, supply.sum()):
        raise InfeasibleMarginals("marginals carry different total mass")
    forb = np.zeros((m, n)) if forbidden is None else np.asarray(forbidden, dtype=float)
    layers = [forb, c]
    tols = [1e-12, 1e-12 * max(1.0, float(np.abs(c).max()) if c.size else 1.0)]

    flow, basis = _northwest(supply, demand)
    in_basis = np.zeros((m, n), dtype=bool)
    for i, j in basis:
        in_basis[i, j] = True
    degenerate = 0
    it = 0
    for it in range(1, max_iter + 1):
        pots, adj = _potentials(basis, layers, m, n)
        red = [L - u[:, None] - v[None, :] for L, (u, v) in zip(layers, pots)]
        # lexicographic improvement: primary layer strictly negative, or
        # primary at zero and secondary strictly negative
        r0, r1 = red
        improving = (r0 < -tols[0]) | ((np.abs(r0) <= tols[0]) & (r1 < -tols[1]))
        improving &= ~in_basis
        if not improving.any():
            break
        cand = np.flatnonzero(improving.ravel())
        if degenerate >= DEGENERATE_SWITCH:
            enter = int(cand[0])
        else:
            k0 = r0.ravel()[cand]
            best0 = k0.min()
            if best0 < -tols[0]:
                pool = cand[k0 == best0]
            else:
                k1 = r1.ravel()[cand]
                pool = cand[k1 == k1.min()]
            enter = int(pool[0])
        p, q = divmod(enter, n)
        path = _tree_path(adj, p, m + q)
        cells = []
        for a, b in zip(path[:-1], path[1:]):
            cells.append((a, b - m) if a < m else (b, a - m))
        # cycle: entering (+), then path edges alternate -, +, -, ...
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(flow[i, j] for i, j in minus)
        leaving = min((i * n + j) for i, j in minus if flow[i, j] == theta)
        degenerate = degenerate + 1 if theta == 0 else 0
        for i, j in minus:
            flow[i, j] -= theta
        for i, j in plus:
            flow[i, j] += theta
        flow[p, q] += theta
        li, lj = divmod(leaving, n)
        flow[li, lj] = 0.0
        in_basis[li, lj] = False
        basis.remove((li, lj))
        in_basis[p, q] = True
        basis.append((p, q))
    else:
        raise InputError(f"network simplex did not terminate in {max_iter} pivots")
    np.clip(flow, 0.0, None, out=flow)
    return TransportSolution(flow, float(np.sum(flow * c)), float(np.sum(flow * forb)), it)
