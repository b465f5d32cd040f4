"""Earth Mover's Distance between color signatures.

The distance is the optimal value of a transportation LP: move the weight
of one signature onto the other at per-unit cost equal to the Euclidean
RGB distance between centroids, then normalize the total work by the total
flow.  Unequal-total problems are balanced with a zero-cost slack node on
the heavier side, which implements partial matching.

The solver is a classic transportation simplex: Russell's approximation
builds a near-optimal starting flow, the basis is completed to a spanning
tree (zero-flow cells allowed), and MODI pivots run to optimality.  Entering
cells are picked by most-negative reduced cost with lexicographic ties;
after a run of degenerate pivots the rule switches to Bland's
(lexicographically first negative), which cannot cycle.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

# Supplies/demands below this are treated as zero and removed before solving.
WEIGHT_EPS = 1e-12

_BALANCE_TOL = 1e-9
_MAX_PIVOTS = 200_000


class TransportError(ValueError):
    """Raised for infeasible or malformed transportation problems."""


@dataclass(eq=False)
class EmdResult:
    distance: float
    work: float
    total_flow: float
    flow: np.ndarray  # (M, N), slack excluded
    iterations: int


def ground_distance(c_u, c_v) -> float:
    """Euclidean distance between two RGB points."""
    diff = np.asarray(c_u, dtype=float) - np.asarray(c_v, dtype=float)
    return float(np.sqrt(np.dot(diff, diff)))


def ground_matrix(centroids_a, centroids_b) -> np.ndarray:
    a = np.asarray(centroids_a, dtype=float)
    b = np.asarray(centroids_b, dtype=float)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def russell_initial_flow(supplies, demands, costs) -> np.ndarray:
    """Russell's approximation: a feasible near-optimal starting flow.

    Repeatedly scores every active cell as cost minus its row's and
    column's active maxima, allocates as much as possible at the most
    negative score (ties to the smallest row-major index), and retires
    exhausted rows/columns.  The result has at most M+N-1 positive cells
    and its support is acyclic.
    """
    a = np.asarray(supplies, dtype=float).copy()
    b = np.asarray(demands, dtype=float).copy()
    costs = np.asarray(costs, dtype=float)
    m, n = costs.shape
    if a.shape != (m,) or b.shape != (n,):
        raise TransportError("supplies/demands do not match the cost matrix")
    if (a < 0).any() or (b < 0).any():
        raise TransportError("negative weights are not allowed")
    if abs(a.sum() - b.sum()) > _BALANCE_TOL * max(1.0, a.sum(), b.sum()):
        raise TransportError(
            f"unbalanced problem: supply {a.sum()!r} vs demand {b.sum()!r}"
        )

    flow = np.zeros((m, n))
    row_active = a > 0
    col_active = b > 0
    while row_active.any() and col_active.any():
        rows = np.where(row_active)[0]
        cols = np.where(col_active)[0]
        sub = costs[np.ix_(rows, cols)]
        u_bar = sub.max(axis=1)
        v_bar = sub.max(axis=0)
        delta = sub - u_bar[:, None] - v_bar[None, :]
        r, c = divmod(int(delta.argmin()), delta.shape[1])
        i, j = int(rows[r]), int(cols[c])
        q = min(a[i], b[j])
        flow[i, j] = q
        a[i] -= q
        b[j] -= q
        if a[i] <= 0.0:
            row_active[i] = False
        if b[j] <= 0.0:
            col_active[j] = False
    return flow


class _UnionFind:
    def __init__(self, size):
        self.parent = list(range(size))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, x, y) -> bool:
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return False
        self.parent[rx] = ry
        return True


def _complete_basis(flow: np.ndarray) -> set[tuple[int, int]]:
    """Extend the positive cells to a spanning tree with zero-flow cells."""
    m, n = flow.shape
    uf = _UnionFind(m + n)
    basis: set[tuple[int, int]] = set()
    for i, j in np.argwhere(flow > 0):
        if not uf.union(int(i), m + int(j)):
            raise TransportError("internal error: initial flow support has a cycle")
        basis.add((int(i), int(j)))
    if len(basis) < m + n - 1:
        for i in range(m):
            for j in range(n):
                if uf.union(i, m + j):
                    basis.add((i, j))
                    if len(basis) == m + n - 1:
                        return basis
    return basis


def _compute_duals(costs, row_adj, col_adj, m, n):
    u = np.zeros(m)
    v = np.zeros(n)
    seen_rows = np.zeros(m, dtype=bool)
    seen_cols = np.zeros(n, dtype=bool)
    queue = deque([("r", 0)])
    seen_rows[0] = True
    while queue:
        kind, idx = queue.popleft()
        if kind == "r":
            for j in row_adj[idx]:
                if not seen_cols[j]:
                    v[j] = costs[idx, j] - u[idx]
                    seen_cols[j] = True
                    queue.append(("c", j))
        else:
            for i in col_adj[idx]:
                if not seen_rows[i]:
                    u[i] = costs[i, idx] - v[idx]
                    seen_rows[i] = True
                    queue.append(("r", i))
    return u, v


def _tree_path(row_adj, col_adj, start_row, target_col, m):
    """Node path from row ``start_row`` to column ``target_col`` in the basis tree."""
    # nodes: 0..m-1 rows, m..m+n-1 columns
    start = start_row
    target = m + target_col
    parents = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == target:
            break
        if node < m:
            neighbors = (m + j for j in row_adj[node])
        else:
            neighbors = iter(col_adj[node - m])
        for nxt in neighbors:
            if nxt not in parents:
                parents[nxt] = node
                queue.append(nxt)
    path = [target]
    while parents[path[-1]] is not None:
        path.append(parents[path[-1]])
    path.reverse()
    return path


def _transport_simplex(costs, supplies, demands):
    """Solve a balanced transportation problem to LP optimality."""
    m, n = costs.shape
    flow = russell_initial_flow(supplies, demands, costs)
    basis = _complete_basis(flow)
    row_adj = [set() for _ in range(m)]
    col_adj = [set() for _ in range(n)]
    for i, j in basis:
        row_adj[i].add(j)
        col_adj[j].add(i)

    tol = 1e-12 * max(1.0, float(np.abs(costs).max()))
    bland = False
    degenerate_streak = 0

    for iteration in range(1, _MAX_PIVOTS + 1):
        u, v = _compute_duals(costs, row_adj, col_adj, m, n)
        reduced = costs - u[:, None] - v[None, :]
        for i, j in basis:
            reduced[i, j] = np.inf  # basic cells never re-enter
        if bland:
            negatives = np.argwhere(reduced < -tol)
            if negatives.size == 0:
                return flow, iteration
            enter_i, enter_j = (int(x) for x in negatives[0])
        else:
            flat = int(reduced.argmin())
            enter_i, enter_j = divmod(flat, n)
            if reduced[enter_i, enter_j] >= -tol:
                return flow, iteration

        path = _tree_path(row_adj, col_adj, enter_i, enter_j, m)
        edges = []
        for a, b in zip(path, path[1:]):
            i, j = (a, b - m) if a < m else (b, a - m)
            edges.append((i, j))
        # walk the tree path from the entering cell's column back to its row;
        # those edges alternate -,+,-,... after the entering +.
        edges.reverse()
        minus = edges[0::2]
        plus = edges[1::2]

        theta = min(flow[c] for c in minus)
        leaving = min(c for c in minus if flow[c] == theta)
        if theta > 0.0:
            for c in minus:
                flow[c] -= theta
            for c in plus:
                flow[c] += theta
            flow[enter_i, enter_j] += theta
            flow[leaving] = 0.0
            degenerate_streak = 0
        else:
            degenerate_streak += 1
            if degenerate_streak > 2 * (m + n):
                bland = True

        basis.remove(leaving)
        row_adj[leaving[0]].discard(leaving[1])
        col_adj[leaving[1]].discard(leaving[0])
        basis.add((enter_i, enter_j))
        row_adj[enter_i].add(enter_j)
        col_adj[enter_j].add(enter_i)

    raise TransportError("transportation simplex did not converge (pivot limit)")


def _solve_with_slack(costs, supplies, demands):
    """Balance (slack node on the heavier side, zero cost) and solve.

    Returns (flow excluding slack, iterations, total real flow).
    """
    a = np.asarray(supplies, dtype=float)
    b = np.asarray(demands, dtype=float)
    costs = np.asarray(costs, dtype=float)
    if not np.isfinite(costs).all():
        raise TransportError("costs must be finite")
    if (a < 0).any() or (b < 0).any():
        raise TransportError("negative weights are not allowed")
    total_a, total_b = float(a.sum()), float(b.sum())
    if total_a <= 0 or total_b <= 0:
        raise TransportError("supplies and demands must each have positive total")

    diff = total_a - total_b
    scale = max(total_a, total_b, 1.0)
    trim = None
    if abs(diff) <= 1e-12 * scale:
        # numerically balanced: absorb the crumb into the largest entry
        if diff > 0:
            b = b.copy()
            b[int(b.argmax())] += diff
        elif diff < 0:
            a = a.copy()
            a[int(a.argmax())] -= diff
    elif diff > 0:
        costs = np.hstack([costs, np.zeros((costs.shape[0], 1))])
        b = np.append(b, diff)
        trim = "col"
    else:
        costs = np.vstack([costs, np.zeros((1, costs.shape[1]))])
        a = np.append(a, -diff)
        trim = "row"

    flow, iterations = _transport_simplex(costs, a, b)
    if trim == "col":
        flow = flow[:, :-1]
    elif trim == "row":
        flow = flow[:-1, :]
    np.maximum(flow, 0.0, out=flow)  # clear -0.0 / subtraction crumbs
    return flow, iterations, min(total_a, total_b)


def solve_transport(costs, supplies, demands) -> np.ndarray:
    """Optimal flow for a (possibly unbalanced) transportation problem."""
    flow, _, _ = _solve_with_slack(costs, supplies, demands)
    return flow


def _pruned(signature):
    keep = signature.weights > WEIGHT_EPS
    if not keep.any():
        raise TransportError("signature has no weight above the zero threshold")
    return signature.centroids[keep], signature.weights[keep]


def emd(a, b) -> EmdResult:
    """Earth Mover's Distance between two signatures.

    ``distance`` is the optimal transport work normalized by the total
    flow; it is zero exactly when the signatures describe the same
    distribution, symmetric, and bounded by the largest ground distance.
    """
    ca, wa = _pruned(a)
    cb, wb = _pruned(b)
    costs = ground_matrix(ca, cb)
    flow, iterations, total_flow = _solve_with_slack(costs, wa, wb)
    work = float((costs * flow).sum())
    return EmdResult(
        distance=work / total_flow,
        work=work,
        total_flow=total_flow,
        flow=flow,
        iterations=iterations,
    )
