"""Independent reference implementations used as test oracles.

Nothing here imports from the package's solver or graph internals: neighbor
sets come from an O(n^2) scan with (distance, index) ordering, incidence
products from a dense matrix, and the TV minimizer from a standalone
box-projected accelerated first-order method on the dual (compiled with
numba so a million-iteration budget stays affordable).
"""

import numpy as np
from numba import njit


def brute_knn_edges(points, k):
    """Union-symmetrized K-NN edge list; ties by ascending index."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    edges = set()
    for i in range(n):
        d = np.sqrt(((points - points[i]) ** 2).sum(axis=1))
        ranked = sorted((float(d[j]), j) for j in range(n) if j != i)
        for _, j in ranked[:k]:
            edges.add((min(i, j), max(i, j)))
    return sorted(edges)


def brute_knn_neighbors(points, queries, k, exclude_self=False):
    """Per-query neighbor indices under the (distance, index) order."""
    points = np.asarray(points, dtype=float)
    queries = np.asarray(queries, dtype=float)
    out = []
    for qi, q in enumerate(queries):
        d = np.sqrt(((points - q) ** 2).sum(axis=1))
        cand = [(float(d[j]), j) for j in range(len(points))
                if not (exclude_self and j == qi)]
        cand.sort()
        out.append([j for _, j in cand[:k]])
    return np.asarray(out, dtype=np.int64)


def brute_epsilon_edges(points, eps):
    points = np.asarray(points, dtype=float)
    n = len(points)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if np.sqrt(((points[i] - points[j]) ** 2).sum()) < eps:
                edges.append((i, j))
    return edges


def dense_incidence(n, edges):
    m = len(edges)
    d = np.zeros((m, n))
    for r, (i, j) in enumerate(edges):
        d[r, i] = 1.0
        d[r, j] = -1.0
    return d


def tv_objective(y, edges, lam, theta):
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    fit = 0.5 * float(((y - theta) ** 2).sum())
    tv = sum(abs(float(theta[i] - theta[j])) for i, j in edges)
    return fit + lam * tv


@njit(cache=True, nogil=True)
def _dual_ascent_kernel(ea, eb, y, lam, max_iter, gap_tol):
    """Box-projected accelerated ascent on the dual; returns (theta, iters).

    Stops early once its own primal-dual gap certifies optimality to
    gap_tol * (1 + |objective|), otherwise runs the full budget.
    """
    n = y.shape[0]
    m = ea.shape[0]
    deg = np.zeros(n)
    for k in range(m):
        deg[ea[k]] += 1.0
        deg[eb[k]] += 1.0
    lip = 2.0 * deg.max() if m > 0 else 1.0
    if lip <= 0.0:
        lip = 1.0
    step = 1.0 / lip
    u = np.zeros(m)
    v = np.zeros(m)
    theta = y.copy()
    t = 1.0
    it = 0
    while it < max_iter:
        for _ in range(250):
            it += 1
            for i in range(n):
                theta[i] = y[i]
            for k in range(m):
                theta[ea[k]] -= v[k]
                theta[eb[k]] += v[k]
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            mom = (t - 1.0) / t_new
            for k in range(m):
                w = v[k] + step * (theta[ea[k]] - theta[eb[k]])
                if w > lam:
                    w = lam
                elif w < -lam:
                    w = -lam
                v[k] = w + mom * (w - u[k])
                u[k] = w
            t = t_new
            if it >= max_iter:
                break
        # certificate: primal at theta(u) minus dual value at u
        for i in range(n):
            theta[i] = y[i]
        for k in range(m):
            theta[ea[k]] -= u[k]
            theta[eb[k]] += u[k]
        primal = 0.0
        for i in range(n):
            primal += 0.5 * (y[i] - theta[i]) ** 2
        for k in range(m):
            primal += lam * abs(theta[ea[k]] - theta[eb[k]])
        dual = 0.0
        for i in range(n):
            dual += y[i] * (y[i] - theta[i]) - 0.5 * (y[i] - theta[i]) ** 2
        if primal - dual <= gap_tol * (1.0 + abs(primal)):
            break
    return theta, it


def first_order_tv_oracle(y, edges, lam, max_iter=1_000_000, gap_tol=1e-13):
    """Reference minimizer from the standalone first-order method."""
    y = np.asarray(y, dtype=float)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if lam == 0 or len(edges) == 0:
        return y.copy()
    theta, _ = _dual_ascent_kernel(
        np.ascontiguousarray(edges[:, 0]), np.ascontiguousarray(edges[:, 1]),
        np.ascontiguousarray(y), float(lam), max_iter, gap_tol,
    )
    return theta
