"""Neighborhood graphs over point clouds.

Builds symmetric K-NN graphs (union rule) and epsilon graphs (strict
distance threshold) with exact neighbor queries, and exposes the signed
edge-difference (incidence) operator used by the TV solver.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import DataFormatError, InvalidParameterError

# Above this dimension a k-d tree degenerates; fall back to brute force.
KDTREE_MAX_DIM = 20


@dataclass
class PointCloud:
    """n points in R^d under the Euclidean metric."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(self.points, dtype=np.float64)))
        if pts.ndim != 2:
            raise InvalidParameterError("points must be a 2-d array of shape (n, d)")
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InvalidParameterError("point cloud needs n >= 1 points of dimension d >= 1")
        if not np.all(np.isfinite(pts)):
            raise InvalidParameterError("point coordinates must be finite")
        pts.flags.writeable = False
        self.points = pts

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def from_csv(cls, path) -> "PointCloud":
        data, _ = read_numeric_csv(path)
        return cls(data)


@dataclass
class NeighborGraph:
    """Undirected simple graph over [n] with a canonical (i < j) edge list."""

    n: int
    edges: np.ndarray  # (m, 2) int64, each row i < j, rows lex-sorted
    kind: str          # "knn" | "epsilon"
    param: float       # K for knn, eps for epsilon

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= self.n:
                raise InvalidParameterError("edge endpoint out of range")
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise InvalidParameterError("edges must be stored as (i, j) with i < j")
        edges.flags.writeable = False
        self.edges = edges
        if self.kind not in ("knn", "epsilon"):
            raise InvalidParameterError(f"unknown graph kind {self.kind!r}")

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]

    def incidence(self) -> "IncidenceOperator":
        return IncidenceOperator(self.n, self.edges)

    def to_json_dict(self) -> dict:
        return {
            "n": int(self.n),
            "kind": self.kind,
            "params": {"K": int(self.param)} if self.kind == "knn" else {"eps": float(self.param)},
            "edges": [[int(i), int(j)] for i, j in self.edges],
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "NeighborGraph":
        kind = doc["kind"]
        param = doc["params"]["K"] if kind == "knn" else doc["params"]["eps"]
        edges = np.asarray(doc["edges"], dtype=np.int64).reshape(-1, 2)
        return cls(n=int(doc["n"]), edges=edges, kind=kind, param=param)

    @classmethod
    def from_json(cls, path) -> "NeighborGraph":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


class IncidenceOperator:
    """Signed edge-difference operator: row k of the matrix has +1 at i and
    -1 at j for the k-th edge (i, j) with i < j."""

    def __init__(self, n: int, edges: np.ndarray):
        self.n = int(n)
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        m = self.edges.shape[0]
        if m:
            rows = np.repeat(np.arange(m), 2)
            cols = self.edges.ravel()
            vals = np.tile(np.array([1.0, -1.0]), m)
            self.matrix = sparse.csr_matrix((vals, (rows, cols)), shape=(m, self.n))
        else:
            self.matrix = sparse.csr_matrix((0, self.n))

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, theta: np.ndarray) -> np.ndarray:
        """Edge differences theta_i - theta_j; zero on constant vectors."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n,):
            raise InvalidParameterError(
                f"expected a vector of length {self.n}, got shape {theta.shape}"
            )
        if self.edges.shape[0] == 0:
            return np.zeros(0)
        return theta[self.edges[:, 0]] - theta[self.edges[:, 1]]

    def adjoint_apply(self, u: np.ndarray) -> np.ndarray:
        """Divergence-like adjoint: accumulates +u on i and -u on j per edge."""
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.edges.shape[0],):
            raise InvalidParameterError(
                f"expected a vector of length {self.edges.shape[0]}, got shape {u.shape}"
            )
        out = np.zeros(self.n)
        if u.size:
            np.add.at(out, self.edges[:, 0], u)
            np.subtract.at(out, self.edges[:, 1], u)
        return out


def incidence_apply(op: IncidenceOperator, theta: np.ndarray) -> np.ndarray:
    return op.apply(theta)


def _brute_force_neighbor_sets(points, queries, k, exclude_self):
    n = points.shape[0]
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    chunk = max(1, int(2e7) // max(n, 1))
    for start in range(0, queries.shape[0], chunk):
        block = queries[start : start + chunk]
        d2 = ((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        for r in range(block.shape[0]):
            i = start + r
            row = d2[r]
            idx = np.arange(n)
            if exclude_self:
                keep = idx != i
                row, idx = row[keep], idx[keep]
            order = np.lexsort((idx, row))
            out[i] = idx[order[:k]]
    return out


def nearest_neighbor_sets(
    points: np.ndarray, queries: np.ndarray, k: int, exclude_self: bool = False
) -> np.ndarray:
    """Exact k-nearest-neighbor indices for each query, distance ties broken
    by ascending point index.

    With ``exclude_self=True`` the queries are taken to be the points
    themselves and row i never reports i (duplicates at distance 0 still do).
    """
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, points.shape[1])
    n = points.shape[0]
    limit = n - 1 if exclude_self else n
    if not 1 <= k <= limit:
        raise InvalidParameterError(f"k={k} out of range for n={n}")
    if points.shape[1] > KDTREE_MAX_DIM or n <= k + 2:
        return _brute_force_neighbor_sets(points, queries, k, exclude_self)

    tree = cKDTree(points)
    extra = 2 if exclude_self else 1
    q = min(n, k + extra)
    dist, idx = tree.query(queries, k=q)

    out = np.empty((queries.shape[0], k), dtype=np.int64)
    for i in range(queries.shape[0]):
        ii = idx[i]
        if exclude_self:
            ii = ii[ii != i]
        cd = np.sqrt(((points[ii] - queries[i]) ** 2).sum(axis=1))
        order = np.lexsort((ii, cd))
        ii, cd = ii[order], cd[order]
        if len(ii) > k and cd[k - 1] == cd[k]:
            # Tie across the k-th boundary: gather the full tie set (ball
            # slightly inflated against metric rounding) and resolve by
            # (distance, index).
            r = cd[k - 1]
            cand = np.asarray(
                tree.query_ball_point(queries[i], r * (1.0 + 1e-9) + 1e-300),
                dtype=np.int64,
            )
            if exclude_self:
                cand = cand[cand != i]
            ccd = np.sqrt(((points[cand] - queries[i]) ** 2).sum(axis=1))
            inside = ccd <= r
            cand, ccd = cand[inside], ccd[inside]
            order = np.lexsort((cand, ccd))
            out[i] = cand[order[:k]]
        else:
            out[i] = ii[:k]
    return out


def build_knn_graph(cloud: PointCloud, k: int) -> NeighborGraph:
    """Symmetric K-NN graph: edge (i, j) present iff j is among the k nearest
    neighbors of i or vice versa (union rule)."""
    n = cloud.n
    if not 1 <= k <= n - 1:
        raise InvalidParameterError(f"K must satisfy 1 <= K <= n-1, got K={k}, n={n}")
    nbrs = nearest_neighbor_sets(cloud.points, cloud.points, k, exclude_self=True)
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    dst = nbrs.ravel()
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    edges = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return NeighborGraph(n=n, edges=edges, kind="knn", param=k)


def build_epsilon_graph(cloud: PointCloud, eps: float) -> NeighborGraph:
    """Epsilon graph: edge (i, j) present iff dist(x_i, x_j) < eps (strict)."""
    if not np.isfinite(eps) or eps <= 0:
        raise InvalidParameterError(f"eps must be positive, got {eps}")
    n = cloud.n
    if cloud.dim > KDTREE_MAX_DIM:
        pairs = []
        pts = cloud.points
        for i in range(n - 1):
            d = np.sqrt(((pts[i + 1 :] - pts[i]) ** 2).sum(axis=1))
            js = np.nonzero(d < eps)[0] + i + 1
            pairs.extend((i, int(j)) for j in js)
        edges = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    else:
        tree = cKDTree(cloud.points)
        pairs = tree.query_pairs(eps, output_type="ndarray")  # dist <= eps
        if len(pairs):
            diff = cloud.points[pairs[:, 0]] - cloud.points[pairs[:, 1]]
            d = np.sqrt((diff**2).sum(axis=1))
            pairs = pairs[d < eps]
        edges = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        edges = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return NeighborGraph(n=n, edges=edges, kind="epsilon", param=float(eps))


@dataclass
class GraphStats:
    max_degree: int
    min_degree: int
    edge_count: int
    component_count: int
    component_labels: np.ndarray = field(repr=False)


def adjacency_matrix(g: NeighborGraph) -> sparse.csr_matrix:
    if g.edge_count == 0:
        return sparse.csr_matrix((g.n, g.n))
    i, j = g.edges[:, 0], g.edges[:, 1]
    data = np.ones(g.edge_count)
    a = sparse.coo_matrix((data, (i, j)), shape=(g.n, g.n))
    return (a + a.T).tocsr()


def component_labels(g: NeighborGraph) -> np.ndarray:
    """Connected-component labels, renumbered 0..C-1 in order of each
    component's smallest vertex index."""
    _, raw = connected_components(adjacency_matrix(g), directed=False)
    # first occurrence of each raw label is at that component's smallest vertex
    _, first_pos, inv = np.unique(raw, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first_pos))
    return order[inv].astype(np.int64)


def graph_stats(g: NeighborGraph) -> GraphStats:
    deg = np.zeros(g.n, dtype=np.int64)
    if g.edge_count:
        deg = np.bincount(g.edges.ravel(), minlength=g.n)
    labels = component_labels(g)
    return GraphStats(
        max_degree=int(deg.max()),
        min_degree=int(deg.min()),
        edge_count=int(g.edge_count),
        component_count=int(labels.max()) + 1,
        component_labels=labels,
    )


def _looks_numeric(row) -> bool:
    for cell in row:
        try:
            float(cell)
        except ValueError:
            return False
    return True


def read_numeric_csv(path, allow_empty: bool = False):
    """Read a numeric CSV with an optional header (detected by a non-numeric
    first row). '#'-prefixed lines are skipped. Returns (array, header|None)."""
    rows = []
    header = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            if header is None and not rows and not _looks_numeric(row):
                header = [c.strip() for c in row]
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                bad = next(
                    (k for k, c in enumerate(row) if not _looks_numeric([c])), 0
                )
                raise DataFormatError(
                    f"{path}: row {lineno}, column {bad + 1}: not a number ({exc})"
                ) from exc
    if not rows:
        if allow_empty:
            width = len(header) if header else 0
            return np.empty((0, width)), header
        raise DataFormatError(f"{path}: no data rows")
    width = len(rows[0])
    for k, r in enumerate(rows):
        if len(r) != width:
            raise DataFormatError(
                f"{path}: row {k + 1} has {len(r)} columns, expected {width}"
            )
    return np.asarray(rows, dtype=np.float64), header
