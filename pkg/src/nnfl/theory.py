"""Executable checks of the scaling laws and mesh-embedding machinery.

Covers: lattice quantization of a signal over [0,1]^d with the two induced
signals (per-sample collapsed values and per-cell values), the embedding
inequalities relating lattice total variation to K-NN-graph total variation
(asserted conditionally on the constructively tested connectivity event),
neighbor-radius / degree / penalty scaling, MSE rate slopes, the planar-vs-
cube manifold contrast, and the neighbor-averaging approximation error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log

import numpy as np

from .errors import InvalidParameterError
from .graphs import (
    NeighborGraph,
    IncidenceOperator,
    PointCloud,
    build_epsilon_graph,
    build_knn_graph,
    graph_stats,
    nearest_neighbor_sets,
)
from .regression import FittedModel
from .scenarios import (
    MethodSpec,
    ScenarioSpec,
    generate,
    generate_manifold_mix,
    mse,
    optimized_mse,
)
from .solver import solve_path

# Empirical per-dimension degree constants (kissing-number style): the max
# degree of a K-NN graph is expected to stay below tau * K at desk scale.
DEGREE_CONSTANTS = {1: 2.0, 2: 6.0, 3: 12.0, 4: 24.0, 5: 40.0, 6: 72.0, 7: 126.0, 8: 240.0}


def polylog_k(n, power: float = 1.1) -> int:
    """K growing like log(n)^power, at least 1."""
    return max(1, ceil(log(n) ** power))


def log_squared_k(n) -> int:
    return max(1, ceil(log(n) ** 2))


def lattice_resolution(n, k, d, l_min: float = 1.0, p_max: float = 1.0,
                       ball_volume_const: float = None) -> int:
    """Per-axis lattice resolution from the counting recipe
    ceil(3 sqrt(d) (2 c p_max)^(1/d) n^(1/d) / (l_min K^(1/d))), with the
    volume constant c defaulting to that of sup-norm balls (2^d)."""
    if ball_volume_const is None:
        ball_volume_const = 2.0 ** d
    val = 3.0 * np.sqrt(d) * (2.0 * ball_volume_const * p_max) ** (1.0 / d)
    val *= n ** (1.0 / d) / (l_min * k ** (1.0 / d))
    return max(1, int(ceil(val)))


def lattice_centers(resolution: int, dim: int) -> np.ndarray:
    """Cell centers (i/N - 1/(2N)) per axis, C-order raveled, shape (N^d, d)."""
    axis = (np.arange(1, resolution + 1) - 0.5) / resolution
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def lattice_edges(resolution: int, dim: int) -> np.ndarray:
    """Axis-neighbor edges of the d-dimensional lattice, rows (lo, hi)."""
    n_cells = resolution ** dim
    shape = (resolution,) * dim
    idx = np.arange(n_cells).reshape(shape)
    pairs = []
    for a in range(dim):
        lo = np.moveaxis(idx, a, 0)[:-1].ravel()
        hi = np.moveaxis(idx, a, 0)[1:].ravel()
        pairs.append(np.stack([lo, hi], axis=1))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    edges = np.vstack(pairs).astype(np.int64)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order]


@dataclass
class MeshQuantization:
    resolution: int
    dim: int
    cell_index: np.ndarray        # (n,) flat lattice cell per sample
    representative: np.ndarray    # (N^d,) sample index nearest the center, -1 if empty
    occupied: np.ndarray          # (N^d,) bool
    quantized: np.ndarray         # (n,) signal collapsed to the cell representative
    cell_values: np.ndarray       # (N^d,) representative values, 0 on empty cells
    edges: np.ndarray = field(repr=False)  # full-lattice axis-neighbor edges

    @property
    def n_cells(self) -> int:
        return self.resolution ** self.dim

    def grid_incidence(self, occupied_only: bool = False) -> IncidenceOperator:
        edges = self.edges
        if occupied_only:
            keep = self.occupied[edges[:, 0]] & self.occupied[edges[:, 1]]
            edges = edges[keep]
        return IncidenceOperator(self.n_cells, edges)


def assign_cells(points: np.ndarray, resolution: int) -> np.ndarray:
    """Nearest lattice center in the sup norm; boundary ties go to the lower
    per-axis index (hence the lowest flat cell index)."""
    n_axis = np.ceil(points * resolution).astype(np.int64) - 1
    np.clip(n_axis, 0, resolution - 1, out=n_axis)
    return np.ravel_multi_index(tuple(n_axis.T), (resolution,) * points.shape[1])


def build_mesh(cloud: PointCloud, theta, resolution: int) -> MeshQuantization:
    """Quantize a signal over the unit-cube lattice with N cells per axis."""
    theta = np.asarray(theta, dtype=np.float64).ravel()
    pts = cloud.points
    if theta.shape[0] != cloud.n:
        raise InvalidParameterError("theta length must match the cloud")
    if resolution < 1:
        raise InvalidParameterError("resolution must be >= 1")
    if pts.min() < 0.0 or pts.max() > 1.0:
        raise InvalidParameterError("mesh quantization requires points in [0,1]^d")
    d = cloud.dim
    cell = assign_cells(pts, resolution)
    n_cells = resolution ** d
    centers = lattice_centers(resolution, d)
    occupied = np.zeros(n_cells, dtype=bool)
    occupied[cell] = True
    rep = np.full(n_cells, -1, dtype=np.int64)
    order = np.arange(cloud.n)
    for c in np.flatnonzero(occupied):
        # representative: sample nearest the cell center in the sup norm,
        # chosen over all samples, ties by lowest sample index
        dist = np.abs(pts - centers[c]).max(axis=1)
        rep[c] = order[np.lexsort((order, dist))[0]]
    quantized = theta[rep[cell]]
    cell_values = np.zeros(n_cells)
    cell_values[occupied] = theta[rep[occupied]]
    return MeshQuantization(
        resolution=resolution, dim=d, cell_index=cell, representative=rep,
        occupied=occupied, quantized=quantized, cell_values=cell_values,
        edges=lattice_edges(resolution, d),
    )


def omega_event_holds(mesh: MeshQuantization, graph: NeighborGraph) -> bool:
    """Constructive test of the connectivity event: every pair of samples in
    the same or axis-adjacent lattice cells is an edge of the graph."""
    edge_keys = set()
    n = graph.n
    for i, j in graph.edges:
        edge_keys.add(int(i) * n + int(j))

    members: dict[int, list[int]] = {}
    for i, c in enumerate(mesh.cell_index):
        members.setdefault(int(c), []).append(i)

    def connected(a, b):
        if a == b:
            return True
        lo, hi = (a, b) if a < b else (b, a)
        return lo * n + hi in edge_keys

    shape = (mesh.resolution,) * mesh.dim
    for c, pts_c in members.items():
        for a in range(len(pts_c)):
            for b in range(a + 1, len(pts_c)):
                if not connected(pts_c[a], pts_c[b]):
                    return False
        coords = np.unravel_index(c, shape)
        for axis in range(mesh.dim):
            if coords[axis] + 1 >= mesh.resolution:
                continue
            nb = list(coords)
            nb[axis] += 1
            c2 = int(np.ravel_multi_index(tuple(nb), shape))
            pts_c2 = members.get(c2)
            if not pts_c2:
                continue
            for i in pts_c:
                for j in pts_c2:
                    if not connected(i, j):
                        return False
    return True


@dataclass
class EmbeddingCheck:
    holds_1: bool
    lhs_1: float
    rhs_1: float
    holds_2: bool
    lhs_2: float
    rhs_2: float
    omega_holds: bool


def check_embedding_inequalities(mesh: MeshQuantization, graph: NeighborGraph,
                                 theta, e) -> EmbeddingCheck:
    """Evaluate both embedding inequalities numerically together with the
    connectivity event they are conditioned on. The lattice total variation
    uses only edges between occupied cells (empty cells carry the zero-fill
    convention and no representative)."""
    theta = np.asarray(theta, dtype=np.float64).ravel()
    e = np.asarray(e, dtype=np.float64).ravel()
    if theta.shape[0] != graph.n or e.shape[0] != graph.n:
        raise InvalidParameterError("theta and e must have length n")
    tv = float(np.abs(graph.incidence().apply(theta)).sum())
    lhs_1 = abs(float(e @ (theta - mesh.quantized)))
    rhs_1 = 2.0 * float(np.abs(e).max()) * tv
    lhs_2 = float(np.abs(mesh.grid_incidence(occupied_only=True).apply(mesh.cell_values)).sum())
    rhs_2 = tv
    slack = 1e-9 * (1.0 + tv)
    return EmbeddingCheck(
        holds_1=lhs_1 <= rhs_1 + slack, lhs_1=lhs_1, rhs_1=rhs_1,
        holds_2=lhs_2 <= rhs_2 + slack, lhs_2=lhs_2, rhs_2=rhs_2,
        omega_holds=omega_event_holds(mesh, graph),
    )


@dataclass
class ScalingReport:
    label: str
    sizes: np.ndarray
    values: np.ndarray            # measured quantity per size
    xs: np.ndarray                # log-log abscissa (log n unless noted)
    slope: float
    slope_stderr: float
    degenerate: bool = False
    config: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "label": self.label,
            "sizes": [int(v) for v in self.sizes],
            "values": [float(v) for v in self.values],
            "log_x": [float(v) for v in self.xs],
            "slope": None if self.degenerate else float(self.slope),
            "slope_stderr": None if self.degenerate else float(self.slope_stderr),
            "degenerate": bool(self.degenerate),
            "config": self.config,
        }


def fit_loglog_slope(xs, values):
    """Least-squares slope of log(values) on xs, with its standard error."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.log(np.asarray(values, dtype=np.float64))
    if xs.size < 2:
        raise InvalidParameterError("need at least two sizes to fit a slope")
    xbar = xs.mean()
    sxx = float(((xs - xbar) ** 2).sum())
    slope = float(((xs - xbar) * (ys - ys.mean())).sum() / sxx)
    resid = ys - (ys.mean() + slope * (xs - xbar))
    dof = max(xs.size - 2, 1)
    stderr = float(np.sqrt((resid @ resid) / dof / sxx))
    return slope, stderr


def _child_rng(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def max_knn_radius(cloud: PointCloud, k: int) -> float:
    """Largest distance from any sample to its k-th nearest other sample."""
    from scipy.spatial import cKDTree

    if not 1 <= k <= cloud.n - 1:
        raise InvalidParameterError(f"k={k} out of range")
    tree = cKDTree(cloud.points)
    dist, _ = tree.query(cloud.points, k=k + 1)
    return float(dist[:, k].max())


def radius_scaling(d: int, k_rule, sizes, replicates: int, seed: int = 0) -> ScalingReport:
    """Median max K-th-neighbor radius against log(n/K); the expected
    log-log slope is -1/d."""
    sizes = sorted(int(s) for s in sizes)
    if len(sizes) < 4:
        raise InvalidParameterError("need at least 4 sizes")
    values, xs = [], []
    for si, n in enumerate(sizes):
        k = int(k_rule(n))
        reps = []
        for r in range(replicates):
            rng = _child_rng(seed, si, r)
            cloud = PointCloud(rng.uniform(size=(n, d)))
            reps.append(max_knn_radius(cloud, k))
        values.append(float(np.median(reps)))
        xs.append(log(n / k))
    slope, stderr = fit_loglog_slope(xs, values)
    return ScalingReport(
        label="max_knn_radius", sizes=np.array(sizes), values=np.array(values),
        xs=np.array(xs), slope=slope, slope_stderr=stderr,
        config={"d": d, "replicates": replicates, "seed": seed,
                "k": [int(k_rule(n)) for n in sizes]},
    )


@dataclass
class DegreeCheck:
    max_degree: int
    bound: float
    bound_ok: bool
    tau: float


def degree_check(cloud: PointCloud, k: int, tau: float = None) -> DegreeCheck:
    """Max degree of the K-NN graph against the tau_d * K bound."""
    if tau is None:
        tau = DEGREE_CONSTANTS.get(cloud.dim)
        if tau is None:
            raise InvalidParameterError(
                f"no default degree constant for d={cloud.dim}; pass tau explicitly"
            )
    g = build_knn_graph(cloud, k)
    md = graph_stats(g).max_degree
    bound = tau * k
    return DegreeCheck(max_degree=md, bound=bound, bound_ok=md <= bound, tau=tau)


def penalty_scaling(scenario: str, k_rule, sizes, replicates: int, seed: int = 0,
                    d: int = None) -> ScalingReport:
    """Median K-NN-graph total variation of the noiseless signal against
    log n; under a slowly growing K the expected slope is 1 - 1/d."""
    sizes = sorted(int(s) for s in sizes)
    if len(sizes) < 4:
        raise InvalidParameterError("need at least 4 sizes")
    values, xs = [], []
    degenerate = True
    for si, n in enumerate(sizes):
        k = int(k_rule(n))
        reps = []
        for r in range(replicates):
            spec = ScenarioSpec(scenario, n, d=d, sigma2=0.0, seed=seed + 1000 * si + r)
            data = generate(spec)
            g = build_knn_graph(data.cloud, k)
            reps.append(float(np.abs(g.incidence().apply(data.theta_star)).sum()))
        med = float(np.median(reps))
        values.append(med)
        xs.append(log(n))
        if med > 1e-12:
            degenerate = False
    if degenerate:
        return ScalingReport(label="knn_tv_of_signal", sizes=np.array(sizes),
                             values=np.array(values), xs=np.array(xs),
                             slope=0.0, slope_stderr=0.0, degenerate=True,
                             config={"scenario": scenario, "seed": seed})
    slope, stderr = fit_loglog_slope(xs, values)
    return ScalingReport(
        label="knn_tv_of_signal", sizes=np.array(sizes), values=np.array(values),
        xs=np.array(xs), slope=slope, slope_stderr=stderr,
        config={"scenario": scenario, "d": d, "replicates": replicates,
                "seed": seed, "k": [int(k_rule(n)) for n in sizes]},
    )


def default_rate_lambda_grid(sigma2: float, size: int = 13) -> np.ndarray:
    scale = max(np.sqrt(sigma2), 1e-3)
    return scale * np.geomspace(0.25, 64.0, size)


DEFAULT_KNNREG_GRID = (1, 2, 3, 5, 8, 12, 18, 27, 40)


def rate_experiment(scenario: str, estimator: str, sizes, replicates: int,
                    seed: int = 0, d: int = None, sigma2: float = None,
                    k_rule=polylog_k, eps_rule=None, tuning_grid=None) -> ScalingReport:
    """Optimized MSE per sample size with the log-log slope against n.

    estimator is one of 'knnfl', 'epsfl', 'knnreg'. A noiseless scenario
    yields optimized MSE ~ 0 at every size; the report is then flagged
    degenerate and no slope is asserted.
    """
    if estimator not in ("knnfl", "epsfl", "knnreg"):
        raise InvalidParameterError(f"unknown estimator {estimator!r}")
    sizes = sorted(int(s) for s in sizes)
    if len(sizes) < 4:
        raise InvalidParameterError("need at least 4 sizes")
    if eps_rule is None:
        eps_rule = lambda n: np.sqrt(log(n) / n)
    values, xs, ks = [], [], []
    for si, n in enumerate(sizes):
        spec = ScenarioSpec(scenario, n, d=d, sigma2=sigma2, seed=seed + 100_000 * si)
        if estimator == "knnreg":
            grid = np.asarray(tuning_grid if tuning_grid is not None else DEFAULT_KNNREG_GRID)
            grid = grid[grid <= n]
            method = MethodSpec("knnreg")
        elif estimator == "knnfl":
            grid = (np.asarray(tuning_grid) if tuning_grid is not None
                    else default_rate_lambda_grid(spec.sigma2))
            method = MethodSpec("knnfl", k=int(k_rule(n)))
            ks.append(int(k_rule(n)))
        else:
            grid = (np.asarray(tuning_grid) if tuning_grid is not None
                    else default_rate_lambda_grid(spec.sigma2))
            method = MethodSpec("epsfl", eps=float(eps_rule(n)))
        res = optimized_mse(spec, method, grid, replicates)
        values.append(res.best_mse)
        xs.append(log(n))
    config = {"scenario": scenario, "estimator": estimator, "d": d,
              "replicates": replicates, "seed": seed, "k": ks}
    if max(values) < 1e-10:
        return ScalingReport(label=f"optimized_mse_{estimator}", sizes=np.array(sizes),
                             values=np.array(values), xs=np.array(xs), slope=0.0,
                             slope_stderr=0.0, degenerate=True, config=config)
    slope, stderr = fit_loglog_slope(xs, values)
    return ScalingReport(label=f"optimized_mse_{estimator}", sizes=np.array(sizes),
                         values=np.array(values), xs=np.array(xs), slope=slope,
                         slope_stderr=stderr, config=config)


@dataclass
class ManifoldContrast:
    mse_knnfl: float
    mse_epsfl: float
    ratio: float
    wins: int
    replicates: int
    per_replicate: np.ndarray     # (R, 2) columns knnfl, epsfl at optimized tuning
    epsfl_component_mse: dict
    config: dict


def manifold_contrast(n_base: int, replicates: int, sigma2: float = 1.0,
                      seed: int = 0, eps_scale: float = 1.0,
                      k_rule=polylog_k, lambda_grid=None) -> ManifoldContrast:
    """Planar-sheet + cube mixture: K-NN fused lasso against the epsilon
    variant with the square-root epsilon rule, both tuned over a lambda grid
    by the averaged-MSE protocol."""
    n2 = int(ceil(n_base ** 0.75))
    if n2 < 50:
        raise InvalidParameterError("n_base too small: the cube component needs >= 50 points")
    n = n_base + n2
    k = int(k_rule(n))
    eps = float(eps_scale * np.sqrt(log(n) / n))
    if lambda_grid is None:
        lambda_grid = default_rate_lambda_grid(sigma2)
    grid = np.unique(np.asarray(lambda_grid, dtype=np.float64))
    desc = grid[::-1]

    rows_knn = np.empty((replicates, grid.size))
    rows_eps = np.empty((replicates, grid.size))
    comp_rows = []
    for r in range(replicates):
        data = generate_manifold_mix(n_base, n2, sigma2, c=-0.5, seed=seed + r)
        g_knn = build_knn_graph(data.cloud, k)
        g_eps = build_epsilon_graph(data.cloud, eps)
        sols_knn = solve_path(data.y, g_knn, desc)
        sols_eps = solve_path(data.y, g_eps, desc)
        cube = data.labels == 2
        for pos in range(grid.size):
            col = grid.size - 1 - pos
            rows_knn[r, col] = mse(sols_knn[pos].theta_hat, data.theta_star)
            rows_eps[r, col] = mse(sols_eps[pos].theta_hat, data.theta_star)
        comp_rows.append([
            [mse(s.theta_hat[~cube], data.theta_star[~cube]) for s in sols_eps],
            [mse(s.theta_hat[cube], data.theta_star[cube]) for s in sols_eps],
        ])
    curve_knn = rows_knn.mean(axis=0)
    curve_eps = rows_eps.mean(axis=0)
    best_knn = int(np.argmin(curve_knn))
    best_eps = int(np.argmin(curve_eps))
    per_rep = np.stack([rows_knn[:, best_knn], rows_eps[:, best_eps]], axis=1)
    wins = int(np.sum(per_rep[:, 0] < per_rep[:, 1]))
    # per-component decomposition of the epsilon estimator at its chosen lambda
    eps_path_pos = grid.size - 1 - best_eps
    sheet_mse = float(np.mean([c[0][eps_path_pos] for c in comp_rows]))
    cube_mse = float(np.mean([c[1][eps_path_pos] for c in comp_rows]))
    return ManifoldContrast(
        mse_knnfl=float(curve_knn[best_knn]), mse_epsfl=float(curve_eps[best_eps]),
        ratio=float(curve_knn[best_knn] / curve_eps[best_eps]) if curve_eps[best_eps] > 0 else 1.0,
        wins=wins, replicates=replicates, per_replicate=per_rep,
        epsfl_component_mse={"sheet": sheet_mse, "cube": cube_mse},
        config={"n_base": n_base, "n2": n2, "k": k, "eps": eps,
                "sigma2": sigma2, "seed": seed,
                "lambda_grid": [float(v) for v in grid]},
    )


@dataclass
class AErrEstimate:
    value: float
    stderr: float
    n_query: int


def estimate_aerr(model: FittedModel, f0, n_query: int, seed: int, sampler) -> AErrEstimate:
    """Monte-Carlo estimate of the squared gap between the signal and its
    K-neighbor average at fresh query points drawn from `sampler(n, rng)`
    (which must match the training density)."""
    if model.kind != "knn":
        raise InvalidParameterError("approximation error is defined for K-NN models")
    rng = np.random.default_rng(seed)
    queries = np.asarray(sampler(n_query, rng), dtype=np.float64)
    k = min(int(model.param), model.cloud.n)
    nbrs = nearest_neighbor_sets(model.cloud.points, queries, k)
    f_train = np.asarray(f0(model.cloud.points), dtype=np.float64)
    f_query = np.asarray(f0(queries), dtype=np.float64)
    sq = (f_query - f_train[nbrs].mean(axis=1)) ** 2
    value = float(sq.mean())
    stderr = float(sq.std(ddof=1) / np.sqrt(n_query)) if n_query > 1 else 0.0
    return AErrEstimate(value=value, stderr=stderr, n_query=n_query)
