"""Synthetic data generators and the Monte-Carlo optimized-MSE protocol.

Six named scenarios are provided. Randomness is driven by numpy's PCG64
generator; every generator derives independent covariate and noise streams
from the scenario seed via SeedSequence.spawn, and replicate r of a
Monte-Carlo run uses seed base_seed + r.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .errors import InvalidParameterError
from .graphs import PointCloud, build_epsilon_graph, build_knn_graph, nearest_neighbor_sets
from .solver import solve_path

SCENARIO_NAMES = ("intro_example", "s1", "s2", "s3", "s4", "manifold_mix")

_DEFAULT_SIGMA2 = {
    "intro_example": 0.5,
    "s1": 1.0,
    "s2": 1.0,
    "s3": 0.3,
    "s4": 0.3,
    "manifold_mix": 1.0,
}

# mixture weights for the concentrated two-box density on [0,1]^2:
# 64% of mass in the inner box, 80% in the middle box overall
INNER_BOX = (0.45, 0.55)
MIDDLE_BOX = (0.4, 0.6)
_INTRO_WEIGHTS = (0.64, 0.16, 0.20)  # inner box, middle ring, outer region


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    n: int
    d: int = None
    sigma2: float = None
    seed: int = 0

    def __post_init__(self):
        if self.name not in SCENARIO_NAMES:
            raise InvalidParameterError(
                f"unknown scenario {self.name!r}; valid names: {', '.join(SCENARIO_NAMES)}"
            )
        if self.n < 1:
            raise InvalidParameterError("n must be >= 1")
        fixed_d = {"intro_example": 2, "s1": 2, "s2": 2, "manifold_mix": 3}
        if self.name in fixed_d:
            if self.d is not None and self.d != fixed_d[self.name]:
                raise InvalidParameterError(
                    f"scenario {self.name} has fixed dimension {fixed_d[self.name]}"
                )
            object.__setattr__(self, "d", fixed_d[self.name])
        else:
            if self.d is None:
                object.__setattr__(self, "d", 2)
            if self.d < 1:
                raise InvalidParameterError("d must be >= 1")
        if self.sigma2 is None:
            object.__setattr__(self, "sigma2", _DEFAULT_SIGMA2[self.name])
        if self.sigma2 < 0:
            raise InvalidParameterError("sigma2 must be >= 0")


@dataclass
class Dataset:
    cloud: PointCloud
    y: np.ndarray
    theta_star: np.ndarray
    labels: np.ndarray = None  # mixture component per sample, if applicable

    def __post_init__(self):
        if len(self.y) != self.cloud.n or len(self.theta_star) != self.cloud.n:
            raise InvalidParameterError("dataset field lengths disagree")


def _rng_streams(seed, k):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def _sample_box_minus_box(rng, outer_lo, outer_hi, inner_lo, inner_hi, size):
    """Uniform samples on [outer]^2 minus [inner]^2 by rejection."""
    out = np.empty((size, 2))
    filled = 0
    while filled < size:
        cand = rng.uniform(outer_lo, outer_hi, size=(2 * (size - filled) + 8, 2))
        inside = (
            (cand[:, 0] >= inner_lo) & (cand[:, 0] <= inner_hi)
            & (cand[:, 1] >= inner_lo) & (cand[:, 1] <= inner_hi)
        )
        cand = cand[~inside]
        take = min(len(cand), size - filled)
        out[filled : filled + take] = cand[:take]
        filled += take
    return out


def sample_intro_density(n, seed) -> PointCloud:
    """Draws from the concentrated mixture density on [0,1]^2 (64% of mass
    in [0.45,0.55]^2, 80% in [0.4,0.6]^2)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    comp = rng.choice(3, size=n, p=_INTRO_WEIGHTS)
    pts = np.empty((n, 2))
    idx_inner = np.flatnonzero(comp == 0)
    idx_ring = np.flatnonzero(comp == 1)
    idx_outer = np.flatnonzero(comp == 2)
    if idx_inner.size:
        pts[idx_inner] = rng.uniform(INNER_BOX[0], INNER_BOX[1], size=(idx_inner.size, 2))
    if idx_ring.size:
        pts[idx_ring] = _sample_box_minus_box(
            rng, MIDDLE_BOX[0], MIDDLE_BOX[1], INNER_BOX[0], INNER_BOX[1], idx_ring.size
        )
    if idx_outer.size:
        pts[idx_outer] = _sample_box_minus_box(
            rng, 0.0, 1.0, MIDDLE_BOX[0], MIDDLE_BOX[1], idx_outer.size
        )
    return PointCloud(pts)


def _as_points(x, d):
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != d:
        raise InvalidParameterError(f"expected points of dimension {d}, got {arr.shape[1]}")
    return arr, scalar


def f0_intro(x):
    """Indicator of the small disc around (1/2, 1/2): 1 iff the squared
    distance to the center is <= 0.002."""
    pts, scalar = _as_points(x, 2)
    val = (((pts - 0.5) ** 2).sum(axis=1) <= 2.0 / 1000.0).astype(np.float64)
    return float(val[0]) if scalar else val


def f0_s1(x):
    """1 on the half-plane strictly closer to (3/4, 3/4) than to (1/2, 1/2)."""
    pts, scalar = _as_points(x, 2)
    d_hi = ((pts - 0.75) ** 2).sum(axis=1)
    d_lo = ((pts - 0.5) ** 2).sum(axis=1)
    val = (d_hi < d_lo).astype(np.float64)
    return float(val[0]) if scalar else val


def f0_s3(x, d=None):
    """+1 strictly closer to (1/4)1 than to (3/4)1, else -1, in any dimension."""
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if d is not None and pts.shape[1] != d:
        raise InvalidParameterError(f"expected dimension {d}, got {pts.shape[1]}")
    d_lo = ((pts - 0.25) ** 2).sum(axis=1)
    d_hi = ((pts - 0.75) ** 2).sum(axis=1)
    val = np.where(d_lo < d_hi, 1.0, -1.0)
    return float(val[0]) if scalar else val


def s4_centers(d) -> np.ndarray:
    """The four block-structured centers; block sizes floor(d/2), d-floor(d/2)."""
    if d < 1:
        raise InvalidParameterError("d must be >= 1")
    h = d // 2
    q = np.empty((4, d))
    q[0] = np.concatenate([np.full(h, 0.25), np.full(d - h, 0.5)])
    q[1] = np.concatenate([np.full(h, 0.5), np.full(d - h, 0.25)])
    q[2] = np.concatenate([np.full(h, 0.75), np.full(d - h, 0.5)])
    q[3] = np.concatenate([np.full(h, 0.5), np.full(d - h, 0.75)])
    return q


def f0_s4(x, d=None):
    """Nearest-center cascade over the four block centers with values
    2, 1, 0 and an 'otherwise' branch of -1; ties fall through to -1."""
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 1
    pts = np.atleast_2d(arr)
    dim = pts.shape[1]
    if d is not None and dim != d:
        raise InvalidParameterError(f"expected dimension {d}, got {dim}")
    q = s4_centers(dim)
    dist = ((pts[:, None, :] - q[None, :, :]) ** 2).sum(axis=2)
    val = np.full(pts.shape[0], -1.0)
    others = [
        dist[:, [1, 2, 3]].min(axis=1),
        dist[:, [0, 2, 3]].min(axis=1),
        dist[:, [0, 1, 3]].min(axis=1),
    ]
    for level, value in ((2, 0.0), (1, 1.0), (0, 2.0)):
        k = level  # apply in reverse priority so earlier cases win
        val = np.where(dist[:, k] < others[k], value, val)
    return float(val[0]) if scalar else val


def _signal_for(name, points):
    if name in ("intro_example", "s2"):
        return f0_intro(points)
    if name == "s1":
        return f0_s1(points)
    if name == "s3":
        return f0_s3(points)
    if name == "s4":
        return f0_s4(points)
    raise InvalidParameterError(f"no pointwise signal for scenario {name!r}")


def generate(spec: ScenarioSpec) -> Dataset:
    """Draw a dataset for the named scenario; a pure function of the spec."""
    if spec.name == "manifold_mix":
        n2 = int(ceil(spec.n ** 0.75))
        return generate_manifold_mix(spec.n, n2, spec.sigma2, c=-0.5, seed=spec.seed)
    rng_x, rng_eps = _rng_streams(spec.seed, 2)
    if spec.name in ("intro_example", "s2"):
        cloud = sample_intro_density(spec.n, rng_x)
    else:
        cloud = PointCloud(rng_x.uniform(0.0, 1.0, size=(spec.n, spec.d)))
    theta_star = np.asarray(_signal_for(spec.name, cloud.points), dtype=np.float64)
    noise = rng_eps.normal(0.0, np.sqrt(spec.sigma2), size=spec.n) if spec.sigma2 > 0 else np.zeros(spec.n)
    return Dataset(cloud=cloud, y=theta_star + noise, theta_star=theta_star)


def generate_manifold_mix(n1, n2, sigma2, c, seed) -> Dataset:
    """Two-component mixture in R^3: n1 points on the planar sheet
    [0,1]^2 x {c} (c < 0) and n2 points in the cube [0,1]^3, each carrying
    its own piecewise-constant signal. Labels are 1 (sheet) and 2 (cube)."""
    if n1 < 1 or n2 < 0:
        raise InvalidParameterError("need n1 >= 1 and n2 >= 0")
    if c >= 0:
        raise InvalidParameterError("the sheet offset c must be negative")
    if sigma2 < 0:
        raise InvalidParameterError("sigma2 must be >= 0")
    rng_x, rng_eps = _rng_streams(seed, 2)
    sheet = np.column_stack([
        rng_x.uniform(0.0, 1.0, size=(n1, 2)),
        np.full(n1, float(c)),
    ])
    cube = rng_x.uniform(0.0, 1.0, size=(n2, 3))
    pts = np.vstack([sheet, cube])
    theta_star = np.empty(n1 + n2)
    theta_star[:n1] = f0_s1(sheet[:, :2])
    if n2:
        theta_star[n1:] = f0_s3(cube)
    noise = rng_eps.normal(0.0, np.sqrt(sigma2), size=n1 + n2) if sigma2 > 0 else np.zeros(n1 + n2)
    labels = np.concatenate([np.ones(n1, dtype=np.int64), np.full(n2, 2, dtype=np.int64)])
    return Dataset(cloud=PointCloud(pts), y=theta_star + noise,
                   theta_star=theta_star, labels=labels)


def mse(theta_hat, theta_star) -> float:
    """Mean squared error (1/n) sum (theta_hat - theta_star)^2."""
    a = np.asarray(theta_hat, dtype=np.float64).ravel()
    b = np.asarray(theta_star, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidParameterError("length mismatch in mse")
    return float(np.mean((a - b) ** 2))


@dataclass(frozen=True)
class MethodSpec:
    """An estimator entry for the Monte-Carlo protocol.

    name='knnfl'  — K-NN fused lasso, K fixed, grid tunes lambda
    name='epsfl'  — epsilon fused lasso, eps fixed, grid tunes lambda
    name='knnreg' — K-NN regression, grid tunes K
    """

    name: str
    k: int = None
    eps: float = None

    def __post_init__(self):
        if self.name not in ("knnfl", "epsfl", "knnreg"):
            raise InvalidParameterError(f"unknown method {self.name!r}")
        if self.name == "knnfl" and (self.k is None or self.k < 1):
            raise InvalidParameterError("knnfl requires k >= 1")
        if self.name == "epsfl" and (self.eps is None or self.eps <= 0):
            raise InvalidParameterError("epsfl requires eps > 0")


@dataclass
class OptimizedMseResult:
    grid: np.ndarray
    mse_curve: np.ndarray
    stderr_curve: np.ndarray
    best_param: float
    best_mse: float
    replicates: int
    failures: int = 0
    config: dict = field(default_factory=dict)


def knn_regression_fit(points, y, k) -> np.ndarray:
    """In-sample K-NN regression values (each point counts as its own
    neighbor at distance zero)."""
    nbrs = nearest_neighbor_sets(points, points, k, exclude_self=False)
    return y[nbrs].mean(axis=1)


def _replicate_mses(data: Dataset, method: MethodSpec, grid) -> np.ndarray:
    if method.name == "knnreg":
        return np.array([
            mse(knn_regression_fit(data.cloud.points, data.y, int(k)), data.theta_star)
            for k in grid
        ])
    if method.name == "knnfl":
        graph = build_knn_graph(data.cloud, method.k)
    else:
        graph = build_epsilon_graph(data.cloud, method.eps)
    order = np.argsort(grid)[::-1]  # descending for the warm-started path
    sols = solve_path(data.y, graph, [float(grid[i]) for i in order])
    out = np.empty(len(grid))
    for pos, i in enumerate(order):
        out[i] = mse(sols[pos].theta_hat, data.theta_star)
    return out


def optimized_mse(spec: ScenarioSpec, method: MethodSpec, tuning_grid,
                  replicates: int) -> OptimizedMseResult:
    """Average the in-sample MSE over replicate datasets at every grid value
    and report the grid argmin (ties resolve to the smallest parameter).

    Replicate r uses seed spec.seed + r. Grid values are deduplicated and
    sorted, so the result does not depend on grid ordering.
    """
    if replicates < 1:
        raise InvalidParameterError("replicates must be >= 1")
    grid = np.unique(np.asarray(tuning_grid, dtype=np.float64))
    if grid.size == 0:
        raise InvalidParameterError("tuning grid must be non-empty")
    rows = []
    failures = 0
    for r in range(replicates):
        rep_spec = ScenarioSpec(spec.name, spec.n, spec.d, spec.sigma2, spec.seed + r)
        data = generate(rep_spec)
        try:
            rows.append(_replicate_mses(data, method, grid))
        except Exception:
            failures += 1
    if not rows:
        raise InvalidParameterError("all replicates failed")
    mat = np.vstack(rows)
    curve = mat.mean(axis=0)
    stderr = mat.std(axis=0, ddof=1) / np.sqrt(mat.shape[0]) if mat.shape[0] > 1 else np.zeros(grid.size)
    best = int(np.argmin(curve))
    return OptimizedMseResult(
        grid=grid, mse_curve=curve, stderr_curve=stderr,
        best_param=float(grid[best]), best_mse=float(curve[best]),
        replicates=replicates, failures=failures,
        config={"scenario": spec.name, "n": spec.n, "d": spec.d,
                "sigma2": spec.sigma2, "seed": spec.seed,
                "method": method.name, "k": method.k, "eps": method.eps},
    )


def default_lambda_grid(y, size: int = 30) -> np.ndarray:
    """Log-spaced grid on [1e-3 * lam_bar, lam_bar] with
    lam_bar = n * max|y - mean(y)| (a cheap bound past saturation)."""
    y = np.asarray(y, dtype=np.float64)
    lam_bar = float(len(y) * np.max(np.abs(y - y.mean())))
    if lam_bar <= 0:
        lam_bar = 1.0
    return np.geomspace(1e-3 * lam_bar, lam_bar, size)


def dataset_to_csv(data: Dataset, path) -> None:
    d = data.cloud.dim
    header = [f"x{i + 1}" for i in range(d)] + ["y", "theta_star"]
    if data.labels is not None:
        header.append("label")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# schema_version=1\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.cloud.n):
            row = [repr(float(v)) for v in data.cloud.points[i]]
            row.append(repr(float(data.y[i])))
            row.append(repr(float(data.theta_star[i])))
            if data.labels is not None:
                row.append(str(int(data.labels[i])))
            writer.writerow(row)
