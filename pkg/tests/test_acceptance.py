"""Acceptance suite: thirteen numbered criteria, each enforced at its stated
tolerance and reporting one pass/fail line (run with `pytest -s` to see the
lines as they complete)."""

import hashlib
import time
from functools import lru_cache
import numpy as np
from scipy.stats import binomtest

import nnfl
from nnfl.cli import main as cli_main
from nnfl.graphs import NeighborGraph, PointCloud, build_epsilon_graph, build_knn_graph
from nnfl.regression import knn_regression
from nnfl.scenarios import (
    ScenarioSpec,
    generate,
    mse,
    sample_intro_density,
)
from nnfl.solver import TvProblem, solve, solve_path
from nnfl.theory import (
    build_mesh,
    check_embedding_inequalities,
    lattice_resolution,
    log_squared_k,
    manifold_contrast,
    penalty_scaling,
    polylog_k,
    radius_scaling,
    rate_experiment,
)

from _oracles import first_order_tv_oracle, tv_objective


def criterion(num, ok, detail):
    status = "PASS" if ok else "FAIL"
    line = f"[criterion {num:2d}] {status}: {detail}"
    print(line, flush=True)
    assert ok, line


# ------------------------------------------------------- shared solver suite

def _random_instance(kind, rng):
    if kind == "chain":
        n = int(rng.integers(2, 51))
        edges = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    elif kind == "grid":
        r, c = int(rng.integers(2, 8)), int(rng.integers(2, 8))
        n = r * c
        idx = np.arange(n).reshape(r, c)
        edges = np.vstack([
            np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1),
            np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1),
        ])
    elif kind == "knn":
        n = int(rng.integers(5, 51))
        d = int(rng.integers(1, 4))
        k = int(rng.integers(1, min(6, n)))
        g = build_knn_graph(PointCloud(rng.uniform(size=(n, d))), k)
        return g
    else:  # disconnected: two chains and an isolated vertex
        n = int(rng.integers(7, 51))
        half = n // 2
        edges = np.vstack([
            np.stack([np.arange(half - 1), np.arange(1, half)], axis=1),
            np.stack([np.arange(half, n - 2), np.arange(half + 1, n - 1)], axis=1),
        ])
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    edges = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return NeighborGraph(n=n, edges=edges, kind="epsilon", param=1.0)


@lru_cache(maxsize=1)
def _solver_suite():
    """200 random instances with solutions and oracle solutions."""
    rng = np.random.default_rng(20_240_001)
    out = []
    start = time.perf_counter()
    for trial in range(200):
        kind = ("chain", "grid", "knn", "disc")[trial % 4]
        g = _random_instance(kind, rng)
        y = rng.normal(size=g.n) * float(rng.uniform(0.5, 3.0))
        lam = float(10 ** rng.uniform(-2, 1))
        prob = TvProblem(y=y, lam=lam, graph=g)
        sol = solve(prob, tol=1e-9)
        oracle = first_order_tv_oracle(y, g.edges, lam)
        out.append((prob, sol, oracle))
    elapsed = time.perf_counter() - start
    return out, elapsed


def test_criterion_01_solver_exactness():
    suite, elapsed = _solver_suite()
    worst_excess = 0.0
    worst_gap = 0.0
    for prob, sol, oracle in suite:
        edges = prob.graph.edges.tolist()
        obj = tv_objective(prob.y, edges, prob.lam, sol.theta_hat)
        obj_oracle = tv_objective(prob.y, edges, prob.lam, oracle)
        worst_excess = max(worst_excess, obj - obj_oracle)
        worst_gap = max(worst_gap, sol.duality_gap / (1.0 + abs(obj)))
    ok = worst_excess <= 1e-6 and worst_gap <= 1e-9 and elapsed < 60.0
    criterion(1, ok,
              f"200 instances: objective excess {worst_excess:.2e} (<=1e-6), "
              f"relative gap {worst_gap:.2e} (<=1e-9), runtime {elapsed:.1f}s (<60s)")


def test_criterion_02_analytic_limits():
    rng = np.random.default_rng(2)
    ok = True
    details = []
    # lambda = 0 returns y exactly
    g = _random_instance("knn", rng)
    y = rng.normal(size=g.n)
    ok &= np.array_equal(solve(TvProblem(y=y, lam=0.0, graph=g)).theta_hat, y)
    details.append("lam=0 identity")
    # lambda = 1e6 returns per-component means to 1e-8
    g2 = _random_instance("disc", rng)
    y2 = rng.normal(size=g2.n) * 4
    sol = solve(TvProblem(y=y2, lam=1e6, graph=g2))
    labels = nnfl.graph_stats(g2).component_labels
    err = 0.0
    for c in np.unique(labels):
        m = labels == c
        err = max(err, np.abs(sol.theta_hat[m] - y2[m].mean()).max())
    ok &= err <= 1e-8
    details.append(f"saturation err {err:.1e}")
    # two-node closed form
    two = NeighborGraph(n=2, edges=np.array([[0, 1]]), kind="knn", param=1)
    got = solve(TvProblem(y=np.array([0.0, 1.0]), lam=0.25, graph=two)).theta_hat
    ok &= np.allclose(got, [0.25, 0.75], atol=1e-12)
    details.append("two-node closed form")
    criterion(2, ok, "; ".join(details))


def test_criterion_03_kkt_certificates():
    suite, _ = _solver_suite()
    worst = 0.0
    for prob, sol, _ in suite:
        op = prob.graph.incidence()
        scale = 1.0 + np.abs(prob.y).max()
        if sol.edge_duals.size:
            box = max(0.0, float(np.abs(sol.edge_duals).max()) - prob.lam)
            worst = max(worst, box / scale)
        resid = sol.theta_hat - prob.y + op.adjoint_apply(sol.edge_duals)
        worst = max(worst, float(np.abs(resid).max()) / scale)
        diffs = op.apply(sol.theta_hat)
        active = np.abs(diffs) > 1e-9
        if active.any():
            cs = float(np.abs(np.abs(sol.edge_duals[active]) - prob.lam).max())
            worst = max(worst, cs / scale)
    ok = worst <= 1e-7
    criterion(3, ok, f"KKT residuals (stationarity, box, comp. slackness) "
                     f"worst {worst:.2e} (<=1e-7 relative)")


def test_criterion_04_graph_exactness():
    rng = np.random.default_rng(4)
    dims = (1, 2, 3, 6)
    mismatches = 0
    checked = 0
    for trial in range(50):
        d = dims[trial % 4]
        n = int(rng.integers(20, 501))
        pts = rng.uniform(size=(n, d))
        if trial % 3 == 0:
            pts = np.round(pts, 1)  # provoke exact distance ties
        cloud = PointCloud(pts)
        # brute-force oracle: full distance matrix, (distance, index) order
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        for k in (1, 3, 5, 10):
            got = {tuple(e) for e in build_knn_graph(cloud, k).edges.tolist()}
            want = set()
            for i in range(n):
                order = np.lexsort((np.arange(n), dist[i]))[:k]
                for j in order:
                    want.add((min(i, int(j)), max(i, int(j))))
            checked += 1
            mismatches += got != want
        eps = float(rng.uniform(0.05, 0.4))
        got = {tuple(e) for e in build_epsilon_graph(cloud, eps).edges.tolist()}
        want = {(i, j) for i in range(n) for j in range(i + 1, n) if dist[i, j] < eps}
        checked += 1
        mismatches += got != want
    ok = mismatches == 0
    criterion(4, ok, f"{checked} spatial-index graphs equal brute force "
                     f"({mismatches} mismatches)")


def test_criterion_05_density_masses():
    start = time.perf_counter()
    pts = sample_intro_density(100_000, seed=5).points
    inner = float(((pts >= 0.45) & (pts <= 0.55)).all(axis=1).mean())
    middle = float(((pts >= 0.4) & (pts <= 0.6)).all(axis=1).mean())
    elapsed = time.perf_counter() - start
    ok = abs(inner - 0.64) <= 0.01 and abs(middle - 0.80) <= 0.01 and elapsed < 5.0
    criterion(5, ok, f"inner mass {inner:.4f} (0.64 +-0.01), "
                     f"middle mass {middle:.4f} (0.80 +-0.01), {elapsed:.2f}s (<5s)")


def test_criterion_06_scenario1_ordering():
    start = time.perf_counter()
    lam_grid = np.array([0.5, 1.0, 2.0, 4.0, 8.0, 16.0])
    k_grid = np.array([1, 2, 3, 5, 8, 12, 20, 30], dtype=float)
    reps = 20
    fl_rows = np.empty((reps, lam_grid.size))
    reg_rows = np.empty((reps, k_grid.size))
    for r in range(reps):
        data = generate(ScenarioSpec("s1", 1000, seed=600 + r))
        graph = build_knn_graph(data.cloud, 5)
        sols = solve_path(data.y, graph, sorted(lam_grid, reverse=True))
        for pos, sol in enumerate(sols):
            fl_rows[r, lam_grid.size - 1 - pos] = mse(sol.theta_hat, data.theta_star)
        for gi, k in enumerate(k_grid):
            fitted = knn_regression(data.cloud, data.y, int(k), data.cloud.points)
            reg_rows[r, gi] = mse(fitted, data.theta_star)
    opt_fl = fl_rows.mean(axis=0).min()
    opt_reg = reg_rows.mean(axis=0).min()
    best_fl = int(np.argmin(fl_rows.mean(axis=0)))
    best_reg = int(np.argmin(reg_rows.mean(axis=0)))
    wins = int((fl_rows[:, best_fl] < reg_rows[:, best_reg]).sum())
    pval = binomtest(wins, reps, 0.5, alternative="greater").pvalue
    elapsed = time.perf_counter() - start
    ok = opt_fl < opt_reg and pval < 0.05 and elapsed < 600
    criterion(6, ok, f"optimized MSE knnfl {opt_fl:.4f} < knnreg {opt_reg:.4f}; "
                     f"paired sign test {wins}/{reps} wins, p={pval:.4f} (<0.05); "
                     f"{elapsed:.0f}s (<600s)")


def test_criterion_07_rate_slope():
    start = time.perf_counter()
    rep = rate_experiment("s1", "knnfl", [500, 1000, 2000, 4000],
                          replicates=10, seed=700, k_rule=polylog_k)
    elapsed = time.perf_counter() - start
    ok = -0.8 <= rep.slope <= -0.3 and elapsed < 1800
    criterion(7, ok, f"optimized-MSE slope {rep.slope:.3f} "
                     f"(in [-0.8,-0.3], stderr {rep.slope_stderr:.3f}); "
                     f"{elapsed:.0f}s (<1800s)")


def test_criterion_08_radius_scaling():
    start = time.perf_counter()
    details = []
    ok = True
    for d in (1, 2, 3):
        rep = radius_scaling(d, polylog_k, [500, 1000, 2000, 4000, 8000],
                             replicates=5, seed=800 + d)
        ok &= abs(rep.slope - (-1.0 / d)) <= 0.1
        details.append(f"d={d}: {rep.slope:.3f} (target {-1.0 / d:.3f}+-0.1)")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120
    criterion(8, ok, "; ".join(details) + f"; {elapsed:.0f}s (<120s)")


def test_criterion_09_penalty_scaling():
    details = []
    ok = True
    for name, d, target in (("s1", 2, 0.5), ("s3", 3, 2.0 / 3.0)):
        rep = penalty_scaling(name, lambda n: 5, [500, 1000, 2000, 4000, 8000],
                              replicates=10, seed=900, d=d)
        ok &= abs(rep.slope - target) <= 0.12
        details.append(f"{name}: slope {rep.slope:.3f} (target {target:.3f}+-0.12)")
    criterion(9, ok, "; ".join(details))


def test_criterion_10_embedding_inequalities():
    n, d = 500, 2
    k = log_squared_k(n)
    res = lattice_resolution(n, k, d)
    held = 0
    skipped = 0
    violations = 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        cloud = PointCloud(rng.uniform(size=(n, d)))
        graph = build_knn_graph(cloud, k)
        theta = nnfl.f0_s1(cloud.points) + rng.normal(size=n)
        e = rng.normal(size=n)
        mesh = build_mesh(cloud, theta, res)
        chk = check_embedding_inequalities(mesh, graph, theta, e)
        if not chk.omega_holds:
            skipped += 1
            continue
        held += 1
        if not (chk.holds_1 and chk.holds_2):
            violations += 1
    ok = violations == 0 and held > 0
    criterion(10, ok, f"connectivity event held on {held}/50 clouds "
                      f"(skipped {skipped}); inequalities held on 100% of those "
                      f"({violations} violations)")


def test_criterion_11_manifold_contrast():
    start = time.perf_counter()
    mc = manifold_contrast(2000, replicates=10, sigma2=1.0, seed=1100)
    elapsed = time.perf_counter() - start
    ok = mc.wins >= 8 and elapsed < 1200
    criterion(11, ok, f"knnfl beat epsfl in {mc.wins}/10 replicates (>=8); "
                      f"optimized MSE {mc.mse_knnfl:.4f} vs {mc.mse_epsfl:.4f}; "
                      f"{elapsed:.0f}s (<1200s)")


def test_criterion_12_cli_determinism(tmp_path):
    # every command re-run with an identical configuration (same paths)
    # must reproduce its outputs byte for byte
    d = tmp_path / "data.csv"
    commands = [
        ["export-scenario", "--scenario", "s1", "--n", "80", "--seed", "12",
         "--out", str(d)],
        ["fit", "--data", str(d), "--k", "4", "--lam", "1.0",
         "--out-dir", str(tmp_path / "fit")],
        ["predict", "--model", str(tmp_path / "fit" / "model.json"),
         "--queries", str(d), "--out", str(tmp_path / "p.csv")],
        ["cv", "--data", str(d), "--k", "4", "--lambdas", "0.5,2.0",
         "--folds", "3", "--seed", "1", "--out-dir", str(tmp_path / "cv")],
        ["simulate", "--scenario", "s1", "--sizes", "60", "--replicates", "2",
         "--estimators", "knnfl,knnreg", "--k", "3", "--lambda-grid", "0.5,2.0",
         "--out-dir", str(tmp_path / "sim")],
        ["validate-theory", "--checks", "degree", "--replicates", "2",
         "--out-dir", str(tmp_path / "vt")],
    ]
    digests = []
    for _ in range(2):
        for cmd in commands:
            assert cli_main(list(cmd)) == 0
        files = sorted(str(p.relative_to(tmp_path))
                       for p in tmp_path.rglob("*") if p.is_file())
        digests.append({f: hashlib.sha256((tmp_path / f).read_bytes()).hexdigest()
                        for f in files})
    ok = digests[0] == digests[1] and len(digests[0]) >= 15
    criterion(12, ok, f"{len(digests[0])} output files byte-identical across reruns")


def test_criterion_13_performance():
    data = generate(ScenarioSpec("s1", 5000, seed=13))
    t0 = time.perf_counter()
    graph = build_knn_graph(data.cloud, 5)
    lam_grid = np.geomspace(0.25, 64.0, 30)
    mid = float(lam_grid[15])
    sol = solve(TvProblem(y=data.y, lam=mid, graph=graph))
    t_single = time.perf_counter() - t0
    t1 = time.perf_counter()
    sols = solve_path(data.y, graph, sorted(lam_grid, reverse=True))
    t_path = time.perf_counter() - t1
    ok = t_single < 10.0 and t_path < 60.0 and sol.converged and all(
        s.converged for s in sols
    )
    criterion(13, ok, f"n=5000 single solve {t_single:.2f}s (<10s), "
                      f"30-value warm path {t_path:.2f}s (<60s)")
