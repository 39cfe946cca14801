"""Command-line interface.

Subcommands: fit, predict, cv, simulate, validate-theory, export-scenario.
Parameters come from flags or a JSON config file (flags win). Every run
writes its resolved configuration alongside its outputs, all output files
carry a schema_version field, and identical configurations produce
byte-identical outputs (wall-clock timings go to stderr only).

Exit codes: 0 success or conditional skip, 1 usage error, 2 data error,
3 solver failure, 4 assertion failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import (
    DataFormatError,
    EmptyNeighborhoodError,
    InvalidParameterError,
    SolverFailureError,
)
from .graphs import PointCloud, read_numeric_csv
from .regression import (
    fit,
    kfold_cv,
    load_model,
    model_to_json_dict,
    predict_batch,
)
from .scenarios import (
    SCENARIO_NAMES,
    MethodSpec,
    ScenarioSpec,
    dataset_to_csv,
    generate,
    mse,
    optimized_mse,
)
from .theory import (
    check_embedding_inequalities,
    build_mesh,
    degree_check,
    lattice_resolution,
    log_squared_k,
    manifold_contrast,
    penalty_scaling,
    polylog_k,
    radius_scaling,
    rate_experiment,
)
from .graphs import build_knn_graph

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SOLVER = 3
EXIT_ASSERT = 4

SCHEMA_VERSION = 1


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def _resolved_config(args, keys):
    cfg = {"schema_version": SCHEMA_VERSION, "command": args.command}
    for k in keys:
        v = getattr(args, k, None)
        if isinstance(v, np.ndarray):
            v = [float(x) for x in v]
        cfg[k] = v
    return cfg


def _split_xy(data, header, need_y=True, path=""):
    """Columns of a training CSV: x block, y, optional theta_star."""
    if header is not None:
        names = [h.strip() for h in header]
        if need_y and "y" not in names:
            raise DataFormatError(f"{path}: missing required column 'y'")
        ycol = names.index("y") if "y" in names else None
        tcol = names.index("theta_star") if "theta_star" in names else None
        xcols = [i for i, h in enumerate(names) if h not in ("y", "theta_star", "label")]
        x = data[:, xcols]
        y = data[:, ycol] if ycol is not None else None
        t = data[:, tcol] if tcol is not None else None
        return x, y, t
    if need_y:
        if data.shape[1] < 2:
            raise DataFormatError(f"{path}: need at least one x column and a y column")
        return data[:, :-1], data[:, -1], None
    return data, None, None


def _parse_float_list(text):
    return [float(v) for v in str(text).split(",") if str(v).strip()]


def _parse_int_list(text):
    return [int(v) for v in str(text).split(",") if str(v).strip()]


def _kind_and_param(args):
    if args.kind == "knn":
        if args.k is None:
            raise InvalidParameterError("--k is required for kind=knn")
        return "knn", int(args.k)
    if args.eps is None:
        raise InvalidParameterError("--eps is required for kind=epsilon")
    return "epsilon", float(args.eps)


def cmd_fit(args):
    data, header = read_numeric_csv(args.data)
    x, y, theta_star = _split_xy(data, header, need_y=True, path=args.data)
    kind, param = _kind_and_param(args)
    cloud = PointCloud(x)
    model = fit(cloud, y, kind, param, args.lam, tol=args.tol)
    os.makedirs(args.out_dir, exist_ok=True)
    cloud_ref = os.path.abspath(args.data)
    _write_json(os.path.join(args.out_dir, "model.json"),
                model_to_json_dict(model, cloud_ref))
    diag = dict(model.diagnostics)
    seconds = diag.pop("seconds", None)
    diag["schema_version"] = SCHEMA_VERSION
    _write_json(os.path.join(args.out_dir, "diagnostics.json"), diag)
    if theta_star is not None:
        _write_json(os.path.join(args.out_dir, "insample_mse.json"),
                    {"schema_version": SCHEMA_VERSION,
                     "mse": mse(model.theta_hat, theta_star)})
    _write_json(os.path.join(args.out_dir, "config.json"),
                _resolved_config(args, ["data", "kind", "k", "eps", "lam", "tol"]))
    if seconds is not None:
        print(f"fit: objective={diag['objective']:.6g} gap={diag['gap']:.3g} "
              f"seconds={seconds:.3f}", file=sys.stderr)
    return EXIT_OK


def cmd_predict(args):
    model = load_model(args.model)
    data, header = read_numeric_csv(args.queries, allow_empty=True)
    if data.shape[0]:
        x, _, _ = _split_xy(data, header, need_y=False, path=args.queries)
        if x.shape[1] != model.cloud.dim:
            raise DataFormatError(
                f"{args.queries}: query dimension {x.shape[1]} does not match "
                f"model dimension {model.cloud.dim}"
            )
        values, empty = predict_batch(model, x, empty_ball="nearest")
    else:
        values, empty = np.empty(0), np.empty(0, dtype=bool)
    rows = []
    for i in range(len(values)):
        rows.append([float(values[i]), "empty_neighborhood" if empty[i] else ""])
    _write_csv(args.out, ["prediction", "error"], rows)
    _write_json(args.out + ".config.json",
                _resolved_config(args, ["model", "queries", "out"]))
    return EXIT_OK


def cmd_cv(args):
    data, header = read_numeric_csv(args.data)
    x, y, _ = _split_xy(data, header, need_y=True, path=args.data)
    kind, param = _kind_and_param(args)
    cloud = PointCloud(x)
    lambdas = _parse_float_list(args.lambdas) if args.lambdas else None
    report = kfold_cv(cloud, y, kind, param, lambdas=lambdas,
                      folds=args.folds, seed=args.seed, tol=args.tol)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_json(os.path.join(args.out_dir, "cv_report.json"), report.to_json_dict())
    model = fit(cloud, y, kind, param, report.selected_lambda, tol=args.tol)
    _write_json(os.path.join(args.out_dir, "model.json"),
                model_to_json_dict(model, os.path.abspath(args.data)))
    _write_json(os.path.join(args.out_dir, "config.json"),
                _resolved_config(args, ["data", "kind", "k", "eps", "lambdas",
                                        "folds", "seed", "tol"]))
    return EXIT_OK


def _simulate_task(entry):
    name, n, d, sigma2, seed, est, k, eps_scale, lam_grid, knnreg_grid, replicates = entry
    spec = ScenarioSpec(name, n, d=d, sigma2=sigma2, seed=seed)
    if est == "knnreg":
        grid = [v for v in knnreg_grid if v <= n]
        method = MethodSpec("knnreg")
    elif est == "knnfl":
        grid = lam_grid
        method = MethodSpec("knnfl", k=k if k else polylog_k(n))
    elif est == "epsfl":
        grid = lam_grid
        eps = float(eps_scale * np.sqrt(np.log(n) / n))
        method = MethodSpec("epsfl", eps=eps)
    else:
        raise InvalidParameterError(f"unknown estimator {est!r}")
    res = optimized_mse(spec, method, grid, replicates)
    return est, n, res


def cmd_simulate(args):
    if args.scenario not in SCENARIO_NAMES:
        print(f"unknown scenario {args.scenario!r}; valid names: "
              f"{', '.join(SCENARIO_NAMES)}", file=sys.stderr)
        return EXIT_USAGE
    sizes = _parse_int_list(args.sizes)
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    sigma2 = args.sigma2
    probe = ScenarioSpec(args.scenario, max(sizes), d=args.d, sigma2=sigma2, seed=args.seed)
    lam_grid = (_parse_float_list(args.lambda_grid) if args.lambda_grid
                else [float(v) for v in np.sqrt(max(probe.sigma2, 1e-6)) * np.geomspace(0.25, 64.0, 13)])
    knnreg_grid = _parse_int_list(args.knnreg_grid) if args.knnreg_grid else list(
        v for v in (1, 2, 3, 5, 8, 12, 18, 27, 40)
    )
    tasks = [
        (args.scenario, n, args.d, sigma2, args.seed, est, args.k,
         args.eps_scale, lam_grid, knnreg_grid, args.replicates)
        for est in estimators for n in sizes
    ]
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_simulate_task, tasks))
    else:
        results = [_simulate_task(t) for t in tasks]

    os.makedirs(args.out_dir, exist_ok=True)
    runs = []
    rows = []
    for est, n, res in results:
        runs.append({
            "estimator": est, "n": n,
            "grid": [float(v) for v in res.grid],
            "mse": [float(v) for v in res.mse_curve],
            "stderr": [float(v) for v in res.stderr_curve],
            "best_param": res.best_param, "best_mse": res.best_mse,
            "replicates": res.replicates, "failures": res.failures,
        })
        for gi in range(len(res.grid)):
            rows.append([est, n, float(res.grid[gi]), float(res.mse_curve[gi]),
                         float(res.stderr_curve[gi])])
    slopes = []
    for est in estimators:
        pts = sorted((r["n"], r["best_mse"]) for r in runs if r["estimator"] == est)
        if len(pts) >= 4 and max(v for _, v in pts) > 1e-10:
            slope, stderr = fit_loglog_slope([np.log(n) for n, _ in pts],
                                             [v for _, v in pts])
            slopes.append({"estimator": est, "slope": float(slope),
                           "stderr": float(stderr)})
    _write_json(os.path.join(args.out_dir, "report.json"),
                {"schema_version": SCHEMA_VERSION, "runs": runs, "slopes": slopes})
    _write_csv(os.path.join(args.out_dir, "report.csv"),
               ["estimator", "n", "param", "mse", "stderr"], rows)
    _write_json(os.path.join(args.out_dir, "config.json"),
                _resolved_config(args, ["scenario", "sizes", "replicates", "estimators",
                                        "d", "sigma2", "seed", "k", "eps_scale",
                                        "lambda_grid", "knnreg_grid", "threads"]))
    return EXIT_OK


def cmd_export_scenario(args):
    if args.scenario not in SCENARIO_NAMES:
        print(f"unknown scenario {args.scenario!r}; valid names: "
              f"{', '.join(SCENARIO_NAMES)}", file=sys.stderr)
        return EXIT_USAGE
    spec = ScenarioSpec(args.scenario, args.n, d=args.d, sigma2=args.sigma2, seed=args.seed)
    data = generate(spec)
    dataset_to_csv(data, args.out)
    _write_json(args.out + ".config.json",
                _resolved_config(args, ["scenario", "n", "d", "sigma2", "seed", "out"]))
    return EXIT_OK


def cmd_validate_theory(args):
    checks = [c.strip() for c in args.checks.split(",") if c.strip()]
    known = {"radius", "degree", "penalty", "embedding", "rate", "manifold"}
    bad = set(checks) - known
    if bad:
        print(f"unknown checks: {', '.join(sorted(bad))}; valid: "
              f"{', '.join(sorted(known))}", file=sys.stderr)
        return EXIT_USAGE
    sizes = _parse_int_list(args.sizes) if args.sizes else [500, 1000, 2000, 4000]
    results = []
    failed = False
    skipped = 0

    if "radius" in checks:
        for d in (1, 2, 3):
            rep = radius_scaling(d, polylog_k, sizes, args.replicates, seed=args.seed)
            target = -1.0 / d
            ok = abs(rep.slope - target) <= 0.1
            failed |= not ok
            results.append({"check": "radius", "d": d, "slope": rep.slope,
                            "stderr": rep.slope_stderr, "target": target,
                            "band": 0.1, "status": "pass" if ok else "fail"})

    if "degree" in checks:
        rng = np.random.default_rng(args.seed)
        worst = 0
        for _ in range(args.replicates):
            cloud = PointCloud(rng.uniform(size=(2000, 2)))
            dc = degree_check(cloud, 5)
            worst = max(worst, dc.max_degree)
            failed |= not dc.bound_ok
        results.append({"check": "degree", "d": 2, "k": 5, "max_degree": worst,
                        "bound": 6.0 * 5,
                        "status": "pass" if worst <= 30 else "fail"})

    if "penalty" in checks:
        for name, d, target in (("s1", 2, 0.5), ("s3", 3, 2.0 / 3.0)):
            rep = penalty_scaling(name, lambda n: 5, sizes, args.replicates,
                                  seed=args.seed, d=d)
            ok = rep.degenerate or abs(rep.slope - target) <= 0.12
            failed |= not ok
            results.append({"check": "penalty", "scenario": name, "slope": rep.slope,
                            "stderr": rep.slope_stderr, "target": target,
                            "band": 0.12, "status": "pass" if ok else "fail"})

    if "embedding" in checks:
        n, d = args.embed_n, 2
        k = log_squared_k(n)
        res = args.embed_resolution or lattice_resolution(n, k, d)
        viol = 0
        held = 0
        for s in range(args.embed_seeds):
            rng = np.random.default_rng(args.seed + s)
            cloud = PointCloud(rng.uniform(size=(n, d)))
            graph = build_knn_graph(cloud, k)
            theta = rng.normal(size=n)
            e = rng.normal(size=n)
            mesh = build_mesh(cloud, theta, res)
            chk = check_embedding_inequalities(mesh, graph, theta, e)
            if not chk.omega_holds:
                skipped += 1
                continue
            held += 1
            if not (chk.holds_1 and chk.holds_2):
                viol += 1
                failed = True
        results.append({"check": "embedding", "n": n, "k": k, "resolution": res,
                        "seeds": args.embed_seeds, "omega_held": held,
                        "omega_skipped": skipped, "violations": viol,
                        "status": "pass" if viol == 0 else "fail"})

    if "rate" in checks:
        rep = rate_experiment("s1", "knnfl", sizes, args.replicates, seed=args.seed)
        ok = rep.degenerate or (-0.8 <= rep.slope <= -0.3)
        failed |= not ok
        results.append({"check": "rate", "scenario": "s1", "estimator": "knnfl",
                        "slope": rep.slope, "stderr": rep.slope_stderr,
                        "band": [-0.8, -0.3],
                        "status": ("skip" if rep.degenerate else
                                   "pass" if ok else "fail")})

    if "manifold" in checks:
        mc = manifold_contrast(args.manifold_n, args.replicates, seed=args.seed)
        ok = mc.wins >= int(np.ceil(0.8 * mc.replicates))
        failed |= not ok
        results.append({"check": "manifold", "n_base": args.manifold_n,
                        "wins": mc.wins, "replicates": mc.replicates,
                        "mse_knnfl": mc.mse_knnfl, "mse_epsfl": mc.mse_epsfl,
                        "status": "pass" if ok else "fail"})

    os.makedirs(args.out_dir, exist_ok=True)
    _write_json(os.path.join(args.out_dir, "validation.json"),
                {"schema_version": SCHEMA_VERSION, "results": results})
    rows = [[r["check"], r.get("scenario", r.get("d", "")), r["status"]] for r in results]
    _write_csv(os.path.join(args.out_dir, "validation.csv"),
               ["check", "case", "status"], rows)
    _write_json(os.path.join(args.out_dir, "config.json"),
                _resolved_config(args, ["checks", "sizes", "replicates", "seed",
                                        "embed_n", "embed_seeds", "manifold_n"]))
    if skipped:
        print(f"warning: connectivity event failed on {skipped} seed(s); "
              "those inequalities were reported, not asserted", file=sys.stderr)
    return EXIT_ASSERT if failed else EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(prog="nnfl", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="JSON file with defaults; explicit flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model from a CSV with x columns and y")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=["knn", "epsilon"], default="knn")
    p.add_argument("--k", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict at query points from a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cv", help="k-fold cross-validation over a lambda grid")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=["knn", "epsilon"], default="knn")
    p.add_argument("--k", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--lambdas", help="comma-separated grid; default is auto")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="optimized-MSE sweep over scenario sizes")
    p.add_argument("--scenario", required=True)
    p.add_argument("--sizes", required=True, help="comma-separated sample sizes")
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--estimators", default="knnfl,knnreg")
    p.add_argument("--d", type=int)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, help="fixed K for knnfl (default: log^1.1 n)")
    p.add_argument("--eps-scale", type=float, default=1.0)
    p.add_argument("--lambda-grid", help="comma-separated lambda grid")
    p.add_argument("--knnreg-grid", help="comma-separated K grid for knnreg")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export-scenario", help="write a scenario draw to CSV")
    p.add_argument("--scenario", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_scenario)

    p = sub.add_parser("validate-theory", help="run scaling and embedding checks")
    p.add_argument("--checks", default="radius,degree,penalty,embedding")
    p.add_argument("--sizes", help="comma-separated sizes for scaling checks")
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embed-n", type=int, default=500)
    p.add_argument("--embed-seeds", type=int, default=10)
    p.add_argument("--embed-resolution", type=int,
                   help="override the lattice resolution recipe")
    p.add_argument("--manifold-n", type=int, default=1000)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_validate_theory)
    return parser


def _apply_config_file(parser, argv):
    """Load --config defaults, letting explicit flags win."""
    if "--config" not in argv:
        return argv
    pos = argv.index("--config")
    cfg_path = argv[pos + 1]
    with open(cfg_path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    rest = argv[:pos] + argv[pos + 2 :]
    injected = []
    for key, value in sorted(cfg.items()):
        flag = "--" + key.replace("_", "-")
        if flag in rest:
            continue
        injected.extend([flag, str(value)])
    # config-injected flags go after the subcommand, before explicit flags
    if rest:
        return rest[:1] + injected + rest[1:]
    return injected


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
        return args.func(args)
    except (DataFormatError,) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverFailureError as exc:
        sol = exc.solution
        gap = sol.duality_gap if sol is not None else float("nan")
        print(f"solver failure: {exc} (gap={gap:.3e})", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidParameterError, EmptyNeighborhoodError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except json.JSONDecodeError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
