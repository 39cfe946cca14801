"""End-to-end nearest-neighbor fused-lasso regression.

fit() chains graph construction and the TV solver; predict() averages the
fitted values over the query's neighborhood (K nearest training points, or
training points strictly within eps); kfold_cv() selects lambda by k-fold
cross-validation on held-out prediction error.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyNeighborhoodError, InvalidParameterError
from .graphs import (
    PointCloud,
    build_epsilon_graph,
    build_knn_graph,
    nearest_neighbor_sets,
    read_numeric_csv,
)
from .scenarios import default_lambda_grid
from .solver import TvProblem, solve, solve_path


@dataclass
class FittedModel:
    cloud: PointCloud
    kind: str            # "knn" | "epsilon"
    param: float         # K or eps
    lam: float
    theta_hat: np.ndarray
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.theta_hat) != self.cloud.n:
            raise InvalidParameterError("theta_hat length must equal the training size")


def _build_graph(cloud, kind, param):
    if kind == "knn":
        return build_knn_graph(cloud, int(param))
    if kind == "epsilon":
        return build_epsilon_graph(cloud, float(param))
    raise InvalidParameterError(f"unknown graph kind {kind!r}")


def fit(cloud: PointCloud, y, kind: str, param, lam: float,
        tol: float = 1e-9) -> FittedModel:
    graph = _build_graph(cloud, kind, param)
    sol = solve(TvProblem(y=np.asarray(y, dtype=np.float64), lam=lam, graph=graph), tol=tol)
    return FittedModel(cloud=cloud, kind=kind, param=param, lam=float(lam),
                       theta_hat=sol.theta_hat, diagnostics=sol.to_diagnostics())


def predict_batch(model: FittedModel, queries, empty_ball: str = "error"):
    """Neighborhood-average predictions for a batch of query points.

    Returns (values, empty_mask). For epsilon models a query with no
    training point strictly inside the ball either raises
    EmptyNeighborhoodError (empty_ball='error') or falls back to the single
    nearest training point (empty_ball='nearest'), with the event flagged.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.size == 0:
        queries = queries.reshape(0, model.cloud.dim)
    if queries.shape[1] != model.cloud.dim:
        raise InvalidParameterError(
            f"query dimension {queries.shape[1]} != training dimension {model.cloud.dim}"
        )
    nq = queries.shape[0]
    values = np.empty(nq)
    empty = np.zeros(nq, dtype=bool)
    if nq == 0:
        return values, empty
    pts = model.cloud.points
    if model.kind == "knn":
        k = min(int(model.param), model.cloud.n)
        nbrs = nearest_neighbor_sets(pts, queries, k)
        values[:] = model.theta_hat[nbrs].mean(axis=1)
        return values, empty
    eps = float(model.param)
    tree = cKDTree(pts)
    hits = tree.query_ball_point(queries, eps)
    for i in range(nq):
        idx = np.asarray(hits[i], dtype=np.int64)
        if idx.size:
            d2 = ((pts[idx] - queries[i]) ** 2).sum(axis=1)
            idx = idx[d2 < eps * eps]  # strict inequality
        if idx.size:
            values[i] = model.theta_hat[idx].mean()
        else:
            empty[i] = True
            if empty_ball == "error":
                raise EmptyNeighborhoodError(
                    f"no training point within {eps} of query row {i}"
                )
    if empty.any():
        nn = nearest_neighbor_sets(pts, queries[empty], 1)
        values[empty] = model.theta_hat[nn[:, 0]]
    return values, empty


def predict(model: FittedModel, query) -> float:
    """Prediction at a single point; raises on an empty epsilon ball."""
    values, _ = predict_batch(model, np.asarray(query, dtype=np.float64).reshape(1, -1))
    return float(values[0])


def knn_regression(cloud: PointCloud, y, k: int, query):
    """Plain K-NN regression: mean of y over the K nearest training points
    (a zero-distance training point counts as a neighbor)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != cloud.n:
        raise InvalidParameterError("y length must equal the training size")
    if not 1 <= k <= cloud.n:
        raise InvalidParameterError(f"K must satisfy 1 <= K <= n, got {k}")
    q = np.asarray(query, dtype=np.float64)
    scalar = q.ndim == 1
    nbrs = nearest_neighbor_sets(cloud.points, q.reshape(-1, cloud.dim), k)
    vals = y[nbrs].mean(axis=1)
    return float(vals[0]) if scalar else vals


@dataclass
class CvReport:
    lambdas: np.ndarray
    fold_mse: np.ndarray          # (folds, len(lambdas))
    mean_mse: np.ndarray
    selected_lambda: float
    seed: int
    fold_assignment: np.ndarray = field(repr=False)
    empty_ball_fallbacks: int = 0

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "lambdas": [float(v) for v in self.lambdas],
            "fold_mse": [[float(v) for v in row] for row in self.fold_mse],
            "mean_mse": [float(v) for v in self.mean_mse],
            "selected_lambda": float(self.selected_lambda),
            "seed": int(self.seed),
            "fold_assignment": [int(v) for v in self.fold_assignment],
            "empty_ball_fallbacks": int(self.empty_ball_fallbacks),
        }


def kfold_cv(cloud: PointCloud, y, kind: str, param, lambdas=None,
             folds: int = 5, seed: int = 0, tol: float = 1e-9) -> CvReport:
    """Select lambda by k-fold cross-validation on held-out prediction MSE.

    Folds come from a seeded uniform permutation. Empty epsilon balls at
    validation time fall back to the nearest training neighbor and are
    counted in the report. Ties in mean validation MSE resolve to the
    smallest lambda.
    """
    y = np.asarray(y, dtype=np.float64)
    n = cloud.n
    if y.shape[0] != n:
        raise InvalidParameterError("y length must equal the training size")
    if folds < 2:
        raise InvalidParameterError("folds must be >= 2")
    if folds > n:
        raise InvalidParameterError("folds must not exceed n")
    if lambdas is None:
        lambdas = default_lambda_grid(y)
    lambdas = np.unique(np.asarray(lambdas, dtype=np.float64))
    if lambdas.size == 0:
        raise InvalidParameterError("lambda grid must be non-empty")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    for f, chunk in enumerate(np.array_split(perm, folds)):
        assignment[chunk] = f

    desc = lambdas[::-1]
    fold_mse = np.empty((folds, lambdas.size))
    fallbacks = 0
    for f in range(folds):
        val_mask = assignment == f
        train_idx = np.flatnonzero(~val_mask)
        val_idx = np.flatnonzero(val_mask)
        train_cloud = PointCloud(cloud.points[train_idx])
        graph = _build_graph(train_cloud, kind, param)
        sols = solve_path(y[train_idx], graph, desc, tol=tol)
        for pos, sol in enumerate(sols):
            model = FittedModel(cloud=train_cloud, kind=kind, param=param,
                                lam=desc[pos], theta_hat=sol.theta_hat)
            preds, empty = predict_batch(model, cloud.points[val_idx],
                                         empty_ball="nearest")
            fallbacks += int(empty.sum())
            fold_mse[f, lambdas.size - 1 - pos] = float(
                np.mean((preds - y[val_idx]) ** 2)
            )
    mean_mse = fold_mse.mean(axis=0)
    selected = float(lambdas[int(np.argmin(mean_mse))])
    return CvReport(lambdas=lambdas, fold_mse=fold_mse, mean_mse=mean_mse,
                    selected_lambda=selected, seed=seed,
                    fold_assignment=assignment, empty_ball_fallbacks=fallbacks)


def model_to_json_dict(model: FittedModel, cloud_ref: str) -> dict:
    return {
        "schema_version": 1,
        "kind": model.kind,
        "params": {"K": int(model.param)} if model.kind == "knn" else {"eps": float(model.param)},
        "lambda": float(model.lam),
        "d": int(model.cloud.dim),
        "theta_hat": [float(v) for v in model.theta_hat],
        "cloud_ref": cloud_ref,
    }


def save_model(model: FittedModel, path, cloud_ref: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json_dict(model, cloud_ref), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path) -> FittedModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    cloud_ref = doc["cloud_ref"]
    if not os.path.isabs(cloud_ref):
        cloud_ref = os.path.join(os.path.dirname(os.path.abspath(path)), cloud_ref)
    data, header = read_numeric_csv(cloud_ref)
    if header is not None:
        xcols = [i for i, name in enumerate(header) if name not in ("y", "theta_star", "label")]
        points = data[:, xcols]
    else:
        d = int(doc.get("d", data.shape[1]))
        points = data[:, :d]
    kind = doc["kind"]
    param = doc["params"]["K"] if kind == "knn" else doc["params"]["eps"]
    return FittedModel(cloud=PointCloud(points), kind=kind, param=param,
                       lam=float(doc["lambda"]),
                       theta_hat=np.asarray(doc["theta_hat"], dtype=np.float64))
