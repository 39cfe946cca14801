import hashlib
import json
import os

import numpy as np
import pytest

from nnfl.cli import main
from nnfl.regression import load_model, predict_batch
from nnfl.scenarios import ScenarioSpec, generate, mse
from nnfl.regression import fit as fit_api


def run(*argv):
    return main(list(argv))


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture()
def train_csv(tmp_path):
    path = tmp_path / "train.csv"
    run("export-scenario", "--scenario", "s1", "--n", "60", "--seed", "4",
        "--out", str(path))
    return path


# ------------------------------------------------------------------------ fit

def test_fit_two_rows_lambda_zero(tmp_path):
    data = tmp_path / "tiny.csv"
    data.write_text("x1,y\n0.0,3.5\n1.0,-1.25\n")
    out = tmp_path / "out"
    assert run("fit", "--data", str(data), "--kind", "knn", "--k", "1",
               "--lam", "0.0", "--out-dir", str(out)) == 0
    doc = json.loads((out / "model.json").read_text())
    assert doc["theta_hat"] == [3.5, -1.25]
    assert doc["schema_version"] == 1
    assert (out / "config.json").exists()


def test_fit_missing_y_column(tmp_path):
    data = tmp_path / "nox.csv"
    data.write_text("x1,x2\n0.0,1.0\n")
    assert run("fit", "--data", str(data), "--k", "1", "--lam", "0.1",
               "--out-dir", str(tmp_path / "o")) == 2


def test_fit_malformed_csv(tmp_path):
    data = tmp_path / "bad.csv"
    data.write_text("x1,y\n0.0,1.0\nfoo,2.0\n")
    assert run("fit", "--data", str(data), "--k", "1", "--lam", "0.1",
               "--out-dir", str(tmp_path / "o")) == 2


def test_export_fit_matches_in_process(tmp_path, train_csv):
    out = tmp_path / "fitdir"
    assert run("fit", "--data", str(train_csv), "--kind", "knn", "--k", "5",
               "--lam", "1.5", "--out-dir", str(out)) == 0
    doc = json.loads((out / "model.json").read_text())
    data = generate(ScenarioSpec("s1", 60, seed=4))
    model = fit_api(data.cloud, data.y, "knn", 5, 1.5)
    assert doc["theta_hat"] == [float(v) for v in model.theta_hat]
    reported = json.loads((out / "insample_mse.json").read_text())["mse"]
    assert reported == mse(model.theta_hat, data.theta_star)


# -------------------------------------------------------------------- predict

def test_predict_training_points(tmp_path, train_csv):
    out = tmp_path / "fitdir"
    run("fit", "--data", str(train_csv), "--kind", "knn", "--k", "1",
        "--lam", "0.7", "--out-dir", str(out))
    preds = tmp_path / "preds.csv"
    assert run("predict", "--model", str(out / "model.json"),
               "--queries", str(train_csv), "--out", str(preds)) == 0
    lines = preds.read_text().splitlines()
    assert lines[1] == "prediction,error"
    got = [float(line.split(",")[0]) for line in lines[2:]]
    doc = json.loads((out / "model.json").read_text())
    np.testing.assert_allclose(got, doc["theta_hat"], atol=0)


def test_predict_empty_query_file(tmp_path, train_csv):
    out = tmp_path / "fitdir"
    run("fit", "--data", str(train_csv), "--k", "2", "--lam", "0.1",
        "--out-dir", str(out))
    q = tmp_path / "empty.csv"
    q.write_text("x1,x2\n")
    dest = tmp_path / "p.csv"
    assert run("predict", "--model", str(out / "model.json"),
               "--queries", str(q), "--out", str(dest)) == 0
    lines = dest.read_text().splitlines()
    assert lines[1] == "prediction,error"
    assert len(lines) == 2


def test_predict_batch_equals_looped_singles(tmp_path, train_csv):
    out = tmp_path / "fitdir"
    run("fit", "--data", str(train_csv), "--k", "3", "--lam", "0.4",
        "--out-dir", str(out))
    model = load_model(out / "model.json")
    rng = np.random.default_rng(0)
    queries = rng.uniform(size=(40, 2))
    batch, _ = predict_batch(model, queries)
    singles = np.array([predict_batch(model, q[None, :])[0][0] for q in queries])
    np.testing.assert_array_equal(batch, singles)


def test_predict_dimension_mismatch(tmp_path, train_csv):
    out = tmp_path / "fitdir"
    run("fit", "--data", str(train_csv), "--k", "2", "--lam", "0.1",
        "--out-dir", str(out))
    q = tmp_path / "bad.csv"
    q.write_text("x1,x2,x3\n0.1,0.2,0.3\n")
    assert run("predict", "--model", str(out / "model.json"),
               "--queries", str(q), "--out", str(tmp_path / "p.csv")) == 2


def test_predict_flags_empty_epsilon_balls(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("x1,y\n0.0,1.0\n0.05,2.0\n")
    out = tmp_path / "m"
    run("fit", "--data", str(data), "--kind", "epsilon", "--eps", "0.2",
        "--lam", "0.0", "--out-dir", str(out))
    q = tmp_path / "q.csv"
    q.write_text("x1\n0.01\n9.5\n")
    dest = tmp_path / "p.csv"
    assert run("predict", "--model", str(out / "model.json"),
               "--queries", str(q), "--out", str(dest)) == 0
    lines = dest.read_text().splitlines()
    assert lines[2].endswith(",")                # in-ball row: no error
    assert lines[3].endswith(",empty_neighborhood")


# ------------------------------------------------------------------------- cv

def test_cv_writes_report_and_model(tmp_path, train_csv):
    out = tmp_path / "cv"
    assert run("cv", "--data", str(train_csv), "--k", "4",
               "--lambdas", "0.2,1.0,5.0", "--folds", "3", "--seed", "9",
               "--out-dir", str(out)) == 0
    rep = json.loads((out / "cv_report.json").read_text())
    assert rep["lambdas"] == [0.2, 1.0, 5.0]
    assert rep["selected_lambda"] in rep["lambdas"]
    assert len(rep["fold_mse"]) == 3
    model = json.loads((out / "model.json").read_text())
    assert model["lambda"] == rep["selected_lambda"]


# ------------------------------------------------------------------- simulate

def test_simulate_single_cell(tmp_path):
    out = tmp_path / "sim"
    assert run("simulate", "--scenario", "s1", "--sizes", "80",
               "--replicates", "1", "--estimators", "knnfl", "--k", "3",
               "--lambda-grid", "1.0", "--out-dir", str(out)) == 0
    rep = json.loads((out / "report.json").read_text())
    assert len(rep["runs"]) == 1
    assert rep["runs"][0]["best_param"] == 1.0
    rows = (out / "report.csv").read_text().splitlines()
    assert rows[0] == "# schema_version=1"
    assert len(rows) == 3  # comment, header, one data row


def test_simulate_unknown_scenario(tmp_path):
    assert run("simulate", "--scenario", "zzz", "--sizes", "10",
               "--out-dir", str(tmp_path / "x")) == 1


def test_simulate_knnfl_beats_knnreg(tmp_path):
    out = tmp_path / "sweep"
    assert run("simulate", "--scenario", "s1", "--sizes", "300",
               "--replicates", "3", "--estimators", "knnfl,knnreg", "--k", "5",
               "--lambda-grid", "0.5,1,2,4,8", "--knnreg-grid", "1,2,3,5,8,12,20",
               "--seed", "1", "--out-dir", str(out)) == 0
    runs = {r["estimator"]: r for r in json.loads((out / "report.json").read_text())["runs"]}
    assert runs["knnfl"]["best_mse"] < runs["knnreg"]["best_mse"]


# ------------------------------------------------------------ validate-theory

def test_validate_theory_degree(tmp_path):
    out = tmp_path / "vt"
    assert run("validate-theory", "--checks", "degree", "--replicates", "2",
               "--out-dir", str(out)) == 0
    doc = json.loads((out / "validation.json").read_text())
    assert doc["results"][0]["check"] == "degree"
    assert doc["results"][0]["status"] == "pass"


def test_validate_theory_embedding_small(tmp_path):
    out = tmp_path / "vt"
    assert run("validate-theory", "--checks", "embedding", "--embed-n", "300",
               "--embed-seeds", "3", "--out-dir", str(out)) == 0
    res = json.loads((out / "validation.json").read_text())["results"][0]
    assert res["violations"] == 0


def test_validate_theory_misset_resolution_skips(tmp_path, capsys):
    # deliberately mis-set lattice resolution (far too coarse): same-cell
    # points are not all graph-connected, so the connectivity event fails,
    # inequalities are skipped, and the run still exits 0 with a warning
    out = tmp_path / "vt"
    code = run("validate-theory", "--checks", "embedding", "--embed-n", "80",
               "--embed-seeds", "2", "--embed-resolution", "1",
               "--out-dir", str(out))
    assert code == 0
    res = json.loads((out / "validation.json").read_text())["results"][0]
    assert res["omega_held"] == 0 and res["omega_skipped"] == 2
    assert "connectivity event failed" in capsys.readouterr().err


def test_validate_theory_unknown_check(tmp_path):
    assert run("validate-theory", "--checks", "bogus",
               "--out-dir", str(tmp_path / "x")) == 1


# ------------------------------------------------------------ infrastructure

def test_usage_error_exit_code(tmp_path):
    assert run("fit", "--data", "x.csv") == 1      # missing required flags
    assert run("not-a-command") == 1


def test_config_file_flags_win(tmp_path, train_csv):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"data": str(train_csv), "k": 2, "lam": 0.3,
                               "out_dir": str(tmp_path / "from_cfg")}))
    out_flag = tmp_path / "from_flag"
    assert run("--config", str(cfg), "fit", "--out-dir", str(out_flag)) == 0
    assert (out_flag / "model.json").exists()
    cfg_doc = json.loads((out_flag / "config.json").read_text())
    assert cfg_doc["k"] == 2 and cfg_doc["lam"] == 0.3


def test_rerun_outputs_byte_identical(tmp_path, train_csv):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        run("fit", "--data", str(train_csv), "--k", "3", "--lam", "0.9",
            "--out-dir", str(out))
        outs.append(out)
    for name in ("model.json", "diagnostics.json", "insample_mse.json"):
        assert sha(outs[0] / name) == sha(outs[1] / name)


def test_solver_failure_exit_code(tmp_path, monkeypatch, train_csv):
    import nnfl.regression as regression_mod
    from nnfl.errors import SolverFailureError
    from nnfl.solver import TvSolution

    def broken(problem, tol=1e-9, warm_theta=None):
        raise SolverFailureError(
            "synthetic", solution=TvSolution(problem.y.copy(), 1.0, 0.0, problem.lam)
        )

    monkeypatch.setattr(regression_mod, "solve", broken)
    assert run("fit", "--data", str(train_csv), "--k", "2", "--lam", "0.5",
               "--out-dir", str(tmp_path / "o")) == 3
