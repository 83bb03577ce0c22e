import json
import subprocess
import sys

import numpy as np
import pytest

from sdrgraph import io as sio
from sdrgraph.cli import EXIT_INFEASIBLE, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_OK, main
from sdrgraph.harness import predictive_loglik
from sdrgraph.model import sample_covariance


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    args = ["simulate", "--p", "6", "--q", "2", "--rank-k", "1", "--latent-h", "1", "--degree", "1",
            "--n", "3000", "--seed", "4", "--out-pop", str(d / "pop.json"),
            "--out-data", str(d / "data.csv"), "--out-columns", str(d / "cols.json")]
    assert main(args) == EXIT_OK
    return d


def _fit(sim, out, *extra, model="sdr-lvgm", lam="0.05"):
    return main(["fit", "--model", model, "--data", str(sim / "data.csv"), "--responses",
                 "@" + str(sim / "cols.json"), "--lambda", lam, "--out", str(out), *extra])


def _run_json(capsys, argv):
    capsys.readouterr()
    assert main(argv) == EXIT_OK
    return json.loads(capsys.readouterr().out)


def test_simulate_outputs(sim):
    header, data = sio.read_csv(sim / "data.csv")
    assert header == [f"y{i}" for i in range(6)] + ["x0", "x1"]
    assert data.shape == (3000, 8)
    cols = json.loads((sim / "cols.json").read_text())
    assert cols == {"responses": header[:6], "covariates": header[6:]}
    pop = json.loads((sim / "pop.json").read_text())
    assert pop["format_version"] == 1


def test_simulate_deterministic(sim, tmp_path):
    args = ["simulate", "--p", "6", "--q", "2", "--rank-k", "1", "--latent-h", "1", "--degree", "1",
            "--n", "3000", "--seed", "4", "--out-pop", str(tmp_path / "pop.json"),
            "--out-data", str(tmp_path / "data.csv")]
    assert main(args) == EXIT_OK
    for name in ("pop.json", "data.csv"):
        assert (tmp_path / name).read_bytes() == (sim / name).read_bytes()


def test_simulate_without_structure(tmp_path):
    args = ["simulate", "--p", "4", "--q", "2", "--n", "50", "--seed", "1",
            "--out-pop", str(tmp_path / "pop.json"), "--out-data", str(tmp_path / "d.csv")]
    assert main(args) == EXIT_OK
    pop = json.loads((tmp_path / "pop.json").read_text())
    assert np.allclose(np.array(pop["theta_YX"]), 0.0)


def test_fit_report_round_trip(sim, tmp_path, capsys):
    out = tmp_path / "m.json"
    assert _fit(sim, out, "--delta", "0.5", "--no-diag-penalty", "--covariates", "x0,x1") == EXIT_OK
    stdout = capsys.readouterr().out
    model = sio.load_model(out)
    assert f"objective:    {model.objective!r}" in stdout
    rep = _run_json(capsys, ["report", "--model", str(out), "--json"])
    assert rep["objective_recomputed"] == pytest.approx(rep["objective"], rel=1e-12)
    assert rep["edge_count"] == len(model.edges)
    assert rep["latent_rank"] == model.latent_rank and rep["cross_rank"] == model.cross_rank
    assert rep["parameters"]["total"] == model.complexity.total
    raw = json.loads(out.read_text())
    assert raw["objective"] == model.objective
    ev = main(["evaluate", "--model", str(out), "--data", str(sim / "data.csv")])
    assert ev == EXIT_OK
    line = [s for s in capsys.readouterr().out.splitlines() if s.startswith("average")][0]
    _, data = sio.read_csv(sim / "data.csv")
    want = predictive_loglik(model, data, 6, 2)
    assert float(line.split(":")[1]) == want


def test_fit_lambda_zero_is_inverse_covariance(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.standard_normal((40, 3)) @ np.array([[1.0, 0.3, 0.0], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]])
    sio.write_csv(tmp_path / "t.csv", ["a", "b", "c"], data)
    out = tmp_path / "m.json"
    rc = main(["fit", "--model", "sdr-gm", "--data", str(tmp_path / "t.csv"), "--responses", "a,b",
               "--covariates", "c", "--lambda", "0", "--tol", "1e-11", "--out", str(out)])
    assert rc == EXIT_OK
    theta = sio.load_model(out).theta.theta
    np.testing.assert_allclose(theta, np.linalg.inv(sample_covariance(data)), atol=1e-6)


def test_report_sorts_edges(sim, tmp_path, capsys):
    out = tmp_path / "m.json"
    assert _fit(sim, out, model="sdr-gm", lam="0.0") == EXIT_OK
    d = json.loads(out.read_text())
    vals = {(0, 1): 0.1, (2, 3): -0.5, (1, 4): 0.3}
    d["s_Y"] = [[i, i, 1.0] for i in range(6)] + [[i, j, v] for (i, j), v in vals.items()]
    d["support"]["edges"] = [list(e) for e in vals]
    (tmp_path / "e.json").write_text(json.dumps(d))
    rep = _run_json(capsys, ["report", "--model", str(tmp_path / "e.json"), "--json"])
    assert [(e["i"], e["j"], e["value"]) for e in rep["edges"]] == [
        ("y2", "y3", -0.5), ("y1", "y4", 0.3), ("y0", "y1", 0.1)]
    capsys.readouterr()
    assert main(["report", "--model", str(tmp_path / "e.json"), "--top", "1"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "y2 -- y3" in text and "y1 -- y4" not in text


def test_report_compare_with_itself(sim, tmp_path, capsys):
    out = tmp_path / "m.json"
    assert _fit(sim, out, "--covariates", "x0,x1", "--delta", "0.5") == EXIT_OK
    rep = _run_json(capsys, ["report", "--model", str(out), "--compare", str(out), "--json"])
    c = rep["compare"]
    assert np.allclose(c["principal_angles_deg"], 0.0, atol=1e-5)
    assert c["edges_only_first"] == c["edges_only_second"] == 0 and c["jaccard"] == 1.0


def test_fit_standardize(sim, tmp_path):
    out = tmp_path / "m.json"
    assert _fit(sim, out, "--covariates", "x0,x1", "--standardize") == EXIT_OK
    model = sio.load_model(out)
    assert model.standardization is not None
    np.testing.assert_allclose(np.diag(model.sigma_n), 1.0, atol=1e-12)
    assert main(["evaluate", "--model", str(out), "--data", str(sim / "data.csv")]) == EXIT_OK


def test_column_sparse_fit_reports_covariates(sim, tmp_path, capsys):
    out = tmp_path / "m.json"
    assert _fit(sim, out, "--covariates", "x0,x1", model="cs-lvgm") == EXIT_OK
    rep = _run_json(capsys, ["report", "--model", str(out), "--json"])
    assert set(rep["covariates"]) <= {"x0", "x1"}


# -- exit codes ---------------------------------------------------------------------


def test_exit_missing_column(sim, tmp_path):
    assert _fit(sim, tmp_path / "m.json", "--covariates", "x0,nope") == EXIT_INPUT
    assert not (tmp_path / "m.json").exists()


def test_exit_bad_cell(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n3,oops\n")
    rc = main(["fit", "--model", "sdr-gm", "--data", str(tmp_path / "bad.csv"), "--responses", "a",
               "--covariates", "b", "--lambda", "0.1", "--out", str(tmp_path / "m.json")])
    assert rc == EXIT_INPUT


def test_exit_usage_errors(sim, tmp_path):
    assert _fit(sim, tmp_path / "m.json", model="nonsense") == EXIT_INPUT
    assert main(["fit"]) == EXIT_INPUT
    assert _fit(sim, tmp_path / "m.json", lam="-1") == EXIT_INPUT
    assert main(["evaluate", "--model", str(tmp_path / "missing.json"), "--data", "x.csv"]) == EXIT_INPUT


def test_exit_infeasible_spec(tmp_path):
    args = ["simulate", "--p", "3", "--q", "1", "--rank-k", "2", "--n", "10",
            "--out-pop", str(tmp_path / "p.json"), "--out-data", str(tmp_path / "d.csv")]
    assert main(args) == EXIT_INFEASIBLE


def test_exit_singular_unpenalized(tmp_path):
    sio.write_csv(tmp_path / "t.csv", ["a", "b", "c"], np.random.default_rng(0).standard_normal((2, 3)))
    rc = main(["fit", "--model", "sdr-gm", "--data", str(tmp_path / "t.csv"), "--responses", "a,b",
               "--covariates", "c", "--lambda", "0", "--out", str(tmp_path / "m.json")])
    assert rc == EXIT_INFEASIBLE


def test_exit_nonconverged(sim, tmp_path):
    out = tmp_path / "m.json"
    assert _fit(sim, out, "--max-iters", "3") == EXIT_NONCONVERGED
    assert sio.load_model(out).solver["converged"] is False


def test_evaluate_missing_column(sim, tmp_path):
    out = tmp_path / "m.json"
    assert _fit(sim, out, "--covariates", "x0,x1") == EXIT_OK
    header, data = sio.read_csv(sim / "data.csv")
    sio.write_csv(tmp_path / "short.csv", header[:-1], data[:, :-1])
    assert main(["evaluate", "--model", str(out), "--data", str(tmp_path / "short.csv")]) == EXIT_INPUT


def test_corrupt_model_file(sim, tmp_path):
    out = tmp_path / "m.json"
    assert _fit(sim, out) == EXIT_OK
    d = json.loads(out.read_text())
    d["support"]["edges"].append([0, 5]) if [0, 5] not in d["support"]["edges"] else d["support"]["edges"].remove([0, 5])
    (tmp_path / "bad.json").write_text(json.dumps(d))
    assert main(["report", "--model", str(tmp_path / "bad.json")]) == EXIT_INPUT
    (tmp_path / "junk.json").write_text("{")
    assert main(["report", "--model", str(tmp_path / "junk.json")]) == EXIT_INPUT


# -- experiments ----------------------------------------------------------------------


def test_verify_parallel_identical(sim, tmp_path, capsys):
    base = ["verify", "--pop", str(sim / "pop.json"), "--n-grid", "300,600", "--trials", "2",
            "--c", "1.0", "--delta", "0.5"]
    assert main(base + ["--jobs", "1", "--out", str(tmp_path / "a.csv")]) == EXIT_OK
    assert main(base + ["--jobs", "2", "--out", str(tmp_path / "b.csv")]) == EXIT_OK
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    summary = json.loads((tmp_path / "a.json").read_text())
    assert summary["n_grid"] == [300, 600] and summary["trials"] == 2
    assert "log-log slope" in capsys.readouterr().out


def test_diagnose_smoke(tmp_path, capsys):
    assert main(["simulate", "--p", "3", "--q", "1", "--rank-k", "1", "--degree", "1", "--n", "10",
                 "--out-pop", str(tmp_path / "p.json"), "--out-data", str(tmp_path / "d.csv")]) == EXIT_OK
    rc = main(["diagnose", "--pop", str(tmp_path / "p.json"), "--alpha", "1", "--nu", "0.25",
               "--omega-y", "0.1", "--omega-yx", "0.1", "--samples", "1", "--out", str(tmp_path / "r.json")])
    assert rc == EXIT_OK
    rep = json.loads((tmp_path / "r.json").read_text())
    assert {e["name"] for e in rep["quantities"]} >= {"chi_phi", "varphi_phi", "deg", "eta1", "eta2", "eta3"}
    assert "parameter set V nonempty" in capsys.readouterr().out


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sdrgraph.cli", "report", "--model",
                           str(tmp_path / "none.json")], capture_output=True, text=True)
    assert proc.returncode == EXIT_INPUT
    assert "error" in proc.stderr
