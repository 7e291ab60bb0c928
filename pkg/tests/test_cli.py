import csv
import json

import numpy as np
import pytest

from sarme.cli import fit_report, main, preset_path, report_json
from sarme.design import ObservedDesign, assemble_omega, shared_omega
from sarme.estimator import fit_meqmle
from sarme.mecov import ReplicateSet, ase_embed, estimate_from_replicates, rdpg_row_covariances
from sarme.simgen import substream
from sarme.weights import build_row_normalized


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        w.writerows(rows)


@pytest.fixture
def dataset(tmp_path):
    """Small SAR dataset with one error-prone and one clean covariate."""
    rng = substream(77, 0)
    n = 60
    A = np.triu(rng.random((n, n)) < 0.15, 1).astype(float)
    A = A + A.T
    A[0, 1] = A[1, 0] = 1.0  # no isolated first node
    weights = build_row_normalized(A)
    X = rng.standard_normal((n, 2))
    delta_true = np.array([1.0, -0.5])
    S = np.eye(n) - 0.3 * weights.L
    Y = np.linalg.solve(S, X @ delta_true + 0.5 * rng.standard_normal(n))
    sigma_xi = np.array([[0.2]])
    X_tilde = X.copy()
    X_tilde[:, 0] += np.sqrt(0.2) * rng.standard_normal(n)

    wpath = tmp_path / "w.csv"
    np.savetxt(wpath, A, delimiter=",")
    ypath = tmp_path / "y.csv"
    write_csv(ypath, ["y"], [[repr(float(v))] for v in Y])
    xpath = tmp_path / "x.csv"
    write_csv(xpath, ["u1", "z1"], [[repr(float(a)), repr(float(b))] for a, b in X_tilde])
    dpath = tmp_path / "delta.csv"
    write_csv(dpath, ["d11"], [[repr(0.2)]])
    return {"tmp": tmp_path, "w": wpath, "y": ypath, "x": xpath, "delta": dpath,
            "weights": weights, "Y": Y, "X_tilde": X_tilde, "sigma_xi": sigma_xi,
            "X": X, "rng_seed": 77, "n": n}


def run_cli(args, capsys):
    code = main(args)
    out = capsys.readouterr().out
    return code, out


def test_fit_no_correction_matches_library(dataset, capsys):
    code, out = run_cli(["fit", "--outcome", str(dataset["y"]),
                         "--covariates", str(dataset["x"]),
                         "--weights", str(dataset["w"])], capsys)
    assert code == 0
    report = json.loads(out)
    assert report["correction"] == "none"
    design = ObservedDesign(dataset["X_tilde"], d1=0, d2=2,
                            column_names=("u1", "z1"))
    expected = fit_meqmle(dataset["Y"], dataset["weights"], design, None)
    lib_report = fit_report(expected, design, correction="none", se="sandwich")
    assert out.strip() == report_json(lib_report).strip()


def test_fit_known_delta(dataset, capsys):
    out_path = dataset["tmp"] / "report.json"
    code, out = run_cli(["fit", "--outcome", str(dataset["y"]),
                         "--covariates", str(dataset["x"]),
                         "--weights", str(dataset["w"]),
                         "--error-prone", "u1",
                         "--delta", str(dataset["delta"]),
                         "--output", str(out_path)], capsys)
    assert code == 0
    report = json.loads(out_path.read_text())
    assert report["correction"] == "known-delta"
    assert report["d1"] == 1 and report["d2"] == 1
    design = ObservedDesign(dataset["X_tilde"], d1=1, d2=1,
                            column_names=("u1", "z1"))
    me = shared_omega(dataset["sigma_xi"], d2=1, n=dataset["n"])
    expected = fit_meqmle(dataset["Y"], dataset["weights"], design, me)
    assert report["estimates"]["u1"] == pytest.approx(expected.params.delta[0])
    assert report["estimates"]["rho"] == pytest.approx(expected.params.rho)
    assert report["std_errors"]["u1"] == pytest.approx(expected.std_errors[0])
    lo, hi = report["conf_int_95"]["u1"]
    z = 1.959963984540054
    assert lo == pytest.approx(expected.params.delta[0] - z * expected.std_errors[0])
    # correction moves the slope away from the attenuated uncorrected value
    uncorr = fit_meqmle(dataset["Y"], dataset["weights"], design, None)
    assert abs(expected.params.delta[0]) > abs(uncorr.params.delta[0])


def test_fit_with_replicates_uses_inflated_se(dataset, capsys):
    rng = substream(78, 0)
    n, k = dataset["n"], 3
    reps = dataset["X"][:, :1][:, None, :] + np.sqrt(0.2) * rng.standard_normal((n, k, 1))
    rpath = dataset["tmp"] / "reps.csv"
    rows = [[i, j, repr(float(reps[i, j, 0]))] for i in range(n) for j in range(k)]
    write_csv(rpath, ["obs_id", "rep_id", "u1"], rows)
    code, out = run_cli(["fit", "--outcome", str(dataset["y"]),
                         "--covariates", str(dataset["x"]),
                         "--weights", str(dataset["w"]),
                         "--error-prone", "u1",
                         "--replicates", str(rpath)], capsys)
    assert code == 0
    report = json.loads(out)
    assert report["correction"] == "replicates"
    assert report["se"] == "inflated"
    # reproduce through the library
    u_tilde, delta_hat, C_hat = estimate_from_replicates(ReplicateSet(reps))
    X = np.column_stack([u_tilde[:, 0], dataset["X_tilde"][:, 1]])
    design = ObservedDesign(X, d1=1, d2=1)
    me = shared_omega(delta_hat, d2=1, n=n, C_delta=C_hat)
    expected = fit_meqmle(dataset["Y"], dataset["weights"], design, me)
    assert report["estimates"]["u1"] == pytest.approx(expected.params.delta[0])
    assert report["std_errors"]["u1"] == pytest.approx(expected.std_errors[0])


def test_fit_missing_file_exits_2(dataset, capsys):
    code, out = run_cli(["fit", "--outcome", "/nonexistent.csv",
                         "--covariates", str(dataset["x"]),
                         "--weights", str(dataset["w"])], capsys)
    assert code == 2
    report = json.loads(out)
    assert report["error"]["code"] == "file-error"


def test_fit_row_mismatch_exits_2(dataset, tmp_path, capsys):
    short = tmp_path / "short.csv"
    write_csv(short, ["y"], [[1.0], [2.0]])
    code, out = run_cli(["fit", "--outcome", str(short),
                         "--covariates", str(dataset["x"]),
                         "--weights", str(dataset["w"])], capsys)
    assert code == 2
    assert "row mismatch" in json.loads(out)["error"]["message"]


def test_fit_unknown_error_prone_column(dataset, capsys):
    code, out = run_cli(["fit", "--outcome", str(dataset["y"]),
                         "--covariates", str(dataset["x"]),
                         "--weights", str(dataset["w"]),
                         "--error-prone", "nope"], capsys)
    assert code == 2
    assert "nope" in json.loads(out)["error"]["message"]


def test_simulate_requires_seed(tmp_path, capsys):
    raw = json.loads(preset_path("smoke").read_text())
    del raw["seed"]
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(raw))
    code, out = run_cli(["simulate", "--config", str(cfg)], capsys)
    assert code == 2
    assert json.loads(out)["error"]["code"] == "invalid-config"


def test_simulate_bad_schema_names_field(tmp_path, capsys):
    raw = json.loads(preset_path("smoke").read_text())
    raw["n_reps"] = 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(raw))
    code, out = run_cli(["simulate", "--config", str(cfg)], capsys)
    assert code == 2
    report = json.loads(out)
    assert "n_reps" in report["error"]["message"]


def test_simulate_smoke_preset_writes_outputs(tmp_path, capsys):
    csv_path = tmp_path / "s.csv"
    json_path = tmp_path / "s.json"
    code, out = run_cli(["simulate", "--preset", "smoke",
                         "--csv", str(csv_path), "--json", str(json_path)], capsys)
    assert code == 0
    assert "estimator" in out  # printed table header
    payload = json.loads(json_path.read_text())
    assert payload["schema"] == 1
    assert csv_path.read_text().splitlines()[0] == "estimator,n,tau,parameter,metric,value"


def test_embed_complete_graph_constant_column(tmp_path, capsys):
    n = 12
    A = np.ones((n, n)) - np.eye(n)
    wpath = tmp_path / "w.csv"
    np.savetxt(wpath, A, delimiter=",")
    code, out = run_cli(["embed", "--weights", str(wpath), "-d", "1",
                         "--output-prefix", str(tmp_path / "emb")], capsys)
    assert code == 0
    report = json.loads(out)
    assert report["n"] == n and report["d"] == 1
    u = np.loadtxt(tmp_path / "emb_u.csv", delimiter=",", skiprows=1)
    assert np.allclose(u, np.sqrt((n - 1) / n), atol=1e-12)
    with open(tmp_path / "emb_delta.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["obs_id", "d11"]
    assert len(rows) == n + 1


def test_embed_rank_deficient_exits_3(tmp_path, capsys):
    A = np.zeros((6, 6))
    A[0, 1] = A[1, 0] = 1.0
    A[2, 3] = A[3, 2] = 1.0
    wpath = tmp_path / "w.csv"
    np.savetxt(wpath, A, delimiter=",")
    code, out = run_cli(["embed", "--weights", str(wpath), "-d", "5",
                         "--output-prefix", str(tmp_path / "emb")], capsys)
    assert code == 3
    assert "eigenvalue" in json.loads(out)["error"]["message"]


def test_embed_then_fit_matches_library_pipeline(dataset, capsys, tmp_path):
    # build an RDPG-style network, embed via the CLI, then feed the outputs
    # back into fit; the result must equal the all-library pipeline
    rng = substream(79, 0)
    n = 80
    U_true = rng.uniform(0.4, 0.8, size=(n, 1))
    P = np.clip(U_true @ U_true.T, 0, 1)
    A = (rng.random((n, n)) < P).astype(float)
    A = np.triu(A, 1)
    A = A + A.T
    weights = build_row_normalized(A)
    Z = rng.standard_normal((n, 1))
    S = np.eye(n) - 0.2 * weights.L
    Y = np.linalg.solve(S, U_true[:, 0] * 1.0 + Z[:, 0] * 0.5
                        + 0.8 * rng.standard_normal(n))

    wpath = tmp_path / "net.csv"
    np.savetxt(wpath, A, delimiter=",")
    code, _ = run_cli(["embed", "--weights", str(wpath), "-d", "1",
                       "--output-prefix", str(tmp_path / "net")], capsys)
    assert code == 0

    ypath = tmp_path / "y2.csv"
    write_csv(ypath, ["y"], [[repr(float(v))] for v in Y])
    xpath = tmp_path / "x2.csv"
    write_csv(xpath, ["u1", "z1"], [[repr(0.0), repr(float(b))] for b in Z[:, 0]])
    code, out = run_cli(["fit", "--outcome", str(ypath),
                         "--covariates", str(xpath),
                         "--weights", str(wpath),
                         "--error-prone", "u1",
                         "--latent-u", str(tmp_path / "net_u.csv"),
                         "--latent-delta", str(tmp_path / "net_delta.csv")], capsys)
    assert code == 0
    report = json.loads(out)
    assert report["correction"] == "latent-embedding"

    emb = ase_embed(weights, 1)
    deltas = rdpg_row_covariances(emb)
    design = ObservedDesign(np.column_stack([emb.U_hat, Z]), d1=1, d2=1)
    me = assemble_omega(deltas, d2=1)
    expected = fit_meqmle(Y, weights, design, me)
    assert report["estimates"]["u1"] == pytest.approx(expected.params.delta[0], rel=1e-12)
    assert report["estimates"]["rho"] == pytest.approx(expected.params.rho, rel=1e-9, abs=1e-12)


def test_report_floats_round_trip():
    payload = {"x": 0.1 + 0.2, "arr": np.array([1.0 / 3.0])}
    text = report_json(payload)
    decoded = json.loads(text)
    assert decoded["x"] == 0.1 + 0.2
    assert decoded["arr"][0] == 1.0 / 3.0
