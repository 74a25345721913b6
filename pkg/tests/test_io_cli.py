import csv
import filecmp

import numpy as np
import pytest

from pertinf.cli import main, top_flags
from pertinf.errors import EmptyCluster, MissingColumn, NonNumericCell, ValidationError
from pertinf.io import ingest, read_config
from pertinf.models import ClusteredDataset, fit_model, rss_probe
from pertinf.simulate import simulate_clustered, write_dataset
from conftest import regression_data


def write(path, text):
    path.write_text(text)
    return path


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def regression_csv(path, X, y):
    lines = ["cluster_id,y," + ",".join(f"x{j + 1}" for j in range(X.shape[1]))]
    lines += [f"r{i + 1:02d},{float(y[i])!r}," + ",".join(repr(float(v)) for v in X[i]) for i in range(len(y))]
    return write(path, "\n".join(lines) + "\n")


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("sim") / "sim.csv"
    write_dataset(simulate_clustered(12, 3, 8, seed=5, outlier_cluster=4, inflate=3.0), path)
    return path


# ingest


def test_ingest_groups_clusters(tmp_path):
    data = ingest(write(tmp_path / "a.csv", "cluster_id,y\nA,1\nA,2\nB,3\n"))
    assert data.n == 2
    np.testing.assert_array_equal(data.m, [2, 1])
    assert [c.cluster_id for c in data.clusters] == ["A", "B"]


def test_ingest_regression_shape(tmp_path):
    X, y = regression_data(seed=1, n=10)
    data = ingest(regression_csv(tmp_path / "r.csv", X, y))
    assert data.M == 10 and data.q1 == 3


def test_ingest_blank_cell_names_row(tmp_path):
    with pytest.raises(NonNumericCell, match="row 3"):
        ingest(write(tmp_path / "b.csv", "cluster_id,y\nA,1\nB,\n"))


def test_ingest_missing_column(tmp_path):
    with pytest.raises(MissingColumn):
        ingest(write(tmp_path / "c.csv", "cluster_id,x1\nA,1\n"))


def test_ingest_empty_file(tmp_path):
    with pytest.raises(EmptyCluster):
        ingest(write(tmp_path / "e.csv", ""))
    with pytest.raises(EmptyCluster):
        ingest(write(tmp_path / "h.csv", "cluster_id,y\n"))


def test_read_config(tmp_path):
    cfg = read_config(write(tmp_path / "k.cfg", "# comment\nscheme = lmm_cov\nmc-draws = 100  # inline\n\n"))
    assert cfg == {"scheme": "lmm_cov", "mc_draws": "100"}
    with pytest.raises(ValidationError):
        read_config(write(tmp_path / "bad.cfg", "scheme lmm_cov\n"))


def test_top_flags():
    si = np.r_[np.full(20, 0.1), 10.0]
    assert top_flags(si).tolist() == [False] * 20 + [True]
    assert not top_flags([3.0]).any()


# CLI


def test_simulate_command(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["simulate", "--clusters", "5", "--seed", "1", "--out", str(out)]) == 0
    data = ingest(out)
    assert data.n == 5 and 3 <= data.m.min() and data.m.max() <= 12
    assert main(["simulate", "--clusters", "5", "--seed", "1", "--min-m", "4", "--max-m", "2",
                 "--out", str(out)]) == 2


def test_analyze_outputs_and_determinism(sim_csv, tmp_path, capsys):
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["analyze", "--data", str(sim_csv), "--scheme", "lmm_cov", "--seed", "3",
                     "--out", str(out)]) == 0
        runs.append(out)
    names = ["report.csv", "geometry.csv", "eigen.csv", "index_plot.svg"]
    match, mismatch, errors = filecmp.cmpfiles(runs[0], runs[1], names, shallow=False)
    assert match == names and not mismatch and not errors
    geo = read_rows(runs[0] / "geometry.csv")
    assert [r["stage"] for r in geo] == ["raw", "rescaled"]
    assert geo[0]["is_appropriate"] == "0" and geo[1]["is_appropriate"] == "1"
    rep = read_rows(runs[0] / "report.csv")
    assert len(rep) == 12
    top = max(rep, key=lambda r: abs(float(r["SI"])))
    assert top["cluster_id"] == "c04"


def test_analyze_validation_exit(sim_csv, tmp_path, capsys):
    assert main(["analyze", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == 2
    assert main(["analyze", "--data", str(sim_csv), "--scheme", "reg_variance", "--out", str(tmp_path / "o")]) == 2
    cfg = write(tmp_path / "bad.cfg", "no_such_key = 1\n")
    assert main(["analyze", "--data", str(sim_csv), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_analyze_singular_exit(tmp_path, capsys):
    X, y = regression_data(seed=2, n=6)
    path = regression_csv(tmp_path / "r.csv", X, y)
    out = tmp_path / "o"
    assert main(["analyze", "--data", str(path), "--scheme", "explanatory_full", "--out", str(out)]) == 3
    assert "halted" in capsys.readouterr().err
    assert read_rows(out / "geometry.csv")[0]["singular"] == "1"


def test_regression_rss_report(tmp_path, capsys):
    X, y = regression_data(seed=9, n=10)
    path = regression_csv(tmp_path / "r.csv", X, y)
    out = tmp_path / "o"
    assert main(["analyze", "--data", str(path), "--scheme", "reg_variance", "--objective", "neg_rss",
                 "--out", str(out)]) == 0
    rep = read_rows(out / "report.csv")
    fit = fit_model(ClusteredDataset.from_regression(X, y), "linear_regression")
    r = y - X @ fit.beta
    si = np.array([float(row["SI"]) for row in rep])
    pii = np.einsum("ij,ji->i", X, np.linalg.solve(X.T @ X, X.T))
    np.testing.assert_allclose(si, 2 * r ** 2 * (2 * pii - 1), rtol=1e-8)
    np.testing.assert_allclose(-rss_probe(fit).grad, r ** 2, rtol=1e-10)


def test_verify_passes_case_weight(tmp_path, capsys):
    X, y = regression_data(seed=4, n=8)
    path = regression_csv(tmp_path / "r.csv", X, y)
    cfg = write(tmp_path / "v.cfg", "mc_draws = 100000\n")
    assert main(["verify", "--data", str(path), "--config", str(cfg), "--scheme", "case_weight",
                 "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "metric_vs_monte_carlo" in out and "FAIL" not in out


def test_verify_flat_scheme_geodesic(tmp_path, capsys):
    y = np.random.default_rng(5).normal(1.0, 2.0, 20)
    path = write(tmp_path / "ls.csv", "cluster_id,y\n" + "".join(f"o{i},{float(v)!r}\n" for i, v in enumerate(y)))
    assert main(["verify", "--data", str(path), "--scheme", "ls_response", "--seed", "1"]) == 0
    rows = [line.split() for line in capsys.readouterr().out.splitlines() if line.startswith("geodesic_residual")]
    assert rows and rows[0][4] == "pass" and float(rows[0][3]) < 1e-8


def test_verify_detects_corrupted_connection(tmp_path, capsys):
    X, y = regression_data(seed=4, n=8)
    path = regression_csv(tmp_path / "r.csv", X, y)
    cfg = write(tmp_path / "v.cfg", "corrupt_gamma = 0.05\nmc_draws = 20000\n")
    assert main(["verify", "--data", str(path), "--config", str(cfg), "--scheme", "reg_variance",
                 "--objective", "neg_rss", "--seed", "1"]) == 3
    captured = capsys.readouterr()
    failing = [line for line in captured.out.splitlines() if " FAIL " in line]
    assert failing and any("Gamma0" in line for line in failing)
    assert "FAILED" in captured.err
