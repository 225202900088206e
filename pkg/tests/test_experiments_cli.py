import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest
import scipy.io

from dpgschwarz.cli import main, parse_levels, read_config_file
from dpgschwarz.experiments import (
    NORM_COLUMNS,
    ExperimentConfig,
    run_convergence,
    run_norm_equivalence,
    run_table1,
)
from dpgschwarz.schwarz import ConfigurationError

HEADER = "h,H,delta,N,iter_unpre,iter_pre,lambda_min,lambda_max,kappa,l2_error_u,wall_time_s"


def run_cli(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_levels():
    assert parse_levels("2..5") == (2, 3, 4, 5)
    assert parse_levels("3,5") == (3, 5)
    for bad in ("5..2", "a", "2..x"):
        with pytest.raises(ConfigurationError):
            parse_levels(bad)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ExperimentConfig("table3")
    with pytest.raises(ConfigurationError):
        ExperimentConfig("table1", tol=2.0)
    with pytest.raises(ConfigurationError):
        ExperimentConfig("table1", levels=(2,), delta="1/8").configurations()


def test_table1_rows_follow_the_table():
    cfg = ExperimentConfig("table1")
    got = [(n, str(H), str(d)) for n, H, d in cfg.configurations()]
    assert got == [(4, "1/2", "1/4"), (8, "1/2", "1/8"), (8, "1/2", "1/4"),
                   (16, "1/2", "1/16"), (16, "1/2", "1/8"), (16, "1/2", "1/4"),
                   (32, "1/2", "1/32"), (32, "1/2", "1/16"), (32, "1/2", "1/8")]
    cfg2 = ExperimentConfig("table2")
    assert [(str(H), str(d)) for _, H, d in cfg2.configurations()] == [
        ("1/2", "1/4"), ("1/4", "1/8"), ("1/8", "1/16"), ("1/16", "1/32")]


def test_one_row_per_configuration():
    rep = run_table1(ExperimentConfig("table1", levels=(2, 3), timing=False))
    assert len(rep.rows) == 3
    assert rep.rows[1]["iter_unpre"] == rep.rows[2]["iter_unpre"]
    assert all(r["iter_pre"] > 0 for r in rep.rows)
    assert rep.null_reasons[0] == {"wall_time_s": "timing_disabled"}


def test_csv_header_and_determinism(capsys):
    code, a, _ = run_cli(capsys, "table1", "--levels", "2..3", "--no-timing")
    assert code == 0
    assert a.splitlines()[0] == HEADER
    _, b, _ = run_cli(capsys, "table1", "--levels", "2..3", "--no-timing")
    assert a == b
    rows = list(csv.DictReader(io.StringIO(a)))
    assert len(rows) == 3 and all(r["wall_time_s"] == "null" for r in rows)


def test_out_and_sidecar(tmp_path, capsys):
    out = tmp_path / "t.csv"
    code, _, err = run_cli(capsys, "table1", "--levels", "2", "--out", str(out))
    assert code == 0 and "wrote" in err
    assert out.read_text().splitlines()[0] == HEADER
    meta = json.loads((tmp_path / "t.csv.json").read_text())
    assert meta["config"]["mode"] == "table1" and meta["version"]
    assert "kappa" in meta["extensions"]


def test_json_format(capsys):
    code, out, _ = run_cli(capsys, "spectra", "--levels", "2", "--format", "json", "--no-unpre")
    assert code == 0
    doc = json.loads(out)
    row = doc["rows"][0]
    assert row["iter_unpre"] is None and row["lambda_max"] <= 4 + 1e-6
    assert {"row": 0, "iter_unpre": "skipped"} == {k: v for k, v in doc["metadata"]["null_reasons"][0].items()
                                                  if k in ("row", "iter_unpre")}


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\nlevels = 3\nH = 1/2\ndelta = 1/8\nunpre = false\ntiming = off\n")
    assert read_config_file(cfg)["levels"] == "3"
    code, out, _ = run_cli(capsys, "table1", "--config", str(cfg))
    assert code == 0 and len(out.splitlines()) == 2
    code, out, _ = run_cli(capsys, "table1", "--config", str(cfg), "--delta", "1/4")
    assert code == 0 and out.splitlines()[1].split(",")[2] == "0.25"


@pytest.mark.parametrize("args", [
    ("table1", "--levels", "2", "--delta", "1/16"),
    ("table1", "--levels", "x"),
    ("table1", "--tol", "abc"),
    ("table1", "--config", "/nonexistent/file"),
    ("table2", "--H", "1/3")])
def test_configuration_errors_exit_1(capsys, args):
    code, _, err = run_cli(capsys, *args)
    assert code == 1 and "configuration error" in err


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("levles = 3\n")
    assert run_cli(capsys, "table1", "--config", str(cfg))[0] == 1


def test_nonconvergence_exit_2(capsys):
    code, out, err = run_cli(capsys, "table1", "--levels", "2", "--max-iter", "2", "--no-unpre")
    assert code == 2 and "converge" in err
    row = out.splitlines()[1].split(",")
    assert row[5] == "null"     # iter_pre is null, not a misleading count


def test_norms_csv(capsys):
    code, out, _ = run_cli(capsys, "norms", "--levels", "0,2", "--samples", "10")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == ",".join(NORM_COLUMNS)
    kinds = [line.split(",")[0] for line in lines[1:]]
    assert kinds == ["h_half"] * 2 + ["h_minus_half"] * 2 + ["fundamental"] * 2 + ["fundamental_eig"] * 2


def test_norm_report_values():
    rep = run_norm_equivalence(ExperimentConfig("norm_equivalence", levels=(0,), samples=6))
    for r in rep.rows:
        assert 0 < r["min_ratio"] <= r["max_ratio"] < np.inf


def test_convergence_rates():
    rep = run_convergence(ExperimentConfig("convergence", levels=(3, 4, 5)))
    errs = [r["l2_error_u"] for r in rep.rows]
    assert all(3.6 < a / b < 4.4 for a, b in zip(errs, errs[1:]))
    assert rep.metadata["rates_u"][-1] >= 1.8


def test_zero_source_gives_zero_error():
    rep = run_convergence(ExperimentConfig("convergence", levels=(2,)), f=lambda x, y: 0 * x)
    assert rep.rows[0]["l2_error_u"] == 0


def test_matrix_export_flag(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "convergence", "--levels", "1", "--mtx-dir", str(tmp_path))
    assert code == 0
    assert scipy.io.mmread(str(tmp_path / "dpg_poisson_n2.mtx")).shape == (77, 77)
    code, _, _ = run_cli(capsys, "table1", "--levels", "2", "--no-unpre", "--mtx-dir", str(tmp_path))
    assert code == 0
    assert scipy.io.mmread(str(tmp_path / "dpg_poisson_n4.mtx")).shape == (305, 305)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "dpgschwarz", "table1", "--levels", "2", "--no-timing"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith(HEADER)
