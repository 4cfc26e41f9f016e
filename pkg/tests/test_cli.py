"""Command-line interface: schemas, exit codes, report formats, determinism."""

import json

import numpy as np
import pytest

from popest.cli import main

from conftest import synth_records

SCHEMA = "period=period,country=country,domain=sex+age,m=m,n=n,N=N"


def write_csv(path, records):
    lines = ["period,country,sex,age,m,n,N"]
    for r in records:
        lines.append(
            f"{r.period},{r.country},{r.domain[0]},{r.domain[1]},{r.m},{r.n},{r.N}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def data_csv(tmp_path):
    return write_csv(tmp_path / "data.csv", synth_records(11, 40))


def test_fit_with_country_covariate(data_csv, capsys):
    code = main(
        [
            "fit",
            "--data", data_csv,
            "--schema", SCHEMA,
            "--dist", "ztnb2",
            "--alpha-cov", "intercept,country:Ukraine",
        ]
    )
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["parameter_labels"] == [
        "alpha:intercept",
        "alpha:country:Ukraine",
        "beta:intercept",
        "phi",
    ]
    assert len(report["params"]["alpha"]) == 2
    assert report["convergence"]["status"] == "converged"


def test_fit_poisson_has_no_phi(data_csv, capsys):
    code = main(["fit", "--data", data_csv, "--schema", SCHEMA, "--dist", "po"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert "phi" not in report["params"]


def test_unknown_dist_is_usage_error(data_csv):
    with pytest.raises(SystemExit) as err:
        main(["fit", "--data", data_csv, "--schema", SCHEMA, "--dist", "zipf"])
    assert err.value.code == 2


def test_bad_schema_is_exit_two(data_csv):
    code = main(
        ["fit", "--data", data_csv, "--schema", "period=period", "--dist", "po"]
    )
    assert code == 2


def test_missing_column_is_exit_two(data_csv):
    schema = SCHEMA.replace("N=N", "N=population")
    code = main(["fit", "--data", data_csv, "--schema", schema, "--dist", "po"])
    assert code == 2


def test_compare_grid_sorted_by_bic(data_csv, capsys):
    code = main(
        [
            "compare",
            "--data", data_csv,
            "--schema", SCHEMA,
            "--dists", "po,ztpo,nb2,ztnb2",
            "--alpha-covs", "intercept;intercept,country:Ukraine",
        ]
    )
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 9  # header + 4 dists x 2 covariate sets
    bics = [float(line.split(",")[-3]) for line in lines[1:]]
    assert bics == sorted(bics)


def test_boot_deterministic_bytes(data_csv, tmp_path):
    out1 = tmp_path / "b1.json"
    out2 = tmp_path / "b2.json"
    for out in (out1, out2):
        code = main(
            [
                "boot",
                "--data", data_csv,
                "--schema", SCHEMA,
                "--dist", "ztnb2",
                "-B", "15",
                "--seed", "1",
                "--output", str(out),
            ]
        )
        assert code == 0
    assert out1.read_bytes() == out2.read_bytes()
    report = json.loads(out1.read_text())
    assert set(report["intervals"]) == {"plugin", "percentile", "spin"}
    assert report["B"] == 15


def test_boot_zero_B_is_usage_error(data_csv):
    code = main(
        ["boot", "--data", data_csv, "--schema", SCHEMA, "--dist", "ztnb2", "-B", "0"]
    )
    assert code == 2


def test_boot_draws_csv(data_csv, tmp_path):
    draws = tmp_path / "draws.csv"
    code = main(
        [
            "boot",
            "--data", data_csv,
            "--schema", SCHEMA,
            "--dist", "ztnb2",
            "-B", "8",
            "--seed", "2",
            "--draws-path", str(draws),
            "--output", str(tmp_path / "b.json"),
        ]
    )
    assert code == 0
    lines = draws.read_text().strip().splitlines()
    assert lines[0] == "xi_star,xi_hat_star"
    assert len(lines) >= 2


def test_diagnose_csv(data_csv, tmp_path, capsys):
    csv_out = tmp_path / "resid.csv"
    code = main(
        [
            "diagnose",
            "--data", data_csv,
            "--schema", SCHEMA,
            "--dist", "ztnb2",
            "--top-k", "3",
            "--csv", str(csv_out),
        ]
    )
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert len(report["worst_fit"]) == 3
    lines = csv_out.read_text().strip().splitlines()
    assert lines[0] == "period,country,domain,m,mu_hat,residual"
    assert len(lines) == 41  # header + one row per record


def test_pad_flag_flows_through(tmp_path, capsys):
    records = synth_records(11, 20)
    path = write_csv(tmp_path / "pad.csv", records)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("Q1,other,F,60+,0,52,1286\n")
    code = main(
        [
            "diagnose",
            "--data", path,
            "--schema", SCHEMA,
            "--dist", "ztnb2",
            "--pad", "Q1:other:F,60+",
        ]
    )
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    padded = [
        row
        for row in report["residuals"]
        if row["key"][1] == "other" and row["key"][2] == ["F", "60+"]
    ]
    assert len(padded) == 1
    assert padded[0]["m"] == 1


def test_audit_file_written(tmp_path):
    records = synth_records(11, 20)
    path = write_csv(tmp_path / "audit.csv", records)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("Q1,Nowhere,F,61+,0,5,100\n")
    audit_path = tmp_path / "audit.json"
    code = main(
        [
            "fit",
            "--data", path,
            "--schema", SCHEMA,
            "--dist", "ztnb2",
            "--audit", str(audit_path),
            "--output", str(tmp_path / "fit.json"),
        ]
    )
    assert code == 0
    audit = json.loads(audit_path.read_text())
    assert audit["merged"][0]["country"] == "Nowhere"


def test_simulate_requires_phi():
    with pytest.raises(SystemExit) as err:
        main(["simulate", "-B", "4"])
    assert err.value.code == 2


def test_simulate_single_variant(capsys):
    code = main(
        [
            "simulate",
            "--phi", "2.5",
            "-B", "6",
            "--strata", "30",
            "--seed", "3",
            "--variants", "zt-nb2",
        ]
    )
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "variant,parameter,rb_percent,rrmse_percent,failures"
    assert len(lines) == 5


def test_simulate_byte_identical_outputs(tmp_path):
    outs = []
    for name in ("s1.csv", "s2.csv"):
        out = tmp_path / name
        code = main(
            [
                "simulate",
                "--phi", "1.5",
                "-B", "5",
                "--strata", "25",
                "--seed", "7",
                "--variants", "nb2-closed",
                "--output", str(out),
            ]
        )
        assert code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
