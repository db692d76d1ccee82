import ast
import csv
import json
import shutil
from pathlib import Path

import pytest
import yaml

from nbarhmm import cli
from nbarhmm.synthetic import RetryBudgetExceeded


def write_config(path: Path, data: dict) -> Path:
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.fixture
def raw_dir(fixture_dir, tmp_path):
    for name in ("events.csv", "ceasefires.csv", "covariates.csv", "panel.csv", "report.json"):
        shutil.copy(fixture_dir / name, tmp_path / name)
    return tmp_path


def run_cli(args, capsys):
    code = cli.main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def test_ingest_matches_golden(raw_dir, fixture_dir, capsys):
    cfg = write_config(raw_dir / "c.yaml", {
        "seed": 0, "output_dir": "out",
        "inputs": {"events": "events.csv", "ceasefires": "ceasefires.csv", "covariates": "covariates.csv"},
    })
    code, out, _ = run_cli(["ingest", cfg], capsys)
    assert code == 0
    assert (raw_dir / "out" / "panel.csv").read_bytes() == (fixture_dir / "panel.csv").read_bytes()
    manifest = json.loads((raw_dir / "out" / "manifest.json").read_text())
    assert manifest["command"] == "ingest" and manifest["seed"] == 0
    assert set(manifest["inputs"]) == {"events", "ceasefires", "covariates"}
    assert "numpy" in manifest["versions"]
    assert json.loads(out)["outputs"] == manifest["outputs"]


def test_missing_header_exits_2_with_json(raw_dir, capsys):
    (raw_dir / "events.csv").write_text("country,week,deaths\n")
    cfg = write_config(raw_dir / "c.yaml", {
        "seed": 0, "inputs": {"events": "events.csv", "ceasefires": "ceasefires.csv",
                              "covariates": "covariates.csv"},
    })
    code, _, err = run_cli(["ingest", cfg], capsys)
    assert code == 2
    body = json.loads(err.strip().splitlines()[-1])
    assert body["error"] == "PanelValidationError" and body["line"] == 1
    assert body["file"].endswith("events.csv")


def test_malformed_row_reports_line_and_column(raw_dir, capsys):
    with open(raw_dir / "events.csv", "a") as fh:
        fh.write("SYN004,2099-01-05,abc\n")
    cfg = write_config(raw_dir / "c.yaml", {
        "seed": 0, "inputs": {"events": "events.csv", "ceasefires": "ceasefires.csv",
                              "covariates": "covariates.csv"},
    })
    code, _, err = run_cli(["ingest", cfg], capsys)
    body = json.loads(err)
    assert code == 2 and body["column"] in ("deaths", "week_start") and body["line"] > 1


@pytest.mark.parametrize("data,match", [
    ({"inputs": {"panel": "panel.csv"}}, "seed"),
    ({"seed": 1, "inputs": {"panel": "nowhere.csv"}}, "does not exist"),
    ({"seed": 1, "inputs": {"panel": "panel.csv"}, "mcmc": {"speed": 3}}, "unknown"),
    ({"seed": 1}, "needs inputs.panel"),
])
def test_config_validation_exit_2(raw_dir, capsys, data, match):
    cfg = write_config(raw_dir / "c.yaml", data)
    code, _, err = run_cli(["fit", cfg], capsys)
    assert code == 2
    assert match in json.loads(err)["message"]


def test_curves_reproduce_state3_row(raw_dir, capsys):
    cfg = write_config(raw_dir / "c.yaml", {
        "seed": 0, "inputs": {"panel": "panel.csv", "params": "published"},
    })
    code, _, _ = run_cli(["curves", cfg], capsys)
    assert code == 0
    rows = {r["scenario"]: r for r in csv.DictReader(open(raw_dir / "out" / "scenario_curves.csv"))}
    base = rows["baseline"]
    assert float(base["p31"]) == pytest.approx(0.0916, abs=5e-4)
    assert float(base["p32"]) == pytest.approx(0.6628, abs=5e-4)
    assert float(base["p33"]) == pytest.approx(0.2456, abs=5e-4)
    n = sum(1 for _ in open(raw_dir / "out" / "curves.csv"))
    assert n == 1 + 5 * 520


def test_fit_states_forecast_and_rerun(raw_dir, capsys, tmp_path):
    cfg = write_config(raw_dir / "c.yaml", {
        "seed": 4, "output_dir": "fit",
        "inputs": {"panel": "panel.csv", "report": "report.json"},
        "mcmc": {"n_iterations": 400, "n_burnin": 200},
    })
    assert run_cli(["fit", cfg], capsys)[0] == 0
    out = raw_dir / "fit"
    assert {"draws.csv", "summary.json", "params.json", "diagnostics.json"} <= {p.name for p in out.iterdir()}
    code, stdout, _ = run_cli(["rerun", out / "manifest.json", "--out", tmp_path / "again"], capsys)
    assert code == 0 and json.loads(stdout)["identical"]

    cfg2 = write_config(raw_dir / "d.yaml", {
        "seed": 5, "output_dir": "dec",
        "inputs": {"panel": "panel.csv", "report": "report.json", "params": "fit/params.json"},
        "states": {"sweeps": 50}, "forecast": {"horizon": 3, "replicates": 50},
    })
    assert run_cli(["states", cfg2], capsys)[0] == 0
    assert run_cli(["forecast", cfg2, "--set", "forecast.horizon=2"], capsys)[0] == 0
    rows = list(csv.DictReader(open(raw_dir / "dec" / "forecast.csv")))
    assert len(rows) == 5 * 2
    manifest = json.loads((raw_dir / "dec" / "manifest.json").read_text())
    assert manifest["config"]["forecast"]["horizon"] == 2


def test_rerun_detects_changed_input(raw_dir, capsys):
    cfg = write_config(raw_dir / "c.yaml", {"seed": 0, "inputs": {"panel": "panel.csv", "params": "published"}})
    assert run_cli(["curves", cfg], capsys)[0] == 0
    with open(raw_dir / "panel.csv", "a") as fh:
        fh.write("\n")
    code, _, err = run_cli(["rerun", raw_dir / "out" / "manifest.json"], capsys)
    assert code == 2 and "changed" in json.loads(err)["message"]


def test_retry_budget_exit_4(tmp_path, capsys):
    truth = tmp_path / "truth.json"
    from nbarhmm.synthetic import desk_truth
    t = desk_truth()
    t.a[:] = [1e4, 2e4, 3e4]
    t.to_json(truth)
    cfg = write_config(tmp_path / "c.yaml", {
        "seed": 1, "simulate": {"truth": "truth.json", "n_countries": 2, "n_weeks": 20,
                                "max_country_retries": 2},
    })
    code, _, err = run_cli(["simulate", cfg], capsys)
    assert code == 4 and json.loads(err)["error"] == "RetryBudgetExceeded"


def test_exit_code_mapping():
    assert cli._exit_code(RetryBudgetExceeded("x")) == 4
    assert cli._exit_code(FloatingPointError("x")) == 3
    assert cli._exit_code(ValueError("x")) == 2


def test_cli_layer_has_no_numerics():
    tree = ast.parse(Path(cli.__file__).read_text())
    imported = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            imported |= {a.name.split(".")[0] for a in node.names}
        elif isinstance(node, ast.ImportFrom) and node.module and node.level == 0:
            imported.add(node.module.split(".")[0])
    assert not imported & {"numpy", "scipy", "numba"}
