import configparser
import json
from pathlib import Path

import numpy as np
import pytest

from kriging_ae.cli import main
from kriging_ae.kriging import KrigingModel
from kriging_ae.lane_change import indicator
from oracles import normal_tail

DOCS = Path(__file__).resolve().parents[1] / "docs"
TAIL_CFG = DOCS / "examples" / "tail.ini"


def lane_change_setup(tmp_path, n=60, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.uniform(0, 1.0, n), rng.uniform(0.01, 0.6, n)])
    y = indicator(X)
    np.savetxt(tmp_path / "design.csv", np.column_stack([X, y]), delimiter=",", header="x1,x2,y", comments="")
    np.savetxt(tmp_path / "points.csv", X[:10], delimiter=",", header="ttc_inv,r_inv", comments="")
    (tmp_path / "lc.ini").write_text(
        "[kriging]\ndesign = design.csv\nbeta = 0\ntau2 = 0.01\ntheta = 50\nnugget = 0.01\n"
        "[estimate]\nn = 20000\n"
        "[is]\nn = 5000\nf_star = product [exponential rate=2.25, pareto scale=0.01 shape=5.36]\n"
        "[ce]\ntheta0 = product [exponential rate=2.25, pareto scale=0.01 shape=5.36]\nn_per_iter = 1000\nmax_iter = 3\n"
        "[adapt]\nbudget = 2\ngrid_points = 6\n"
        "[simulate]\ninput = points.csv\n",
        encoding="utf-8",
    )
    return tmp_path / "lc.ini"


def results(out):
    lines = (Path(out) / "results.csv").read_text().splitlines()
    head = lines[0].split(",")
    return [dict(zip(head, line.split(","))) for line in lines[1:]]


def manifest(out):
    return json.loads((Path(out) / "manifest.json").read_text())


def test_tail_pipeline_hits_analytic_value(tmp_path):
    assert main(["pipeline", "-c", str(TAIL_CFG), "-o", str(tmp_path / "o")]) == 0
    row = results(tmp_path / "o")[0]
    assert row["method"] == "is-crude"
    assert abs(float(row["value"]) - normal_tail(3.0)) <= 3 * float(row["std_error"])
    m = manifest(tmp_path / "o")
    assert m["seed"] == 3 and m["subcommand"] == "pipeline" and len(m["config_hash"]) == 64
    assert m["simulator_calls"] > 0 and "numpy" in m["versions"]
    assert (tmp_path / "o" / "ce_history.csv").is_file()


def test_estimate_is_byte_identical_across_runs_and_workers(tmp_path):
    cfg = lane_change_setup(tmp_path)
    outs = []
    for i, workers in enumerate(("1", "3", "1")):
        out = tmp_path / f"e{i}"
        assert main(["estimate", "-c", str(cfg), "--indicator", "plugin", "--workers", workers, "-o", str(out)]) == 0
        outs.append((out / "results.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_plugin_pipeline_makes_no_simulator_calls(tmp_path):
    cfg = lane_change_setup(tmp_path)
    assert main(["pipeline", "-c", str(cfg), "--indicator", "plugin", "-o", str(tmp_path / "p")]) == 0
    assert manifest(tmp_path / "p")["simulator_calls"] == 0
    assert results(tmp_path / "p")[0]["method"] == "is-plugin"


def test_fit_on_single_row_design_interpolates(tmp_path):
    (tmp_path / "one.csv").write_text("x1,x2,y\n0.3,0.2,0.7\n")
    (tmp_path / "fit.ini").write_text("[kriging]\ndesign = one.csv\n")
    assert main(["fit", "-c", str(tmp_path / "fit.ini"), "-o", str(tmp_path / "f")]) == 0
    model = KrigingModel.load(tmp_path / "f" / "model.json")
    mean, var = model.predict([[0.3, 0.2]])
    assert mean[0] == pytest.approx(0.7, abs=1e-12) and var[0] == pytest.approx(0.0, abs=1e-8)
    assert (tmp_path / "f" / "fit.csv").read_text().startswith("beta,tau2,theta,nugget,n_design\n")


def test_simulate_writes_indicator_csv(tmp_path):
    cfg = lane_change_setup(tmp_path)
    assert main(["simulate", "-c", str(cfg), "-o", str(tmp_path / "s")]) == 0
    lines = (tmp_path / "s" / "indicator.csv").read_text().splitlines()
    assert lines[0] == "ttc_inv,r_inv,min_range,indicator" and len(lines) == 11
    assert manifest(tmp_path / "s")["simulator_calls"] == 10


@pytest.mark.parametrize("cmd", ["ce", "is", "adapt"])
def test_other_subcommands_run(tmp_path, cmd):
    cfg = lane_change_setup(tmp_path)
    assert main([cmd, "-c", str(cfg), "--indicator", "plugin", "-o", str(tmp_path / cmd)]) == 0
    produced = {p.name for p in (tmp_path / cmd).iterdir()}
    expected = {"ce": {"ce_history.csv"}, "is": {"results.csv"}, "adapt": {"audit.csv", "design.csv", "model.json"}}
    assert expected[cmd] | {"manifest.json"} <= produced


def test_run_reproduces_from_manifest(tmp_path):
    cfg = lane_change_setup(tmp_path)
    assert main(["is", "-c", str(cfg), "--seed", "11", "--indicator", "expected", "-o", str(tmp_path / "a")]) == 0
    m = manifest(tmp_path / "a")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_dict(m["config"])
    again = Path(m["config_dir"]) / "from_manifest.ini"
    with open(again, "w", encoding="utf-8") as fh:
        parser.write(fh)
    assert main(["is", "-c", str(again), "-o", str(tmp_path / "b")]) == 0
    assert manifest(tmp_path / "b")["config_hash"] == m["config_hash"]
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_default_output_directory(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["estimate", "-c", str(TAIL_CFG), "--set", "estimate.n=1000"]) == 0
    runs = list((tmp_path / "runs").iterdir())
    assert len(runs) == 1 and runs[0].name.endswith(manifest(runs[0])["config_hash"][:12])


@pytest.mark.parametrize(
    "args, code, key",
    [
        (["estimate", "--set", "run.seed=abc"], 2, "run.seed"),
        (["estimate", "--set", "estimate.bogus=1"], 2, "estimate.bogus"),
        (["estimate", "-c", "/nonexistent/x.ini"], 2, "config"),
        (["is"], 2, "is.f_star"),
        (["estimate", "--indicator", "plugin"], 2, "kriging.design"),
        (["estimate", "--set", "kriging.design=missing.csv", "--indicator", "plugin"], 2, "kriging.design"),
    ],
)
def test_config_errors_exit_2_with_key(tmp_path, monkeypatch, capsys, args, code, key):
    monkeypatch.chdir(tmp_path)
    assert main(args + ["-o", str(tmp_path / "o")]) == code
    assert key in capsys.readouterr().err


def test_runtime_error_exits_3(tmp_path, capsys):
    # a far-off start under a tiny budget never sees the event
    args = ["ce", "-c", str(TAIL_CFG), "--set", "ce.theta0=normal mean=-10 sd=0.1", "--set", "ce.n_per_iter=10",
            "-o", str(tmp_path / "o")]
    assert main(args) == 3
    assert "NoEliteSamples" in capsys.readouterr().err
