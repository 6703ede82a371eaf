import csv
import json

import pytest

from freightmech.cli import main
from freightmech.config import ConfigError, RunConfig
from freightmech.net import theorem_instance

SMALL = {"version": 1, "T": 60, "T0": 10, "n_reps": 2, "mechanisms": ["SP", "AUC"]}


def write_cfg(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**SMALL, **kw}))
    return path


# -- config ---------------------------------------------------------------------------

def test_defaults_round_trip():
    cfg = RunConfig()
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


@pytest.mark.parametrize("data, field", [
    ({"version": 1, "replications": 3}, "replications"),
    ({"version": 1, "network": {"kind": "sample", "url": "x"}}, "url"),
    ({"version": 1, "network": {"calib": {"volume": 1}}}, "volume"),
    ({"T": 10}, "version"),
    ({"version": 2}, "version"),
    ({"version": 1, "T": 10, "T0": 10}, "T0"),
    ({"version": 1, "n_reps": 0}, "n_reps"),
    ({"version": 1, "mechanisms": []}, "mechanisms"),
    ({"version": 1, "mechanisms": ["VCG"]}, "mechanisms"),
    ({"version": 1, "mode": "revenue"}, "mode"),
    ({"version": 1, "T": 10.5}, "T"),
    ({"version": 1, "shares": [0.0]}, "shares"),
    ({"version": 1, "network": {"kind": "csv"}}, "network.path"),
    ({"version": 1, "network": {"kind": "scaling"}, "shares": [0.1]}, "shares"),
    ({"version": 1, "thetas": [-1]}, "thetas"),
])
def test_config_errors_name_the_field(data, field):
    with pytest.raises(ConfigError, match=field):
        RunConfig.from_dict(data)


def test_sweep_order():
    cfg = RunConfig.from_dict({"version": 1, "shares": [0.01, 0.02], "thetas": [1, 4]})
    assert cfg.sweep() == [{"share": 0.01, "theta": 1.0}, {"share": 0.01, "theta": 4.0},
                           {"share": 0.02, "theta": 1.0}, {"share": 0.02, "theta": 4.0}]


def test_inline_network_config():
    cfg = RunConfig.from_dict({"version": 1, "network": {"kind": "inline",
                                                          "network": theorem_instance(8).to_dict()}})
    assert cfg.network.build(None, 1.0) == theorem_instance(8)
    assert cfg.network.build(None, 2.0) == theorem_instance(16)


# -- command line ---------------------------------------------------------------------

def test_unknown_key_exit_code(tmp_path, capsys):
    path = write_cfg(tmp_path, colour="red")
    assert main(["compare", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "colour" in capsys.readouterr().err


def test_invalid_json(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{version: 1")
    assert main(["simulate", "--config", str(path)]) == 2
    assert "invalid JSON" in capsys.readouterr().err


def test_solve_fluid(tmp_path):
    out = tmp_path / "o"
    assert main(["solve-fluid", "--config", str(write_cfg(tmp_path, thetas=[1, 4])), "--out", str(out)]) == 0
    docs = [json.loads((out / f"fluid_theta{t}.json").read_text()) for t in (1, 4)]
    for d in docs:
        assert d["kkt_residual"] <= 1e-6
        assert "gamma_fa" in d and len(d["lanes"]) == 21
        assert all({"p", "xi"} <= set(row) for row in d["lanes"].values())
    assert docs[1]["kappa_fa"] == pytest.approx(4 * docs[0]["kappa_fa"], rel=1e-5)
    assert json.loads((out / "config_used.json").read_text())["T"] == 60


def test_compare_rows_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path, shares=[0.01, 0.02, 0.03, 0.04], mechanisms=["SP", "AUC", "HYB"], n_reps=2)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["compare", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["compare", "--config", str(cfg), "--out", str(b), "--parallel", "2"]) == 0
    rows = list(csv.DictReader(open(a / "compare.csv")))
    assert len(rows) == 12
    assert (a / "compare.csv").read_bytes() == (b / "compare.csv").read_bytes()
    c = tmp_path / "c"
    assert main(["compare", "--config", str(cfg), "--out", str(c), "--seed", "9"]) == 0
    assert (a / "compare.csv").read_bytes() != (c / "compare.csv").read_bytes()


def test_compare_two_mechanisms_one_share(tmp_path):
    out = tmp_path / "o"
    assert main(["compare", "--config", str(write_cfg(tmp_path)), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "compare.csv")))
    assert [r["mechanism"] for r in rows] == ["SP", "AUC"]
    assert json.loads((out / "compare.json").read_text())[0]["rows"]["SP"]["sp_ratio"] == 1.0


def test_simulate_writes_trace(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(write_cfg(tmp_path, mechanisms=["HYB"])), "--out", str(out)]) == 0
    doc = json.loads((out / "simulate_theta1_HYB.json").read_text())
    assert doc["n_reps"] == 2 and len(doc["per_rep"]["kappa"]) == 2
    header = (out / "trace_theta1_HYB.csv").read_text().splitlines()[0]
    assert header == "period,lane,S,D,X,Y,V,P,penalty,instant_bookings"


def test_calibrate_command(tmp_path):
    out = tmp_path / "o"
    assert main(["calibrate", "--config", str(write_cfg(tmp_path, shares=[0.01, 0.02])), "--out", str(out)]) == 0
    doc = json.loads((out / "network_share0.01_theta1.json").read_text())
    assert len(doc["lanes"]) == 21


def test_calibrate_from_csv(tmp_path):
    lanes = tmp_path / "lanes.csv"
    lanes.write_text("origin,destination,annual_tons,average_miles,origin_rate,destination_rate\n"
                     "A,B,2000000,700,3.0,2.5\nB,A,1500000,700,2.5,3.0\n")
    cfg = write_cfg(tmp_path, network={"kind": "csv", "path": "lanes.csv"})
    out = tmp_path / "o"
    assert main(["calibrate", "--config", str(cfg), "--out", str(out)]) == 0
    assert len(json.loads((out / "network_theta1.json").read_text())["lanes"]) == 2


def test_ic_check(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, mechanisms=["AUC", "AUC-P", "HYB"], ic_trials=200)
    assert main(["ic-check", "--config", str(cfg), "--out", str(out)]) == 0
    doc = json.loads((out / "ic_check.json").read_text())
    assert all(v["max_regret"] <= 1e-9 for v in doc.values())


def test_dominance_check(tmp_path):
    from test_sim import triangle

    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, network={"kind": "inline", "network": triangle().to_dict()}, T=150, T0=30)
    assert main(["dominance-check", "--config", str(cfg), "--out", str(out)]) == 0
    doc = json.loads((out / "dominance_check.json").read_text())
    assert doc[0]["pathwise_ok"]


def test_scaling_gap(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, network={"kind": "scaling"}, scaling_thetas=[4, 16], T=80, T0=10, n_reps=3)
    assert main(["scaling-gap", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "scaling_gap.csv").read_text().splitlines()
    assert lines[0] == "theta,gap,se,n_reps" and len(lines) == 3
    assert "slope" in json.loads((out / "scaling_gap.json").read_text())


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    from freightmech import cli
    from freightmech.fluid import SolverError

    def boom(*a, **k):
        raise SolverError("no convergence")

    monkeypatch.setattr(cli, "solve_fa", boom)
    assert main(["solve-fluid", "--config", str(write_cfg(tmp_path)), "--out", str(tmp_path / "o")]) == 3
