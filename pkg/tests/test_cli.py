"""End-to-end CLI tests.

Every test drives ``nlbs.cli.main`` in process with a throwaway config file
and checks artifacts, stdout, and exit codes.  Grids are kept tiny so the
whole file runs in a couple of seconds.
"""

import json
import math

import numpy as np
import pytest

from nlbs import SolverFlags, cbest_price, solve_nonlinear, validate
from nlbs.cli import main


CENTER = math.log(30.0)


def write_config(path, **sections):
    cfg = {
        "market": {"sigmas": [0.3, 0.15], "rho": 0.5, "r": 0.08, "T": 1.0},
        "cost": {"type": "constant", "C0": 0.0},
        "payoff": {"type": "best_cash_or_nothing", "K": 5.0, "X": 30.0},
        "dt_tc": 1.0 / 261.0,
        "grid": {"a": CENTER - 1.9, "b": CENTER + 1.9, "nx": 10, "nt": 4},
    }
    cfg.update(sections)
    path.write_text(json.dumps(cfg))
    return cfg


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0], [line.split(",") for line in lines[1:]]


def test_price_writes_exact_artifacts(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg = write_config(cfg_path)
    out = tmp_path / "run"
    rc = main(["price", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 0
    assert "converged after 1 sweeps" in capsys.readouterr().out

    header, rows = read_csv(out / "surface.csv")
    assert header == "x1,x2,S1,S2,value"
    assert len(rows) == 11 * 11

    # %.17g round-trips doubles, so the CSV must reproduce the solver output
    # bit for bit
    result = solve_nonlinear(validate(cfg), flags=SolverFlags())
    parsed = np.array([float(r[4]) for r in rows]).reshape(11, 11)
    assert np.array_equal(parsed, result.surface.values)

    g_header, g_rows = read_csv(out / "cost_field.csv")
    assert g_header == "x1,x2,S1,S2,G"
    assert all(float(r[4]) == 0.0 for r in g_rows)

    c_header, c_rows = read_csv(out / "convergence.csv")
    assert c_header == "n,d1,d2,dinf"
    assert c_rows == []  # zero cost: single sweep, nothing to compare

    meta_text = (out / "metadata.json").read_text()
    meta = json.loads(meta_text)
    assert meta["command"] == "price"
    assert meta["result"]["converged"] is True
    assert meta["result"]["iterations"] == 1
    assert meta["config"]["grid"]["nx"] == 10
    # deterministic formatting: sorted keys, two-space indent, trailing newline
    assert meta_text == json.dumps(meta, indent=2, sort_keys=True) + "\n"


def test_price_reports_nonconvergence_with_exit_3(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    write_config(
        cfg_path,
        cost={"type": "constant", "C0": 0.005},
        solver={"max_iter": 1, "tol": 1e-14},
    )
    rc = main(["price", "--config", str(cfg_path), "--out", str(tmp_path / "run")])
    assert rc == 3
    assert "NOT converged" in capsys.readouterr().out


def test_analytic_matches_closed_form_and_honors_tau_flag(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg = write_config(cfg_path)
    out = tmp_path / "ana"
    assert main(["analytic", "--config", str(cfg_path), "--out", str(out)]) == 0

    scen = validate(cfg)
    s = scen.grid.spot_axis()
    expected = cbest_price(s[:, None], s[None, :], 1.0, scen)
    _, rows = read_csv(out / "surface.csv")
    parsed = np.array([float(r[4]) for r in rows]).reshape(11, 11)
    assert np.array_equal(parsed, np.broadcast_to(expected, (11, 11)))
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["result"]["tau"] == 1.0

    out2 = tmp_path / "ana_quarter"
    rc = main(
        ["analytic", "--config", str(cfg_path), "--out", str(out2), "--flag", "output.tau=0.25"]
    )
    assert rc == 0
    meta2 = json.loads((out2 / "metadata.json").read_text())
    assert meta2["result"]["tau"] == 0.25
    _, rows2 = read_csv(out2 / "surface.csv")
    expected2 = cbest_price(s[:, None], s[None, :], 0.25, scen)
    parsed2 = np.array([float(r[4]) for r in rows2]).reshape(11, 11)
    assert np.array_equal(parsed2, np.broadcast_to(expected2, (11, 11)))


def test_leland_classification_lines(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path, solver={"skip_scan": True})
    assert main(["leland", "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "asset 1:" in out and "asset 2:" in out
    assert out.count("well-posed (Le < 1)") == 2
    assert "scan:" not in out

    # a huge round-trip cost tips both assets over the threshold
    write_config(cfg_path, cost={"type": "constant", "C0": 0.5}, solver={"skip_scan": True})
    assert main(["leland", "--config", str(cfg_path)]) == 0
    assert capsys.readouterr().out.count("ILL-POSED (Le >= 1)") == 2


def test_leland_scan_report_files(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path, output={"per_node_csv": True})
    out = tmp_path / "scan"
    rc = main(["leland", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 0
    assert "scan:" in capsys.readouterr().out
    report = json.loads((out / "ellipticity.json").read_text())
    assert report["result"]["satisfied"] is True  # zero cost cannot break it
    assert report["result"]["form"] == "aggregate"
    lines = (out / "ellipticity_nodes.csv").read_text().splitlines()
    assert lines[0] == "i,j,S1,S2,max_eigenvalue,degenerate,satisfied"
    assert len(lines) == 1 + 9 * 9


def test_converge_prints_record_table(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path, cost={"type": "constant", "C0": 0.001})
    out = tmp_path / "conv"
    rc = main(["converge", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert text.startswith("n    d1")
    assert "converge: converged after" in text

    header, rows = read_csv(out / "convergence.csv")
    assert header == "n,d1,d2,dinf"
    assert [int(r[0]) for r in rows] == list(range(1, len(rows) + 1))
    meta = json.loads((out / "metadata.json").read_text())
    assert len(meta["result"]["records"]) == meta["result"]["iterations"] - 1


def test_sweep_csv_layout(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    write_config(
        cfg_path,
        cost={"type": "constant", "C0": 0.001},
        output={"dt_values": [0.01, 0.001], "probes": [[30.0, 30.0]]},
    )
    out = tmp_path / "sweep"
    rc = main(["sweep", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 0
    assert "solved 2 rebalancing intervals" in capsys.readouterr().out

    header, rows = read_csv(out / "sweep.csv")
    assert header == "dt,converged,iterations,price_1,G_1"
    assert [float(r[0]) for r in rows] == [0.01, 0.001]
    for r in rows:
        assert r[1] == "1"
        assert float(r[4]) > 0.0
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["result"]["n_dt"] == 2
    assert meta["result"]["probe_nodes"] == [[5, 5]]


@pytest.mark.parametrize(
    "mutate_argv",
    [
        lambda cfg, bad: ["price", "--config", str(bad), "--out", str(bad.parent / "o")],
        lambda cfg, bad: ["price", "--config", str(cfg), "--out", str(cfg.parent / "o"), "--flag", "no-equals-sign"],
        lambda cfg, bad: ["price", "--config", str(cfg), "--out", str(cfg.parent / "o"), "--flag", "=5"],
        lambda cfg, bad: ["price", "--config", str(cfg), "--out", str(cfg.parent / "o"), "--flag", "solver.boundary=bogus"],
    ],
    ids=["malformed-json", "flag-missing-equals", "flag-empty-key", "bad-solver-choice"],
)
def test_exit_code_2_on_config_errors(tmp_path, capsys, mutate_argv):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path)
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert main(mutate_argv(cfg_path, bad)) == 2
    assert "error" in capsys.readouterr().err


def test_exit_code_2_on_missing_section(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg = write_config(cfg_path)
    del cfg["market"]
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["analytic", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "market" in capsys.readouterr().err


def test_exit_code_4_when_output_dir_cannot_be_created(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path)
    blocker = tmp_path / "blocker"
    blocker.write_text("a file, not a directory")
    rc = main(["analytic", "--config", str(cfg_path), "--out", str(blocker / "sub")])
    assert rc == 4
    assert "i/o error" in capsys.readouterr().err


def test_flag_overrides_reach_nested_sections(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path)
    out = tmp_path / "small"
    rc = main(
        ["price", "--config", str(cfg_path), "--out", str(out), "--flag", "grid.nx=8"]
    )
    assert rc == 0
    _, rows = read_csv(out / "surface.csv")
    assert len(rows) == 9 * 9
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["config"]["grid"]["nx"] == 8
