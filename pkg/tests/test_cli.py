import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fanreg.cli import main
from fanreg.fan import FanCurves, table_curves, write_sweep_csv
from fanreg.model import DiscreteBuildingModel, table_model
from fanreg.sysid import synthesize_dataset

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = Path(__file__).parent / "fixtures"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_fit_building(tmp_path, capsys):
    synthesize_dataset(table_model("new"), days=3, seed=0).to_csv(tmp_path / "d.csv")
    code, out, _ = run(capsys, "fit-building", tmp_path / "d.csv", "--states", 2, "--horizon", "day", "--starts", 1,
                       "--out", tmp_path / "m.json", "--report", tmp_path / "r.json")
    assert code == 0
    assert json.loads(out)["rmse"] < 1e-3
    m = DiscreteBuildingModel.load(tmp_path / "m.json")
    np.testing.assert_allclose(m.coefficients(), table_model("new").coefficients(), rtol=0.01)
    assert json.loads((tmp_path / "r.json").read_text())["config"]["n_states"] == 2


def test_fit_fan(tmp_path, capsys):
    c = table_curves()
    N = np.repeat(np.linspace(10, 90, 9), 4)
    u = c.h(N)
    write_sweep_csv(tmp_path / "s.csv", np.column_stack([N, u, c.f(u), 30.0 * np.arange(len(N))]))
    code, out, _ = run(capsys, "fit-fan", tmp_path / "s.csv", "--settle", 0, "--out", tmp_path / "c.json")
    assert code == 0 and json.loads(out)["rmse"]["flow_to_power"] < 1e-6
    back = FanCurves.load(tmp_path / "c.json")
    np.testing.assert_allclose(back.alpha, c.alpha, rtol=1e-6)


def test_analyze_signal(tmp_path, capsys):
    code, out, _ = run(capsys, "analyze-signal", FIXTURES / "regulation_windows.csv", "--window", 900,
                       "--percentile", 97.5, "--out", tmp_path / "st.json")
    assert code == 0
    d = json.loads(out)
    assert d["n_windows"] == 41 and d["w_lim"] == 40 / 64
    assert json.loads((tmp_path / "st.json").read_text())["n_windows"] == 41


@pytest.mark.parametrize("exact", [False, True])
def test_schedule(tmp_path, capsys, exact):
    cfg = json.loads((ROOT / "scenarios" / "schedule_day.json").read_text())
    cfg["N"] = 8
    (tmp_path / "sc.json").write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "schedule", tmp_path / "sc.json", "--out", tmp_path / "s.csv",
                       *(["--exact"] if exact else []))
    assert code == 0
    d = json.loads(out)
    assert d["converged"] and d["formulation"] == ("exact" if exact else "approx")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "k,u,r_u,r_d,R_u,R_d,x_hi,x_lo" and len(lines) == 9


def test_simulate_zero_days(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", ROOT / "scenarios" / "default.json", "--days", 0, "--seed", 5,
                       "--out", tmp_path / "e", "--no-plots")
    assert code == 0
    d = json.loads(out)
    assert d["slots"] == 0 and d["seed"] == 5
    assert (tmp_path / "e" / "manifest.json").exists()


def test_verify(capsys):
    code, out, _ = run(capsys, "verify")
    assert code == 0
    rows = out.splitlines()[1:]
    assert len(rows) == 8 and all("PASS" in r for r in rows)


@pytest.mark.parametrize("argv", [
    ["analyze-signal", "missing.csv"],
    ["fit-building", "missing.csv"],
    ["schedule", "missing.json"],
    ["simulate", "--days", "-1", "--no-plots"],
])
def test_bad_input_exits_two(tmp_path, capsys, argv):
    argv = [str(tmp_path / a) if a.endswith((".csv", ".json")) else a for a in argv]
    code, _, err = run(capsys, *argv, *(["--out", tmp_path / "o"] if argv[0] == "simulate" else []))
    assert code == 2 and err.startswith("error:")


def test_rejected_signal_names_row(tmp_path, capsys):
    (tmp_path / "w.csv").write_text("timestamp,w\n0,0.1\n4,2.0\n")
    code, _, err = run(capsys, "analyze-signal", tmp_path / "w.csv")
    assert code == 2 and "row 3" in err


def test_console_entry_point(tmp_path):
    p = subprocess.run([sys.executable, "-m", "fanreg", "analyze-signal", str(FIXTURES / "regulation_windows.csv")],
                       capture_output=True, text=True, cwd=tmp_path)
    assert p.returncode == 0 and json.loads(p.stdout)["percentiles"]["median"] == 21 / 64
    p = subprocess.run([sys.executable, "-m", "fanreg", "fit-fan"], capture_output=True, text=True, cwd=tmp_path)
    assert p.returncode == 2
