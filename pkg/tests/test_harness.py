import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from fanreg.harness import (SLOTS_PER_DAY, TICKS_PER_SLOT, ExperimentError, Scenario, ar1_forecast,
                            export_results, read_disturbance_csv, run_experiment)
from fanreg.model import table_model
from fanreg.signals import RegulationSignal

ROOT = Path(__file__).resolve().parents[1]
FAST = dict(days=1, seed=3, N2=8)


@pytest.fixture(scope="module")
def result():
    return run_experiment(Scenario(**FAST))


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_cadence(result):
    for log in result.cells.values():
        assert len(log.u_set) == SLOTS_PER_DAY
        assert len(log.tick_t) == SLOTS_PER_DAY * TICKS_PER_SLOT == 96 * 225
        np.testing.assert_array_equal(log.tick_t, 4.0 * np.arange(96 * 225))
    # day 0 at the start, day 1 issued at noon of day 0
    assert [(d, k0) for d, k0, _ in result.schedules] == [(0, 0), (1, 96)]
    assert all(s.N == SLOTS_PER_DAY for _, _, s in result.schedules)


def test_baseline_is_fan_power_of_setpoint(result):
    curves = result.scenario.curves
    for log in result.cells.values():
        np.testing.assert_array_equal(log.P_s, [float(curves.f(u)) for u in log.u_set])
        # the target equals the baseline plus the requested reserve within each slot
        Pd = np.array(log.tick_Pd).reshape(SLOTS_PER_DAY, TICKS_PER_SLOT)
        w = np.array(log.tick_w).reshape(SLOTS_PER_DAY, TICKS_PER_SLOT)
        R = np.where(w > 0, w * np.array(log.R_d)[:, None], w * np.array(log.R_u)[:, None])
        np.testing.assert_allclose(Pd, np.array(log.P_s)[:, None] + R, atol=1e-9)


def test_schedule_reserves_reach_level3(result):
    s0 = result.schedules[0][2]
    np.testing.assert_array_equal(result.regulation.R_u, s0.R_u)
    np.testing.assert_array_equal(result.benchmark.R_u, 0.0)
    assert np.max(result.R_u + result.R_d) > 0


def test_energy_accounting(result):
    for name, log in result.cells.items():
        s = result.summary[name]
        assert s["energy_Wh"] >= 0
        assert s["energy_Wh"] == pytest.approx(np.sum(log.P_avg) * 0.25, rel=1e-9)
        assert s["daily_energy_Wh"][0] == pytest.approx(s["energy_Wh"], rel=1e-12)
    assert result.summary["regulation"]["reserve_revenue"] > 0


def test_regulation_cell_tracks(result):
    s = result.summary["regulation"]
    assert s["tracking_within_epsilon"] >= 0.95
    assert s["comfort_violation_Ch"] < 5.0


def test_reserve_deployment_is_nearly_energy_neutral(result):
    log = result.regulation
    assert np.sum(log.P_avg) == pytest.approx(np.sum(log.P_s), rel=0.05)


@pytest.mark.xfail(strict=True, reason="scheduling raises the regulation cell's baseline to sell up-reserve, "
                                       "and thermal-symmetric reserves make R_d exceed R_u")
def test_daily_energy_within_five_percent_of_benchmark(result):
    reg = result.summary["regulation"]["energy_Wh"]
    ben = result.summary["benchmark"]["energy_Wh"]
    assert abs(reg - ben) <= 0.05 * ben


def test_twin_cells_identical_without_reserves():
    res = run_experiment(Scenario(**FAST, reserves=False))
    reg, ben = res.regulation, res.benchmark
    for f in ("T_r", "T_m", "T_r_meas", "Tr_hat", "u_set", "P_avg", "tick_Pf", "tick_Nf"):
        assert getattr(reg, f) == getattr(ben, f), f
    assert reg.energy_Wh == ben.energy_Wh


def test_zero_reserve_prices_match_benchmark():
    res = run_experiment(Scenario(**FAST, reserve_price_kw_h=[0.0]))
    assert max(np.max(res.R_u), np.max(res.R_d)) <= 1e-4
    np.testing.assert_allclose(res.regulation.P_avg, res.benchmark.P_avg, atol=1e-3)


def test_deterministic_replay(result, tmp_path):
    again = run_experiment(Scenario(**FAST))
    assert again.summary == result.summary
    a = export_results(result, tmp_path / "a", plots=False)
    b = export_results(again, tmp_path / "b", plots=False)
    assert a == b


def test_seed_changes_result(result):
    other = run_experiment(Scenario(**{**FAST, "seed": 4}, reserves=False))
    assert other.regulation.T_r_meas != result.benchmark.T_r_meas


def test_export_manifest_and_idempotence(result, tmp_path):
    m1 = export_results(result, tmp_path)
    names = {f["path"] for f in m1["files"]}
    assert {"level1_schedule.csv", "level2_setpoints.csv", "level2_setpoints_benchmark.csv",
            "level3_tracking.csv", "level3_tracking_benchmark.csv", "building.csv", "envelopes.csv",
            "power.csv", "summary.json", "envelopes.png", "tracking.png"} <= names
    for f in m1["files"]:
        if f["path"].endswith(".csv"):
            assert len(read_rows(tmp_path / f["path"])) == f["rows"] + 1
    rows = {f["path"]: f["rows"] for f in m1["files"]}
    assert rows["level3_tracking.csv"] == 96 * 225 and rows["level1_schedule.csv"] == 2 * 96
    assert rows["building.csv"] == 2 * 96
    before = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert export_results(result, tmp_path) == m1
    assert {p.name: p.read_bytes() for p in tmp_path.iterdir()} == before


def test_export_timestamps_iso(result, tmp_path):
    export_results(result, tmp_path, plots=False)
    rows = read_rows(tmp_path / "level2_setpoints.csv")
    assert rows[0] == ["timestamp", "k", "u_setpoint", "P_baseline", "Tr_hat", "Tm_hat"]
    assert rows[1][0] == "2024-07-01T00:00:00" and rows[2][0] == "2024-07-01T00:15:00"
    env = read_rows(tmp_path / "envelopes.csv")
    assert env[1][0] == "2024-07-01T00:15:00"
    assert json.loads((tmp_path / "summary.json").read_text())["slots"] == 96


def test_empty_experiment_exports_headers(tmp_path):
    res = run_experiment(Scenario(days=0))
    m = export_results(res, tmp_path, plots=False)
    for f in m["files"]:
        if f["path"].endswith(".csv"):
            assert f["rows"] == 0 and len(read_rows(tmp_path / f["path"])) == 1


def test_level_errors_carry_level_and_time():
    warm = replace(table_model("older"), T_s=30.0)
    with pytest.raises(ExperimentError, match=r"level 1 failed at 2024-07-01T00:00:00"):
        run_experiment(Scenario(**FAST, controller_model=warm))


def test_short_series_rejected():
    with pytest.raises(ExperimentError, match="disturbance series"):
        run_experiment(Scenario(days=1, disturbances=np.zeros((10, 3))))
    with pytest.raises(ExperimentError, match="regulation signal"):
        run_experiment(Scenario(days=1, N2=8, signal=RegulationSignal(np.zeros(100))))


def test_ar1_forecast_starts_at_truth_and_is_seeded():
    V = np.tile([20.0, 100.0, 2000.0], (50, 1))
    a = ar1_forecast(V, 5, 10, 0.9, 0.2, np.random.default_rng(0))
    b = ar1_forecast(V, 5, 10, 0.9, 0.2, np.random.default_rng(0))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a[:, 1:], V[5:15, 1:])
    assert np.all(a[:, 0] != 20.0)
    np.testing.assert_array_equal(ar1_forecast(V, 5, 10, 0.9, 0.0, np.random.default_rng(1)), V[5:15])


def test_shipped_scenario_loads_defaults():
    sc = Scenario.load(ROOT / "scenarios" / "default.json")
    d = Scenario()
    for k in ("days", "seed", "N2", "w_lim", "block", "symmetry", "tau", "sigma_P", "epsilon", "meas_std"):
        assert getattr(sc, k) == getattr(d, k), k
    assert sc.curves == d.curves and sc.truth_model == d.truth_model
    np.testing.assert_array_equal(sc.noise.Q, d.noise.Q)


def test_scenario_csv_inputs(tmp_path):
    n = 2 * 96 + 8
    with open(tmp_path / "w.csv", "w") as fh:
        fh.write("timestamp,T_a,G,I_g\n" + "".join(f"{900 * k},25,300,2500\n" for k in range(n)))
    (tmp_path / "s.json").write_text(json.dumps(dict(days=1, weather=dict(csv="w.csv"), level2=dict(N2=8),
                                                     prices=dict(reserve_kw_h=[0.0] * 96))))
    sc = Scenario.load(tmp_path / "s.json")
    assert sc.disturbances.shape == (n, 3) and sc.N2 == 8 and len(sc.reserve_price_kw_h) == 96
    np.testing.assert_array_equal(read_disturbance_csv(tmp_path / "w.csv")[0], [25, 300, 2500])


@pytest.mark.parametrize("kw", [dict(days=-1), dict(energy_price_kwh=[0.1, 0.2]), dict(formulation="other"),
                                dict(start="yesterday")])
def test_scenario_validation(kw):
    with pytest.raises(ValueError):
        Scenario(**kw)
