"""Closed-loop experiment: day-ahead schedule, 15-minute MPC with EKF, 4-second tracking.

Two simulated cells share the truth building model, weather and noise
seeds. The regulation cell follows the reserve schedule and tracks the
regulation signal; the benchmark cell runs energy-only MPC without reserves.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from . import params
from .climate import SETPOINT_COLUMNS, KalmanState, MpcConfig, NoiseConfig, kf_predict, kf_update, mpc_step
from .fan import FanCurves, consistent_speed_curves, table_curves
from .model import DiscreteBuildingModel, simulate, step, table_model
from .regulation import LOG_COLUMNS, FanPlant, GainSchedule, SwitchedControllerState, run_tracking
from .scheduler import MarketScenario, comfort_band, schedule_reserves, schedule_reserves_exact
from .signals import RegulationSignal, generate_synthetic, load_signal
from .weather import synthetic_disturbances

SLOTS_PER_DAY = 96
SLOT_S = 900.0
TICK_S = 4.0
TICKS_PER_SLOT = int(SLOT_S / TICK_S)
SCHEDULE_SLOT = 48  # 12:00
DEFAULT_BAND = (1 / 1800, 1 / 300)


class ExperimentError(RuntimeError):
    pass


@dataclass
class Scenario:
    days: int = 1
    seed: int = 0
    start: str = "2024-07-01T00:00:00"
    truth_model: DiscreteBuildingModel = field(default_factory=lambda: table_model("new"))
    controller_model: DiscreteBuildingModel = field(default_factory=lambda: table_model("older"))
    curves: FanCurves = field(default_factory=lambda: consistent_speed_curves(table_curves()))
    plant_curves: FanCurves | None = None
    energy_price_kwh: np.ndarray = field(default_factory=lambda: np.array([0.12]))
    reserve_price_kw_h: np.ndarray = field(default_factory=lambda: np.array([0.05]))
    occupied_hours: tuple = (8.0, 18.0)
    occupied_band: tuple = (21.0, 24.0)
    unoccupied_band: tuple = (19.0, 26.0)
    weather: dict = field(default_factory=dict)
    disturbances: np.ndarray | None = None
    forecast_phi: float = 0.9
    forecast_sigma: float = 0.2
    signal: RegulationSignal | None = None
    signal_band: tuple = DEFAULT_BAND
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    meas_std: float = 0.1
    process_std: float = 0.0
    w_lim: float = params.WLIM_DEFAULT
    block: int = 4
    symmetry: str = "thermal_symmetric"
    penalty: float = 1e4
    formulation: str = "approx"
    reserves: bool = True
    N2: int = 32
    tau: float = 5.0
    sigma_P: float = 2.0
    epsilon: float = 25.0
    x0: tuple = (23.0, 23.0)

    def __post_init__(self):
        if self.days < 0:
            raise ValueError("days must be non-negative")
        if self.plant_curves is None:
            self.plant_curves = self.curves
        self.energy_price_kwh = np.atleast_1d(np.asarray(self.energy_price_kwh, dtype=float))
        self.reserve_price_kw_h = np.atleast_1d(np.asarray(self.reserve_price_kw_h, dtype=float))
        for name in ("energy_price_kwh", "reserve_price_kw_h"):
            if len(getattr(self, name)) not in (1, SLOTS_PER_DAY):
                raise ValueError(f"{name} must be a scalar or a {SLOTS_PER_DAY}-slot daily profile")
        if self.formulation not in ("approx", "exact"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        datetime.fromisoformat(self.start)

    @property
    def n_slots(self) -> int:
        return self.days * SLOTS_PER_DAY

    @property
    def n_series(self) -> int:
        """Disturbance coverage: one extra day for the last schedule plus the MPC horizon."""
        return (self.days + 1) * SLOTS_PER_DAY + self.N2

    def slot_prices(self, n: int):
        """Per-slot energy ($/W) and reserve ($/W) prices from market units."""
        dt_h = SLOT_S / 3600.0
        reps = int(np.ceil(n / SLOTS_PER_DAY))

        def tile(p):
            return (np.tile(p, reps * SLOTS_PER_DAY)[:n] if len(p) > 1 else np.full(n, p[0])) / 1000.0 * dt_h

        return tile(self.energy_price_kwh), tile(self.reserve_price_kw_h)

    def comfort(self, n: int):
        return comfort_band(n, 0.0, SLOT_S / 3600.0, self.occupied_hours, self.occupied_band,
                            self.unoccupied_band)

    def timestamp(self, k: int) -> str:
        return (datetime.fromisoformat(self.start) + timedelta(seconds=SLOT_S * k)).isoformat()

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "Scenario":
        base = Path(base_dir)
        kw = {}
        for key in ("days", "seed", "start", "x0", "meas_std", "process_std", "forecast_phi", "forecast_sigma"):
            if key in d:
                kw[key] = d[key]
        for key in ("truth_model", "controller_model"):
            if key in d:
                v = d[key]
                kw[key] = table_model(v) if isinstance(v, str) else DiscreteBuildingModel.from_dict(v)
        fan = d.get("fan", "table")
        curves = table_curves() if fan == "table" else FanCurves.from_dict(fan)
        speed_map = d.get("speed_map", "consistent")
        if speed_map not in ("consistent", "table"):
            raise ValueError("speed_map must be 'consistent' or 'table'")
        kw["curves"] = consistent_speed_curves(curves) if speed_map == "consistent" else curves
        prices = d.get("prices", {})
        if "energy_kwh" in prices:
            kw["energy_price_kwh"] = prices["energy_kwh"]
        if "reserve_kw_h" in prices:
            kw["reserve_price_kw_h"] = prices["reserve_kw_h"]
        comfort = d.get("comfort", {})
        for src, dst in (("occupied", "occupied_hours"), ("occupied_band", "occupied_band"),
                         ("unoccupied_band", "unoccupied_band")):
            if src in comfort:
                kw[dst] = tuple(comfort[src])
        weather = dict(d.get("weather", {}))
        if "csv" in weather:
            kw["disturbances"] = read_disturbance_csv(base / weather.pop("csv"))
        kw["weather"] = weather
        sig = d.get("signal", {})
        if "csv" in sig:
            kw["signal"] = load_signal(base / sig["csv"])
        if "band" in sig:
            kw["signal_band"] = tuple(sig["band"])
        noise = d.get("noise", {})
        if "Q" in noise or "Q_diag" in noise or "R" in noise:
            Q = noise["Q"] if "Q" in noise else np.diag(noise.get("Q_diag", params.EKF_Q_DIAG))
            kw["noise"] = NoiseConfig(np.asarray(Q, dtype=float), float(noise.get("R", params.EKF_R)))
        for key in ("meas_std", "process_std"):
            if key in noise:
                kw[key] = float(noise[key])
        l1 = d.get("level1", {})
        for key in ("w_lim", "block", "symmetry", "penalty", "formulation", "reserves"):
            if key in l1:
                kw[key] = l1[key]
        if "N2" in d.get("level2", {}):
            kw["N2"] = int(d["level2"]["N2"])
        for key in ("tau", "sigma_P", "epsilon"):
            if key in d.get("level3", {}):
                kw[key] = float(d["level3"][key])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)


def read_disturbance_csv(path) -> np.ndarray:
    """``timestamp,T_a,G,I_g`` rows at the slot period."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"T_a", "G", "I_g"} <= set(reader.fieldnames or ()):
            raise ValueError(f"{path}: expected columns T_a,G,I_g")
        for i, r in enumerate(reader, start=2):
            try:
                rows.append([float(r["T_a"]), float(r["G"]), float(r["I_g"])])
            except (TypeError, ValueError):
                raise ValueError(f"{path}: malformed row {i}") from None
    return np.array(rows).reshape(-1, 3)


# -- experiment -----------------------------------------------------------------

@dataclass
class CellLog:
    """Per-slot Level 2 records and per-tick Level 3 records of one cell."""

    name: str
    T_r: list = field(default_factory=list)  # true state at slot start
    T_m: list = field(default_factory=list)
    T_r_end: list = field(default_factory=list)  # true room temperature at slot end
    T_r_meas: list = field(default_factory=list)
    Tr_hat: list = field(default_factory=list)  # a posteriori estimate used by the MPC
    Tm_hat: list = field(default_factory=list)
    u_set: list = field(default_factory=list)
    P_s: list = field(default_factory=list)
    u_avg: list = field(default_factory=list)
    P_avg: list = field(default_factory=list)
    env_hi: list = field(default_factory=list)  # MPC one-step envelope for the slot end
    env_lo: list = field(default_factory=list)
    R_u: list = field(default_factory=list)
    R_d: list = field(default_factory=list)
    tick_t: list = field(default_factory=list)
    tick_w: list = field(default_factory=list)
    tick_Pd: list = field(default_factory=list)
    tick_Pf: list = field(default_factory=list)
    tick_Nf: list = field(default_factory=list)
    tick_branch: list = field(default_factory=list)
    energy_Wh: float = 0.0
    notes: list = field(default_factory=list)


@dataclass
class ExperimentResult:
    scenario: Scenario
    cells: dict
    schedules: list  # (day, first slot, ReserveSchedule)
    x_min: np.ndarray
    x_max: np.ndarray
    energy_price: np.ndarray
    reserve_price: np.ndarray
    R_u: np.ndarray
    R_d: np.ndarray
    summary: dict = field(default_factory=dict)

    @property
    def regulation(self) -> CellLog:
        return self.cells["regulation"]

    @property
    def benchmark(self) -> CellLog:
        return self.cells["benchmark"]


class _Cell:
    def __init__(self, name: str, sc: Scenario, seeds: dict, reserves: bool):
        self.name, self.reserves = name, reserves
        self.log = CellLog(name)
        self.x = np.asarray(sc.x0, dtype=float)
        self.kf = KalmanState(self.x.copy(), np.eye(2))
        self.plant = FanPlant(sc.plant_curves, sc.tau, sc.sigma_P)
        self.ctrl: SwitchedControllerState | None = None
        # both cells draw from identically seeded streams
        self.rng_meas = np.random.default_rng(seeds["meas"])
        self.rng_plant = np.random.default_rng(seeds["plant"])
        self.rng_proc = np.random.default_rng(seeds["process"])
        self.rng_fc = np.random.default_rng(seeds["forecast"])
        self.warm = None
        self.cfg = MpcConfig.with_fan_bounds(sc.curves, N2=sc.N2, penalty=sc.penalty, w_lim=sc.w_lim,
                                             formulation=sc.formulation, robust=reserves)


def ar1_forecast(V: np.ndarray, k: int, n: int, phi: float, sigma: float, rng) -> np.ndarray:
    """Truth plus an AR(1) ambient-temperature error that starts at zero at issue time."""
    out = V[k:k + n].copy()
    draws = rng.standard_normal(len(out))
    e = 0.0
    for j in range(len(out)):
        e = phi * e + sigma * draws[j]
        out[j, 0] += e
    return out


def _seeds(seed: int) -> dict:
    names = ("weather", "signal", "meas", "plant", "process", "forecast", "schedule")
    return dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))


def _signal(sc: Scenario, n_ticks: int, seed) -> RegulationSignal:
    if sc.signal is not None:
        if len(sc.signal) < n_ticks:
            raise ExperimentError(f"regulation signal covers {len(sc.signal)} samples, experiment needs {n_ticks}")
        if abs(sc.signal.dt - TICK_S) > 1e-9:
            raise ExperimentError(f"regulation signal period is {sc.signal.dt} s, expected {TICK_S} s")
        return sc.signal
    if n_ticks == 0:
        return RegulationSignal(np.zeros(0), TICK_S)
    s = int(np.random.default_rng(seed).integers(2 ** 31))
    return generate_synthetic(s, n_ticks * TICK_S, sc.signal_band, TICK_S)


def _disturbances(sc: Scenario, seed) -> np.ndarray:
    n = sc.n_series
    if sc.disturbances is not None:
        if len(sc.disturbances) < n:
            raise ExperimentError(f"disturbance series covers {len(sc.disturbances)} slots, experiment needs {n}")
        return np.asarray(sc.disturbances, dtype=float)[:n]
    weather = dict(sc.weather)
    weather.setdefault("jitter", 1.0)
    return synthetic_disturbances(n, 0.0, SLOT_S / 3600.0, rng=np.random.default_rng(seed), **weather)


def _level(level: int, sc: Scenario, k: int, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except Exception as exc:
        raise ExperimentError(f"level {level} failed at {sc.timestamp(k)} (slot {k}): {exc}") from exc


def run_experiment(sc: Scenario) -> ExperimentResult:
    """Simulate the regulation cell and the energy-only benchmark cell side by side."""
    seeds = _seeds(sc.seed)
    V = _disturbances(sc, seeds["weather"])
    n_total = len(V)
    c_all, lam_all = sc.slot_prices(n_total)
    x_min, x_max = sc.comfort(n_total)
    signal = _signal(sc, sc.n_slots * TICKS_PER_SLOT, seeds["signal"])
    cells = [_Cell("regulation", sc, seeds, True), _Cell("benchmark", sc, seeds, False)]
    rng_sched = np.random.default_rng(seeds["schedule"])
    sched_fn = schedule_reserves_exact if sc.formulation == "exact" else schedule_reserves
    R_u, R_d = np.zeros(n_total), np.zeros(n_total)
    u_plan = np.zeros(n_total)
    zeros = np.zeros(n_total)
    schedules = []

    def schedule_day(day: int, x_start, k_issue: int):
        k0 = day * SLOTS_PER_DAY
        sl = slice(k0, k0 + SLOTS_PER_DAY)
        v = ar1_forecast(V, k0, SLOTS_PER_DAY, sc.forecast_phi, sc.forecast_sigma, rng_sched)
        lam = lam_all[sl] if sc.reserves else np.zeros(SLOTS_PER_DAY)
        ms = _level(1, sc, k_issue, MarketScenario.with_fan_bounds, sc.curves, energy_price=c_all[sl],
                    reserve_price=lam, disturbances=v, x_min=x_min[sl], x_max=x_max[sl], w_lim=sc.w_lim,
                    block=sc.block, symmetry=sc.symmetry, penalty=sc.penalty)
        s = _level(1, sc, k_issue, sched_fn, sc.controller_model, sc.curves, ms, x_start)
        if not sc.reserves:
            s.R_u[:] = 0.0
            s.R_d[:] = 0.0
        R_u[sl], R_d[sl], u_plan[sl] = s.R_u, s.R_d, s.u
        schedules.append((day, k0, s))

    if sc.days > 0:
        schedule_day(0, np.asarray(sc.x0, dtype=float), 0)
    for k in range(sc.n_slots):
        day = k // SLOTS_PER_DAY
        for cell in cells:
            r_u, r_d = (R_u, R_d) if cell.reserves else (zeros, zeros)
            _slot(cell, k, sc, V, c_all, x_min, x_max, r_u, r_d, signal)
        if k % SLOTS_PER_DAY == SCHEDULE_SLOT - 1:
            # noon: predict next midnight from the current estimate, then schedule the next day
            reg = cells[0]
            k_noon = k + 1
            k1 = (day + 1) * SLOTS_PER_DAY
            v = ar1_forecast(V, k_noon, k1 - k_noon, sc.forecast_phi, sc.forecast_sigma, rng_sched)
            x_mid = simulate(sc.controller_model, reg.kf.x, u_plan[k_noon:k1], v)[-1]
            schedule_day(day + 1, x_mid, k_noon)
    n = sc.n_slots
    res = ExperimentResult(scenario=sc, cells={c.name: c.log for c in cells}, schedules=schedules,
                           x_min=x_min[:n], x_max=x_max[:n], energy_price=c_all[:n],
                           reserve_price=lam_all[:n] if sc.reserves else np.zeros(n),
                           R_u=R_u[:n].copy(), R_d=R_d[:n].copy())
    res.summary = summarize(res)
    return res


def _slot(cell: _Cell, k: int, sc: Scenario, V, c_all, x_min, x_max, R_u, R_d, signal) -> None:
    log = cell.log
    y = cell.x[0] + (cell.rng_meas.normal(0.0, sc.meas_std) if sc.meas_std > 0 else 0.0)
    cell.kf = kf_update(cell.kf, y, sc.noise)
    sl = slice(k, k + sc.N2)
    v = ar1_forecast(V, k, sc.N2, sc.forecast_phi, sc.forecast_sigma, cell.rng_fc)
    mpc = _level(2, sc, k, mpc_step, sc.controller_model, sc.curves, cell.cfg, cell.kf.x, R_u[sl], R_d[sl],
                 v, c_all[sl], x_min[sl], x_max[sl], warm_start=cell.warm)
    cell.warm = np.r_[mpc.u[1:], mpc.u[-1]]
    log.notes.extend(f"{sc.timestamp(k)} level 2: {note}" for note in mpc.notes)
    u0 = mpc.u0
    P_s = float(sc.curves.f(u0))
    if cell.ctrl is None:
        cell.plant.speed = float(np.clip(sc.plant_curves.h_inv(u0), params.SPEED_MIN, params.SPEED_MAX))
        cell.ctrl = SwitchedControllerState(N_f=cell.plant.speed, epsilon=sc.epsilon, dt=TICK_S)
    w = signal.w[k * TICKS_PER_SLOT:(k + 1) * TICKS_PER_SLOT] if cell.reserves else np.zeros(TICKS_PER_SLOT)
    trk = _level(3, sc, k, run_tracking, (P_s, float(R_u[k]), float(R_d[k])), RegulationSignal(w, TICK_S),
                 cell.plant, GainSchedule(), sc.epsilon, rng=cell.rng_plant, curves=sc.curves, state=cell.ctrl,
                 t0=k * SLOT_S)
    cell.ctrl = trk.state
    log.notes.extend(f"{sc.timestamp(k)} level 3: {note}" for note in trk.notes)
    u_avg = float(np.mean(sc.plant_curves.h(trk.speed)))
    P_true = sc.plant_curves.g(trk.speed)
    log.energy_Wh += float(np.sum(P_true) * TICK_S / 3600.0)
    x_next = np.array(step(sc.truth_model, cell.x, u_avg, V[k]))
    if sc.process_std > 0:
        x_next = x_next + cell.rng_proc.normal(0.0, sc.process_std, 2)

    log.T_r.append(float(cell.x[0]))
    log.T_m.append(float(cell.x[1]))
    log.T_r_end.append(float(x_next[0]))
    log.T_r_meas.append(float(y))
    log.Tr_hat.append(float(cell.kf.x[0]))
    log.Tm_hat.append(float(cell.kf.x[1]))
    log.u_set.append(u0)
    log.P_s.append(P_s)
    log.u_avg.append(u_avg)
    log.P_avg.append(float(np.mean(P_true)))
    log.env_hi.append(float(mpc.x_hi[1, 0]))
    log.env_lo.append(float(mpc.x_lo[1, 0]))
    log.R_u.append(float(R_u[k]))
    log.R_d.append(float(R_d[k]))
    log.tick_t.extend(trk.t.tolist())
    log.tick_w.extend(trk.w.tolist())
    log.tick_Pd.extend(trk.P_d.tolist())
    log.tick_Pf.extend(trk.P_f.tolist())
    log.tick_Nf.extend(trk.N_f.tolist())
    log.tick_branch.extend(trk.branch)

    cell.x = x_next
    cell.kf = kf_predict(sc.controller_model, cell.kf, u_avg, V[k], sc.noise)


def comfort_violation(T_end, x_min, x_max) -> np.ndarray:
    T_end = np.asarray(T_end, dtype=float)
    return np.maximum(0.0, T_end - x_max) + np.maximum(0.0, x_min - T_end)


def summarize(res: ExperimentResult) -> dict:
    sc = res.scenario
    dt_h = SLOT_S / 3600.0
    out = dict(days=sc.days, seed=sc.seed, start=sc.start, slots=sc.n_slots, ticks=sc.n_slots * TICKS_PER_SLOT,
               schedules=[dict(day=d, **s.summary()) for d, _, s in res.schedules])
    for name, log in res.cells.items():
        viol = comfort_violation(log.T_r_end, res.x_min, res.x_max)
        P = np.array(log.P_avg)
        daily = [float(np.sum(P[d * SLOTS_PER_DAY:(d + 1) * SLOTS_PER_DAY]) * dt_h) for d in range(sc.days)]
        cell = dict(
            energy_Wh=log.energy_Wh,
            daily_energy_Wh=daily,
            energy_cost=float(res.energy_price @ P) if P.size else 0.0,
            comfort_violation_Ch=float(np.sum(viol) * dt_h),
            max_comfort_violation_C=float(np.max(viol, initial=0.0)),
        )
        err = np.array(log.tick_Pd) - np.array(log.tick_Pf)
        cell["tracking_rmse_W"] = float(np.sqrt(np.mean(err ** 2))) if err.size else 0.0
        if name == "regulation":
            cell["reserve_revenue"] = float(res.reserve_price @ (res.R_u + res.R_d))
            cell["tracking_within_epsilon"] = float(np.mean(np.abs(err) <= sc.epsilon)) if err.size else 1.0
        cell["notes"] = list(log.notes)
        out[name] = cell
    return out


# -- export ---------------------------------------------------------------------

SCHEDULE_COLUMNS = ("timestamp", "day", "k", "u", "r_u", "r_d", "R_u", "R_d", "x_hi", "x_lo")
BUILDING_COLUMNS = ("timestamp", "cell", "T_r", "T_m", "T_r_meas", "Tr_hat", "Tm_hat", "u_setpoint", "u_avg",
                    "P_s", "P_avg", "R_u", "R_d")
ENVELOPE_COLUMNS = ("timestamp", "x_min", "x_max", "env_lo", "env_hi", "T_r", "T_r_benchmark")
POWER_COLUMNS = ("timestamp", "P_s", "P_avg", "P_avg_benchmark", "R_u", "R_d")


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _write_csv(path: Path, header, rows) -> int:
    n = 0
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
                n += 1
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return n


def export_results(result: ExperimentResult, out_dir, plots: bool = True) -> dict:
    """Write CSV logs, a JSON summary and optional figures; returns the manifest."""
    sc = result.scenario
    d = Path(out_dir)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {d}: {exc}") from exc
    reg, ben = result.regulation, result.benchmark
    ts = [sc.timestamp(k) for k in range(sc.n_slots)]
    ts_end = [sc.timestamp(k + 1) for k in range(sc.n_slots)]
    files = {}

    def sched_rows():
        for day, k0, s in result.schedules:
            for row in s.rows():
                yield (sc.timestamp(k0 + row[0]), day, row[0]) + tuple(row[1:])

    files["level1_schedule.csv"] = _write_csv(d / "level1_schedule.csv", SCHEDULE_COLUMNS, sched_rows())
    for suffix, log in (("", reg), ("_benchmark", ben)):
        files[f"level2_setpoints{suffix}.csv"] = _write_csv(
            d / f"level2_setpoints{suffix}.csv", ("timestamp",) + SETPOINT_COLUMNS,
            zip(ts, range(sc.n_slots), log.u_set, log.P_s, log.Tr_hat, log.Tm_hat))
        files[f"level3_tracking{suffix}.csv"] = _write_csv(
            d / f"level3_tracking{suffix}.csv", LOG_COLUMNS,
            zip(log.tick_t, log.tick_w, log.tick_Pd, log.tick_Pf, log.tick_Nf, log.tick_branch))

    def building_rows():
        for log in (reg, ben):
            yield from zip(ts, [log.name] * sc.n_slots, log.T_r, log.T_m, log.T_r_meas, log.Tr_hat, log.Tm_hat,
                           log.u_set, log.u_avg, log.P_s, log.P_avg, log.R_u, log.R_d)

    files["building.csv"] = _write_csv(d / "building.csv", BUILDING_COLUMNS, building_rows())
    files["envelopes.csv"] = _write_csv(d / "envelopes.csv", ENVELOPE_COLUMNS,
                                        zip(ts_end, result.x_min, result.x_max, reg.env_lo, reg.env_hi,
                                            reg.T_r_end, ben.T_r_end))
    files["power.csv"] = _write_csv(d / "power.csv", POWER_COLUMNS,
                                    zip(ts, reg.P_s, reg.P_avg, ben.P_avg, reg.R_u, reg.R_d))
    (d / "summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    files["summary.json"] = 1
    if plots:
        from .plotting import render_report
        for name in render_report(d):
            files[name] = 0
    manifest = dict(files=[dict(path=name, rows=files[name], sha256=_sha256(d / name))
                           for name in sorted(files)])
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()
