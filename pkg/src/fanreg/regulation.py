"""Level 3: switched feedforward/PI fan-power tracking at the regulation cadence.

Large tracking errors are handled by the static inverse speed-to-power map,
small ones by an incremental PI loop whose gains are scheduled on the
desired power. A first-order fan plant closes the loop in simulation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import params
from .fan import FanCurves
from .signals import RegulationSignal

FEEDFORWARD = "feedforward"
PI = "pi"
LOG_COLUMNS = ("t", "w", "P_d", "P_f", "N_f", "branch")


@dataclass(frozen=True)
class GainSchedule:
    """PI gains per desired-power region; ``edges_kw`` has one more entry than the gains."""

    edges_kw: tuple = params.PI_REGIONS_KW
    kp: tuple = params.PI_KP
    ki: tuple = params.PI_KI

    def __post_init__(self):
        e = np.asarray(self.edges_kw, dtype=float)
        if len(e) != len(self.kp) + 1 or len(self.kp) != len(self.ki):
            raise ValueError("need one more region edge than gain pairs")
        if len(e) < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("region edges must be strictly increasing")
        if e[0] != 0.0:
            raise ValueError("regions must start at 0 kW")

    def region(self, P_d: float) -> tuple[int, bool]:
        """Region index for ``P_d`` in W and whether it lies above the last edge."""
        p_kw = P_d / 1000.0
        e = self.edges_kw
        above = p_kw >= e[-1]
        idx = int(np.searchsorted(e, p_kw, side="right")) - 1
        return min(max(idx, 0), len(self.kp) - 1), bool(above)

    def gains(self, P_d: float) -> tuple[float, float]:
        i, _ = self.region(P_d)
        return self.kp[i], self.ki[i]

    def to_dict(self) -> dict:
        return dict(edges_kw=list(self.edges_kw), kp=list(self.kp), ki=list(self.ki))


@dataclass(frozen=True)
class SwitchedControllerState:
    e_old: float = 0.0
    N_f: float = 50.0
    branch: str = FEEDFORWARD
    epsilon: float = 25.0
    dt: float = 4.0
    N_min: float = params.SPEED_MIN
    N_max: float = params.SPEED_MAX
    target_clamped: bool = False
    gain_extrapolated: bool = False

    def __post_init__(self):
        if not self.N_min <= self.N_f <= self.N_max:
            raise ValueError(f"commanded speed {self.N_f} outside [{self.N_min}, {self.N_max}]")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")


def compute_target(P_s: float, R_u: float, R_d: float, w: float) -> float:
    """Desired fan power: baseline plus the requested share of the reserve."""
    if not -1.0 <= w <= 1.0:
        raise ValueError(f"w must lie in [-1, 1], got {w}")
    if R_u < 0 or R_d < 0:
        raise ValueError("reserve capacities must be non-negative")
    R = w * R_d if w > 0 else w * R_u
    return P_s + R


def control_step(state: SwitchedControllerState, P_d: float, P_f: float, gains: GainSchedule,
                 curves: FanCurves) -> tuple[SwitchedControllerState, float]:
    if not np.isfinite(P_f):
        raise ValueError("measured power must be finite")
    e_new = P_d - P_f
    if abs(e_new) <= state.epsilon:
        kp, ki = gains.gains(P_d)
        _, above = gains.region(P_d)
        N = state.N_f + kp * (e_new - state.e_old) + ki * state.dt * e_new
        N = float(np.clip(N, state.N_min, state.N_max))
        new = replace(state, e_old=e_new, N_f=N, branch=PI, target_clamped=False, gain_extrapolated=above)
    else:
        lo, hi = float(curves.g(state.N_min)), float(curves.g(state.N_max))
        P = min(max(P_d, lo), hi)
        N = float(np.clip(curves.g_inv(P), state.N_min, state.N_max))
        new = replace(state, e_old=0.0, N_f=N, branch=FEEDFORWARD, target_clamped=P != P_d,
                      gain_extrapolated=False)
    return new, new.N_f


@dataclass
class FanPlant:
    """First-order speed lag with noisy power measurement ``g(speed)``."""

    curves: FanCurves
    tau: float = 5.0
    sigma_P: float = 2.0
    speed: float = 50.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"time constant must be positive, got {self.tau}")
        if self.sigma_P < 0:
            raise ValueError("measurement noise must be non-negative")

    def power(self) -> float:
        return float(self.curves.g(self.speed))

    def measure(self, rng) -> float:
        noise = rng.normal(0.0, self.sigma_P) if self.sigma_P > 0 else 0.0
        return self.power() + noise

    def to_dict(self) -> dict:
        return dict(tau=self.tau, sigma_P=self.sigma_P, speed=self.speed)


def fan_plant_step(plant: FanPlant, N_cmd: float, dt: float, rng) -> float:
    """Advance the speed by ``dt`` toward ``N_cmd`` and return a power measurement."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    plant.speed = N_cmd + (plant.speed - N_cmd) * np.exp(-dt / plant.tau)
    return plant.measure(rng)


@dataclass
class TrackingLog:
    t: np.ndarray
    w: np.ndarray
    P_d: np.ndarray
    P_f: np.ndarray
    N_f: np.ndarray
    branch: list
    speed: np.ndarray | None = None  # true plant speed at each measurement
    state: SwitchedControllerState | None = None
    notes: list = field(default_factory=list)

    @property
    def error(self) -> np.ndarray:
        return self.P_d - self.P_f

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean(self.error ** 2)))

    def steady_mask(self, threshold: float, settle_s: float = 20.0) -> np.ndarray:
        """False within ``settle_s`` after any target step larger than ``threshold``."""
        return steady_state_mask(self.t, self.P_d, threshold, settle_s)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(LOG_COLUMNS)
            for row in zip(self.t, self.w, self.P_d, self.P_f, self.N_f, self.branch):
                wr.writerow([repr(float(x)) for x in row[:5]] + [row[5]])


def steady_state_mask(t, P_d, threshold: float, settle_s: float = 20.0) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    P_d = np.asarray(P_d, dtype=float)
    keep = np.ones(len(t), dtype=bool)
    steps = np.flatnonzero(np.abs(np.diff(P_d)) > threshold) + 1
    for k in steps:
        keep[(t >= t[k]) & (t < t[k] + settle_s)] = False
    return keep


def run_tracking(slot, signal: RegulationSignal, plant: FanPlant, gains: GainSchedule = GainSchedule(),
                 epsilon: float = 25.0, duration: float | None = None, rng=None,
                 curves: FanCurves | None = None, state: SwitchedControllerState | None = None,
                 t0: float = 0.0) -> TrackingLog:
    """Closed-loop tracking for one ``(P_s, R_u, R_d)`` slot.

    Each tick measures the plant, computes the command and then lets the
    plant evolve for one period. ``curves`` is the controller's model and
    defaults to the plant's. ``duration`` defaults to the signal length.
    """
    P_s, R_u, R_d = slot
    curves = curves or plant.curves
    rng = rng if rng is not None else np.random.default_rng(0)
    dt = signal.dt
    n = len(signal) if duration is None else int(round(duration / dt))
    if n > len(signal):
        raise ValueError(f"duration needs {n} samples, signal has {len(signal)}")
    if state is None:
        state = SwitchedControllerState(N_f=float(np.clip(plant.speed, params.SPEED_MIN, params.SPEED_MAX)),
                                        epsilon=epsilon, dt=dt)
    elif abs(state.dt - dt) > 1e-9:
        raise ValueError(f"controller period {state.dt} s differs from signal period {dt} s")
    t = t0 + dt * np.arange(n)
    P_d = np.empty(n)
    P_f = np.empty(n)
    N_f = np.empty(n)
    speed = np.empty(n)
    branch = []
    notes = []
    meas = plant.measure(rng)
    for k in range(n):
        P_d[k] = compute_target(P_s, R_u, R_d, float(signal.w[k]))
        P_f[k] = meas
        speed[k] = plant.speed
        state, N_f[k] = control_step(state, P_d[k], meas, gains, curves)
        branch.append(state.branch)
        if state.target_clamped and "target clamped to the fan power range" not in notes:
            notes.append("target clamped to the fan power range")
        if state.gain_extrapolated and "gains extrapolated above the last region" not in notes:
            notes.append("gains extrapolated above the last region")
        meas = fan_plant_step(plant, N_f[k], dt, rng)
    return TrackingLog(t=t, w=np.asarray(signal.w[:n], dtype=float), P_d=P_d, P_f=P_f, N_f=N_f,
                       branch=branch, speed=speed, state=state, notes=notes)


def square_wave(period_s: float, duration_s: float, dt: float = 4.0, amplitude: float = 1.0) -> RegulationSignal:
    n = int(round(duration_s / dt))
    t = dt * np.arange(n)
    return RegulationSignal(np.where((t % period_s) < period_s / 2, amplitude, -amplitude), dt)


def save_controller_config(path, epsilon: float, gains: GainSchedule, plant: FanPlant) -> None:
    Path(path).write_text(json.dumps(dict(epsilon=epsilon, gains=gains.to_dict(), plant=plant.to_dict()),
                                     indent=2))


def load_controller_config(path, curves: FanCurves):
    d = json.loads(Path(path).read_text())
    g = d.get("gains", {})
    gains = GainSchedule(tuple(g.get("edges_kw", params.PI_REGIONS_KW)), tuple(g.get("kp", params.PI_KP)),
                         tuple(g.get("ki", params.PI_KI)))
    plant = FanPlant(curves, **d.get("plant", {}))
    return float(d.get("epsilon", 25.0)), gains, plant

