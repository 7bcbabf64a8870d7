"""Grey-box identification of the discrete building model.

Parameters are fitted by bounded nonlinear least squares on room-temperature
prediction errors. The hidden mass temperature is reconstructed by forward
simulation from ``T_m(0) = T_r(0)``. Two predictor horizons are supported:

* ``one-step``: each prediction starts from the measured room temperature;
  the mass state is driven by measured room temperatures.
* ``one-day``: the predictor chains its own room-temperature estimates and is
  reset to the measurement every 96 steps; the mass state carries over.

Sign constraints are box bounds. Mass-temperature bounds and closed-loop
stability are penalty residuals and are re-checked on the result.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from . import params
from .model import DiscreteBuildingModel, closed_loop_stable, simulate
from .timefmt import parse_time
from .weather import synthetic_disturbances

HORIZON_MODES = ("one-step", "one-day")
STEPS_PER_DAY = 96
COLUMNS = ("timestamp", "T_r", "mdot", "T_a", "G", "I_g", "T_s")

# 2-state parameter order; the 1-state variant uses PARAM_NAMES_1
PARAM_NAMES_2 = ("a11", "a12", "a21", "a22", "b", "d11", "d12", "d13")
PARAM_NAMES_1 = ("a11", "b", "d11", "d12", "d13")
_GUESS = dict(a11=0.7, a12=0.15, a21=0.05, a22=0.93, b=0.3, d11=0.03, d12=1e-3, d13=2e-4)
_SCALE = dict(a11=1.0, a12=0.1, a21=0.1, a22=1.0, b=0.1, d11=0.01, d12=1e-3, d13=1e-4)
_CLAMP = 1e4
_NONNEG = {"a12", "a21", "b", "d11", "d12", "d13"}


class IdentificationError(ValueError):
    pass


@dataclass(frozen=True)
class IdentDataset:
    timestamp: np.ndarray
    T_r: np.ndarray
    mdot: np.ndarray
    T_a: np.ndarray
    G: np.ndarray
    I_g: np.ndarray
    T_s: np.ndarray
    dt: float = params.STEP_SECONDS

    def __post_init__(self):
        n = None
        for name in COLUMNS:
            a = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if n is None:
                n = len(a)
            elif len(a) != n:
                raise IdentificationError(f"column {name} has {len(a)} rows, expected {n}")
            if not np.all(np.isfinite(a)):
                raise IdentificationError(f"column {name} contains non-finite values")
            object.__setattr__(self, name, a)
        if np.any(np.diff(self.timestamp) <= 0):
            raise IdentificationError("timestamps must be strictly increasing")
        if np.any(self.mdot < 0):
            raise IdentificationError("mass flow must be non-negative")

    def __len__(self):
        return len(self.T_r)

    @property
    def disturbances(self) -> np.ndarray:
        return np.column_stack([self.T_a, self.G, self.I_g])

    def segments(self) -> list[slice]:
        """Contiguous runs at the nominal sample period; gaps split runs."""
        gaps = np.flatnonzero(np.abs(np.diff(self.timestamp) - self.dt) > 1e-6 * self.dt)
        edges = np.concatenate([[0], gaps + 1, [len(self)]])
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b - a >= 2]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for row in zip(*(getattr(self, c) for c in COLUMNS)):
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path, dt: float | None = None) -> "IdentDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = set(COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise IdentificationError(f"{path}: missing columns {sorted(missing)}")
            cols = {c: [] for c in COLUMNS}
            for i, row in enumerate(reader, start=2):
                for c in COLUMNS:
                    try:
                        cols[c].append(parse_time(row[c]) if c == "timestamp" else float(row[c]))
                    except (TypeError, ValueError):
                        raise IdentificationError(f"{path}: bad value for {c} in row {i}") from None
        ts = np.array(cols["timestamp"])
        if dt is None:
            dt = float(np.median(np.diff(ts))) if len(ts) > 1 else params.STEP_SECONDS
        return cls(**{c: np.array(v) for c, v in cols.items()}, dt=dt)


@dataclass(frozen=True)
class FitConfig:
    n_states: int = 2
    horizon_mode: str = "one-day"
    tm_bounds: tuple = (0.01, 2.5)
    n_starts: int = 4
    seed: int = 0
    max_nfev: int = 200
    penalty_weight: float = 1e3

    def __post_init__(self):
        if self.n_states not in (1, 2):
            raise ValueError(f"n_states must be 1 or 2, got {self.n_states}")
        if self.horizon_mode not in HORIZON_MODES:
            raise ValueError(f"horizon_mode must be one of {HORIZON_MODES}")
        lo, hi = self.tm_bounds
        if not 0 < lo < hi:
            raise ValueError("mass-temperature bound multipliers must satisfy 0 < low < high")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")

    @property
    def names(self) -> tuple:
        return PARAM_NAMES_2 if self.n_states == 2 else PARAM_NAMES_1


@dataclass
class FitReport:
    model: DiscreteBuildingModel
    rmse: float
    residuals: np.ndarray
    config: FitConfig
    converged: bool
    cost: float
    message: str
    n_evaluations: int
    start_costs: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        c = self.config
        return dict(model=self.model.to_dict(), rmse=self.rmse, converged=self.converged, cost=self.cost,
                    message=self.message, n_evaluations=self.n_evaluations, start_costs=self.start_costs,
                    notes=self.notes, residuals=self.residuals.tolist(),
                    config=dict(n_states=c.n_states, horizon_mode=c.horizon_mode,
                                tm_bounds=list(c.tm_bounds), n_starts=c.n_starts, seed=c.seed))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


# -- batched predictor -------------------------------------------------------

def _full_params(theta: np.ndarray, n_states: int) -> np.ndarray:
    """``(m, 8)`` 2-state layout from ``(m, p)`` parameter rows."""
    theta = np.atleast_2d(theta)
    if n_states == 2:
        return theta
    out = np.zeros((theta.shape[0], 8))
    out[:, [0, 4, 5, 6, 7]] = theta
    return out


def _predict(P: np.ndarray, data: IdentDataset, horizon_mode: str):
    """Predicted room temperatures and reconstructed mass temperatures.

    ``P`` is ``(m, 8)``; returns ``(Tr_hat, Tm_hat)`` each ``(m, n)`` with
    ``Tr_hat[:, 0]`` equal to the measurement at each segment start.
    """
    a11, a12, a21, a22, b, d11, d12, d13 = P.T
    m, n = P.shape[0], len(data)
    V = data.disturbances
    DV = V @ P[:, 5:8].T  # (n, m)
    bu = data.mdot[:, None] * b[None, :]  # (n, m)
    Tr_hat = np.empty((m, n))
    Tm_hat = np.empty((m, n))
    one_day = horizon_mode == "one-day"
    for seg in data.segments():
        s0 = seg.start
        tr = np.full(m, data.T_r[s0])
        tm = tr.copy()
        Tr_hat[:, s0] = tr
        Tm_hat[:, s0] = tm
        for k in range(s0, seg.stop - 1):
            if not one_day or (k - s0) % STEPS_PER_DAY == 0:
                tr = np.full(m, data.T_r[k])
            tr_next = a11 * tr + a12 * tm + bu[k] * (data.T_s[k] - tr) + DV[k]
            # clamp so unstable trial parameters stay finite for the solver
            tm = np.clip(a21 * tr + a22 * tm, -_CLAMP, _CLAMP)
            tr = np.clip(tr_next, -_CLAMP, _CLAMP)
            Tr_hat[:, k + 1] = tr
            Tm_hat[:, k + 1] = tm
    covered = np.zeros(n, dtype=bool)
    for seg in data.segments():
        covered[seg.start + 1:seg.stop] = True
    return Tr_hat, Tm_hat, covered


def _stability_excess(P: np.ndarray, u_values: np.ndarray) -> np.ndarray:
    """``max_u rho(A + B_xu u) - 1`` (and for ``u = 0``) per parameter row."""
    u = np.concatenate([[0.0], u_values])
    a = P[:, 0][:, None] - P[:, 4][:, None] * u[None, :]
    d = P[:, 3][:, None]
    bc = (P[:, 1] * P[:, 2])[:, None]
    tr = a + d
    disc = (a - d) ** 2 + 4 * bc
    sq = np.sqrt(np.abs(disc))
    real = disc >= 0
    rho_real = np.maximum(np.abs(tr + sq), np.abs(tr - sq)) / 2
    rho_cplx = np.sqrt(np.maximum(a * d - bc, 0.0))
    rho = np.where(real, rho_real, rho_cplx)
    return rho.max(axis=1) - 1.0


class _Objective:
    def __init__(self, data: IdentDataset, cfg: FitConfig):
        self.data, self.cfg = data, cfg
        self.u_values = np.unique(data.mdot)
        self.names = cfg.names
        self.scale = np.array([_SCALE[k] for k in self.names])
        self.n_eval = 0

    def residuals_batch(self, thetas: np.ndarray) -> np.ndarray:
        cfg, data = self.cfg, self.data
        P = _full_params(thetas, cfg.n_states)
        Tr_hat, Tm_hat, covered = _predict(P, data, cfg.horizon_mode)
        self.n_eval += P.shape[0]
        err = (Tr_hat - data.T_r[None, :])[:, covered]
        parts = [err]
        w = cfg.penalty_weight
        if cfg.n_states == 2:
            lo, hi = cfg.tm_bounds
            over = np.maximum(0.0, Tm_hat - hi * data.T_r) + np.maximum(0.0, lo * data.T_r - Tm_hat)
            parts.append(w * over)
        parts.append(w * np.maximum(0.0, _stability_excess(P, self.u_values))[:, None])
        return np.hstack(parts)

    def fun(self, theta):
        return self.residuals_batch(theta[None, :])[0]

    def jac(self, theta):
        h = 1e-6 * np.maximum(np.abs(theta), self.scale)
        batch = np.vstack([theta + np.diag(h), theta - np.diag(h)])
        R = self.residuals_batch(batch)
        p = len(theta)
        return ((R[:p] - R[p:]) / (2 * h)[:, None]).T


def _bounds(names):
    lo = np.array([0.0 if k in _NONNEG else -2.0 for k in names])
    hi = np.array([2.0 if k.startswith("a") else np.inf for k in names])
    return lo, hi


def _starts(cfg: FitConfig, extra=()):
    rng = np.random.default_rng(cfg.seed)
    base = np.array([_GUESS[k] for k in cfg.names])
    out = [base] + [np.asarray(x, dtype=float) for x in extra]
    while len(out) < cfg.n_starts + len(extra):
        out.append(base * np.exp(rng.normal(0.0, 0.5, len(base))))
    lo, hi = _bounds(cfg.names)
    return [np.clip(x, lo, np.minimum(hi, 1.5)) for x in out]


def _make_model(theta, cfg: FitConfig, T_s: float, dt: float) -> DiscreteBuildingModel:
    full = _full_params(theta, cfg.n_states)[0]
    return DiscreteBuildingModel(*map(float, full), T_s=T_s, delta_t=dt, n_states=cfg.n_states)


def _check_constraints(model: DiscreteBuildingModel, data: IdentDataset, cfg: FitConfig, tol=1e-6):
    """Constraint classes violated by ``model`` on ``data``."""
    bad = []
    if not model.sign_pattern_ok():
        bad.append("sign")
    P = model.coefficients()[None, :]
    if _stability_excess(P, np.unique(data.mdot))[0] > tol:
        bad.append("stability")
    if cfg.n_states == 2:
        _, Tm_hat, _ = _predict(P, data, cfg.horizon_mode)
        lo, hi = cfg.tm_bounds
        if np.any(Tm_hat[0] < lo * data.T_r - tol) or np.any(Tm_hat[0] > hi * data.T_r + tol):
            bad.append("mass-temperature bounds")
    return bad


def fit_model(data: IdentDataset, cfg: FitConfig = FitConfig()) -> FitReport:
    """Multi-start bounded least-squares fit; the best start wins, ties to the earliest."""
    n_par = len(cfg.names)
    if len(data) < 10 * n_par:
        raise IdentificationError(f"need at least {10 * n_par} samples for {n_par} parameters, got {len(data)}")
    extra = []
    if cfg.horizon_mode == "one-day":
        # the one-step fit is a cheap, usually good, start for the chained predictor
        pre = fit_model(data, FitConfig(**{**cfg.__dict__, "horizon_mode": "one-step"}))
        extra.append(_full_params(pre.model.coefficients(), 2)[0][
            [PARAM_NAMES_2.index(k) for k in cfg.names]])
    obj = _Objective(data, cfg)
    lo, hi = _bounds(cfg.names)
    best, costs, results = None, [], []
    for x0 in _starts(cfg, extra):
        res = optimize.least_squares(obj.fun, x0, jac=obj.jac, bounds=(lo, hi), x_scale=obj.scale,
                                     method="trf", xtol=1e-12, ftol=1e-12, gtol=1e-12,
                                     max_nfev=cfg.max_nfev)
        costs.append(float(res.cost))
        results.append(res)
        if best is None or res.cost < best.cost * (1 - 1e-9):
            best = res
    T_s = float(np.mean(data.T_s))
    model = _make_model(best.x, cfg, T_s, data.dt)
    notes = []
    tied = [r.x for r in results if abs(r.cost - best.cost) <= 1e-6 * max(best.cost, 1e-12)]
    spread = max(float(np.max(np.abs(x - best.x) / np.maximum(np.abs(best.x), 1e-6))) for x in tied)
    if spread > 1e-3:
        notes.append(f"{len(tied)} starts reached the same objective with parameters differing by up to "
                     f"{spread:.1%}; the fit is not unique")
    if np.ptp(data.T_s) > 0:
        notes.append("supply temperature varies; model stores its mean")
    violated = _check_constraints(model, data, cfg)
    if violated:
        raise IdentificationError(f"fitted parameters violate constraints: {', '.join(violated)}")
    r = evaluate_residuals(model, data, cfg.horizon_mode)
    return FitReport(model=model, rmse=float(np.sqrt(np.mean(r ** 2))), residuals=r, config=cfg,
                     converged=bool(best.status > 0), cost=float(best.cost), message=str(best.message),
                     n_evaluations=obj.n_eval, start_costs=costs, notes=notes)


def predict(model: DiscreteBuildingModel, data: IdentDataset, horizon_mode: str):
    """``(Tr_hat, Tm_hat, covered)``; ``covered`` marks samples that are actual predictions.

    The predictor uses the per-sample supply temperature from the data.
    """
    if horizon_mode not in HORIZON_MODES:
        raise ValueError(f"horizon_mode must be one of {HORIZON_MODES}")
    Tr_hat, Tm_hat, covered = _predict(model.coefficients()[None, :], data, horizon_mode)
    return Tr_hat[0], Tm_hat[0], covered


def evaluate_residuals(model: DiscreteBuildingModel, data: IdentDataset, horizon_mode: str) -> np.ndarray:
    """Measured minus predicted room temperature at every predicted sample."""
    Tr_hat, _, covered = predict(model, data, horizon_mode)
    return (data.T_r - Tr_hat)[covered]


def evaluate_rmse(model: DiscreteBuildingModel, data: IdentDataset, horizon_mode: str) -> float:
    r = evaluate_residuals(model, data, horizon_mode)
    return float(np.sqrt(np.mean(r ** 2)))


# -- synthetic data ------------------------------------------------------------

def excitation_flows(n: int, rng, lo: float = 0.2, hi: float = 1.2, hold=(1, 4)) -> np.ndarray:
    """Piecewise-constant random flows held for ``hold`` steps."""
    out = np.empty(n)
    k = 0
    while k < n:
        span = int(rng.integers(hold[0], hold[1] + 1))
        out[k:k + span] = rng.uniform(lo, hi)
        k += span
    return out


def synthesize_dataset(model: DiscreteBuildingModel, days: int = 7, seed: int = 0, noise_std: float = 0.0,
                       T_r0: float = 22.0) -> IdentDataset:
    """Simulated data from ``model`` with random flows and ``T_m(0) = T_r(0)``.

    Gaussian noise of ``noise_std`` is added to the recorded room temperature.
    """
    rng = np.random.default_rng(seed)
    n = int(days * STEPS_PER_DAY)
    dt_h = model.delta_t / 3600.0
    V = synthetic_disturbances(n, 0.0, dt_h, rng=rng, jitter=1.0)
    u = excitation_flows(n, rng)
    X = simulate(model, (T_r0, T_r0), u[:-1], V[:-1])
    T_r = X[:, 0] + (rng.normal(0.0, noise_std, n) if noise_std > 0 else 0.0)
    return IdentDataset(timestamp=model.delta_t * np.arange(n), T_r=T_r, mdot=u, T_a=V[:, 0], G=V[:, 1],
                        I_g=V[:, 2], T_s=np.full(n, model.T_s), dt=model.delta_t)


def is_stable_on(model: DiscreteBuildingModel, data: IdentDataset) -> bool:
    return all(closed_loop_stable(model, float(u), tol=1e-9) for u in np.unique(data.mdot))
