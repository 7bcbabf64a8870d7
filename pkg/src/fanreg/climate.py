"""Level 2: energy MPC that delivers fixed reserve capacities, plus the EKF.

The MPC takes the electric reserves from the scheduler as given. The
thermal reserves follow from the monotone fan curve,
``r_d = u - f^-1(f(u) - R_u)`` and ``r_u = f^-1(f(u) + R_d) - u``, so the
only decisions are the flows (and comfort slacks). Keeping the reserve band
inside the flow limits turns into simple bounds on ``u``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nlp, params
from .fan import FanCurves
from .model import DiscreteBuildingModel, step
from .scheduler import AssumptionViolation, envelope_flows, rollout


class ReserveInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class MpcConfig:
    N2: int = 32
    u_min: float = 0.0
    u_max: float = 0.0
    penalty: float = 1e4
    w_lim: float = params.WLIM_DEFAULT
    formulation: str = "approx"
    robust: bool = True

    def __post_init__(self):
        if self.N2 < 1:
            raise ValueError("horizon must be at least one step")
        if not 0 <= self.u_min < self.u_max:
            raise ValueError("flow bounds must satisfy 0 <= u_min < u_max")
        if not 0 <= self.w_lim <= 1:
            raise ValueError(f"w_lim must lie in [0, 1], got {self.w_lim}")
        if self.formulation not in ("approx", "exact"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if not self.penalty > 0:
            raise ValueError("comfort slack penalty must be positive")

    @classmethod
    def with_fan_bounds(cls, curves: FanCurves, **kw) -> "MpcConfig":
        kw.setdefault("u_min", float(curves.h(params.SPEED_MIN)))
        kw.setdefault("u_max", float(curves.h(params.SPEED_MAX)))
        return cls(**kw)

    def check_wider_than(self, sched_u_min: float, sched_u_max: float) -> None:
        """The MPC flow range must strictly contain the scheduler's."""
        if not (self.u_min < sched_u_min and sched_u_max < self.u_max):
            raise ValueError(f"MPC flow range [{self.u_min}, {self.u_max}] must strictly contain "
                             f"the scheduling range [{sched_u_min}, {sched_u_max}]")

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "MpcConfig":
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class MpcResult:
    u0: float
    u: np.ndarray
    r_u: np.ndarray
    r_d: np.ndarray
    x_hi: np.ndarray
    x_lo: np.ndarray
    slack_hi: np.ndarray
    slack_lo: np.ndarray
    objective: float
    report: nlp.SolveReport | None = None
    notes: list = field(default_factory=list)


def reserve_flow_bounds(curves: FanCurves, cfg: MpcConfig, R_u, R_d):
    """Per-step ``(lo, hi)`` flow bounds keeping ``[u - r_d, u + r_u]`` in range."""
    R_u = np.asarray(R_u, dtype=float)
    R_d = np.asarray(R_d, dtype=float)
    if np.any(R_u < 0) or np.any(R_d < 0):
        raise ReserveInfeasible("reserve capacities must be non-negative")
    P_min, P_max = curves.f(cfg.u_min), curves.f(cfg.u_max)
    need = P_min + R_u + R_d
    bad = np.flatnonzero(need > P_max * (1 + 1e-12))
    if bad.size:
        k = int(bad[0])
        raise ReserveInfeasible(
            f"step {k}: reserves R_u={R_u[k]:.3f} W and R_d={R_d[k]:.3f} W exceed the power range "
            f"{P_max - P_min:.3f} W available between the MPC flow limits")
    lo = np.where(R_u > 0, curves.f_inv_ext(P_min + R_u), cfg.u_min)
    hi = np.where(R_d > 0, curves.f_inv_ext(P_max - R_d), cfg.u_max)
    return np.maximum(lo, cfg.u_min), np.minimum(np.maximum(hi, lo), cfg.u_max)


def thermal_reserves(curves: FanCurves, u, R_u, R_d):
    """``(r_u, r_d, dr_u/du, dr_d/du)`` from fixed electric reserves."""
    u = np.asarray(u, dtype=float)
    R_u = np.broadcast_to(np.asarray(R_u, dtype=float), u.shape)
    R_d = np.broadcast_to(np.asarray(R_d, dtype=float), u.shape)
    fu, dfu = curves.f(u), curves.df(u)
    q_dn, q_up = u.copy(), u.copy()
    dn, up = R_u > 0, R_d > 0
    if np.any(dn):
        q_dn[dn] = curves.f_inv_ext(fu[dn] - R_u[dn])
    if np.any(up):
        q_up[up] = curves.f_inv_ext(fu[up] + R_d[up])
    r_d = u - q_dn
    r_u = q_up - u
    dr_d = 1.0 - dfu / curves.df(q_dn)
    dr_u = dfu / curves.df(q_up) - 1.0
    return r_u, r_d, dr_u, dr_d


class MpcProblem:
    """Flows and comfort slacks ``z = [u, s_hi, s_lo]``."""

    def __init__(self, model: DiscreteBuildingModel, curves: FanCurves, cfg: MpcConfig, x0, R_u, R_d,
                 disturbances, energy_price, x_min, x_max):
        self.model, self.curves, self.cfg = model, curves, cfg
        self.x0 = np.asarray(x0, dtype=float)
        self.v = np.asarray(disturbances, dtype=float).reshape(-1, 3)
        N = len(self.v)
        self.N = N
        self.c = _as_horizon(energy_price, N, "energy_price")
        self.x_min = _as_horizon(x_min, N, "x_min")
        self.x_max = _as_horizon(x_max, N, "x_max")
        if cfg.robust:
            self.R_u = _as_horizon(R_u, N, "R_u")
            self.R_d = _as_horizon(R_d, N, "R_d")
        else:
            self.R_u = self.R_d = np.zeros(N)
        lo, hi = reserve_flow_bounds(curves, cfg, self.R_u, self.R_d)
        self.lb = np.concatenate([lo, np.zeros(2 * N)])
        self.ub = np.concatenate([hi, np.full(2 * N, np.inf)])
        self._key = None

    def _eval(self, z):
        if self._key is not None and np.array_equal(z, self._key):
            return self._cache
        z = np.array(z, dtype=float)  # cached slices must not alias the caller's array
        N, cfg = self.N, self.cfg
        u, s_hi, s_lo = z[:N], z[N:2 * N], z[2 * N:]
        r_u, r_d, dr_u, dr_d = thermal_reserves(self.curves, u, self.R_u, self.R_d)
        w = cfg.w_lim if cfg.robust else 0.0
        q_hi, q_lo, dh_du, dh_drd, dl_du, dl_dru = envelope_flows(self.curves, u, r_u, r_d, w, cfg.formulation)
        Xh, Sh = rollout(self.model, self.x0, q_hi, self.v, with_sens=True)
        Xl, Sl = rollout(self.model, self.x0, q_lo, self.v, with_sens=True)
        Jh = Sh[1:, 0, :] * (dh_du + dh_drd * dr_d)[None, :]
        Jl = Sl[1:, 0, :] * (dl_du + dl_dru * dr_u)[None, :]
        self._cache = dict(u=u, s_hi=s_hi, s_lo=s_lo, r_u=r_u, r_d=r_d, Xh=Xh, Xl=Xl, Jh=Jh, Jl=Jl)
        self._key = z
        return self._cache

    def objective(self, z):
        N = self.N
        return float(self.c @ self.curves.f(z[:N]) + self.cfg.penalty * np.sum(z[N:]))

    def objective_grad(self, z):
        N = self.N
        return np.concatenate([self.c * self.curves.df(z[:N]), np.full(2 * N, self.cfg.penalty)])

    def ineq(self, z):
        e = self._eval(z)
        return np.concatenate([e["Xh"][1:, 0] - self.x_max - e["s_hi"],
                               self.x_min - e["Xl"][1:, 0] - e["s_lo"]])

    def ineq_jac(self, z):
        e = self._eval(z)
        I, Z = np.eye(self.N), np.zeros((self.N, self.N))
        return np.vstack([np.hstack([e["Jh"], -I, Z]), np.hstack([-e["Jl"], Z, -I])])

    def nlp_problem(self, scaled: bool = True) -> nlp.NlpProblem:
        k = 1.0 / self.cfg.penalty if scaled else 1.0
        return nlp.NlpProblem(fun=lambda z: k * self.objective(z), grad=lambda z: k * self.objective_grad(z),
                              n=3 * self.N, ineq=self.ineq, ineq_jac=self.ineq_jac, lb=self.lb, ub=self.ub)

    def start(self, u=None):
        N = self.N
        lo, hi = self.lb[:N], self.ub[:N]
        u = 0.5 * (lo + hi) if u is None else np.clip(np.asarray(u, dtype=float), lo, hi)
        z = np.concatenate([u, np.zeros(2 * N)])
        e = self._eval(z)
        z[N:2 * N] = np.maximum(0.0, e["Xh"][1:, 0] - self.x_max) + 1e-3
        z[2 * N:] = np.maximum(0.0, self.x_min - e["Xl"][1:, 0]) + 1e-3
        return z

    def result(self, z, report=None) -> MpcResult:
        e = self._eval(z)
        return MpcResult(u0=float(e["u"][0]), u=e["u"].copy(), r_u=e["r_u"].copy(), r_d=e["r_d"].copy(),
                         x_hi=e["Xh"].copy(), x_lo=e["Xl"].copy(), slack_hi=e["s_hi"].copy(),
                         slack_lo=e["s_lo"].copy(), objective=self.objective(z), report=report)


def _as_horizon(a, N, name):
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size == 1:
        return np.full(N, float(a[0]))
    if len(a) < N:
        raise ValueError(f"{name} covers {len(a)} steps, horizon needs {N}")
    return a[:N].copy()


def mpc_step(model: DiscreteBuildingModel, curves: FanCurves, cfg: MpcConfig, x_hat, R_u, R_d,
             disturbances, energy_price, x_min, x_max, warm_start=None,
             opts: nlp.SolveOptions | None = None) -> MpcResult:
    """Solve one receding-horizon problem; the horizon is the shorter of ``N2`` and the forecast."""
    v = np.asarray(disturbances, dtype=float).reshape(-1, 3)[:cfg.N2]
    if model.T_s > float(np.min(np.asarray(x_min, dtype=float)[:len(v)])):
        raise AssumptionViolation(f"supply air temperature {model.T_s} degC is above the comfort band")
    prob = MpcProblem(model, curves, cfg, x_hat, R_u, R_d, v, energy_price, x_min, x_max)
    z0 = prob.start(warm_start)
    ref = float(np.sum(np.abs(prob.c))) * curves.P_hi
    rep, phase = nlp.solve_elastic(prob.nlp_problem(scaled=False), np.arange(prob.N, 3 * prob.N), z0,
                                   1.0 / ref if ref > 0 else 1.0, 1.0 / cfg.penalty, opts,
                                   reseed=lambda z: prob.start(z[:prob.N]))
    res = prob.result(rep.x, rep)
    if phase == "soft":
        res.notes.append("comfort bounds infeasible as hard constraints; solved with slacks")
    if not rep.converged:
        res.notes.append(f"solver did not converge: {rep.message}")
    return res


# -- extended Kalman filter ------------------------------------------------------

@dataclass(frozen=True)
class NoiseConfig:
    Q: np.ndarray = field(default_factory=lambda: np.diag(params.EKF_Q_DIAG))
    R: float = params.EKF_R

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.shape != (2, 2):
            raise ValueError(f"Q must be 2x2, got shape {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric; a matrix such as [[0.4, 0], [0.4, 0]] is not a "
                             "covariance, use the diagonal form diag(0.4, 0.4)")
        if np.min(np.linalg.eigvalsh(Q)) < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")
        object.__setattr__(self, "Q", Q)

    @property
    def C(self) -> np.ndarray:
        return np.array([1.0, 0.0])


@dataclass(frozen=True)
class KalmanState:
    x: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(2))
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float).reshape(2, 2))


def state_jacobian(model: DiscreteBuildingModel, u: float) -> np.ndarray:
    """``d x+ / d x`` of the bilinear dynamics, ``A + B_xu u``."""
    return model.A + model.B_xu * u


def kf_predict(model: DiscreteBuildingModel, state: KalmanState, u: float, v, noise: NoiseConfig) -> KalmanState:
    x = np.array(step(model, state.x, u, v))
    F = state_jacobian(model, u)
    P = F @ state.P @ F.T + noise.Q
    return KalmanState(x, 0.5 * (P + P.T))


def kf_update(state: KalmanState, y: float, noise: NoiseConfig) -> KalmanState:
    """Measurement update with ``y = T_r``; Joseph form keeps ``P`` PSD."""
    C = noise.C
    P = state.P
    S = C @ P @ C + noise.R
    K = P @ C / S
    x = state.x + K * (y - C @ state.x)
    IKC = np.eye(2) - np.outer(K, C)
    P = IKC @ P @ IKC.T + noise.R * np.outer(K, K)
    return KalmanState(x, 0.5 * (P + P.T))


def innovation(state: KalmanState, y: float, noise: NoiseConfig) -> tuple[float, float]:
    """Innovation and its predicted variance for an a priori state."""
    C = noise.C
    return float(y - C @ state.x), float(C @ state.P @ C + noise.R)


SETPOINT_COLUMNS = ("k", "u_setpoint", "P_baseline", "Tr_hat", "Tm_hat")


def write_setpoint_log(rows, path) -> None:
    """Rows are mappings or sequences in ``k,u_setpoint,P_baseline,Tr_hat,Tm_hat`` order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SETPOINT_COLUMNS)
        for r in rows:
            vals = [r[c] for c in SETPOINT_COLUMNS] if isinstance(r, dict) else list(r)
            w.writerow([int(vals[0])] + [repr(float(x)) for x in vals[1:]])
