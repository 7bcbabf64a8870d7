"""Day-ahead robust reserve scheduling.

Decision variables per 15-minute slot are the operating flow ``u`` and the
thermal reserves ``r_u`` (flow increase) and ``r_d`` (flow decrease). The
electric reserves follow from the flow->power curve::

    R_u = f(u) - f(u - r_d)        R_d = f(u + r_u) - f(u)

Robustness against any activation ``|w| <= w_lim`` is enforced through two
worst-case room-temperature envelopes. The upper envelope is driven by the
smallest admissible flow and the lower one by the largest. Two envelope
flow models are available:

``approx``  ``u - w_lim r_d`` and ``u + w_lim r_u`` (linearized inverse)
``exact``   ``f^-1(f(u) - w_lim R_u)`` and ``f^-1(f(u) + w_lim R_d)``

The approximate envelopes are never below the exact ones (``f`` convex) and
coincide with them at ``w_lim = 1``.

Comfort bounds are soft with a linear penalty; flow bounds are hard. The
equality-constrained dynamics are eliminated by forward simulation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nlp, params
from .fan import FanCurves
from .model import DiscreteBuildingModel

SYMMETRY_MODES = ("none", "electric_symmetric", "thermal_symmetric")


class AssumptionViolation(ValueError):
    """Supply air is warmer than the lower comfort bound (not cooling mode)."""


@dataclass(frozen=True)
class MarketScenario:
    """Inputs of one scheduling problem over ``N`` slots.

    Prices are per slot: ``energy_price`` in $ per W held for one slot and
    ``reserve_price`` in $ per W of capacity per slot. ``x_min[k]`` and
    ``x_max[k]`` bound the room temperature at the end of slot ``k``.
    ``disturbances`` has shape ``(N, 3)``: ambient degC, solar W/m^2, gains W.
    """

    energy_price: np.ndarray
    reserve_price: np.ndarray
    disturbances: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    w_lim: float = params.WLIM_DEFAULT
    u_min: float = 0.0
    u_max: float = 0.0
    block: int = 4
    symmetry: str = "thermal_symmetric"
    penalty: float = 1e4

    def __post_init__(self):
        for name in ("energy_price", "reserve_price", "x_min", "x_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        object.__setattr__(self, "disturbances", np.asarray(self.disturbances, dtype=float).reshape(-1, 3))
        N = len(self.energy_price)
        for name in ("reserve_price", "x_min", "x_max", "disturbances"):
            if len(getattr(self, name)) != N:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {N}")
        if np.any(self.x_min >= self.x_max):
            raise ValueError("comfort bounds must satisfy x_min < x_max")
        if not 0 <= self.w_lim <= 1:
            raise ValueError(f"w_lim must lie in [0, 1], got {self.w_lim}")
        if not self.u_min < self.u_max:
            raise ValueError("flow bounds must satisfy u_min < u_max")
        if self.symmetry not in SYMMETRY_MODES:
            raise ValueError(f"symmetry must be one of {SYMMETRY_MODES}")
        if self.block < 1:
            raise ValueError("block length must be >= 1")
        if not self.penalty > 0:
            raise ValueError("comfort slack penalty must be positive")

    @property
    def N(self) -> int:
        return len(self.energy_price)

    @classmethod
    def with_fan_bounds(cls, curves: FanCurves, **kw) -> "MarketScenario":
        kw.setdefault("u_min", float(curves.h(params.SCHED_SPEED_MIN)))
        kw.setdefault("u_max", float(curves.h(params.SCHED_SPEED_MAX)))
        return cls(**kw)


@dataclass
class ReserveSchedule:
    u: np.ndarray
    r_u: np.ndarray
    r_d: np.ndarray
    R_u: np.ndarray
    R_d: np.ndarray
    x_hi: np.ndarray  # (N + 1, 2) upper envelope, x_hi[0] = x0
    x_lo: np.ndarray
    slack_hi: np.ndarray
    slack_lo: np.ndarray
    objective: float
    formulation: str
    report: nlp.SolveReport | None = None
    notes: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.u)

    @property
    def converged(self) -> bool:
        return self.report is None or self.report.converged

    def rows(self):
        for k in range(self.N):
            yield (k, self.u[k], self.r_u[k], self.r_d[k], self.R_u[k], self.R_d[k],
                   self.x_hi[k + 1, 0], self.x_lo[k + 1, 0])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "u", "r_u", "r_d", "R_u", "R_d", "x_hi", "x_lo"])
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])

    def summary(self) -> dict:
        rep = self.report
        return dict(
            formulation=self.formulation, N=self.N, objective=self.objective,
            converged=self.converged,
            total_R_u=float(np.sum(self.R_u)), total_R_d=float(np.sum(self.R_d)),
            max_slack=float(max(np.max(self.slack_hi, initial=0), np.max(self.slack_lo, initial=0))),
            solver=None if rep is None else dict(
                iterations=rep.iterations, stationarity=rep.stationarity,
                max_violation=rep.max_violation, message=rep.message),
            notes=list(self.notes),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2))


# -- envelope dynamics -------------------------------------------------------

def rollout(model: DiscreteBuildingModel, x0, q, v, with_sens: bool = False):
    """Simulate ``x+ = A x + B_u q + B_xu x q + B_v v`` for a flow sequence ``q``.

    With ``with_sens`` also returns ``S`` of shape ``(N + 1, 2, N)`` where
    ``S[k, :, j] = d x_k / d q_j``.
    """
    m = model
    N = len(q)
    X = np.empty((N + 1, 2))
    X[0] = x0
    dist = v @ np.array([m.d11, m.d12, m.d13])
    S = np.zeros((N + 1, 2, N)) if with_sens else None
    bTs = m.b * m.T_s
    for k in range(N):
        tr, tm = X[k]
        qk = q[k]
        X[k + 1, 0] = (m.a11 * tr + m.a12 * tm) + bTs * qk + (-m.b * tr) * qk + dist[k]
        X[k + 1, 1] = m.a21 * tr + m.a22 * tm
        if with_sens:
            Sk = S[k]
            S[k + 1, 0] = (m.a11 - m.b * qk) * Sk[0] + m.a12 * Sk[1]
            S[k + 1, 1] = m.a21 * Sk[0] + m.a22 * Sk[1]
            S[k + 1, 0, k] += m.b * (m.T_s - tr)
    return (X, S) if with_sens else X


def envelope_flows(curves: FanCurves, u, r_u, r_d, w_lim: float, formulation: str):
    """Flows driving the upper/lower envelopes and their partial derivatives.

    Returns ``(q_hi, q_lo, dq_hi_du, dq_hi_drd, dq_lo_du, dq_lo_dru)``.
    """
    u, r_u, r_d = (np.asarray(a, dtype=float) for a in (u, r_u, r_d))
    w = w_lim
    if formulation == "approx":
        one = np.ones_like(u)
        return u - w * r_d, u + w * r_u, one, -w * one, one, w * one
    if formulation == "exact":
        fu, fd, fup = curves.f(u), curves.f(u - r_d), curves.f(u + r_u)
        P_hi = (1 - w) * fu + w * fd
        P_lo = (1 - w) * fu + w * fup
        q_hi = curves.f_inv_ext(P_hi)
        q_lo = curves.f_inv_ext(P_lo)
        # exact at the ends of the Jensen chord
        if w == 1.0:
            q_hi, q_lo = u - r_d, u + r_u
        elif w == 0.0:
            q_hi, q_lo = u.copy(), u.copy()
        dfu, dfd, dfup = curves.df(u), curves.df(u - r_d), curves.df(u + r_u)
        ihi, ilo = 1.0 / curves.df(q_hi), 1.0 / curves.df(q_lo)
        return (np.asarray(q_hi, dtype=float), np.asarray(q_lo, dtype=float),
                ((1 - w) * dfu + w * dfd) * ihi, -w * dfd * ihi,
                ((1 - w) * dfu + w * dfup) * ilo, w * dfup * ilo)
    raise ValueError(f"unknown formulation {formulation!r}")


def _blocks(N: int, block: int):
    return [list(range(s, min(s + block, N))) for s in range(0, N, block)]


class SchedulingProblem:
    """NLP for one scenario, with cached forward simulations.

    Layout of the decision vector: flows, then thermal reserves, then comfort
    slacks ``s_hi, s_lo`` (one per slot). In ``thermal_symmetric`` mode a
    single reserve ``r = r_u = r_d`` is used and, with reserve blocks, flow
    and reserve are block variables: constant ``R_u`` and ``R_d`` over a
    block with ``r_u = r_d`` pins ``(u, r)`` whenever the block carries
    reserve, and stating the block equalities explicitly would make the
    constraint Jacobian rank-deficient at zero reserve. Other modes use
    per-slot ``u, r_u, r_d`` with explicit block/symmetry equalities.
    """

    def __init__(self, model: DiscreteBuildingModel, curves: FanCurves, scenario: MarketScenario,
                 x0, formulation: str = "approx"):
        self.model, self.curves, self.sc = model, curves, scenario
        self.x0 = np.asarray(x0, dtype=float)
        self.formulation = formulation
        N = scenario.N
        self.N = N
        self.sym = scenario.symmetry == "thermal_symmetric"
        if self.sym:
            blocks = _blocks(N, scenario.block)
            E = np.zeros((N, len(blocks)))
            for b, blk in enumerate(blocks):
                E[blk, b] = 1.0
        else:
            E = np.eye(N)
        self.E = E
        nb = E.shape[1]
        I, Zs = np.eye(N), np.zeros((N, N))
        Zb = np.zeros((N, nb))
        if self.sym:
            self.Su = np.hstack([E, Zb, Zs, Zs])
            self.Sru = np.hstack([Zb, E, Zs, Zs])
            self.Srd = self.Sru
            self.Ssh = np.hstack([Zb, Zb, I, Zs])
            self.Ssl = np.hstack([Zb, Zb, Zs, I])
            n_r = nb
        else:
            self.Su = np.hstack([I, Zs, Zs, Zs, Zs])
            self.Sru = np.hstack([Zs, I, Zs, Zs, Zs])
            self.Srd = np.hstack([Zs, Zs, I, Zs, Zs])
            self.Ssh = np.hstack([Zs, Zs, Zs, I, Zs])
            self.Ssl = np.hstack([Zs, Zs, Zs, Zs, I])
            n_r = 2 * N
        self.n = self.Su.shape[1]
        self.nb = nb
        span = scenario.u_max - scenario.u_min
        self.lb = np.concatenate([np.full(nb, scenario.u_min), np.zeros(n_r), np.zeros(2 * N)])
        self.ub = np.concatenate([np.full(nb, scenario.u_max), np.full(n_r, span), np.full(2 * N, np.inf)])
        self._eq_pairs = self._equality_pairs()
        self._cache_z = None

    # -- unpacking ----------------------------------------------------------
    def split(self, z):
        z = np.asarray(z, dtype=float)
        return self.Su @ z, self.Sru @ z, self.Srd @ z, self.Ssh @ z, self.Ssl @ z

    def pack(self, u, r_u, r_d, s_hi, s_lo):
        N = self.N
        if self.sym:
            # block averages of the per-slot values
            w = self.E / self.E.sum(axis=0)
            r = np.minimum(np.asarray(r_u, dtype=float), np.asarray(r_d, dtype=float))
            return np.concatenate([np.asarray(u) @ w, r @ w, s_hi, s_lo])
        del N
        return np.concatenate([u, r_u, r_d, s_hi, s_lo])

    def _equality_pairs(self):
        """(kind, k, k_ref) with kind in {'u', 'd', 'sym'}: R_kind[k] - R_kind[k_ref] = 0."""
        pairs = []
        if self.sym:
            return pairs
        elec_sym = self.sc.symmetry == "electric_symmetric"
        if self.sc.block > 1:
            for blk in _blocks(self.N, self.sc.block):
                for k in blk[1:]:
                    pairs.append(("u", k, blk[0]))
                    # R_d blocks follow from R_u blocks under electric symmetry
                    if not elec_sym:
                        pairs.append(("d", k, blk[0]))
        if elec_sym:
            for k in range(self.N):
                pairs.append(("sym", k, k))
        return pairs

    # -- evaluation with caching -------------------------------------------
    def _eval(self, z):
        if self._cache_z is not None and np.array_equal(z, self._cache_z):
            return self._cache
        z = np.array(z, dtype=float)  # cached slices must not alias the caller's array
        u, r_u, r_d, s_hi, s_lo = self.split(z)
        sc = self.sc
        q_hi, q_lo, dh_du, dh_drd, dl_du, dl_dru = envelope_flows(
            self.curves, u, r_u, r_d, sc.w_lim, self.formulation)
        Xh, Sh = rollout(self.model, self.x0, q_hi, sc.disturbances, with_sens=True)
        Xl, Sl = rollout(self.model, self.x0, q_lo, sc.disturbances, with_sens=True)
        f = self.curves
        fu = f.f(u)
        R_u = fu - f.f(u - r_d)
        R_d = f.f(u + r_u) - fu
        # d T_r(k+1) / d z for both envelopes
        Jh_q = Sh[1:, 0, :]
        Jl_q = Sl[1:, 0, :]
        Jh = Jh_q @ (dh_du[:, None] * self.Su + dh_drd[:, None] * self.Srd)
        Jl = Jl_q @ (dl_du[:, None] * self.Su + dl_dru[:, None] * self.Sru)
        dfu = f.df(u)
        dRu = (dfu - f.df(u - r_d))[:, None] * self.Su + f.df(u - r_d)[:, None] * self.Srd
        dRd = (f.df(u + r_u) - dfu)[:, None] * self.Su + f.df(u + r_u)[:, None] * self.Sru
        self._cache = dict(u=u, r_u=r_u, r_d=r_d, s_hi=s_hi, s_lo=s_lo, Xh=Xh, Xl=Xl, Jh=Jh, Jl=Jl,
                           R_u=R_u, R_d=R_d, dRu=dRu, dRd=dRd, fu=fu, dfu=dfu)
        self._cache_z = z
        return self._cache

    def objective(self, z):
        e = self._eval(z)
        sc = self.sc
        return float(np.sum(sc.energy_price * e["fu"]) - np.sum(sc.reserve_price * (e["R_u"] + e["R_d"]))
                     + sc.penalty * (np.sum(e["s_hi"]) + np.sum(e["s_lo"])))

    def objective_grad(self, z):
        e = self._eval(z)
        sc = self.sc
        g = (sc.energy_price * e["dfu"]) @ self.Su
        g = g - sc.reserve_price @ (e["dRu"] + e["dRd"])
        g = g + sc.penalty * (np.ones(self.N) @ self.Ssh + np.ones(self.N) @ self.Ssl)
        return g

    def ineq(self, z):
        """Residuals ``<= 0``: flow band limits, then upper and lower comfort."""
        e = self._eval(z)
        sc = self.sc
        return np.concatenate([
            sc.u_min - (e["u"] - e["r_d"]),
            (e["u"] + e["r_u"]) - sc.u_max,
            e["Xh"][1:, 0] - sc.x_max - e["s_hi"],
            sc.x_min - e["Xl"][1:, 0] - e["s_lo"],
        ])

    def ineq_jac(self, z):
        e = self._eval(z)
        return np.vstack([
            -(self.Su - self.Srd),
            self.Su + self.Sru,
            e["Jh"] - self.Ssh,
            -e["Jl"] - self.Ssl,
        ])

    def eq(self, z):
        e = self._eval(z)
        out = np.empty(len(self._eq_pairs))
        for i, (kind, k, j) in enumerate(self._eq_pairs):
            if kind == "u":
                out[i] = e["R_u"][k] - e["R_u"][j]
            elif kind == "d":
                out[i] = e["R_d"][k] - e["R_d"][j]
            else:
                out[i] = e["R_u"][k] - e["R_d"][k]
        return out

    def eq_jac(self, z):
        e = self._eval(z)
        J = np.empty((len(self._eq_pairs), self.n))
        for i, (kind, k, j) in enumerate(self._eq_pairs):
            if kind == "u":
                J[i] = e["dRu"][k] - e["dRu"][j]
            elif kind == "d":
                J[i] = e["dRd"][k] - e["dRd"][j]
            else:
                J[i] = e["dRu"][k] - e["dRd"][k]
        return J

    def nlp_problem(self, scaled: bool = True) -> nlp.NlpProblem:
        """NLP view; ``scaled`` divides the objective by the slack penalty.

        Prices per slot are tiny next to the penalty, and SLSQP's line search
        stalls on the unscaled objective.
        """
        has_eq = len(self._eq_pairs) > 0
        k = 1.0 / self.sc.penalty if scaled else 1.0
        return nlp.NlpProblem(
            fun=lambda z: k * self.objective(z), n=self.n, grad=lambda z: k * self.objective_grad(z),
            ineq=self.ineq, ineq_jac=self.ineq_jac,
            eq=self.eq if has_eq else None, eq_jac=self.eq_jac if has_eq else None,
            lb=self.lb, ub=self.ub)

    @property
    def slack_index(self) -> np.ndarray:
        return np.arange(self.n - 2 * self.N, self.n)

    @property
    def hard_scale(self) -> float:
        """Objective scale making typical costs of order one."""
        sc = self.sc
        ref = (np.sum(np.abs(sc.energy_price)) + np.sum(np.abs(sc.reserve_price))) * self.curves.P_hi
        return 1.0 / ref if ref > 0 else 1.0

    def feasible_start(self, u=None, r_u=None, r_d=None):
        """Start point with slacks covering any comfort violation."""
        N, sc = self.N, self.sc
        u = np.full(N, 0.5 * (sc.u_min + sc.u_max)) if u is None else np.clip(u, sc.u_min, sc.u_max)
        r_u = np.zeros(N) if r_u is None else np.clip(r_u, 0, sc.u_max - u)
        r_d = np.zeros(N) if r_d is None else np.clip(r_d, 0, u - sc.u_min)
        z = self.pack(u, r_u, r_d, np.zeros(N), np.zeros(N))
        z = np.clip(z, self.lb, self.ub)
        if self.sym:
            # block-averaged flow may leave no room for the block reserve
            ub_, rb = z[:self.nb], z[self.nb:2 * self.nb]
            z[self.nb:2 * self.nb] = np.minimum(rb, np.minimum(ub_ - sc.u_min, sc.u_max - ub_))
        e = self._eval(z)
        z = z.copy()
        z[-2 * N:-N] = np.maximum(0.0, e["Xh"][1:, 0] - sc.x_max) + 1e-3
        z[-N:] = np.maximum(0.0, sc.x_min - e["Xl"][1:, 0]) + 1e-3
        return z

    def to_schedule(self, z, report=None) -> ReserveSchedule:
        e = self._eval(z)
        return ReserveSchedule(
            u=e["u"].copy(), r_u=np.array(e["r_u"], copy=True), r_d=np.array(e["r_d"], copy=True),
            R_u=np.array(e["R_u"]), R_d=np.array(e["R_d"]), x_hi=e["Xh"].copy(), x_lo=e["Xl"].copy(),
            slack_hi=e["s_hi"].copy(), slack_lo=e["s_lo"].copy(),
            objective=self.objective(z), formulation=self.formulation, report=report)


def check_cooling_mode(model: DiscreteBuildingModel, scenario: MarketScenario) -> None:
    if model.T_s > float(np.min(scenario.x_min)):
        raise AssumptionViolation(
            f"supply air temperature {model.T_s} degC exceeds the lowest comfort bound "
            f"{float(np.min(scenario.x_min))} degC; cooling-mode operation is required")


def _solve(model, curves, scenario, x0, formulation, warm_start=None, opts=None) -> ReserveSchedule:
    check_cooling_mode(model, scenario)
    prob = SchedulingProblem(model, curves, scenario, x0, formulation)
    if warm_start is not None:
        z0 = prob.feasible_start(warm_start.u, warm_start.r_u, warm_start.r_d)
    else:
        z0 = prob.feasible_start()
    rep, phase = nlp.solve_elastic(prob.nlp_problem(scaled=False), prob.slack_index, z0,
                                   prob.hard_scale, 1.0 / scenario.penalty, opts,
                                   reseed=lambda z: prob.feasible_start(*prob.split(z)[:3]))
    sched = prob.to_schedule(rep.x, rep)
    if phase == "soft":
        sched.notes.append("comfort bounds infeasible as hard constraints; solved with slacks")
    if not rep.converged:
        sched.notes.append(f"solver did not converge: {rep.message}")
    return sched


def schedule_reserves(model: DiscreteBuildingModel, curves: FanCurves, scenario: MarketScenario, x0,
                      warm_start: ReserveSchedule | None = None, opts: nlp.SolveOptions | None = None
                      ) -> ReserveSchedule:
    """Robust schedule with the linearized envelope flows."""
    return _solve(model, curves, scenario, x0, "approx", warm_start, opts)


def schedule_reserves_exact(model: DiscreteBuildingModel, curves: FanCurves, scenario: MarketScenario, x0,
                            warm_start: ReserveSchedule | None = None, opts: nlp.SolveOptions | None = None
                            ) -> ReserveSchedule:
    """Robust schedule with envelope flows through the exact inverse fan curve."""
    return _solve(model, curves, scenario, x0, "exact", warm_start, opts)


def envelopes_for(model, curves, schedule: ReserveSchedule, scenario: MarketScenario, x0, formulation: str):
    """Recompute envelopes for fixed decisions under either envelope model."""
    q_hi, q_lo, *_ = envelope_flows(curves, schedule.u, schedule.r_u, schedule.r_d, scenario.w_lim, formulation)
    return rollout(model, x0, q_hi, scenario.disturbances), rollout(model, x0, q_lo, scenario.disturbances)


# -- robustness verification ------------------------------------------------

@dataclass
class RobustnessReport:
    n_draws: int
    max_comfort_violation: float
    max_envelope_violation: float
    max_flow_violation: float
    worst_draw: int

    def to_dict(self) -> dict:
        return dict(n_draws=self.n_draws, max_comfort_violation=self.max_comfort_violation,
                    max_envelope_violation=self.max_envelope_violation,
                    max_flow_violation=self.max_flow_violation, worst_draw=self.worst_draw)


def realized_flows(curves: FanCurves, schedule: ReserveSchedule, w) -> np.ndarray:
    """Flow delivered when the reserve request ``w`` (per slot) is activated."""
    w = np.asarray(w, dtype=float)
    P = curves.f(schedule.u) + np.where(w >= 0, w * schedule.R_d, w * schedule.R_u)
    return np.asarray(curves.f_inv_ext(P), dtype=float)


def verify_schedule(model: DiscreteBuildingModel, curves: FanCurves, schedule: ReserveSchedule,
                    scenario: MarketScenario, x0, n_draws: int = 200, seed: int = 0,
                    envelope_tol: float = 0.0) -> RobustnessReport:
    """Monte Carlo check of a schedule against random per-slot activations.

    Draws ``n_draws`` signals with ``w_k`` uniform in ``[-w_lim, w_lim]`` plus
    the two constant extremes. Comfort violation is measured against the
    comfort band net of the schedule's own slacks; envelope violation against
    the schedule's envelopes; flow violation at full activation ``|w| = 1``.
    """
    N = schedule.N
    rng = np.random.default_rng(seed)
    draws = [np.full(N, scenario.w_lim), np.full(N, -scenario.w_lim)]
    draws += [rng.uniform(-scenario.w_lim, scenario.w_lim, N) for _ in range(n_draws)]
    x_hi_b = scenario.x_max + schedule.slack_hi
    x_lo_b = scenario.x_min - schedule.slack_lo
    comfort = envelope = 0.0
    worst = 0
    for i, w in enumerate(draws):
        X = rollout(model, x0, realized_flows(curves, schedule, w), scenario.disturbances)
        tr = X[1:, 0]
        c = float(np.max(np.maximum(0, np.maximum(tr - x_hi_b, x_lo_b - tr))))
        e = float(np.max(np.maximum(0, np.maximum(tr - schedule.x_hi[1:, 0], schedule.x_lo[1:, 0] - tr))))
        if max(c, e) > max(comfort, envelope):
            worst = i
        comfort, envelope = max(comfort, c), max(envelope, e)
    q_min = realized_flows(curves, schedule, -np.ones(N))
    q_max = realized_flows(curves, schedule, np.ones(N))
    flow = float(np.max(np.maximum(0, np.maximum(scenario.u_min - q_min, q_max - scenario.u_max))))
    return RobustnessReport(len(draws), comfort, envelope, flow, worst)


# -- scenario file I/O ------------------------------------------------------

def comfort_band(N: int, start_hour: float = 0.0, dt_h: float = 0.25, work=(8.0, 18.0),
                 occupied=(21.0, 24.0), unoccupied=(19.0, 26.0)):
    """Working-hours comfort band; index ``k`` bounds the end of slot ``k``."""
    hours = (start_hour + dt_h * (np.arange(N) + 1)) % 24.0
    occ = (hours > work[0]) & (hours <= work[1])
    x_min = np.where(occ, occupied[0], unoccupied[0])
    x_max = np.where(occ, occupied[1], unoccupied[1])
    return x_min.astype(float), x_max.astype(float)


def scenario_from_dict(d: dict, curves: FanCurves, disturbances=None) -> MarketScenario:
    """Build a scenario from its JSON form.

    Prices may be given per slot (``energy_price``, ``reserve_price``) or in
    market units (``energy_price_kwh`` in $/kWh, ``reserve_price_kw_h`` in
    $/kW per hour), which are converted using the slot length.
    """
    dt_h = d.get("delta_t", params.STEP_SECONDS) / 3600.0
    N = int(d.get("N", 96))
    if "energy_price" in d:
        c = np.asarray(d["energy_price"], dtype=float)
    else:
        c = np.asarray(d["energy_price_kwh"], dtype=float) / 1000.0 * dt_h
    if "reserve_price" in d:
        lam = np.asarray(d["reserve_price"], dtype=float)
    else:
        lam = np.asarray(d["reserve_price_kw_h"], dtype=float) / 1000.0 * dt_h
    c = np.broadcast_to(c, (N,)).copy()
    lam = np.broadcast_to(lam, (N,)).copy()
    if disturbances is None:
        disturbances = np.asarray(d["disturbances"], dtype=float)
    if "x_min" in d:
        x_min = np.broadcast_to(np.asarray(d["x_min"], dtype=float), (N,)).copy()
        x_max = np.broadcast_to(np.asarray(d["x_max"], dtype=float), (N,)).copy()
    else:
        x_min, x_max = comfort_band(N, d.get("start_hour", 0.0), dt_h)
    kw = dict(energy_price=c, reserve_price=lam, disturbances=np.asarray(disturbances)[:N],
              x_min=x_min, x_max=x_max, w_lim=float(d.get("w_lim", params.WLIM_DEFAULT)),
              block=int(d.get("block", 4)), symmetry=d.get("symmetry", "thermal_symmetric"),
              penalty=float(d.get("penalty", 1e4)))
    if "u_min" in d:
        kw["u_min"] = float(d["u_min"])
    if "u_max" in d:
        kw["u_max"] = float(d["u_max"])
    return MarketScenario.with_fan_bounds(curves, **kw)


def restrict(scenario: MarketScenario, start: int, stop: int) -> MarketScenario:
    """Sub-horizon ``[start, stop)`` of a scenario."""
    sl = slice(start, stop)
    return replace(scenario, energy_price=scenario.energy_price[sl], reserve_price=scenario.reserve_price[sl],
                   disturbances=scenario.disturbances[sl], x_min=scenario.x_min[sl], x_max=scenario.x_max[sl])
