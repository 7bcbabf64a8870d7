"""Fast self-checks of the convexity, envelope and solver properties the controllers rely on."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import nlp
from .climate import KalmanState, NoiseConfig, kf_predict, kf_update
from .fan import FanCurves, table_curves
from .model import table_model
from .scheduler import (MarketScenario, SchedulingProblem, comfort_band, envelope_flows, schedule_reserves,
                        schedule_reserves_exact, verify_schedule)
from .signals import RegulationSignal, energy_content
from .weather import synthetic_disturbances

X0 = (23.0, 23.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def demo_scenario(N: int = 12, w_lim: float = 0.25, start_hour: float = 8.0, curves: FanCurves | None = None,
                  energy_kwh: float = 0.12, reserve_kw_h: float = 0.05, **kw) -> MarketScenario:
    """Flat-price scenario starting at ``start_hour`` with the working-hours comfort band."""
    curves = curves or table_curves()
    dt_h = 0.25
    x_min, x_max = comfort_band(N, start_hour, dt_h)
    return MarketScenario.with_fan_bounds(
        curves, energy_price=np.full(N, energy_kwh / 1000 * dt_h), reserve_price=np.full(N, reserve_kw_h / 1000 * dt_h),
        disturbances=synthetic_disturbances(N, start_hour, dt_h), x_min=x_min, x_max=x_max, w_lim=w_lim, **kw)


def curve_shape(curves: FanCurves | None = None, n: int = 1000) -> tuple[bool, str]:
    """Independent grid check that f' > 0 and f'' >= 0 on [h(10 %), h(90 %)]."""
    c = curves or table_curves()
    u = np.linspace(c.h(10.0), c.h(90.0), n)
    a = np.asarray(c.alpha)
    d1 = a[1] + 2 * a[2] * u + 3 * a[3] * u ** 2
    d2 = 2 * a[2] + 6 * a[3] * u
    ok = bool(np.all(d1 > 0) and np.all(d2 >= 0))
    return ok, f"min f' = {d1.min():.4g}, min f'' = {d2.min():.4g}"


def envelope_extremes(n: int = 10_000, seed: int = 0, curves: FanCurves | None = None, tol: float = 1e-6,
           n_grid: int = 11) -> tuple[bool, str]:
    """Envelope flows equal the extremes of the realised flow over a dense activation grid."""
    c = curves or table_curves()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for w_lim in (0.1, 0.25, 0.5, 1.0):
        u = rng.uniform(c.u_lo, c.u_hi, n)
        r_u = rng.uniform(0, 1, n) * (c.u_hi - u)
        r_d = rng.uniform(0, 1, n) * (u - c.u_lo)
        fu = c.f(u)
        R_u, R_d = fu - c.f(u - r_d), c.f(u + r_u) - fu
        w = np.linspace(-w_lim, w_lim, n_grid)[:, None]
        q = c.f_inv(np.clip(fu + np.where(w >= 0, w * R_d, w * R_u), c.P_lo, c.P_hi))
        q_hi, q_lo, *_ = envelope_flows(c, u, r_u, r_d, w_lim, "exact")
        worst = max(worst, float(np.max(np.abs(q.min(axis=0) - q_hi))), float(np.max(np.abs(q.max(axis=0) - q_lo))))
        if w_lim == 1.0:
            worst = max(worst, float(np.max(np.abs(q_hi - (u - r_d)))), float(np.max(np.abs(q_lo - (u + r_u)))))
    return worst <= tol, f"max deviation {worst:.3g} kg/s"


def linearisation_conservative(N: int = 12, tol: float = 1e-4) -> tuple[bool, str]:
    m, c = table_model(), table_curves()
    sc = demo_scenario(N, 0.25, curves=c)
    a, e = schedule_reserves(m, c, sc, X0), schedule_reserves_exact(m, c, sc, X0)
    d_hi = float(np.min(a.x_hi[1:, 0] - e.x_hi[1:, 0]))
    d_lo = float(np.min(a.x_lo[1:, 0] - e.x_lo[1:, 0]))
    ok = d_hi >= -tol and d_lo >= -tol and a.converged and e.converged
    return ok, f"min(x_hi approx - exact) = {d_hi:.3g}, min(x_lo approx - exact) = {d_lo:.3g}"


def full_activation_agreement(N: int = 12, rtol: float = 1e-4, env_tol: float = 1e-3) -> tuple[bool, str]:
    m, c = table_model(), table_curves()
    sc = demo_scenario(N, 1.0, curves=c)
    a, e = schedule_reserves(m, c, sc, X0), schedule_reserves_exact(m, c, sc, X0)
    rel = abs(a.objective - e.objective) / max(abs(e.objective), 1e-12)
    env = float(max(np.max(np.abs(a.x_hi - e.x_hi)), np.max(np.abs(a.x_lo - e.x_lo))))
    return rel <= rtol and env <= env_tol, f"objective rel. diff {rel:.3g}, envelope diff {env:.3g} degC"


def monte_carlo(N: int = 12, n_draws: int = 200, tol: float = 0.05) -> tuple[bool, str]:
    m, c = table_model(), table_curves()
    sc = demo_scenario(N, 0.25, curves=c)
    s = schedule_reserves_exact(m, c, sc, X0)
    rep = verify_schedule(m, c, s, sc, X0, n_draws=n_draws, seed=0)
    ok = rep.max_comfort_violation <= tol and rep.max_envelope_violation <= tol
    return ok, (f"{rep.n_draws} draws, comfort violation {rep.max_comfort_violation:.3g} degC, "
                f"envelope violation {rep.max_envelope_violation:.3g} degC")


def gradients(n_points: int = 20, seed: int = 0, tol: float = 1e-5) -> tuple[bool, str]:
    m, c = table_model(), table_curves()
    sc = demo_scenario(12, 0.25, curves=c)
    prob = SchedulingProblem(m, c, sc, X0, "approx")
    nlp_prob = prob.nlp_problem()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_points):
        u = rng.uniform(sc.u_min + 0.05, sc.u_max - 0.05, sc.N)
        z = prob.feasible_start(u, rng.uniform(0, 0.04, sc.N), rng.uniform(0, 0.04, sc.N))
        worst = max(worst, nlp.check_gradients(nlp_prob, z))
    return worst <= tol, f"max relative error {worst:.3g} over {n_points} points"


def ekf_psd(n_steps: int = 10_000, seed: int = 0) -> tuple[bool, str]:
    m = table_model("older")
    noise = NoiseConfig()
    rng = np.random.default_rng(seed)
    st = KalmanState(np.array([22.0, 22.0]), np.eye(2))
    worst_asym, min_eig = 0.0, np.inf
    for _ in range(n_steps):
        st = kf_predict(m, st, rng.uniform(0.2, 1.2), (rng.uniform(15, 30), rng.uniform(0, 800), 3000.0), noise)
        st = kf_update(st, st.x[0] + rng.normal(0, 1), noise)
        worst_asym = max(worst_asym, float(np.max(np.abs(st.P - st.P.T))))
        min_eig = min(min_eig, float(np.min(np.linalg.eigvalsh(st.P))))
        st = KalmanState(np.clip(st.x, 0, 50), st.P)
    return worst_asym == 0.0 and min_eig >= 0, f"max asymmetry {worst_asym:.3g}, min eigenvalue {min_eig:.3g}"


def signal_content() -> tuple[bool, str]:
    const = energy_content(RegulationSignal(np.full(900, 0.3)), 900.0).contents
    t = 4.0 * np.arange(225 * 4)
    sine = energy_content(RegulationSignal(np.sin(2 * np.pi * t / 900.0)), 900.0).contents
    err = max(float(np.max(np.abs(const - 0.3))), float(np.max(np.abs(sine))))
    return err <= 1e-12, f"max error {err:.3g}"


CHECKS = (
    ("flow-power curve increasing and convex", curve_shape),
    ("envelope flows are activation extremes", envelope_extremes),
    ("linearised envelopes conservative", linearisation_conservative),
    ("formulations agree at full activation", full_activation_agreement),
    ("robustness monte carlo", monte_carlo),
    ("scheduler gradients", gradients),
    ("ekf covariance symmetric psd", ekf_psd),
    ("signal energy content", signal_content),
)


def run_all(checks=CHECKS) -> list[CheckResult]:
    out = []
    for name, fn in checks:
        t = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"error: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t))
    return out


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  time    detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:5.1f}s  {r.detail}")
    return "\n".join(lines)
