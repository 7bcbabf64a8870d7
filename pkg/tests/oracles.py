"""Independent reference computations shared by the module and acceptance tests."""

import numpy as np
from scipy import stats

from fanreg.climate import KalmanState, NoiseConfig, innovation, kf_predict, kf_update
from fanreg.fan import table_curves
from fanreg.model import step, table_model
from fanreg.scheduler import MarketScenario
from fanreg.weather import synthetic_disturbances


def next_room_temp(model, x0, q, v):
    """Room temperature after one step, vectorised over the flow ``q``."""
    tr, tm = x0
    ta, g, ig = v
    return (model.a11 * tr + model.a12 * tm + model.b * q * (model.T_s - tr)
            + model.d11 * ta + model.d12 * g + model.d13 * ig)


def envelope_flow(curves, u, r, w, sign, formulation):
    """Worst-case flow for one envelope; ``sign`` is -1 for the decrease, +1 for the increase."""
    if formulation == "approx":
        return u + sign * w * r
    return curves.f_inv_ext((1 - w) * curves.f(u) + w * curves.f(u + sign * r))


def single_step_grid(model, curves, sc, x0, formulation="approx", delta=1e-3):
    """Exhaustive search over ``(u, r_u, r_d)`` for a one-slot schedule with hard comfort.

    For fixed ``u`` the objective and constraints split into an ``r_d`` part
    (upper envelope) and an ``r_u`` part (lower envelope), so the 3-D grid is
    searched exactly as a 2-D grid per reserve direction.
    Returns ``(J, u, r_u, r_d)``.
    """
    c, lam, w = sc.energy_price[0], sc.reserve_price[0], sc.w_lim
    v = sc.disturbances[0]
    u = np.arange(sc.u_min, sc.u_max + delta / 2, delta)
    r = np.arange(0.0, sc.u_max - sc.u_min + delta / 2, delta)
    U, Rg = np.meshgrid(u, r, indexing="ij")
    fu = curves.f(u)

    ok_d = U - Rg >= sc.u_min - 1e-12
    Ud = np.where(ok_d, U - Rg, sc.u_min)
    q_hi = envelope_flow(curves, U, np.where(ok_d, Rg, 0.0), w, -1, formulation)
    ok_d &= next_room_temp(model, x0, q_hi, v) <= sc.x_max[0]
    Jd = np.where(ok_d, -lam * (fu[:, None] - curves.f(Ud)), np.inf)

    ok_u = U + Rg <= sc.u_max + 1e-12
    Uu = np.where(ok_u, U + Rg, sc.u_max)
    q_lo = envelope_flow(curves, U, np.where(ok_u, Rg, 0.0), w, +1, formulation)
    ok_u &= next_room_temp(model, x0, q_lo, v) >= sc.x_min[0]
    Ju = np.where(ok_u, -lam * (curves.f(Uu) - fu[:, None]), np.inf)

    J = c * fu + Jd.min(axis=1) + Ju.min(axis=1)
    i = int(np.argmin(J))
    return float(J[i]), float(u[i]), float(r[np.argmin(Ju[i])]), float(r[np.argmin(Jd[i])])


def cell_variation(curves, sc, u, r_u, r_d, delta=1e-3):
    """Objective change across one grid cell around ``(u, r_u, r_d)`` (first order)."""
    c, lam = sc.energy_price[0], sc.reserve_price[0]
    fd, fup = curves.df(u - r_d), curves.df(u + r_u)
    return delta * (abs(c * curves.df(u) - lam * (fup - fd)) + lam * fup + lam * fd)


def random_single_step(rng, curves=None, model=None):
    """One-slot scenario with random prices, activation bound and a feasible comfort band."""
    curves = curves or table_curves()
    model = model or table_model()
    x0 = rng.uniform(22.0, 25.0, 2)
    v = synthetic_disturbances(1, rng.uniform(0, 24))
    u_lo, u_hi = float(curves.h(20.0)), float(curves.h(80.0))
    t_cold = float(next_room_temp(model, x0, u_hi, v[0]))
    t_warm = float(next_room_temp(model, x0, u_lo, v[0]))
    x_max = rng.uniform(t_cold + 0.3 * (t_warm - t_cold), t_warm + 0.5)
    x_min = rng.uniform(t_cold - 0.5, t_cold + 0.5 * (x_max - t_cold))
    dt_h = 0.25
    sc = MarketScenario.with_fan_bounds(
        curves, energy_price=[rng.uniform(0.05, 0.3) / 1000 * dt_h],
        reserve_price=[rng.uniform(0.0, 0.3) / 1000 * dt_h], disturbances=v,
        x_min=[x_min], x_max=[x_max], w_lim=float(rng.uniform(0.1, 1.0)), block=1, symmetry="none")
    return model, curves, sc, x0


def ljung_box(x, lags=10):
    """Ljung-Box Q statistic and its chi-square p-value."""
    x = np.asarray(x) - np.mean(x)
    n = len(x)
    acf = np.array([x[:-k] @ x[k:] for k in range(1, lags + 1)]) / (x @ x)
    q = n * (n + 2) * np.sum(acf ** 2 / (n - np.arange(1, lags + 1)))
    return q, stats.chi2.sf(q, lags)


def matched_noise_run(model, n=800, seed=5):
    """EKF on data simulated from its own model with the filter's noise levels.

    Returns normalised innovations, T_m estimate errors and T_m variances.
    """
    rng = np.random.default_rng(seed)
    noise = NoiseConfig(Q=np.diag([0.02, 0.01]), R=0.05)
    v = synthetic_disturbances(n, 0.0, rng=rng, jitter=1.0)
    u = rng.uniform(0.3, 1.0, n)
    x = np.array([23.0, 23.0])
    st_ = KalmanState(x, np.eye(2) * 0.1)
    nu, err_m, var_m = [], [], []
    for k in range(n):
        y = x[0] + rng.normal(0, np.sqrt(noise.R))
        e, s = innovation(st_, y, noise)
        nu.append(e / np.sqrt(s))
        st_ = kf_update(st_, y, noise)
        err_m.append(st_.x[1] - x[1])
        var_m.append(st_.P[1, 1])
        x = np.array(step(model, x, u[k], v[k])) + rng.multivariate_normal(np.zeros(2), noise.Q)
        st_ = kf_predict(model, st_, u[k], v[k], noise)
    return np.array(nu), np.array(err_m), np.array(var_m)
