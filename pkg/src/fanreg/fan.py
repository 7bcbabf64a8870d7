"""Static fan curves: flow->power ``f``, speed->power ``g``, speed->flow ``h``.

All three maps are low-order polynomials fitted independently from a speed
sweep. ``f`` and ``g`` are inverted by bisection, which is safe because both
are strictly increasing on their operating domains.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numpy.polynomial import polynomial as P

from . import params
from .timefmt import parse_time


class FanDomainError(ValueError):
    pass


class FanFitError(ValueError):
    pass


class ReservePair(NamedTuple):
    R_u: float
    R_d: float


def _bisect_increasing(fun, target, lo, hi, tol=0.0, max_iter=200, dfun=None):
    """Vectorized root of ``fun(x) = target`` for ``fun`` increasing on [lo, hi].

    ``lo`` and ``hi`` may be arrays. With ``dfun`` the bracket is shrunk by
    Newton steps, falling back to bisection whenever a step leaves it.
    Iterates until the bracket stops shrinking (machine precision) unless
    ``tol`` is positive.
    """
    target = np.asarray(target, dtype=float)
    a = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    b = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    x = 0.5 * (a + b)
    for _ in range(max_iter):
        if np.all(b - a <= tol):
            break
        fx = fun(x) - target
        a = np.where(fx < 0, x, a)
        b = np.where(fx < 0, b, x)
        mid = 0.5 * (a + b)
        if np.all((mid == a) | (mid == b) | (fx == 0)):
            break
        if dfun is None:
            x = mid
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                xn = x - fx / dfun(x)
            done = (fx == 0) | (np.abs(xn - x) <= 4 * np.finfo(float).eps * np.maximum(np.abs(x), 1.0))
            if np.all(done):
                break
            ok = np.isfinite(xn) & (xn > a) & (xn < b)
            x = np.where(fx == 0, x, np.where(ok, xn, mid))
    cand = np.stack([a, b, x])
    err = np.abs(fun(cand) - target)
    return np.take_along_axis(cand, np.argmin(err, axis=0)[None], axis=0)[0]


@dataclass(frozen=True)
class FanCurves:
    """Polynomial fan maps with coefficients in ascending order.

    ``alpha``: W per (kg/s)^n, ``beta``: W per %^n, ``gamma``: kg/s per %^n.
    The flow domain defaults to ``h`` evaluated at the speed domain.
    """

    alpha: tuple
    beta: tuple
    gamma: tuple
    N_lo: float = params.SPEED_MIN
    N_hi: float = params.SPEED_MAX
    u_lo: float | None = None
    u_hi: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(a) for a in self.beta))
        object.__setattr__(self, "gamma", tuple(float(a) for a in self.gamma))
        if len(self.alpha) != 4 or len(self.beta) != 4 or len(self.gamma) != 2:
            raise ValueError("expected 4 alpha, 4 beta and 2 gamma coefficients")
        if not self.gamma[1] > 0:
            raise ValueError(f"speed->flow slope must be positive, got {self.gamma[1]}")
        if self.u_lo is None:
            object.__setattr__(self, "u_lo", float(self.h(self.N_lo)))
        if self.u_hi is None:
            object.__setattr__(self, "u_hi", float(self.h(self.N_hi)))

    # raw polynomial maps, vectorized, no domain policy
    def f(self, u):
        a0, a1, a2, a3 = self.alpha
        return ((a3 * u + a2) * u + a1) * u + a0

    def df(self, u):
        _, a1, a2, a3 = self.alpha
        return (3.0 * a3 * u + 2.0 * a2) * u + a1

    def d2f(self, u):
        _, _, a2, a3 = self.alpha
        return 6.0 * a3 * u + 2.0 * a2

    def g(self, N):
        b0, b1, b2, b3 = self.beta
        return ((b3 * N + b2) * N + b1) * N + b0

    def dg(self, N):
        _, b1, b2, b3 = self.beta
        return (3.0 * b3 * N + 2.0 * b2) * N + b1

    def h(self, N):
        return self.gamma[1] * N + self.gamma[0]

    def h_inv(self, u):
        return (u - self.gamma[0]) / self.gamma[1]

    @property
    def P_lo(self) -> float:
        return float(self.f(self.u_lo))

    @property
    def P_hi(self) -> float:
        return float(self.f(self.u_hi))

    def f_inv(self, power, rtol: float = 1e-12):
        """Flow delivering ``power``; raises :class:`FanDomainError` outside the range."""
        p = np.asarray(power, dtype=float)
        lo, hi = self.P_lo, self.P_hi
        slack = rtol * max(abs(lo), abs(hi))
        if np.any(p < lo - slack) or np.any(p > hi + slack) or not np.all(np.isfinite(p)):
            bad = p[(p < lo - slack) | (p > hi + slack) | ~np.isfinite(p)].ravel()[0]
            raise FanDomainError(f"power {bad:.6g} W outside admissible range [{lo:.6g}, {hi:.6g}] W")
        out = _bisect_increasing(self.f, np.clip(p, lo, hi), self.u_lo, self.u_hi, dfun=self.df)
        return float(out) if out.ndim == 0 else out

    def f_inv_ext(self, power):
        """Inverse of ``f`` continued beyond the fitted domain (no range check).

        Used for infeasible solver iterates and for diagnosing over-sized
        reserves; relies on ``f`` staying increasing outside the domain.
        """
        p = np.asarray(power, dtype=float)
        span = self.u_hi - self.u_lo
        # inside the range use the same bracket as f_inv so results agree bit for bit
        lo = np.where(p >= self.P_lo, self.u_lo, self.u_lo - 2.0 * span)
        hi = np.where(p <= self.P_hi, self.u_hi, self.u_hi + 2.0 * span)
        out = _bisect_increasing(self.f, p, lo, hi, dfun=self.df)
        return float(out) if out.ndim == 0 else out

    def df_inv(self, power):
        """Derivative of ``f_inv`` with respect to power."""
        return 1.0 / self.df(self.f_inv(power))

    def g_inv(self, power, rtol: float = 1e-12):
        p = np.asarray(power, dtype=float)
        lo, hi = float(self.g(self.N_lo)), float(self.g(self.N_hi))
        slack = rtol * max(abs(lo), abs(hi))
        if np.any(p < lo - slack) or np.any(p > hi + slack) or not np.all(np.isfinite(p)):
            bad = p[(p < lo - slack) | (p > hi + slack) | ~np.isfinite(p)].ravel()[0]
            raise FanDomainError(f"power {bad:.6g} W outside admissible range [{lo:.6g}, {hi:.6g}] W")
        out = _bisect_increasing(self.g, np.clip(p, lo, hi), self.N_lo, self.N_hi, dfun=self.dg)
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return dict(alpha=list(self.alpha), beta=list(self.beta), gamma=list(self.gamma),
                    flow_domain=[self.u_lo, self.u_hi], speed_domain=[self.N_lo, self.N_hi])

    @classmethod
    def from_dict(cls, d: dict) -> "FanCurves":
        N_lo, N_hi = d.get("speed_domain", (params.SPEED_MIN, params.SPEED_MAX))
        u_lo, u_hi = d.get("flow_domain", (None, None))
        return cls(tuple(d["alpha"]), tuple(d["beta"]), tuple(d["gamma"]), N_lo, N_hi, u_lo, u_hi)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "FanCurves":
        return cls.from_dict(json.loads(Path(path).read_text()))


def table_curves() -> FanCurves:
    return FanCurves(params.FAN_ALPHA, params.FAN_BETA, params.FAN_GAMMA)


def consistent_speed_curves(curves: FanCurves) -> FanCurves:
    """Copy of ``curves`` whose speed->power map is ``f(h(N))``.

    Composition of a cubic with an affine map is again a cubic, so the result
    keeps the same representation.
    """
    g0, g1 = curves.gamma
    # f(g0 + g1 N) expanded in powers of N
    coef = np.zeros(4)
    lin = np.array([g0, g1])
    term = np.array([1.0])
    for a in curves.alpha:
        coef[: len(term)] += a * term
        term = P.polymul(term, lin)
    return FanCurves(curves.alpha, tuple(coef), curves.gamma, curves.N_lo, curves.N_hi, curves.u_lo, curves.u_hi)


def consistency_gap(curves: FanCurves, n: int = 81) -> float:
    """Max |f(h(N)) - g(N)| over the speed domain, W."""
    N = np.linspace(curves.N_lo, curves.N_hi, n)
    return float(np.max(np.abs(curves.f(curves.h(N)) - curves.g(N))))


def _clamp_warn(x, lo, hi, what):
    x = np.asarray(x, dtype=float)
    if np.any(x < lo) or np.any(x > hi):
        warnings.warn(f"{what} outside [{lo:.6g}, {hi:.6g}]; clamped", RuntimeWarning, stacklevel=3)
        x = np.clip(x, lo, hi)
    return float(x) if x.ndim == 0 else x


def flow_to_power(curves: FanCurves, u):
    """``f(u)`` in W; flows outside the fitted domain are clamped with a warning."""
    return curves.f(_clamp_warn(u, curves.u_lo, curves.u_hi, "flow"))


def power_to_flow(curves: FanCurves, power):
    return curves.f_inv(power)


def speed_to_flow(curves: FanCurves, N):
    return curves.h(_clamp_warn(N, curves.N_lo, curves.N_hi, "fan speed"))


def flow_to_speed(curves: FanCurves, u):
    return curves.h_inv(u)


def speed_to_power(curves: FanCurves, N):
    return curves.g(_clamp_warn(N, curves.N_lo, curves.N_hi, "fan speed"))


def power_to_speed(curves: FanCurves, power):
    return curves.g_inv(power)


def reserve_capacities(curves: FanCurves, u: float, r_u: float, r_d: float, tol: float = 1e-12) -> ReservePair:
    """Electric up/down reserve (W) implied by thermal reserves around flow ``u``.

    Up-reserve lowers consumption, so it is paired with the flow decrease ``r_d``.
    """
    if r_u < 0 or r_d < 0:
        raise FanDomainError(f"thermal reserves must be non-negative, got r_u={r_u}, r_d={r_d}")
    if u - r_d < curves.u_lo - tol or u + r_u > curves.u_hi + tol:
        raise FanDomainError(
            f"flow band [{u - r_d:.6g}, {u + r_u:.6g}] kg/s leaves domain [{curves.u_lo:.6g}, {curves.u_hi:.6g}]")
    fu = curves.f(u)
    return ReservePair(float(fu - curves.f(u - r_d)), float(curves.f(u + r_u) - fu))


def check_shape(curves: FanCurves, n: int = 1000) -> dict:
    """Grid check of ``f' > 0`` and ``f'' >= 0`` on the flow domain."""
    u = np.linspace(curves.u_lo, curves.u_hi, n)
    d1, d2 = curves.df(u), curves.d2f(u)
    return dict(monotone=bool(np.all(d1 > 0)), convex=bool(np.all(d2 >= 0)),
                min_slope=float(d1.min()), min_curvature=float(d2.min()))


def _violating_interval(u, ok):
    bad = np.flatnonzero(~ok)
    return float(u[bad[0]]), float(u[bad[-1]])


def fit_fan(sweep, settle_s: float = 20.0, min_levels: int = 8) -> FanCurves:
    """Fit ``f``, ``g`` and ``h`` from a speed sweep.

    ``sweep`` rows are ``(speed %, flow kg/s, power W)`` or
    ``(speed %, flow kg/s, power W, timestamp s)``. With timestamps, samples
    within ``settle_s`` seconds after each speed change are dropped.
    """
    data = np.asarray(sweep, dtype=float)
    if data.ndim != 2 or data.shape[1] not in (3, 4) or len(data) == 0:
        raise FanFitError("sweep must have rows of (speed, flow, power[, timestamp])")
    if data.shape[1] == 4:
        data = data[np.argsort(data[:, 3], kind="stable")]
        change_t = data[0, 3]
        keep = np.zeros(len(data), dtype=bool)
        for i in range(len(data)):
            if i > 0 and data[i, 0] != data[i - 1, 0]:
                change_t = data[i, 3]
            keep[i] = data[i, 3] - change_t >= settle_s
        data = data[keep]
    levels = np.unique(data[:, 0])
    if len(levels) < 4:
        raise FanFitError(f"rank-deficient design matrix: {len(levels)} distinct speed level(s), cubic fit needs >= 4")
    if len(levels) < min_levels:
        raise FanFitError(f"need at least {min_levels} distinct speed levels, got {len(levels)}")
    N, u, p = data[:, 0], data[:, 1], data[:, 2]
    alpha = P.polyfit(u, p, 3)
    beta = P.polyfit(N, p, 3)
    gamma = P.polyfit(N, u, 1)
    curves = FanCurves(tuple(alpha), tuple(beta), tuple(gamma), float(levels[0]), float(levels[-1]))
    grid = np.linspace(curves.u_lo, curves.u_hi, 1000)
    mono = curves.df(grid) > 0
    if not np.all(mono):
        a, b = _violating_interval(grid, mono)
        raise FanFitError(f"fitted flow->power curve is not increasing on [{a:.4g}, {b:.4g}] kg/s")
    gmono = curves.dg(np.linspace(curves.N_lo, curves.N_hi, 1000)) > 0
    if not np.all(gmono):
        a, b = _violating_interval(np.linspace(curves.N_lo, curves.N_hi, 1000), gmono)
        raise FanFitError(f"fitted speed->power curve is not increasing on [{a:.4g}, {b:.4g}] %")
    convex = curves.d2f(grid) >= 0
    if not np.all(convex):
        a, b = _violating_interval(grid, convex)
        warnings.warn(f"fitted flow->power curve is not convex on [{a:.4g}, {b:.4g}] kg/s", RuntimeWarning)
    return curves


def fit_rmse(curves: FanCurves, sweep) -> dict:
    data = np.asarray(sweep, dtype=float)
    N, u, p = data[:, 0], data[:, 1], data[:, 2]
    return dict(
        flow_to_power=float(np.sqrt(np.mean((curves.f(u) - p) ** 2))),
        speed_to_power=float(np.sqrt(np.mean((curves.g(N) - p) ** 2))),
        speed_to_flow=float(np.sqrt(np.mean((curves.h(N) - u) ** 2))),
    )


def read_sweep_csv(path) -> np.ndarray:
    """Read ``speed_pct,flow,power,timestamp`` rows (timestamp in seconds)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"speed_pct", "flow", "power"} - set(reader.fieldnames or ())
        if missing:
            raise FanFitError(f"{path}: missing columns {sorted(missing)}")
        has_t = "timestamp" in reader.fieldnames
        for i, row in enumerate(reader, start=2):
            try:
                vals = [float(row["speed_pct"]), float(row["flow"]), float(row["power"])]
                if has_t:
                    vals.append(parse_time(row["timestamp"]))
            except (TypeError, ValueError) as exc:
                raise FanFitError(f"{path}: malformed row {i}: {exc}") from None
            rows.append(vals)
    return np.array(rows)


def write_sweep_csv(path, sweep) -> None:
    data = np.asarray(sweep, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["speed_pct", "flow", "power", "timestamp"])
        for row in data:
            t = row[3] if len(row) > 3 else ""
            w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), t if t == "" else repr(float(t))])
