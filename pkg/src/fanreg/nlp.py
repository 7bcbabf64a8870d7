"""Small dense smooth NLP solver front-end.

Problems are ``min f(z)`` subject to ``g(z) <= 0``, ``h(z) = 0`` and box
bounds. Two back-ends are provided: SciPy's SLSQP (default) and an
augmented-Lagrangian outer loop around L-BFGS-B. Either way the returned
:class:`SolveReport` carries a first-order stationarity measure computed from
least-squares KKT multipliers, and the maximum constraint violation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize

Array = np.ndarray


@dataclass
class NlpProblem:
    fun: Callable[[Array], float]
    n: int
    grad: Optional[Callable[[Array], Array]] = None
    ineq: Optional[Callable[[Array], Array]] = None
    ineq_jac: Optional[Callable[[Array], Array]] = None
    eq: Optional[Callable[[Array], Array]] = None
    eq_jac: Optional[Callable[[Array], Array]] = None
    lb: Optional[Array] = None
    ub: Optional[Array] = None
    fd_step: float = 1e-7

    def __post_init__(self):
        self.lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.lb.shape != (self.n,) or self.ub.shape != (self.n,):
            raise ValueError(f"bounds must have shape ({self.n},)")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")

    def gradient(self, z: Array) -> Array:
        if self.grad is not None:
            return np.asarray(self.grad(z), dtype=float)
        return fd_jacobian(lambda x: np.atleast_1d(self.fun(x)), z, self.fd_step)[0]

    def g(self, z: Array) -> Array:
        return np.zeros(0) if self.ineq is None else np.atleast_1d(np.asarray(self.ineq(z), dtype=float))

    def h(self, z: Array) -> Array:
        return np.zeros(0) if self.eq is None else np.atleast_1d(np.asarray(self.eq(z), dtype=float))

    def g_jac(self, z: Array) -> Array:
        if self.ineq is None:
            return np.zeros((0, self.n))
        if self.ineq_jac is not None:
            return np.atleast_2d(np.asarray(self.ineq_jac(z), dtype=float)).reshape(-1, self.n)
        return fd_jacobian(self.g, z, self.fd_step)

    def h_jac(self, z: Array) -> Array:
        if self.eq is None:
            return np.zeros((0, self.n))
        if self.eq_jac is not None:
            return np.atleast_2d(np.asarray(self.eq_jac(z), dtype=float)).reshape(-1, self.n)
        return fd_jacobian(self.h, z, self.fd_step)

    def violation(self, z: Array) -> float:
        parts = [0.0]
        g = self.g(z)
        if g.size:
            parts.append(float(np.max(g)))
        h = self.h(z)
        if h.size:
            parts.append(float(np.max(np.abs(h))))
        parts.append(float(np.max(self.lb - z, initial=0.0)))
        parts.append(float(np.max(z - self.ub, initial=0.0)))
        return max(parts)


@dataclass
class SolveOptions:
    stationarity_tol: float = 1e-6
    violation_tol: float = 1e-6
    max_iter: int = 500
    method: str = "slsqp"
    ftol: float = 1e-12
    active_tol: float = 1e-6
    restarts: int = 3


@dataclass
class SolveReport:
    x: Array
    fun: float
    stationarity: float
    max_violation: float
    iterations: int
    converged: bool
    message: str = ""
    multipliers: dict = field(default_factory=dict)


def fd_jacobian(fun, z: Array, h: float = 1e-7) -> Array:
    """Central-difference Jacobian of a vector function."""
    z = np.asarray(z, dtype=float)
    f0 = np.atleast_1d(fun(z))
    J = np.empty((f0.size, z.size))
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        J[:, i] = (np.atleast_1d(fun(z + e)) - np.atleast_1d(fun(z - e))) / (2 * h)
    return J


def kkt_stationarity(problem: NlpProblem, z: Array, active_tol: float = 1e-6):
    """Scaled norm of the Lagrangian gradient with best-fit multipliers.

    Inequality multipliers (active constraints and active bounds) are
    constrained non-negative; equality multipliers are free.
    """
    grad = problem.gradient(z)
    cols, lo, hi = [], [], []
    g = problem.g(z)
    gi = np.flatnonzero(g >= -active_tol) if g.size else np.zeros(0, dtype=int)
    if gi.size:
        Jg = problem.g_jac(z)[gi]
        cols.append(Jg.T)
        lo += [0.0] * gi.size
        hi += [np.inf] * gi.size
    h = problem.h(z)
    if h.size:
        cols.append(problem.h_jac(z).T)
        lo += [-np.inf] * h.size
        hi += [np.inf] * h.size
    at_lb = np.flatnonzero(z <= problem.lb + active_tol)
    at_ub = np.flatnonzero(z >= problem.ub - active_tol)
    if at_lb.size:
        E = np.zeros((problem.n, at_lb.size))
        E[at_lb, np.arange(at_lb.size)] = -1.0
        cols.append(E)
        lo += [0.0] * at_lb.size
        hi += [np.inf] * at_lb.size
    if at_ub.size:
        E = np.zeros((problem.n, at_ub.size))
        E[at_ub, np.arange(at_ub.size)] = 1.0
        cols.append(E)
        lo += [0.0] * at_ub.size
        hi += [np.inf] * at_ub.size
    scale = max(1.0, float(np.max(np.abs(grad), initial=0.0)))
    if not cols:
        return float(np.max(np.abs(grad), initial=0.0)) / scale, np.zeros(0)
    M = np.hstack(cols)
    res = optimize.lsq_linear(M, -grad, bounds=(np.array(lo), np.array(hi)), method="bvls",
                              tol=1e-14, lsmr_tol=None)
    r = grad + M @ res.x
    return float(np.max(np.abs(r))) / scale, res.x


def _report(problem: NlpProblem, z: Array, iters: int, ok: bool, msg: str, opts: SolveOptions) -> SolveReport:
    stat, mult = kkt_stationarity(problem, z, opts.active_tol)
    viol = problem.violation(z)
    # a verified KKT point counts even if the back-end stopped on its own limits
    converged = bool((ok or stat <= opts.stationarity_tol) and viol <= opts.violation_tol)
    return SolveReport(x=z, fun=float(problem.fun(z)), stationarity=stat, max_violation=viol,
                       iterations=iters, converged=converged, message=msg,
                       multipliers={"kkt": mult})


def _check_start(problem: NlpProblem, z0) -> Array:
    z0 = np.asarray(z0, dtype=float).copy()
    if z0.shape != (problem.n,):
        raise ValueError(f"z0 has shape {z0.shape}, expected ({problem.n},)")
    tol = 1e-9
    if np.any(z0 < problem.lb - tol) or np.any(z0 > problem.ub + tol):
        raise ValueError("initial point outside box bounds")
    return np.clip(z0, problem.lb, problem.ub)


def _solve_slsqp(problem: NlpProblem, z: Array, opts: SolveOptions) -> SolveReport:
    cons = []
    if problem.ineq is not None:
        cons.append({"type": "ineq", "fun": lambda x: -problem.g(x), "jac": lambda x: -problem.g_jac(x)})
    if problem.eq is not None:
        cons.append({"type": "eq", "fun": problem.h, "jac": problem.h_jac})
    bounds = list(zip(np.where(np.isfinite(problem.lb), problem.lb, None),
                      np.where(np.isfinite(problem.ub), problem.ub, None)))
    total = 0
    res = None
    best = None
    # SLSQP stops on function-value change; warm restarts tighten stationarity
    for _ in range(max(1, opts.restarts)):
        with warnings.catch_warnings():
            # SLSQP clips its own line-search iterates to the box; harmless
            warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
            res = optimize.minimize(problem.fun, z, jac=problem.gradient, method="SLSQP", bounds=bounds,
                                    constraints=cons, options={"ftol": opts.ftol, "maxiter": opts.max_iter})
        total += int(res.nit)
        z = np.clip(res.x, problem.lb, problem.ub)
        best = _report(problem, z, total, bool(res.success) or res.status == 8, str(res.message), opts)
        if best.stationarity <= opts.stationarity_tol and best.max_violation <= opts.violation_tol:
            break
        if total >= opts.max_iter:
            break
    return best


def _solve_auglag(problem: NlpProblem, z: Array, opts: SolveOptions) -> SolveReport:
    m_g = problem.g(z).size
    m_h = problem.h(z).size
    lam = np.zeros(m_g)
    mu = np.zeros(m_h)
    rho = 10.0
    bounds = list(zip(problem.lb, problem.ub))
    prev_viol = np.inf

    def lagr(x):
        f = problem.fun(x)
        gr = problem.gradient(x)
        if m_g:
            g = problem.g(x)
            s = np.maximum(0.0, lam + rho * g)
            f += (np.sum(s ** 2) - np.sum(lam ** 2)) / (2 * rho)
            gr = gr + problem.g_jac(x).T @ s
        if m_h:
            h = problem.h(x)
            f += mu @ h + 0.5 * rho * (h @ h)
            gr = gr + problem.h_jac(x).T @ (mu + rho * h)
        return f, gr

    it = 0
    ok = False
    msg = "outer iteration limit reached"
    for it in range(1, opts.max_iter + 1):
        res = optimize.minimize(lagr, z, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 2000, "maxcor": 30})
        z = res.x
        g = problem.g(z)
        h = problem.h(z)
        if m_g:
            lam = np.maximum(0.0, lam + rho * g)
        if m_h:
            mu = mu + rho * h
        viol = problem.violation(z)
        stat, _ = kkt_stationarity(problem, z, opts.active_tol)
        if viol <= opts.violation_tol and stat <= opts.stationarity_tol:
            ok = True
            msg = "converged"
            break
        if viol > 0.25 * prev_viol:
            rho = min(rho * 10.0, 1e10)
        prev_viol = viol
    return _report(problem, z, it, ok, msg, opts)


def solve(problem: NlpProblem, z0, opts: SolveOptions | None = None) -> SolveReport:
    """Solve ``problem`` from ``z0``; never raises on non-convergence."""
    opts = opts or SolveOptions()
    z = _check_start(problem, z0)
    if opts.method == "slsqp":
        return _solve_slsqp(problem, z, opts)
    if opts.method == "auglag":
        return _solve_auglag(problem, z, opts)
    raise ValueError(f"unknown method {opts.method!r}")


def subproblem(problem: NlpProblem, free, z_fixed, obj_scale: float = 1.0):
    """Restrict ``problem`` to the variables ``free``, others held at ``z_fixed``.

    Returns ``(sub, expand)`` where ``expand`` maps a reduced point back to
    the full vector. ``obj_scale`` multiplies the objective and its gradient.
    """
    free = np.asarray(free, dtype=int)
    base = np.asarray(z_fixed, dtype=float).copy()

    def expand(x):
        z = base.copy()
        z[free] = x
        return z

    has_g, has_h = problem.ineq is not None, problem.eq is not None
    sub = NlpProblem(
        fun=lambda x: obj_scale * problem.fun(expand(x)), n=free.size,
        grad=lambda x: obj_scale * problem.gradient(expand(x))[free],
        ineq=(lambda x: problem.g(expand(x))) if has_g else None,
        ineq_jac=(lambda x: problem.g_jac(expand(x))[:, free]) if has_g else None,
        eq=(lambda x: problem.h(expand(x))) if has_h else None,
        eq_jac=(lambda x: problem.h_jac(expand(x))[:, free]) if has_h else None,
        lb=problem.lb[free], ub=problem.ub[free], fd_step=problem.fd_step)
    return sub, expand


def scaled(problem: NlpProblem, obj_scale: float) -> NlpProblem:
    """Same problem with the objective multiplied by ``obj_scale``."""
    sub, _ = subproblem(problem, np.arange(problem.n), np.zeros(problem.n), obj_scale)
    return sub


def solve_elastic(problem: NlpProblem, slack_idx, z0, hard_scale: float, soft_scale: float,
                  opts: SolveOptions | None = None, reseed=None) -> tuple[SolveReport, str]:
    """Solve a problem whose ``slack_idx`` variables soften some constraints.

    First the slacks are pinned at zero (hard constraints, objective scaled by
    ``hard_scale``). When that fails the full problem is solved with the
    objective scaled by ``soft_scale``, starting from ``reseed(z)`` of the
    hard-phase iterate if given. With an exact penalty larger than the
    constraint multipliers both phases share the same optimum, and the hard
    phase is far better conditioned. Returns the report on the full vector
    and the phase name.
    """
    opts = opts or SolveOptions()
    z0 = _check_start(problem, z0)
    slack = np.zeros(problem.n, dtype=bool)
    slack[np.asarray(slack_idx, dtype=int)] = True
    z_pin = np.where(slack, 0.0, z0)
    hard, expand = subproblem(problem, np.flatnonzero(~slack), z_pin, hard_scale)
    rep = solve(hard, z0[~slack], opts)
    z = expand(rep.x)
    if rep.converged:
        rep.x = z
        return rep, "hard"
    start = reseed(z) if reseed is not None else z0
    soft = scaled(problem, soft_scale)
    rep = solve(soft, np.clip(start, problem.lb, problem.ub), opts)
    return rep, "soft"


def _rel_err(a: Array, b: Array) -> float:
    if a.size == 0:
        return 0.0
    denom = max(float(np.max(np.abs(b))), 1e-8)
    return float(np.max(np.abs(a - b))) / denom


def check_gradients(problem: NlpProblem, z, h_fd: float = 1e-5) -> float:
    """Max relative error of analytic derivatives against central differences.

    Covers the objective gradient and, when present, the inequality and
    equality Jacobians. Each block is normalised by its own largest entry.
    """
    z = np.asarray(z, dtype=float)
    errs = [_rel_err(problem.gradient(z), fd_jacobian(lambda x: np.atleast_1d(problem.fun(x)), z, h_fd)[0])]
    if problem.ineq is not None:
        errs.append(_rel_err(problem.g_jac(z), fd_jacobian(problem.g, z, h_fd)))
    if problem.eq is not None:
        errs.append(_rel_err(problem.h_jac(z), fd_jacobian(problem.h, z, h_fd)))
    return max(errs)
