"""Bilinear 2-state RC building thermal model.

States are room air temperature ``T_r`` and lumped thermal-mass temperature
``T_m`` (degC). The control input is the supply-air mass flow (kg/s) and the
disturbances are ambient temperature, solar irradiance and internal gains.
The cooling term is ``c_p * mdot * (T_s - T_r)``, which makes the dynamics
bilinear in flow and room temperature.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import params


class InvalidParameterError(ValueError):
    pass


class BuildingState(NamedTuple):
    T_r: float
    T_m: float


class Disturbance(NamedTuple):
    T_a: float
    G: float
    I_g: float


@dataclass(frozen=True)
class ContinuousBuildingParams:
    """Continuous-time RC parameters in SI units.

    Capacitances in J/degC, resistances in degC/W, ``c_p`` in J/(kg degC),
    ``gamma`` is the effective solar aperture in m^2 so that ``gamma * G`` is W.
    """

    C_r: float
    C_m: float
    R_ra: float
    R_rm: float
    gamma: float
    c_p: float = 1005.0
    T_s: float = params.SUPPLY_AIR_TEMP

    def __post_init__(self):
        for name in ("C_r", "C_m", "R_ra", "R_rm", "c_p"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be strictly positive, got {getattr(self, name)}")
        if self.gamma < 0:
            raise InvalidParameterError(f"gamma must be non-negative, got {self.gamma}")

    def matrices(self):
        """Return ``(A^c, B_u^c, B_xu^c, B_v^c)``."""
        Cr, Cm = self.C_r, self.C_m
        Ac = np.array([
            [-(1.0 / (Cr * self.R_ra) + 1.0 / (Cr * self.R_rm)), 1.0 / (Cr * self.R_rm)],
            [1.0 / (Cm * self.R_rm), -1.0 / (Cm * self.R_rm)],
        ])
        Buc = np.array([self.c_p * self.T_s / Cr, 0.0])
        Bxuc = np.array([[-self.c_p / Cr, 0.0], [0.0, 0.0]])
        Bvc = np.array([[1.0 / (Cr * self.R_ra), self.gamma / Cr, 1.0 / Cr], [0.0, 0.0, 0.0]])
        return Ac, Buc, Bxuc, Bvc


@dataclass(frozen=True)
class DiscreteBuildingModel:
    """Euler-discretized model ``x+ = A x + B_u u + B_xu x u + B_v v``.

    Stored as the scalar coefficients of the structured matrices; the matrix
    views are derived. ``n_states == 1`` drops the thermal mass (a12, a21 and
    a22 are zero and T_m carries no information).
    """

    a11: float
    a12: float
    a21: float
    a22: float
    b: float
    d11: float
    d12: float
    d13: float
    T_s: float = params.SUPPLY_AIR_TEMP
    delta_t: float = params.STEP_SECONDS
    n_states: int = 2
    _mats: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_states not in (1, 2):
            raise InvalidParameterError(f"n_states must be 1 or 2, got {self.n_states}")
        A = np.array([[self.a11, self.a12], [self.a21, self.a22]])
        B_u = np.array([self.b * self.T_s, 0.0])
        B_xu = np.array([[-self.b, 0.0], [0.0, 0.0]])
        B_v = np.array([[self.d11, self.d12, self.d13], [0.0, 0.0, 0.0]])
        for m in (A, B_u, B_xu, B_v):
            m.flags.writeable = False
        object.__setattr__(self, "_mats", (A, B_u, B_xu, B_v))

    @property
    def A(self) -> np.ndarray:
        return self._mats[0]

    @property
    def B_u(self) -> np.ndarray:
        return self._mats[1]

    @property
    def B_xu(self) -> np.ndarray:
        return self._mats[2]

    @property
    def B_v(self) -> np.ndarray:
        return self._mats[3]

    @classmethod
    def from_table(cls, table: dict, T_s: float = params.SUPPLY_AIR_TEMP,
                   delta_t: float = params.STEP_SECONDS) -> "DiscreteBuildingModel":
        return cls(**table, T_s=T_s, delta_t=delta_t)

    def coefficients(self) -> np.ndarray:
        return np.array([self.a11, self.a12, self.a21, self.a22, self.b, self.d11, self.d12, self.d13])

    def sign_pattern_ok(self) -> bool:
        return min(self.a12, self.a21, self.b, self.d11, self.d12, self.d13) >= 0

    def to_dict(self) -> dict:
        return dict(a11=self.a11, a12=self.a12, a21=self.a21, a22=self.a22, b=self.b,
                    d11=self.d11, d12=self.d12, d13=self.d13, T_s=self.T_s,
                    delta_t=self.delta_t, n_states=self.n_states)

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteBuildingModel":
        keys = ("a11", "a12", "a21", "a22", "b", "d11", "d12", "d13", "T_s", "delta_t", "n_states")
        return cls(**{k: d[k] for k in keys if k in d})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "DiscreteBuildingModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def discretize(p: ContinuousBuildingParams, delta_t: float = params.STEP_SECONDS) -> DiscreteBuildingModel:
    """First-order Euler discretization; keeps the continuous sign structure."""
    if delta_t < 0:
        raise InvalidParameterError(f"delta_t must be non-negative, got {delta_t}")
    Ac, _, Bxuc, Bvc = p.matrices()
    A = np.eye(2) + delta_t * Ac
    return DiscreteBuildingModel(
        a11=A[0, 0], a12=A[0, 1], a21=A[1, 0], a22=A[1, 1],
        b=-delta_t * Bxuc[0, 0],
        d11=delta_t * Bvc[0, 0], d12=delta_t * Bvc[0, 1], d13=delta_t * Bvc[0, 2],
        T_s=p.T_s, delta_t=delta_t,
    )


def step(model: DiscreteBuildingModel, x: Sequence[float], u: float, v: Sequence[float]) -> BuildingState:
    """One step of the bilinear dynamics.

    Evaluation order is fixed (A x, then B_u u, B_xu x u, B_v v) so that
    repeated calls are bit-reproducible.
    """
    if u < 0:
        raise ValueError(f"mass flow must be non-negative, got {u}")
    m = model
    tr, tm = float(x[0]), float(x[1])
    ta, g, ig = float(v[0]), float(v[1]), float(v[2])
    tr_next = (m.a11 * tr + m.a12 * tm) + m.b * m.T_s * u + (-m.b * tr) * u + (m.d11 * ta + m.d12 * g + m.d13 * ig)
    tm_next = m.a21 * tr + m.a22 * tm
    return BuildingState(tr_next, tm_next)


def simulate(model: DiscreteBuildingModel, x0, u_seq, v_seq) -> np.ndarray:
    """Roll the model forward; returns an ``(len(u_seq) + 1, 2)`` trajectory."""
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1)
    v_seq = np.asarray(v_seq, dtype=float).reshape(-1, 3)
    if len(u_seq) != len(v_seq):
        raise ValueError(f"u_seq has {len(u_seq)} entries but v_seq has {len(v_seq)}")
    traj = np.empty((len(u_seq) + 1, 2))
    traj[0] = x0
    x = BuildingState(float(x0[0]), float(x0[1]))
    for k in range(len(u_seq)):
        x = step(model, x, u_seq[k], v_seq[k])
        traj[k + 1] = x
    return traj


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def closed_loop_stable(model: DiscreteBuildingModel, u: float, tol: float = 1e-12) -> bool:
    """True iff both ``A`` and ``A + B_xu u`` have spectral radius <= 1."""
    if u < 0:
        raise ValueError(f"mass flow must be non-negative, got {u}")
    return (spectral_radius(model.A) <= 1 + tol
            and spectral_radius(model.A + model.B_xu * u) <= 1 + tol)


def table_model(which: str = "new", **kw) -> DiscreteBuildingModel:
    """Model from the published parameter tables (``"new"`` or ``"older"``)."""
    table = {"new": params.NEW_MODEL, "older": params.OLDER_MODEL}[which]
    return DiscreteBuildingModel.from_table(table, **kw)
