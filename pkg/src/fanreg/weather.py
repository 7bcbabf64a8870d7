"""Synthetic daily disturbance profiles for desk simulations."""

from __future__ import annotations

import numpy as np


def synthetic_disturbances(n_steps: int, start_hour: float = 0.0, dt_h: float = 0.25, rng=None,
                           T_mean: float = 21.0, T_amp: float = 5.0, G_peak: float = 700.0,
                           I_base: float = 2500.0, I_occ: float = 1500.0, occupied=(8.0, 18.0),
                           jitter: float = 0.0) -> np.ndarray:
    """``(n_steps, 3)`` array of ambient temperature, irradiance and internal gains.

    Ambient temperature peaks at 15:00, irradiance is a half-sine between
    06:00 and 20:00, and internal gains step up while occupied. ``jitter``
    scales day-to-day random variation and needs ``rng``.
    """
    h = start_hour + dt_h * np.arange(n_steps)
    hod = h % 24
    day = (h // 24).astype(int)
    n_days = int(day.max()) + 1 if n_steps else 0
    if jitter > 0:
        if rng is None:
            raise ValueError("jitter needs an rng")
        t_off = jitter * rng.normal(0.0, 1.5, n_days)
        cloud = np.clip(1.0 - jitter * rng.uniform(0.0, 0.5, n_days), 0.0, 1.0)
    else:
        t_off = np.zeros(n_days)
        cloud = np.ones(n_days)
    T_a = T_mean - T_amp * np.cos(2 * np.pi * (hod - 3.0) / 24.0) + t_off[day]
    sun = (hod > 6.0) & (hod < 20.0)
    G = np.where(sun, G_peak * np.sin(np.pi * (hod - 6.0) / 14.0), 0.0) * cloud[day]
    occ = (hod >= occupied[0]) & (hod < occupied[1])
    I_g = I_base + I_occ * occ
    return np.column_stack([T_a, np.maximum(G, 0.0), I_g])
