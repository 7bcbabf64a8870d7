"""Normalized frequency-regulation signals and their windowed energy content.

The energy content of a window is the absolute time-average of the signal
over that window, i.e. the net fraction of reserve capacity requested over
the window. ``w_lim`` for the scheduler is a high percentile of these values.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import params
from .timefmt import parse_time

NAMED_PERCENTILES = {"median": 50.0, "p95": 95.0, "p97_5": 97.5, "p99": 99.0, "max": 100.0}


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class RegulationSignal:
    w: np.ndarray
    dt: float = 4.0
    t0: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise SignalError("signal contains non-finite samples")
        bad = np.flatnonzero(np.abs(w) > 1.0)
        if bad.size:
            raise SignalError(f"sample {bad[0]} = {w[bad[0]]} outside [-1, 1]")
        if not self.dt > 0:
            raise SignalError(f"sample period must be positive, got {self.dt}")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    def __len__(self):
        return len(self.w)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.w))


@dataclass(frozen=True)
class EnergyContentStats:
    contents: np.ndarray
    window_s: float

    @property
    def cdf(self):
        """Sorted contents and the empirical CDF evaluated at them."""
        x = np.sort(self.contents)
        return x, np.arange(1, len(x) + 1) / len(x)

    def percentile(self, p: float) -> float:
        return wlim_from_percentile(self, p)

    @property
    def named(self) -> dict:
        return {k: self.percentile(p) for k, p in NAMED_PERCENTILES.items()}

    def to_dict(self) -> dict:
        x, F = self.cdf
        return dict(window_s=self.window_s, n_windows=int(len(self.contents)),
                    percentiles=self.named, cdf_x=x.tolist(), cdf_p=F.tolist(),
                    contents=self.contents.tolist())


def energy_content(signal: RegulationSignal, window_s: float = 900.0) -> EnergyContentStats:
    """Per-window ``|mean(w)|`` over complete windows; trailing partial window dropped."""
    n = int(round(window_s / signal.dt))
    if n < 1 or abs(n * signal.dt - window_s) > 1e-9 * window_s:
        raise SignalError(f"window {window_s} s is not a multiple of the sample period {signal.dt} s")
    n_win = len(signal.w) // n
    if n_win == 0:
        raise SignalError(f"signal of {len(signal.w)} samples is shorter than one window ({n} samples)")
    blocks = signal.w[: n_win * n].reshape(n_win, n)
    return EnergyContentStats(np.abs(blocks.mean(axis=1)), window_s)


def wlim_from_percentile(stats: EnergyContentStats, p: float = params.WLIM_PERCENTILE) -> float:
    """``p``-th percentile of window contents (linear interpolation between order statistics)."""
    if len(stats.contents) == 0:
        raise SignalError("no windows in energy-content statistics")
    if not 0 < p <= 100:
        raise SignalError(f"percentile must be in (0, 100], got {p}")
    return float(np.percentile(stats.contents, p, method="linear"))


def generate_synthetic(seed: int, duration_s: float, band=(1 / 600, 1 / 8), dt: float = 4.0) -> RegulationSignal:
    """Band-limited Gaussian noise scaled so that max |w| = 1.

    The spectrum is flat inside ``band`` (Hz) and zero outside.
    """
    f_lo, f_hi = band
    nyquist = 0.5 / dt
    if not (0 <= f_lo < f_hi <= nyquist):
        raise SignalError(f"invalid band [{f_lo}, {f_hi}] Hz for Nyquist {nyquist} Hz")
    n = int(round(duration_s / dt))
    if n < 2:
        raise SignalError("duration too short")
    rng = np.random.default_rng(seed)
    spectrum = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    freqs = np.fft.rfftfreq(n, dt)
    spectrum[(freqs < f_lo) | (freqs > f_hi)] = 0.0
    x = np.fft.irfft(spectrum, n)
    peak = np.max(np.abs(x))
    if peak == 0:
        raise SignalError("band contains no resolvable frequencies for this duration")
    return RegulationSignal(np.clip(x / peak, -1.0, 1.0), dt)


def load_signal(path) -> RegulationSignal:
    """Read a ``timestamp,w`` CSV; timestamps in seconds, strictly increasing and uniform."""
    ts, ws = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"timestamp", "w"} <= set(reader.fieldnames):
            raise SignalError(f"{path}: expected header 'timestamp,w'")
        for i, row in enumerate(reader, start=2):
            try:
                t, w = parse_time(row["timestamp"]), float(row["w"])
            except (TypeError, ValueError):
                raise SignalError(f"{path}: malformed row {i}: {row}") from None
            if not np.isfinite(w) or abs(w) > 1.0:
                raise SignalError(f"{path}: row {i} has w={w} outside [-1, 1]")
            if ts and t <= ts[-1]:
                raise SignalError(f"{path}: row {i} timestamp {t} is not increasing")
            ts.append(t)
            ws.append(w)
    if not ws:
        raise SignalError(f"{path}: no samples")
    dt = ts[1] - ts[0] if len(ts) > 1 else 4.0
    if len(ts) > 2 and np.max(np.abs(np.diff(ts) - dt)) > 1e-6 * dt:
        raise SignalError(f"{path}: non-uniform sampling")
    return RegulationSignal(np.array(ws), dt, ts[0])


def save_signal(signal: RegulationSignal, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "w"])
        for t, x in zip(signal.times, signal.w):
            w.writerow([repr(float(t)), repr(float(x))])


def save_stats(stats: EnergyContentStats, path) -> None:
    Path(path).write_text(json.dumps(stats.to_dict(), indent=2))
