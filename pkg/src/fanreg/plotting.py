"""Figures rendered from the exported CSVs of an experiment directory."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}


def _read(path: Path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        cols = reader.fieldnames or []
    return {c: [r[c] for r in rows] for c in cols}


def _floats(col) -> np.ndarray:
    return np.array([float(x) for x in col])


def plot_envelopes(src: Path, dst: Path) -> None:
    d = _read(src)
    n = len(d["x_min"])
    t = np.arange(1, n + 1) * 0.25
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.step(t, _floats(d["x_min"]), "k--", lw=0.8, where="post", label="comfort band")
    ax.step(t, _floats(d["x_max"]), "k--", lw=0.8, where="post")
    ax.fill_between(t, _floats(d["env_lo"]), _floats(d["env_hi"]), color="tab:blue", alpha=0.25,
                    label="MPC envelope")
    ax.plot(t, _floats(d["T_r"]), color="tab:blue", label="regulation cell")
    ax.plot(t, _floats(d["T_r_benchmark"]), color="tab:orange", label="benchmark cell")
    ax.set_xlabel("time [h]")
    ax.set_ylabel("room temperature [degC]")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(dst, metadata=_PNG_META)
    plt.close(fig)


def plot_power(src: Path, dst: Path, max_points: int = 2700, align: int = 225) -> None:
    """Desired vs measured fan power over the ``max_points``-tick window with the most target movement."""
    d = _read(src)
    P_d = _floats(d["P_d"])
    n = len(P_d)
    moved = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(P_d)))]) if n else np.zeros(1)
    starts = np.arange(0, max(1, n - max_points + 1), align)
    ends = np.minimum(starts + max_points, max(n - 1, 0))
    s = int(starts[np.argmax(moved[ends] - moved[starts])])
    sl = slice(s, s + max_points)
    t = _floats(d["t"][sl]) / 3600.0
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(t, P_d[sl], lw=0.8, label="P_d")
    ax.plot(t, _floats(d["P_f"][sl]), lw=0.8, label="P_f")
    ax.set_xlabel("time [h]")
    ax.set_ylabel("fan power [W]")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(dst, metadata=_PNG_META)
    plt.close(fig)


def render_report(out_dir) -> list[str]:
    """Render figures next to the CSVs; returns the written file names."""
    d = Path(out_dir)
    written = []
    if (d / "envelopes.csv").exists():
        plot_envelopes(d / "envelopes.csv", d / "envelopes.png")
        written.append("envelopes.png")
    if (d / "level3_tracking.csv").exists():
        plot_power(d / "level3_tracking.csv", d / "tracking.png")
        written.append("tracking.png")
    return written
