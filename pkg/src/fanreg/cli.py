"""Command-line entry point: ``fanreg <subcommand> ...``.

Exit status is 0 on success, 1 when ``verify`` finds a failing check and 2
on invalid input (bad files, arguments or infeasible configurations).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

DEFAULT_SEED = 0


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def cmd_fit_building(args) -> int:
    from .sysid import FitConfig, IdentDataset, fit_model

    data = IdentDataset.from_csv(args.data)
    cfg = FitConfig(n_states=args.states, horizon_mode={"step": "one-step", "day": "one-day"}[args.horizon],
                    n_starts=args.starts, seed=args.seed)
    rep = fit_model(data, cfg)
    rep.model.save(args.out)
    if args.report:
        rep.to_json(args.report)
    _emit(dict(model=str(args.out), rmse=rep.rmse, converged=rep.converged, notes=rep.notes))
    return 0


def cmd_fit_fan(args) -> int:
    from .fan import fit_fan, fit_rmse, read_sweep_csv

    sweep = read_sweep_csv(args.sweep)
    curves = fit_fan(sweep, settle_s=args.settle)
    curves.save(args.out)
    _emit(dict(curves=str(args.out), rmse=fit_rmse(curves, sweep)))
    return 0


def cmd_analyze_signal(args) -> int:
    from .signals import energy_content, load_signal, save_stats, wlim_from_percentile

    stats = energy_content(load_signal(args.signal), args.window)
    w_lim = wlim_from_percentile(stats, args.percentile)
    if args.out:
        save_stats(stats, args.out)
    _emit(dict(window_s=args.window, n_windows=int(len(stats.contents)), percentile=args.percentile,
               w_lim=w_lim, percentiles=stats.named))
    return 0


def _load_schedule_inputs(path: Path):
    from .fan import FanCurves, table_curves
    from .harness import read_disturbance_csv
    from .model import DiscreteBuildingModel, table_model
    from .scheduler import scenario_from_dict
    from .weather import synthetic_disturbances

    d = json.loads(path.read_text(encoding="utf-8"))
    curves = table_curves() if d.get("fan", "table") == "table" else FanCurves.from_dict(d["fan"])
    model = d.get("model", "new")
    model = table_model(model) if isinstance(model, str) else DiscreteBuildingModel.from_dict(model)
    N = int(d.get("N", 96))
    dist = None
    if "disturbances_csv" in d:
        dist = read_disturbance_csv(path.parent / d["disturbances_csv"])
    elif "disturbances" not in d:
        dist = synthetic_disturbances(N, float(d.get("start_hour", 0.0)))
    if dist is not None and len(dist) < N:
        raise ValueError(f"disturbance series covers {len(dist)} slots, scenario needs {N}")
    sc = scenario_from_dict(d, curves, dist)
    return model, curves, sc, np.asarray(d.get("x0", (23.0, 23.0)), dtype=float)


def cmd_schedule(args) -> int:
    from .scheduler import schedule_reserves, schedule_reserves_exact

    model, curves, sc, x0 = _load_schedule_inputs(Path(args.scenario))
    fn = schedule_reserves_exact if args.exact else schedule_reserves
    s = fn(model, curves, sc, x0)
    s.to_csv(args.out)
    if args.summary:
        s.to_json(args.summary)
    _emit(dict(schedule=str(args.out), **{k: v for k, v in s.summary().items() if k != "solver"}))
    return 0 if s.converged else 2


def cmd_simulate(args) -> int:
    from dataclasses import replace

    from .harness import Scenario, export_results, run_experiment

    sc = Scenario.load(args.scenario) if args.scenario else Scenario()
    kw = {}
    if args.days is not None:
        kw["days"] = args.days
    if args.seed is not None:
        kw["seed"] = args.seed
    sc = replace(sc, **kw)
    res = run_experiment(sc)
    manifest = export_results(res, args.out, plots=not args.no_plots)
    summary = {k: v for k, v in res.summary.items() if k in ("days", "seed", "slots")}
    for cell in ("regulation", "benchmark"):
        summary[cell] = {k: v for k, v in res.summary[cell].items() if k != "notes"}
    _emit(dict(out=str(args.out), files=len(manifest["files"]), **summary))
    return 0


def cmd_verify(args) -> int:
    from .verify import format_table, run_all

    results = run_all()
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fanreg", description="HVAC fan frequency-regulation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit-building", help="identify the building model from a CSV log")
    s.add_argument("data", type=Path)
    s.add_argument("--states", type=int, choices=(1, 2), default=2)
    s.add_argument("--horizon", choices=("step", "day"), default="day")
    s.add_argument("--starts", type=int, default=4)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED, help="multi-start seed (default 0)")
    s.add_argument("--out", type=Path, default=Path("model.json"))
    s.add_argument("--report", type=Path, help="write the full fit report as JSON")
    s.set_defaults(func=cmd_fit_building)

    s = sub.add_parser("fit-fan", help="fit fan curves from a speed sweep")
    s.add_argument("sweep", type=Path)
    s.add_argument("--settle", type=float, default=20.0, help="seconds dropped after each speed change")
    s.add_argument("--out", type=Path, default=Path("curves.json"))
    s.set_defaults(func=cmd_fit_fan)

    s = sub.add_parser("analyze-signal", help="energy-content statistics of a regulation signal")
    s.add_argument("signal", type=Path)
    s.add_argument("--window", type=float, default=900.0)
    s.add_argument("--percentile", type=float, default=97.5)
    s.add_argument("--out", type=Path, help="write stats JSON including the CDF")
    s.set_defaults(func=cmd_analyze_signal)

    s = sub.add_parser("schedule", help="day-ahead reserve schedule")
    s.add_argument("scenario", type=Path)
    s.add_argument("--exact", action="store_true", help="exact envelopes instead of the linearised ones")
    s.add_argument("--out", type=Path, default=Path("schedule.csv"))
    s.add_argument("--summary", type=Path, help="write the JSON summary")
    s.set_defaults(func=cmd_schedule)

    s = sub.add_parser("simulate", help="closed-loop twin-cell experiment")
    s.add_argument("scenario", type=Path, nargs="?", help="scenario JSON (built-in defaults if omitted)")
    s.add_argument("--days", type=int, help="overrides the scenario (default 1)")
    s.add_argument("--seed", type=int, help=f"overrides the scenario (default {DEFAULT_SEED})")
    s.add_argument("--out", type=Path, default=Path("experiment"))
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="run the property self-checks")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
