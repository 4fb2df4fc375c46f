"""Command line entry point: ``descent-gnc {run,montecarlo,validate,plotdata}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import DescentError
from .logs import emit_logs, plotdata
from .mpc import mpc_step
from .navigation import EstimateState
from .scenario import load_scenario
from .simulation import EPS_ACTIVE, prepare, run_closed_loop, run_monte_carlo, summarize
from .tube import synthesize_gain


def _cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    log = run_closed_loop(cfg, args.seed)
    out = Path(args.out) if args.out else cfg.output_dir
    emit_logs(log, out)
    s = summarize(log)
    print(f"{s['steps']} steps, min z {s['min_z_km']:.4f} km, eps active on "
          f"{s['eps_active_steps']} steps, logs in {out}")
    if log.aborted:
        print(f"aborted: {log.aborted}", file=sys.stderr)
        return 1
    return 0


def _cmd_montecarlo(args) -> int:
    cfg = load_scenario(args.scenario)
    stats = run_monte_carlo(cfg, args.runs, args.seed, keep_logs=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = sorted(stats.violation_rate)
    rows = np.column_stack([np.arange(len(stats.rms_position_error))]
                           + [stats.violation_rate[n] for n in names]
                           + [stats.rms_position_error])
    header = ",".join(["k"] + [f"rate_{n}" for n in names] + ["rms_position_error_km"])
    np.savetxt(out / "per_step.csv", rows, delimiter=",", header=header, comments="", fmt="%.17g")
    summary = {
        "config_hash": cfg.config_hash(), "n_runs": stats.n_runs, "seeds": stats.seeds,
        "eps_activation_rate": stats.eps_activation_rate, "aborted_runs": stats.aborted_runs,
        "max_violation_rate": {n: float(np.nanmax(stats.violation_rate[n])) for n in names},
    }
    (out / "montecarlo.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary["max_violation_rate"]))
    return 0 if stats.aborted_runs == 0 else 1


def validate_scenario(path) -> List[str]:
    """Schema, stabilizability and feasibility checks at t = 0; returns problems."""
    problems = []
    try:
        cfg = load_scenario(path)
        setup = prepare(cfg)
    except (DescentError, ValueError, OSError) as exc:
        return [f"scenario: {exc}"]
    model = setup.model
    u0 = setup.reference.u[0]
    lin = model.linearize(setup.xi0, u0, 0.0)
    Qt, Rt = setup.mpc.gain_weights
    try:
        synthesize_gain(lin.A, lin.B, Qt, Rt)
    except DescentError as exc:
        problems.append(f"stabilizability: {exc}")
        return problems
    res = mpc_step(EstimateState(setup.xi0, cfg.sigma0), lin, setup.reference.xi[0],
                   model.sensors, setup.mpc, cfg.P)
    if res.solution.status != "optimal":
        problems.append(f"feasibility: QP status {res.solution.status}")
    if res.eps > EPS_ACTIVE:
        problems.append(f"feasibility: slack {res.eps:.3g} needed at t = 0")
    if res.tightened.empty:
        problems.append("feasibility: tightened set empty at t = 0")
    return problems


def _cmd_validate(args) -> int:
    problems = validate_scenario(args.scenario)
    for p in problems:
        print(p)
    if not problems:
        print("ok")
    return 1 if problems else 0


def _cmd_plotdata(args) -> int:
    for path in plotdata(args.log, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="descent-gnc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario and write logs")
    p.add_argument("--scenario", required=True, help="scenario file or packaged name (leg1, leg2)")
    p.add_argument("--out", help="output directory (default: scenario output_dir)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("montecarlo", help="batch of seeded runs")
    p.add_argument("--scenario", required=True)
    p.add_argument("--runs", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="base seed")
    p.set_defaults(func=_cmd_montecarlo)

    p = sub.add_parser("validate", help="schema, stabilizability and t = 0 feasibility")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("plotdata", help="figure-ready CSVs from a log directory")
    p.add_argument("--log", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_plotdata)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
