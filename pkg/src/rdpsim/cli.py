"""Command line: validate, run, sweep and report.

Exit codes: 0 success, 1 usage or configuration error, 2 simulation abort.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .kernel import SimulationAbort
from .report import ReportError, build_report, write_run, write_sweep
from .runner import parse_values, run_scenario, sweep
from .scenario import ScenarioError, load_scenario

OUT_ENV = "RDPSIM_OUT"


def _out_dir(arg: str | None, default: str) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or default)


def cmd_validate(args) -> int:
    cfg = load_scenario(args.scenario)
    if cfg.report is None:
        print(f"{cfg.name}: no solution (unprotected run)")
        return 0
    r = cfg.report
    print(f"{cfg.name}: {r.verdict}")
    for t, row in sorted(r.matrix.items()):
        print(f"  {t}: " + ", ".join(f"{c} {'yes' if ok else 'no'}" for c, ok in row.items()))
    for k, v in r.checklist.items():
        print(f"  {k}: {v}")
    for item in r.unwired:
        print(f"  unwired response {item}")
    for w in cfg.warnings:
        print(f"warning: {w}")
    return 0


def cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    seed = cfg.seed if args.seed is None else args.seed
    trace = args.trace == "on"
    res = run_scenario(cfg, seed, trace=trace)
    out = _out_dir(args.out, f"out/{cfg.name}-seed{seed}")
    write_run(out, cfg, res, seed, trace)
    m = res.metrics
    print(f"{cfg.name} seed {seed}: {m.outcome}, total {m.total:.3f} s, availability {m.availability:.4f} -> {out}")
    if m.outcome == "aborted":
        f = m.failures[-1] if m.failures else {}
        print(f"run aborted at event {f.get('id')}: {f.get('reason', '')}", file=sys.stderr)
        return 2
    return 0


def cmd_sweep(args) -> int:
    cfg = load_scenario(args.scenario)
    try:
        values = parse_values(args.values)
    except ValueError as exc:
        raise ScenarioError(str(exc), "--values") from None
    if not values:
        raise ScenarioError("empty value list", "--values")
    res = sweep(cfg, args.param, values, args.seeds, args.master_seed, args.workers)
    out = _out_dir(args.out, f"out/{cfg.name}-sweep")
    write_sweep(out, res)
    for s in res.summary():
        print(f"{args.param}={s['value']}: mean total {s['mean_total']:.2f} s (sd {s['std_total']:.2f}, {s['completed']}/{s['runs']} completed)")
    print(f"minimizer {res.minimizer()} -> {out}")
    return 0


def cmd_report(args) -> int:
    rep = build_report(Path(args.dir))
    sys.stdout.write(rep.text)
    (Path(args.dir) / "report.txt").write_text(rep.text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdpsim", description="Simulate resilience solutions composed from design patterns.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario and its solution")
    v.add_argument("scenario")
    v.set_defaults(fn=cmd_validate)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or out/NAME-seedN)")
    r.add_argument("--trace", choices=("on", "off"), default="on")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter grid")
    s.add_argument("scenario")
    s.add_argument("--param", required=True, help="e.g. patterns.rb.interval, workload.work, faults.crash.rate")
    s.add_argument("--values", required=True, help="comma list or start:stop:step")
    s.add_argument("--seeds", type=int, default=10, help="runs per grid point")
    s.add_argument("--master-seed", type=int)
    s.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_sweep)

    rp = sub.add_parser("report", help="summarize run or sweep outputs")
    rp.add_argument("dir")
    rp.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.fn(args)
    except (ScenarioError, ReportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SimulationAbort as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
