"""Single runs and parameter sweeps over a loaded scenario."""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from .metrics import RunMetrics, collect_metrics
from .runtime.context import RunContext
from .scenario import ScenarioConfig, sweepable, with_value
from .system import SolverWorkload


@dataclass
class RunResult:
    metrics: RunMetrics
    trace: list[str]
    context: RunContext
    answer: Any = None
    answer_error: Optional[float] = None  # max-norm distance to the direct solve (solver workloads)


def run_scenario(cfg: ScenarioConfig, seed: Optional[int] = None, trace: bool = True) -> RunResult:
    seed = cfg.seed if seed is None else seed
    system, workload, faults = cfg.build()
    ctx = RunContext(seed, system, workload, cfg.solution_spec(), faults, cfg.spec.horizon, cfg.spec.interaction_timeout, trace=trace)
    ctx.run()
    metrics = collect_metrics(ctx, cfg.spec.power.model_dump())
    err = None
    if isinstance(workload, SolverWorkload):
        ref = cfg.reference_solution()
        with np.errstate(all="ignore"):
            err = float(np.max(np.abs(workload.x.data - ref)))
    return RunResult(metrics, ctx.trace_lines, ctx, workload.result(), err)


def rep_seed(master: int, rep: int) -> int:
    """Seed of repetition ``rep``; shared by every grid point so points differ only in the swept value."""
    return int(np.random.SeedSequence([master, rep]).generate_state(1, dtype=np.uint64)[0] >> 1)


SWEEP_COLUMNS = (
    "param", "value", "rep", "seed", "outcome", "total", "useful", "checkpoint", "logging",
    "redundancy", "detection", "lost", "recovery", "idle", "availability", "energy_j",
    "failures", "undetected_failures", "faults_activated",
)


def _row(param: str, value: Any, rep: int, seed: int, m: RunMetrics) -> dict:
    s = m.to_dict()["seconds"]
    return {
        "param": param,
        "value": value,
        "rep": rep,
        "seed": seed,
        "outcome": m.outcome,
        "total": s["total"],
        "useful": s["useful"],
        **{k: s[f"overhead.{k}"] for k in ("checkpoint", "logging", "redundancy", "detection")},
        "lost": s["lost"],
        "recovery": s["recovery"],
        "idle": s["idle"],
        "availability": m.availability,
        "energy_j": m.energy_j,
        "failures": m.counts["failures"],
        "undetected_failures": m.counts["undetected_failures"],
        "faults_activated": m.counts["faults_activated"],
    }


def _run_point(args) -> list[dict]:
    cfg, param, value, seeds = args
    point = with_value(cfg, param, value)
    return [_row(param, value, rep, seed, run_scenario(point, seed, trace=False).metrics) for rep, seed in enumerate(seeds)]


@dataclass
class SweepResult:
    param: str
    values: list
    rows: list[dict]

    def summary(self) -> list[dict]:
        out = []
        for v in self.values:
            tot = [r["total"] for r in self.rows if r["value"] == v]
            out.append({
                "value": v,
                "runs": len(tot),
                "mean_total": statistics.fmean(tot),
                "std_total": statistics.stdev(tot) if len(tot) > 1 else 0.0,
                "completed": sum(1 for r in self.rows if r["value"] == v and r["outcome"] == "completed"),
            })
        return out

    def minimizer(self):
        return min(self.summary(), key=lambda s: (s["mean_total"], s["value"]))["value"]


def sweep(
    cfg: ScenarioConfig,
    param: str,
    values: Sequence[Any],
    seeds_per_point: int,
    master_seed: Optional[int] = None,
    workers: int = 1,
) -> SweepResult:
    """Run every grid value with the same seed list; rows come back in grid order."""
    sweepable(cfg, param)
    if seeds_per_point < 1:
        raise ValueError("seeds per point must be >= 1")
    master = cfg.seed if master_seed is None else master_seed
    seeds = [rep_seed(master, r) for r in range(seeds_per_point)]
    for v in values:
        with_value(cfg, param, v)  # reject bad values before running anything
    jobs = [(cfg, param, v, seeds) for v in values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_point, jobs))
    else:
        chunks = [_run_point(j) for j in jobs]
    return SweepResult(param, list(values), [r for c in chunks for r in c])


def parse_values(text: str) -> list:
    """Comma list (``50,100``) or inclusive range ``start:stop:step``."""
    text = text.strip()
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"range must be start:stop:step with step > 0, got {text!r}")
        start, stop, step = parts
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [_num(start + i * step) for i in range(n)]
    return [_num(float(x)) for x in text.split(",") if x.strip()]


def _num(x: float):
    return int(x) if float(x).is_integer() else x
