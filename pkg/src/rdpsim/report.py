"""Output files of runs and sweeps, and the summary report built from them."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .metrics import OVERHEADS, RunMetrics
from .runner import SWEEP_COLUMNS, RunResult, SweepResult

RUN_SCHEMA = "rdpsim.run/1"
METRICS_FILE = "metrics.json"
TRACE_FILE = "trace.jsonl"
SWEEP_FILE = "sweep.csv"
SUMMARY_FILE = "sweep_summary.csv"


class ReportError(ValueError):
    pass


# writing --------------------------------------------------------------------------------


def write_run(out: Path, cfg, result: RunResult, seed: int, trace: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    m = result.metrics
    report = cfg.report.to_dict() if cfg.report is not None else None
    doc = {
        "schema": RUN_SCHEMA,
        "scenario": cfg.name,
        "solution": (cfg.solution or {}).get("name"),
        "seed": seed,
        "metrics": m.to_dict(),
        "validation": report,
        "answer_error": result.answer_error,
    }
    (out / METRICS_FILE).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
    if trace:
        (out / TRACE_FILE).write_text("".join(line + "\n" for line in result.trace))


def _jsonable(x):
    if hasattr(x, "item"):
        return x.item()
    if isinstance(x, (set, frozenset, tuple)):
        return list(x)
    return str(x)


def write_sweep(out: Path, res: SweepResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / SWEEP_FILE, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(res.rows)
    summary = res.summary()
    with open(out / SUMMARY_FILE, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["param", *summary[0].keys()], lineterminator="\n")
        w.writeheader()
        for s in summary:
            w.writerow({"param": res.param, **s})
    _write_series(out / f"plot_total_vs_{_slug(res.param)}.csv", [("mean_total", s["value"], s["mean_total"]) for s in summary])


def _slug(s: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in s)


def _write_series(path: Path, points) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["series", "x", "y"])
        w.writerows(points)


# reading --------------------------------------------------------------------------------


@dataclass
class TraceSummary:
    events: int = 0
    kinds: dict[str, int] = field(default_factory=dict)


def check_trace(path: Path) -> TraceSummary:
    """Parse a trace: every line is JSON, ids are unique, causes point at earlier ids."""
    out = TraceSummary()
    seen: set[int] = set()
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                ev = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReportError(f"{path}:{n}: not a JSON record ({exc})") from None
            if not isinstance(ev, dict) or not {"id", "t", "kind", "cause"} <= ev.keys():
                raise ReportError(f"{path}:{n}: not a trace record")
            if ev["id"] in seen:
                raise ReportError(f"{path}:{n}: duplicate event id {ev['id']}")
            if ev["cause"] is not None and ev["cause"] not in seen:
                raise ReportError(f"{path}:{n}: cause {ev['cause']} does not resolve")
            seen.add(ev["id"])
            out.events += 1
            out.kinds[ev["kind"]] = out.kinds.get(ev["kind"], 0) + 1
    return out


@dataclass
class Report:
    text: str
    runs: int = 0
    sweep_rows: int = 0


def build_report(directory: Path) -> Report:
    """Summarize every run and sweep output below ``directory``."""
    d = Path(directory)
    if not d.is_dir():
        raise ReportError(f"no such directory: {d}")
    run_files = sorted(d.rglob(METRICS_FILE))
    sweep_files = sorted(d.rglob(SWEEP_FILE))
    if run_files and sweep_files:
        raise ReportError("mixed inputs: run metrics and sweep tables in one report directory")
    lines: list[str] = []
    if sweep_files:
        rows = 0
        for sf in sweep_files:
            rows += _sweep_section(sf, lines)
        return Report(_finish(lines), sweep_rows=rows)
    runs = []
    for mf in run_files:
        try:
            doc = json.loads(mf.read_text())
        except json.JSONDecodeError as exc:
            raise ReportError(f"{mf}: not JSON ({exc})") from None
        if not isinstance(doc, dict) or doc.get("schema") != RUN_SCHEMA:
            raise ReportError(f"{mf}: unsupported schema {doc.get('schema') if isinstance(doc, dict) else None!r}")
        runs.append((mf, doc))
    for mf, doc in runs:
        _run_section(mf, doc, lines)
    traces = sorted(d.rglob(TRACE_FILE))
    for tf in traces:
        ts = check_trace(tf)
        lines.append(f"trace {tf.relative_to(d)}: {ts.events} events")
        for k in sorted(ts.kinds):
            lines.append(f"  {k:<22} {ts.kinds[k]}")
    if runs:
        points = []
        for mf, doc in runs:
            sec = doc["metrics"]["seconds"]
            label = str(mf.parent.relative_to(d)) or doc["scenario"]
            points += [(label, k, sec[k]) for k in ("useful", "lost", "recovery", "idle")]
            points += [(label, k, sec[f"overhead.{k}"]) for k in OVERHEADS]
        _write_series(d / "plot_time_breakdown.csv", points)
    return Report(_finish(lines), runs=len(runs))


def _finish(lines: list[str]) -> str:
    return "\n".join(lines) + ("\n" if lines else "")


def _run_section(mf: Path, doc: dict, lines: list[str]) -> None:
    m = RunMetrics.from_dict(doc["metrics"])
    sec = doc["metrics"]["seconds"]
    lines.append(f"run {doc['scenario']} (solution {doc.get('solution')}, seed {doc['seed']}): {m.outcome}")
    val = doc.get("validation")
    if val:
        lines.append(f"  verdict: {val['verdict']}")
        caps = ("detection", "containment", "mitigation")
        lines.append(f"  {'event type':<12}" + "".join(f"{c:>13}" for c in caps))
        for t, row in sorted(val["matrix"].items()):
            lines.append(f"  {t:<12}" + "".join(f"{'yes' if row[c] else 'no':>13}" for c in caps))
    lines.append(f"  total {sec['total']:.3f} s  useful {sec['useful']:.3f} s  availability {m.availability:.4f}")
    lines.append("  overhead " + "  ".join(f"{k} {sec['overhead.' + k]:.3f}" for k in OVERHEADS))
    lines.append(f"  lost {sec['lost']:.3f} s  recovery {sec['recovery']:.3f} s (migration {sec['migration']:.3f})  idle {sec['idle']:.3f} s")
    c = m.counts
    lines.append(
        f"  faults injected {c.get('faults_injected', 0)} activated {c.get('faults_activated', 0)}  "
        f"detected {c.get('detected', 0)} contained {c.get('contained', 0)} mitigated {c.get('mitigated', 0)}  "
        f"failures {c.get('failures', 0)} (undetected {c.get('undetected_failures', 0)})  "
        f"false-positive predictions {c.get('false_positive_predictions', 0)}"
    )
    if m.energy_j:
        lines.append(f"  energy {m.energy_j:.1f} J")
    if doc.get("answer_error") is not None:
        lines.append(f"  answer error (max norm vs direct solve) {doc['answer_error']:.3e}")
    lines.append(f"  accounting identity {'holds' if m.identity_holds() else 'VIOLATED'}")


def _sweep_section(sf: Path, lines: list[str]) -> int:
    with open(sf, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
            raise ReportError(f"{sf}: unexpected columns {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        lines.append(f"sweep {sf}: no rows")
        return 0
    param = rows[0]["param"]
    values: list[str] = []
    for r in rows:
        if r["value"] not in values:
            values.append(r["value"])
    seeds = {r["rep"] for r in rows}
    lines.append(f"sweep over {param}: {len(values)} points x {len(seeds)} seeds = {len(rows)} rows")
    lines.append(f"  {'value':>10} {'mean total':>12} {'availability':>13} {'completed':>10}")
    best = None
    for v in values:
        sel = [r for r in rows if r["value"] == v]
        mean = sum(float(r["total"]) for r in sel) / len(sel)
        avail = sum(float(r["availability"]) for r in sel) / len(sel)
        done = sum(r["outcome"] == "completed" for r in sel)
        lines.append(f"  {v:>10} {mean:>12.2f} {avail:>13.4f} {done:>10}")
        if best is None or mean < best[1]:
            best = (v, mean)
    lines.append(f"  minimizer {best[0]} (mean total {best[1]:.2f} s)")
    return len(rows)

