"""Scenario files: strict TOML schema, preset expansion and run construction."""

from __future__ import annotations

import copy
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .catalog.configs import PatternConfigError
from .catalog.registry import UnknownPatternError
from .composer import (
    MECHANISM_PARAMS,
    CompositionError,
    SolutionSpec,
    ValidationReport,
    mechanism_of,
    preset,
    solution_from_dict,
    solution_to_dict,
    validate_solution,
)
from .domains import DomainError
from .faults import BitFlips, FaultConfigError, FaultModel, ProcessCrash, ProcessHang, SensorAnomaly, TargetSelector
from .system import GenericWorkload, MessageEvent, ModelError, SolverWorkload, System, Workload, build_system, random_dominant_system


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` is the dotted field path, ``line`` a best-effort source line."""

    def __init__(self, message: str, path: str = "", line: Optional[int] = None, source: str = ""):
        self.path = path
        self.line = line
        self.source = source
        where = source
        if line is not None:
            where += f":{line}"
        prefix = f"{where}: " if where else ""
        loc = f"{path}: " if path else ""
        super().__init__(f"{prefix}{loc}{message}")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# system --------------------------------------------------------------------------------


class SensorSpec(_Strict):
    baseline: float
    noise: float = Field(0.0, ge=0)


class NodeSpec(_Strict):
    id: str
    sensors: dict[str, SensorSpec] = {}
    spare: bool = False
    watts: float = Field(0.0, ge=0)


class ProcessSpec(_Strict):
    id: str
    node: str


class RegionSpec(_Strict):
    id: str
    owner: str
    role: Literal["static", "dynamic", "environment"]
    size_bytes: Optional[int] = Field(None, ge=0)
    values: Optional[list[float]] = None
    shape: Optional[list[int]] = None


class SystemSpec(_Strict):
    nodes: list[NodeSpec]
    processes: list[ProcessSpec]
    regions: list[RegionSpec] = []


# workload ------------------------------------------------------------------------------


class WorkloadSpec(_Strict):
    kind: Literal["generic", "solver"] = "generic"
    # generic
    work: float = Field(3600.0, gt=0)
    message_interval: float = Field(0.0, ge=0)
    message_latency: float = Field(1.0, gt=0)
    deterministic_messages: bool = False
    nondeterministic_rate: float = Field(0.0, ge=0)
    # solver
    owner: Optional[str] = None
    size: int = Field(8, ge=1)
    matrix_seed: int = 0
    dominance: float = Field(2.0, gt=0)
    tolerance: float = Field(1e-8, gt=0)
    max_iterations: int = Field(1000, ge=1)
    iteration_cost: float = Field(1.0, gt=0)


# faults --------------------------------------------------------------------------------


class TargetSpec(_Strict):
    nodes: Optional[list[str]] = None
    processes: Optional[list[str]] = None
    regions: Optional[list[str]] = None
    roles: Optional[list[Literal["static", "dynamic", "environment"]]] = None


class FaultSpec(_Strict):
    id: str
    manifestation: Literal["bit-flips", "process-crash", "process-hang", "sensor-anomaly"]
    rate: float  # arrivals per hour
    kind: Literal["transient", "permanent", "intermittent"] = "transient"
    arrival: Literal["poisson", "constant"] = "poisson"
    p_act: float = 1.0
    latency: tuple[Literal["constant", "exponential"], float] = ("constant", 0.0)
    target: TargetSpec = TargetSpec()
    # bit flips
    count: int = 1
    locality: Literal["region", "word", "byte"] = "region"
    bit_range: Optional[tuple[int, int]] = None
    # sensor anomaly
    sensor: Optional[str] = None
    value: Optional[float] = None
    lead_time: float = 0.0

    @field_validator("rate")
    @classmethod
    def _rate(cls, v: float) -> float:
        if not v >= 0:
            raise ValueError("arrival rate must be >= 0")
        return v

    @field_validator("p_act")
    @classmethod
    def _p_act(cls, v: float) -> float:
        if not 0 <= v <= 1:
            raise ValueError("activation probability must lie in [0, 1]")
        return v

    @model_validator(mode="after")
    def _anomaly_fields(self):
        if self.manifestation == "sensor-anomaly" and (self.sensor is None or self.value is None):
            raise ValueError("sensor-anomaly faults need 'sensor' and 'value'")
        return self

    def build(self) -> FaultModel:
        if self.manifestation == "bit-flips":
            man = BitFlips(self.count, self.locality, self.bit_range)
        elif self.manifestation == "process-crash":
            man = ProcessCrash()
        elif self.manifestation == "process-hang":
            man = ProcessHang()
        else:
            man = SensorAnomaly(self.sensor, self.value, self.lead_time)
        t = self.target
        target = TargetSelector(
            *(tuple(v) if v is not None else None for v in (t.nodes, t.processes, t.regions, t.roles))
        )
        return FaultModel(self.id, man, self.rate, self.kind, target, self.arrival, self.p_act, tuple(self.latency))


# solution ------------------------------------------------------------------------------


class StateSpec(_Strict):
    kind: str
    regions: Optional[list[str]] = None
    scope: str = "full-system"


class PatternSpec(_Strict):
    id: str
    pattern: Optional[str] = None  # may be omitted when overriding a preset instance
    mechanism: Optional[str] = None
    params: dict[str, Any] = {}


class WiringSpec(_Strict):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)
    from_: str = Field(alias="from")
    event: str
    to: str
    priority: int = 0
    contain: bool = False


class SolutionSection(_Strict):
    preset: Optional[str] = None
    name: Optional[str] = None
    targets: Optional[list[str]] = None
    state: Optional[list[StateSpec]] = None
    patterns: list[PatternSpec] = []
    wiring: list[WiringSpec] = []
    disabled: list[str] = []


class PowerSpec(_Strict):
    compute: float = Field(0.0, ge=0)
    checkpoint: float = Field(0.0, ge=0)
    logging: float = Field(0.0, ge=0)
    redundancy: float = Field(0.0, ge=0)
    detection: float = Field(0.0, ge=0)
    recovery: float = Field(0.0, ge=0)
    idle: float = Field(0.0, ge=0)


class ScenarioSpec(_Strict):
    name: str = "scenario"
    seed: int = 0
    horizon: float
    interaction_timeout: float = Field(5.0, gt=0)
    system: SystemSpec
    workload: WorkloadSpec = WorkloadSpec()
    faults: list[FaultSpec] = []
    solution: Optional[SolutionSection] = None
    power: PowerSpec = PowerSpec()

    @field_validator("horizon")
    @classmethod
    def _horizon(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("horizon must be > 0")
        return v


# loaded scenario -----------------------------------------------------------------------


@dataclass
class ScenarioConfig:
    spec: ScenarioSpec
    solution: Optional[dict]  # preset-expanded solution table, or None for no patterns
    source: str = ""
    report: Optional[ValidationReport] = None
    warnings: list[str] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def seed(self) -> int:
        return self.spec.seed

    def solution_spec(self) -> Optional[SolutionSpec]:
        return solution_from_dict(self.solution) if self.solution is not None else None

    def build(self) -> tuple[System, Workload, list[FaultModel]]:
        """Fresh system, workload and fault models for one run."""
        s = self.spec
        system = build_system(s.system.model_dump(exclude_none=True))
        w = s.workload
        if w.kind == "solver":
            owner = w.owner or s.system.processes[0].id
            A, b = random_dominant_system(w.size, np.random.default_rng(w.matrix_seed), w.dominance)
            workload: Workload = SolverWorkload.from_arrays(
                system, owner, A, b, tolerance=w.tolerance, max_iterations=w.max_iterations, iteration_cost=w.iteration_cost
            )
        else:
            workload = GenericWorkload.ring(
                system, w.work, w.message_interval, w.message_latency, nondeterministic_rate=w.nondeterministic_rate
            )
            if w.deterministic_messages:
                workload = GenericWorkload(
                    system,
                    w.work,
                    [MessageEvent(m.id, m.sender, m.receiver, m.send_time, m.recv_time, True) for m in workload.messages],
                    w.nondeterministic_rate,
                )
        return system, workload, [f.build() for f in s.faults]

    def reference_solution(self) -> Optional[np.ndarray]:
        """Direct-solve answer for a solver workload."""
        w = self.spec.workload
        if w.kind != "solver":
            return None
        A, b = random_dominant_system(w.size, np.random.default_rng(w.matrix_seed), w.dominance)
        return np.linalg.solve(A, b)

    def to_dict(self) -> dict:
        d = self.spec.model_dump(by_alias=True, exclude_none=True)
        d.pop("solution", None)
        if self.solution is not None:
            d["solution"] = copy.deepcopy(self.solution)
        return d


def expand_solution(section: SolutionSection) -> dict:
    """Expand a preset and merge the file's pattern table into it by instance id."""
    base = solution_to_dict(preset(section.preset)) if section.preset else {"name": "solution", "targets": ["failure"], "state": [], "patterns": [], "wiring": []}
    if section.name is not None:
        base["name"] = section.name
    if section.targets is not None:
        base["targets"] = list(section.targets)
    if section.state is not None:
        base["state"] = [s.model_dump(exclude_none=True) for s in section.state]
    by_id = {p["id"]: p for p in base["patterns"]}
    for i, p in enumerate(section.patterns):
        if p.id in by_id:
            cur = by_id[p.id]
            if p.pattern is not None:
                cur["pattern"] = p.pattern
            if p.mechanism is not None:
                cur["mechanism"] = p.mechanism
            cur["params"].update(copy.deepcopy(p.params))
        else:
            if p.pattern is None:
                raise ScenarioError("new pattern instance needs a 'pattern' name", f"solution.patterns[{i}].pattern")
            entry = {"id": p.id, "pattern": p.pattern, "params": copy.deepcopy(p.params)}
            if p.mechanism is not None:
                entry["mechanism"] = p.mechanism
            base["patterns"].append(entry)
            by_id[p.id] = entry
    base["wiring"].extend(w.model_dump(by_alias=True) for w in section.wiring)
    base["disabled"] = list(section.disabled)
    return base


def _line_of(text: str, path: str) -> Optional[int]:
    """Best-effort source line for a dotted field path: the last key name found."""
    keys = [k for k in re.split(r"[.\[\]]", path) if k and not k.isdigit()]
    for key in reversed(keys):
        m = re.search(rf"^\s*{re.escape(key)}\s*=", text, re.M) or re.search(rf"^\s*\[+\s*[\w.]*{re.escape(key)}\s*\]+", text, re.M)
        if m:
            return text.count("\n", 0, m.start()) + 1
    return None


def _fmt_loc(loc) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += ("." if out else "") + str(part)
    return out


def scenario_from_dict(d: dict, source: str = "", text: str = "") -> ScenarioConfig:
    try:
        spec = ScenarioSpec.model_validate(d)
    except ValidationError as exc:
        err = exc.errors()[0]
        path = _fmt_loc(err["loc"])
        msg = err["msg"].removeprefix("Value error, ")
        raise ScenarioError(msg, path, _line_of(text, path), source) from None
    sol = None
    report = None
    warnings: list[str] = []
    if spec.solution is not None:
        sol = expand_solution(spec.solution)
        try:
            sspec = solution_from_dict(sol)
            report = validate_solution(sspec)
        except (UnknownPatternError, CompositionError, DomainError, ValueError) as exc:
            raise ScenarioError(_msg(exc), "solution", _line_of(text, "solution"), source) from None
        if report.errors or report.hierarchy_violations:
            first = (report.errors + report.hierarchy_violations)[0]
            raise ScenarioError(first, "solution", _line_of(text, "solution.patterns"), source)
        warnings.extend(report.warnings)
    cfg = ScenarioConfig(spec, sol, source, report, warnings)
    _dry_build(cfg, text)
    return cfg


def _msg(exc: Exception) -> str:
    return exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)


def _dry_build(cfg: ScenarioConfig, text: str) -> None:
    """Construct every run object once so that dangling references surface at load time."""
    from .runtime.context import RunContext

    try:
        system, workload, faults = cfg.build()
        RunContext(cfg.seed, system, workload, cfg.solution_spec(), faults, cfg.spec.horizon, cfg.spec.interaction_timeout, trace=False)
    except (ModelError, FaultConfigError, PatternConfigError, CompositionError, DomainError, KeyError, ValueError) as exc:
        raise ScenarioError(_msg(exc), "", None, cfg.source) from None


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    p = Path(path)
    if not p.is_file():
        raise ScenarioError(f"no such scenario file: {p}")
    text = p.read_text()
    try:
        d = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ScenarioError(f"not valid TOML: {exc}", "", int(m.group(1)) if m else None, str(p)) from None
    return scenario_from_dict(d, str(p), text)


# parameter paths for sweeps ------------------------------------------------------------


def sweepable(cfg: ScenarioConfig, path: str) -> None:
    """Raise ScenarioError unless ``path`` names a declared numeric parameter."""
    parts = path.split(".")
    if parts[0] == "patterns" and len(parts) == 3:
        inst = _pattern(cfg, parts[1], path)
        mech = mechanism_of(solution_from_dict({"patterns": [inst]}).instances[0]).name
        if parts[2] not in MECHANISM_PARAMS[mech]:
            raise ScenarioError(f"{mech} has no parameter {parts[2]!r}", path)
        return
    if parts[0] == "workload" and len(parts) == 2 and parts[1] in WorkloadSpec.model_fields:
        return
    if parts[0] == "faults" and len(parts) == 3 and parts[2] in FaultSpec.model_fields:
        _fault_index(cfg, parts[1], path)
        return
    if parts[0] == "power" and len(parts) == 2 and parts[1] in PowerSpec.model_fields:
        return
    if path in ("horizon", "interaction_timeout"):
        return
    raise ScenarioError("not a sweepable parameter (use patterns.ID.PARAM, workload.FIELD, faults.ID.FIELD, power.CLASS or horizon)", path)


def _pattern(cfg: ScenarioConfig, iid: str, path: str) -> dict:
    for p in (cfg.solution or {}).get("patterns", []):
        if p["id"] == iid:
            return p
    raise ScenarioError(f"no pattern instance {iid!r}", path)


def _fault_index(cfg: ScenarioConfig, fid: str, path: str) -> int:
    for i, f in enumerate(cfg.spec.faults):
        if f.id == fid:
            return i
    raise ScenarioError(f"no fault model {fid!r}", path)


def with_value(cfg: ScenarioConfig, path: str, value: Any) -> ScenarioConfig:
    """Copy of ``cfg`` with one parameter replaced, revalidated."""
    sweepable(cfg, path)
    parts = path.split(".")
    raw = cfg.spec.model_dump(by_alias=True, exclude_none=True)
    sol = copy.deepcopy(cfg.solution)
    if parts[0] == "patterns":
        for p in sol["patterns"]:
            if p["id"] == parts[1]:
                p["params"][parts[2]] = value
    elif parts[0] == "faults":
        raw["faults"][_fault_index(cfg, parts[1], path)][parts[2]] = value
    elif len(parts) == 2:
        raw.setdefault(parts[0], {})[parts[1]] = value
    else:
        raw[parts[0]] = value
    raw.pop("solution", None)
    out = scenario_from_dict(raw, cfg.source)
    if sol is not None:
        out.solution = sol
        report = validate_solution(solution_from_dict(sol))
        if report.errors:
            raise ScenarioError(report.errors[0], path)
        out.report = report
        _dry_build(out, "")
    return out
