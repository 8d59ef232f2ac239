"""The modeled machine: nodes, processes, state regions and workloads."""

from __future__ import annotations

import bisect
import hashlib
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from .kernel import NS_PER_S, to_ns

ROLES = ("static", "dynamic", "environment")
NODE_STATUSES = ("healthy", "degraded", "failed", "retired")
PROCESS_STATUSES = ("running", "crashed", "hung", "migrating")


class ModelError(ValueError):
    pass


class ProcessNotRunning(ModelError):
    pass


class StateRegion:
    """A named chunk of process state.

    Structured regions hold float64 values (bit flips act on their IEEE-754
    patterns); opaque regions hold raw bytes.  ``pristine`` is the content at
    creation and serves as the clean image for rejuvenation and as the
    reference for answer checks.
    """

    __slots__ = ("id", "owner", "role", "data", "pristine", "structured")

    def __init__(self, id: str, owner: str, role: str, data: np.ndarray):
        if role not in ROLES:
            raise ModelError(f"region {id!r}: invalid role {role!r}")
        self.id = id
        self.owner = owner
        self.role = role
        self.structured = data.dtype == np.float64
        if not self.structured and data.dtype != np.uint8:
            raise ModelError(f"region {id!r}: content must be float64 or uint8, got {data.dtype}")
        self.data = np.ascontiguousarray(data)
        self.pristine = self.data.copy()

    @classmethod
    def opaque(cls, id: str, owner: str, role: str, size_bytes: int, fill: int = 0) -> "StateRegion":
        if size_bytes < 0:
            raise ModelError(f"region {id!r}: negative size")
        return cls(id, owner, role, np.full(size_bytes, fill, dtype=np.uint8))

    @classmethod
    def structured_from(cls, id: str, owner: str, role: str, values) -> "StateRegion":
        return cls(id, owner, role, np.array(values, dtype=np.float64))

    @property
    def nbytes(self) -> int:
        return int(self.data.nbytes)

    @property
    def nbits(self) -> int:
        return self.nbytes * 8

    def bytes_view(self) -> np.ndarray:
        return self.data.reshape(-1).view(np.uint8)

    def snapshot(self) -> np.ndarray:
        return self.data.copy()

    def restore(self, snap: np.ndarray) -> None:
        if snap.shape != self.data.shape or snap.dtype != self.data.dtype:
            raise ModelError(f"region {self.id!r}: snapshot shape {snap.shape} does not match {self.data.shape}")
        self.data[...] = snap

    def reset(self) -> None:
        self.data[...] = self.pristine


@dataclass
class Sensor:
    baseline: float
    noise: float = 0.0


@dataclass
class Anomaly:
    sensor: str
    start: float
    lead: float
    value: float
    until: float  # reading returns to baseline after this time


@dataclass
class Node:
    id: str
    sensors: dict[str, Sensor] = field(default_factory=dict)
    status: str = "healthy"
    processes: list[str] = field(default_factory=list)
    spare: bool = False
    watts: float = 0.0
    anomalies: list[Anomaly] = field(default_factory=list)

    def read_sensor(self, name: str, t: float, noise_draw: float = 0.0) -> float:
        s = self.sensors[name]
        value = s.baseline + s.noise * noise_draw
        for a in self.anomalies:
            if a.sensor == name and a.start <= t < a.until:
                frac = 1.0 if a.lead <= 0 else min(1.0, (t - a.start) / a.lead)
                value += frac * (a.value - s.baseline)
        return value


@dataclass
class Process:
    id: str
    node: str
    regions: list[str] = field(default_factory=list)
    status: str = "running"
    progress_ns: int = 0

    @property
    def progress(self) -> float:
        return self.progress_ns / NS_PER_S


@dataclass(frozen=True)
class MessageEvent:
    """A point-to-point message placed on the senders' work axis.

    ``send_time``/``recv_time`` are in seconds of application progress, which
    makes re-execution after rollback regenerate the same message at the same
    logical point.
    """

    id: int
    sender: str
    receiver: str
    send_time: float
    recv_time: float
    deterministic: bool = False

    def __post_init__(self):
        if not self.send_time < self.recv_time:
            raise ModelError(f"message {self.id}: send time must precede receive time")


@dataclass
class System:
    nodes: dict[str, Node]
    processes: dict[str, Process]
    regions: dict[str, StateRegion]

    def hosts(self) -> dict[str, str]:
        return {p.id: p.node for p in self.processes.values()}

    def process_regions(self, pid: str) -> list[StateRegion]:
        return [self.regions[r] for r in self.processes[pid].regions]

    def spare_nodes(self) -> list[Node]:
        return [n for n in self.nodes.values() if n.spare and n.status == "healthy" and not n.processes]

    def active_nodes(self) -> list[Node]:
        return [n for n in self.nodes.values() if n.status in ("healthy", "degraded") and not n.spare]


def build_system(desc: Mapping[str, Any]) -> System:
    """Build a system from a plain description.

    ``desc`` has ``nodes`` (id, optional sensors/spare/watts), ``processes``
    (id, node) and ``regions`` (id, owner, role, and either ``size_bytes`` or
    ``values``/``shape`` for structured content).
    """
    nodes: dict[str, Node] = {}
    for nd in desc.get("nodes", []):
        nid = nd["id"]
        if nid in nodes:
            raise ModelError(f"duplicate node id {nid!r}")
        sensors = {k: Sensor(**v) if isinstance(v, Mapping) else Sensor(float(v)) for k, v in nd.get("sensors", {}).items()}
        nodes[nid] = Node(nid, sensors, spare=bool(nd.get("spare", False)), watts=float(nd.get("watts", 0.0)))
    if not nodes:
        raise ModelError("system needs at least one node")

    processes: dict[str, Process] = {}
    for pd in desc.get("processes", []):
        pid = pd["id"]
        if pid in processes or pid in nodes:
            raise ModelError(f"duplicate process id {pid!r}")
        if pd["node"] not in nodes:
            raise ModelError(f"dangling node id {pd['node']!r} in process {pid!r}")
        processes[pid] = Process(pid, pd["node"])
        nodes[pd["node"]].processes.append(pid)
    if not processes:
        raise ModelError("system needs at least one process")

    regions: dict[str, StateRegion] = {}
    for rd in desc.get("regions", []):
        rid = rd["id"]
        if rid in regions:
            raise ModelError(f"duplicate region id {rid!r}")
        owner = rd["owner"]
        if owner not in processes:
            raise ModelError(f"dangling process id {owner!r} in region {rid!r}")
        if "values" in rd:
            region = StateRegion.structured_from(rid, owner, rd["role"], rd["values"])
        elif "shape" in rd:
            region = StateRegion(rid, owner, rd["role"], np.zeros(tuple(rd["shape"]), dtype=np.float64))
        else:
            region = StateRegion.opaque(rid, owner, rd["role"], int(rd.get("size_bytes", 0)))
        regions[rid] = region
        processes[owner].regions.append(rid)
    return System(nodes, processes, regions)


def add_region(system: System, region: StateRegion) -> StateRegion:
    if region.id in system.regions:
        raise ModelError(f"duplicate region id {region.id!r}")
    if region.owner not in system.processes:
        raise ModelError(f"dangling process id {region.owner!r} in region {region.id!r}")
    system.regions[region.id] = region
    system.processes[region.owner].regions.append(region.id)
    return region


def deliver_message(system: System, message: MessageEvent) -> str:
    """Outcome of delivering ``message`` now: ``"receive"`` or ``"dropped"``."""
    receiver = system.processes[message.receiver]
    return "receive" if receiver.status == "running" else "dropped"


# workloads -------------------------------------------------------------------------


class Workload:
    """Interface the runtime drives.  Progress is measured in integer nanoseconds of work."""

    work_ns: int

    def next_milestone(self, progress_ns: int) -> Optional[int]:
        raise NotImplementedError

    def on_milestone(self, progress_ns: int) -> list[tuple[str, dict]]:
        """Run the actions due at ``progress_ns``; returns ``(action, info)`` items."""
        raise NotImplementedError

    def result(self) -> Any:
        raise NotImplementedError


@dataclass
class GenericWorkload(Workload):
    """Fixed amount of work W with a schedule of messages between processes.

    Every received message is folded into the receiver's dynamic ``state``
    region with SHA-256, so the final digests witness that re-execution after
    recovery reproduced the failure-free computation exactly.
    """

    system: System
    work: float
    messages: list[MessageEvent] = field(default_factory=list)
    nondeterministic_rate: float = 0.0  # extra nondeterministic events per second of work

    def __post_init__(self):
        if not self.work > 0:
            raise ModelError("total work W must be > 0")
        self.work_ns = to_ns(self.work)
        self.messages = sorted(self.messages, key=lambda m: (m.send_time, m.id))
        for m in self.messages:
            for p in (m.sender, m.receiver):
                if p not in self.system.processes:
                    raise ModelError(f"message {m.id}: dangling process id {p!r}")
        points: dict[int, list[tuple[str, MessageEvent]]] = {}
        for m in self.messages:
            s, r = to_ns(m.send_time), to_ns(m.recv_time)
            if s < self.work_ns:
                points.setdefault(s, []).append(("send", m))
            if r <= self.work_ns:
                points.setdefault(r, []).append(("receive", m))
        if self.nondeterministic_rate > 0:
            # local nondeterministic events (e.g. wildcard receives), one every 1/rate seconds of work
            pids = list(self.system.processes)
            step = to_ns(1.0 / self.nondeterministic_rate)
            k = 1
            while k * step < self.work_ns:
                points.setdefault(k * step, []).append(("nondeterministic", (k, pids[k % len(pids)])))
                k += 1
        self._points = points
        self._order = sorted(points)
        self.state_regions = {}
        for pid in self.system.processes:
            rid = f"{pid}.state"
            if rid not in self.system.regions:
                add_region(self.system, StateRegion.opaque(rid, pid, "dynamic", 32))
            self.state_regions[pid] = self.system.regions[rid]

    @classmethod
    def ring(cls, system: System, work: float, interval: float, latency: float, **kw) -> "GenericWorkload":
        """Messages every ``interval`` seconds of work around the process ring."""
        pids = list(system.processes)
        msgs = []
        if interval > 0 and len(pids) > 1:
            k, t = 0, interval
            while t < work:
                src = pids[k % len(pids)]
                dst = pids[(k + 1) % len(pids)]
                msgs.append(MessageEvent(k, src, dst, t, t + latency))
                k += 1
                t = interval * (k + 1)
        return cls(system, work, msgs, **kw)

    def next_milestone(self, progress_ns: int) -> Optional[int]:
        i = bisect.bisect_right(self._order, progress_ns)
        return self._order[i] if i < len(self._order) else None

    def on_milestone(self, progress_ns: int) -> list[tuple[str, dict]]:
        out = []
        for action, item in self._points.get(progress_ns, ()):
            if action == "nondeterministic":
                k, pid = item
                out.append((action, {"index": k, "process": pid}))
            else:
                out.append((action, {"message": item}))
        return out

    def nondeterministic_positions(self) -> list[int]:
        """Work positions of events whose outcome must be logged to be replayed."""
        out = []
        for pos in self._order:
            for action, item in self._points[pos]:
                if action == "nondeterministic" or (action == "receive" and not item.deterministic):
                    out.append(pos)
                    break
        return out

    def apply_nondeterministic(self, index: int, pid: str) -> None:
        region = self.state_regions[pid]
        h = hashlib.sha256(region.data.tobytes() + b"nd" + index.to_bytes(8, "little")).digest()
        region.data[:] = np.frombuffer(h, dtype=np.uint8)

    def apply_receive(self, m: MessageEvent) -> None:
        region = self.state_regions[m.receiver]
        h = hashlib.sha256(region.data.tobytes() + m.id.to_bytes(8, "little")).digest()
        region.data[:] = np.frombuffer(h, dtype=np.uint8)

    def advance(self, process: Process, dt: float) -> tuple[float, list[MessageEvent], bool]:
        """Advance one process by ``dt`` seconds of work.

        Returns the progress delta, messages it sends within the window and
        whether it reached W.
        """
        if process.status != "running":
            raise ProcessNotRunning(f"process {process.id!r} is {process.status}")
        if not dt > 0:
            raise ModelError("dt must be > 0")
        start = process.progress_ns
        end = min(self.work_ns, start + to_ns(dt))
        sent = [m for m in self.messages if m.sender == process.id and start < to_ns(m.send_time) <= end]
        process.progress_ns = end
        return (end - start) / NS_PER_S, sent, end == self.work_ns

    def result(self) -> dict[str, str]:
        return {pid: r.data.tobytes().hex() for pid, r in sorted(self.state_regions.items())}


def diagonally_dominant(A: np.ndarray) -> bool:
    d = np.abs(np.diag(A))
    off = np.abs(A).sum(axis=1) - d
    return bool(np.all(d > off))


def random_dominant_system(m: int, rng: np.random.Generator, dominance: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Random A with off-diagonals in [-1, 1] and diag = dominance * row sum + 1, plus b in [-1, 1]."""
    A = rng.uniform(-1.0, 1.0, size=(m, m))
    np.fill_diagonal(A, 0.0)
    np.fill_diagonal(A, dominance * np.abs(A).sum(axis=1) + 1.0)
    b = rng.uniform(-1.0, 1.0, size=m)
    return A, b


class SolverWorkload(Workload):
    """Jacobi iteration on A x = b; one sweep costs ``iteration_cost`` seconds of work.

    ``A``, ``b`` and ``x`` live in state regions so faults and checkpoints act
    on the same arrays the solver reads.
    """

    def __init__(
        self,
        A: StateRegion,
        b: StateRegion,
        x: StateRegion,
        tolerance: float = 1e-8,
        max_iterations: int = 1000,
        iteration_cost: float = 1.0,
        allow_non_dominant: bool = False,
    ):
        m = A.data.shape[0]
        if A.data.shape != (m, m) or b.data.shape != (m,) or x.data.shape != (m,):
            raise ModelError("solver regions must be m x m, m and m")
        if not diagonally_dominant(A.data):
            if not allow_non_dominant:
                raise ModelError("A is not strictly diagonally dominant")
            warnings.warn("A is not strictly diagonally dominant; Jacobi may diverge", RuntimeWarning, stacklevel=2)
        self.A, self.b, self.x = A, b, x
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.iteration_cost = iteration_cost
        self.iter_ns = to_ns(iteration_cost)
        if self.iter_ns <= 0:
            raise ModelError("iteration cost must be > 0")
        self.work_ns = self.iter_ns * max_iterations
        self.last_residual = float("inf")
        self.converged = False

    @classmethod
    def from_arrays(cls, system: System, owner: str, A, b, x0=None, **kw) -> "SolverWorkload":
        A = np.array(A, dtype=np.float64)
        b = np.array(b, dtype=np.float64)
        x0 = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
        ra = add_region(system, StateRegion("A", owner, "static", A))
        rb = add_region(system, StateRegion("b", owner, "static", b))
        rx = add_region(system, StateRegion("x", owner, "dynamic", x0))
        return cls(ra, rb, rx, **kw)

    def residual(self) -> float:
        with np.errstate(all="ignore"):
            return float(np.max(np.abs(self.A.data @ self.x.data - self.b.data)))

    def true_residual(self) -> float:
        """Residual against the uncorrupted A and b captured at construction."""
        with np.errstate(all="ignore"):
            return float(np.max(np.abs(self.A.pristine @ self.x.data - self.b.pristine)))

    def next_milestone(self, progress_ns: int) -> Optional[int]:
        k = progress_ns // self.iter_ns + 1
        return k * self.iter_ns if k <= self.max_iterations else None

    def on_milestone(self, progress_ns: int) -> list[tuple[str, dict]]:
        if progress_ns % self.iter_ns:
            return []
        res = jacobi_step(self)
        it = progress_ns // self.iter_ns
        info = {"iteration": int(it), "residual": res if np.isfinite(res) else None}
        if np.isfinite(res) and res <= self.tolerance:
            self.converged = True
            return [("iteration", info), ("converged", info)]
        if it >= self.max_iterations:
            return [("iteration", info), ("exhausted", info)]
        return [("iteration", info)]

    def result(self) -> list[float]:
        return self.x.data.tolist()


def jacobi_step(w: SolverWorkload) -> float:
    """One simultaneous Jacobi sweep; returns the new residual ``||A x - b||_inf``."""
    A, b, x = w.A.data, w.b.data, w.x.data
    d = np.diag(A)
    if np.any(d == 0):
        raise ModelError("singular diagonal")
    with np.errstate(all="ignore"):
        R = A.copy()
        np.fill_diagonal(R, 0.0)
        off = R @ x
        x_new = (b - off) / d
    x[...] = x_new
    w.last_residual = w.residual()
    return w.last_residual
