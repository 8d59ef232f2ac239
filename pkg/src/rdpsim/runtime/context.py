"""One simulation run: wiring of kernel, system, faults, job and pattern instances.

The context routes every traced event.  Events emitted by a pattern go to
its wired receivers in priority order until one claims them; system events
go to the entry instances that subscribe to their kind.  Errors that nobody
detects or mitigates turn into failures at the next interaction with the
affected process, or when the solver hands back its answer.
"""

from __future__ import annotations

from collections import Counter
from typing import Any, Callable, Optional

import numpy as np

from ..composer import SolutionSpec, mechanism_of
from ..domains import ProtectionDomain, fuse
from ..faults import ErrorState, FaultEngine, FaultModel
from ..kernel import EventKind, EventRecord, Simulator, to_ns, to_s
from ..system import GenericWorkload, SolverWorkload, System, Workload, deliver_message
from .job import Job

K = EventKind


class RunContext:
    def __init__(
        self,
        seed: int,
        system: System,
        workload: Workload,
        solution: Optional[SolutionSpec],
        fault_models: list[FaultModel],
        horizon: float,
        interaction_timeout: float = 5.0,
        trace: bool = True,
    ):
        from .instances import build_instance  # local: instances import this module

        self.trace_lines: list[str] = []
        self.sim = Simulator(seed, trace=self._trace if trace else None)
        self.system = system
        self.workload = workload
        self.solution = solution
        self.horizon = horizon
        self.interaction_timeout_ns = to_ns(interaction_timeout)
        self.counts: Counter = Counter()
        self.failures: list[dict] = []
        self.outcome = "running"
        self.errors: dict[int, ErrorState] = {}
        self.error_progress: dict[int, int] = {}
        self.solver_errors: list[int] = []
        self.prediction_scores: dict[str, Any] = {}
        self.instance_costs: dict[str, float] = {}
        # message bookkeeping on the work axis
        self.send_events: dict[int, int] = {}
        self.message_log: dict[int, tuple[Any, int, int]] = {}
        self.skip_pos2: dict[str, int] = {}
        self.receive_hooks: list[Callable] = []
        self.send_hooks: list[Callable] = []
        self.nd_hooks: list[Callable] = []
        self._dilation: dict[str, float] = {}
        self._abort_cause: Optional[int] = None
        self._replaying = False

        self.job = Job(self.sim, workload.work_ns, workload.next_milestone, self._on_milestone, self._on_finish)
        self.faults = FaultEngine(self.sim, system, fault_models, horizon, on_error=self._on_error)

        self.instances: dict[str, Any] = {}
        self.receivers: dict[tuple[str, EventKind], list] = {}
        self.entries: dict[EventKind, list] = {}
        if solution is not None and solution.state_patterns:
            self.domain: ProtectionDomain = fuse(solution.state_patterns, system.regions, system.hosts())
        else:
            self.domain = ProtectionDomain((), frozenset(), 0, True, frozenset(system.regions))
        if solution is not None:
            for spec in solution.instances:
                mech = mechanism_of(spec)
                self.instances[spec.id] = build_instance(self, spec, mech)
            for w in solution.wirings:
                self.receivers.setdefault((w.emitter, w.kind), []).append(w)
            for lst in self.receivers.values():
                lst.sort(key=lambda w: w.priority)
            for inst in self.instances.values():
                if inst.mech.entry:
                    for kind in inst.mech.activation:
                        self.entries.setdefault(kind, []).append(inst)
        self.sim.subscribe(None, self._route)

    # running ------------------------------------------------------------------------

    def run(self) -> None:
        self.faults.start()
        for inst in self.instances.values():
            inst.start()
        self.job.start()
        self.sim.run_until(self.horizon)
        if not self.sim.stopped and not self.job.finished:
            self.job.settle()
            self.outcome = "horizon"
        for inst in self.instances.values():
            inst.finish()

    def _trace(self, ev: EventRecord) -> None:
        self.trace_lines.append(ev.to_json())

    # routing ------------------------------------------------------------------------

    def _route(self, ev: EventRecord) -> None:
        kind = ev.kind
        self.counts[kind] += 1
        if kind is K.WORKLOAD_COMPLETE or kind is K.RUN_ABORTED:
            self.sim.stop()
            return
        if kind is K.FAILURE_DECLARED:
            self.failures.append({"id": ev.seq, "t": ev.seconds, "subject": ev.subject, **ev.payload})
            return
        if ev.pattern is not None:
            for w in self.receivers.get((ev.pattern, kind), ()):
                if self.instances[w.receiver].on_event(ev, w):
                    return
            if ev.payload.get("fatal_if_unhandled"):
                self.declare_failure(ev.subject, ev.seq, True, "uncorrectable error with no handler")
            return
        for inst in self.entries.get(kind, ()):
            inst.on_event(ev, None)

    def emit(self, inst_id: str, kind: EventKind, subject: str = "", cause: Optional[int] = None, payload: Optional[dict] = None) -> int:
        inst = self.instances[inst_id]
        if kind not in inst.mech.responses:
            raise RuntimeError(f"instance {inst_id!r} cannot emit {kind.value}")
        if kind is K.FAILURE_DECLARED:
            return self.declare_failure(subject, cause, bool((payload or {}).get("detected", True)), (payload or {}).get("reason", ""), inst_id)
        return self.sim.post(kind, subject=subject, cause=cause, payload=payload or {}, pattern=inst_id)

    # failures and errors ------------------------------------------------------------

    def declare_failure(self, subject: str, cause: Optional[int], detected: bool, reason: str, pattern: Optional[str] = None) -> int:
        fid = self.sim.post(
            K.FAILURE_DECLARED,
            subject=subject,
            cause=cause,
            payload={"detected": detected, "reason": reason},
            pattern=pattern,
        )
        if not self.job.finished:
            self._abort_cause = fid
            self.job.finish("aborted")
        return fid

    def _on_error(self, err: ErrorState) -> None:
        self.errors[err.id] = err
        if self.job.finished:
            return
        if err.mode in ("crash", "hang"):
            self.error_progress[err.id] = self.job.position()
            self.job.block(proc_key(err.subject))
            self._watch(err)
            return
        self.error_progress[err.id] = self.job.position()
        w = self.workload
        if isinstance(w, SolverWorkload):
            if err.subject in (w.A.id, w.b.id):
                self.solver_errors.append(err.id)
                return
            if err.subject == w.x.id:
                return  # iterate absorbs perturbations of its own state
        self._watch(err)

    def _watch(self, err: ErrorState) -> None:
        self.sim.call_at(self.sim.now_ns + self.interaction_timeout_ns, self._interaction, error=err.id)

    def _interaction(self, timer: EventRecord) -> None:
        err = self.errors[timer.payload["error"]]
        if self.job.finished or err.mitigated:
            return
        if err.mode in ("crash", "hang") and self.system.processes[err.subject].status == "running":
            return
        reason = f"{err.mode} reached the service interface" + ("" if err.detected else " undetected")
        self.declare_failure(err.subject, err.id, err.detected, reason)

    def mark(self, eid: Optional[int], **flags: bool) -> None:
        err = self.errors.get(eid) if eid is not None else None
        if err is not None:
            for k, v in flags.items():
                setattr(err, k, v)

    def mitigate_errors_in(self, subjects) -> None:
        subjects = set(subjects)
        for err in self.errors.values():
            if err.subject in subjects and not err.failed:
                err.mitigated = True

    def open_error(self, subject: str) -> Optional[int]:
        """Most recent unmitigated error on ``subject``."""
        for eid in sorted(self.errors, reverse=True):
            e = self.errors[eid]
            if e.subject == subject and not e.mitigated:
                return eid
        return None

    # services for instances ---------------------------------------------------------

    def add_dilation(self, bucket: str, fraction: float) -> None:
        self._dilation[bucket] = self._dilation.get(bucket, 0.0) + fraction
        self.job.set_dilation(bucket, self._dilation[bucket])

    def suspend(self, pids) -> None:
        self.faults.suspended.update(pids)

    def unsuspend(self, pids) -> None:
        self.faults.suspended.difference_update(pids)

    def restart_processes(self, pids) -> None:
        """Processes come back after a restore: running, unblocked, monitors re-armed."""
        pids = list(pids)
        for pid in pids:
            self.system.processes[pid].status = "running"
        for inst in self.instances.values():
            inst.on_restart(pids)
        for pid in pids:
            self.job.unblock(proc_key(pid))

    def resume_process(self, pid: str) -> None:
        """Service continues without a restart (e.g. a surviving replica takes over)."""
        self.system.processes[pid].status = "running"
        self.job.unblock(proc_key(pid))

    def sync_progress(self) -> int:
        p = self.job.position()
        for proc in self.system.processes.values():
            proc.progress_ns = p
        return p

    def region_written(self, rids) -> None:
        rids = list(rids)
        for inst in self.instances.values():
            inst.on_region_written(rids)

    def replay(self, start_ns: int, reach_ns: int) -> None:
        """Re-apply workload actions in (start, reach] without time or trace events."""
        self._replaying = True
        try:
            p = start_ns
            while True:
                m = self.workload.next_milestone(p)
                if m is None or m > reach_ns:
                    break
                self._apply_actions(m)
                p = m
        finally:
            self._replaying = False
        self.job.advance_without_time(reach_ns)

    # workload -----------------------------------------------------------------------

    def _on_milestone(self, p: int) -> None:
        self._apply_actions(p)

    def _apply_actions(self, p: int) -> None:
        w = self.workload
        replay = self._replaying
        for action, info in w.on_milestone(p):
            if action == "send":
                m = info["message"]
                for hook in self.send_hooks:
                    hook(m, p)
                if not replay:
                    self.send_events[m.id] = self.sim.post(
                        K.MESSAGE_SEND, subject=m.sender, payload={"message": m.id, "receiver": m.receiver}
                    )
            elif action == "receive":
                self._receive(info["message"], p, replay)
            elif action == "nondeterministic":
                pid = info["process"]
                if 2 * p < self.skip_pos2.get(pid, -1):
                    continue
                if not replay:
                    for hook in self.nd_hooks:
                        hook(p)
                assert isinstance(w, GenericWorkload)
                w.apply_nondeterministic(info["index"], pid)
            elif action == "iteration":
                self.region_written([w.x.id])
                if not replay:
                    self.sim.post(K.WORKLOAD_PROGRESS, subject=w.x.owner, payload=info)
            elif action == "converged":
                self._check_answer(info)
            elif action == "exhausted":
                cause = self.solver_errors[-1] if self.solver_errors else None
                self.declare_failure(w.x.owner, cause, False, "solver did not converge")

    def _receive(self, m, p: int, replay: bool) -> None:
        w = self.workload
        if 2 * p < self.skip_pos2.get(m.receiver, -1):
            return  # already folded into the restored receiver state
        if not replay:
            for hook in self.receive_hooks:
                hook(m, p)
        if deliver_message(self.system, m) == "dropped":
            if not replay:
                self.sim.post(K.MESSAGE_DROPPED, subject=m.receiver, cause=self.send_events.get(m.id), payload={"message": m.id})
            return
        assert isinstance(w, GenericWorkload)
        w.apply_receive(m)
        self.message_log[m.id] = (m, to_ns(m.send_time), p)
        if not replay:
            if not m.deterministic:
                for hook in self.nd_hooks:
                    hook(p)
            self.sim.post(K.MESSAGE_RECEIVE, subject=m.receiver, cause=self.send_events.get(m.id), payload={"message": m.id, "sender": m.sender})

    def _check_answer(self, info: dict) -> None:
        w = self.workload
        assert isinstance(w, SolverWorkload)
        res = w.true_residual()
        with np.errstate(all="ignore"):
            scale = float(np.max(np.abs(w.A.pristine) @ np.abs(w.x.data) + np.abs(w.b.pristine)))
        if not (np.isfinite(res) and res <= w.tolerance + 1e-12 * max(1.0, scale)):
            cause = self.solver_errors[-1] if self.solver_errors else None
            self.declare_failure(w.x.owner, cause, False, "converged to a wrong answer")
            return
        self.job.finish("done")

    def _on_finish(self, how: str) -> None:
        if how == "done":
            self.outcome = "completed"
            self.sim.post(K.WORKLOAD_COMPLETE, payload={"progress": to_s(self.job.progress)})
        else:
            self.outcome = "aborted"
            self.sim.post(K.RUN_ABORTED, cause=self._abort_cause, payload={"progress": to_s(self.job.progress)})


def proc_key(pid: str) -> str:
    return f"proc:{pid}"
