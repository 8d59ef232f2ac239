"""Detection behaviors: heartbeat liveness, parameter monitoring and rule-based prediction."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .configs import HeartbeatConfig, PredictionConfig, Rule


# heartbeat -------------------------------------------------------------------------


def last_beat_before(cfg: HeartbeatConfig, t_stop: float, origin: float = 0.0) -> float:
    """Time of the last beat sent strictly before ``t_stop`` on the grid ``origin + k p``."""
    k = math.ceil((t_stop - origin) / cfg.period) - 1
    return origin + max(k, 0) * cfg.period


def heartbeat_deadline(cfg: HeartbeatConfig, t_stop: float, origin: float = 0.0) -> float:
    """When a monitor declares a process dead that stopped beating at ``t_stop``.

    The monitor expects a beat every ``p`` seconds and tolerates ``t`` of
    lateness, so silence is declared at ``last beat + p + t``.
    """
    return last_beat_before(cfg, t_stop, origin) + cfg.period + cfg.timeout


class HeartbeatMonitor:
    """Explicit-beat monitor: record beats, then ask which processes are overdue."""

    def __init__(self, cfg: HeartbeatConfig, processes: Sequence[str], origin: float = 0.0):
        self.cfg = cfg
        self.last: dict[str, float] = {p: origin for p in processes}
        self.declared: set[str] = set()

    def beat(self, pid: str, t: float) -> None:
        self.last[pid] = t
        self.declared.discard(pid)

    def deadline(self, pid: str) -> float:
        return self.last[pid] + self.cfg.period + self.cfg.timeout

    def check(self, t: float) -> list[str]:
        """Processes whose deadline has passed at ``t`` and are not yet declared."""
        out = []
        for pid, last in self.last.items():
            if pid not in self.declared and t >= last + self.cfg.period + self.cfg.timeout:
                self.declared.add(pid)
                out.append(pid)
        return out


def heartbeat_check(cfg: HeartbeatConfig, beats: Sequence[float], horizon: float, origin: float = 0.0) -> Optional[float]:
    """Declaration time for a beat series observed up to ``horizon``, or None if it never lapses."""
    last = origin
    for b in sorted(beats):
        if b > last + cfg.period + cfg.timeout:
            return last + cfg.period + cfg.timeout
        last = b
    deadline = last + cfg.period + cfg.timeout
    return deadline if deadline <= horizon else None


# monitoring -------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosisReport:
    location: tuple[str, ...]
    suspected: str
    parameters: tuple[str, ...] = ()


def monitor_diagnose(
    mode: str,
    observations: Mapping[str, Mapping[str, float]],
    normal_ranges: Optional[Mapping[str, tuple[float, float]]] = None,
    signatures: Optional[Mapping[str, Mapping[str, tuple]]] = None,
) -> Optional[DiagnosisReport]:
    """Diagnose from per-module parameter observations.

    effect-cause: parameters outside their normal range narrow the suspect set
    to the modules that show them.  cause-effect: a module whose parameters
    satisfy every condition of a known fault signature yields a typed report.
    Conditions are ``(">", v)``, ``("<", v)`` or ``("in", lo, hi)``.
    """
    if mode == "effect-cause":
        ranges = normal_ranges or {}
        suspects, params = [], set()
        for module in sorted(observations):
            for name, value in observations[module].items():
                if name in ranges:
                    lo, hi = ranges[name]
                    if not lo <= value <= hi:
                        suspects.append(module)
                        params.add(name)
                        break
        if not suspects:
            return None
        return DiagnosisReport(tuple(suspects), "anomaly", tuple(sorted(params)))
    if mode == "cause-effect":
        for fault_type in sorted(signatures or {}):
            sig = signatures[fault_type]
            for module in sorted(observations):
                obs = observations[module]
                if sig and all(name in obs and _holds(cond, obs[name]) for name, cond in sig.items()):
                    return DiagnosisReport((module,), fault_type, tuple(sorted(sig)))
        return None
    raise ValueError(f"unknown diagnosis mode {mode!r}")


def _holds(cond: tuple, value: float) -> bool:
    op = cond[0]
    if op == ">":
        return value > cond[1]
    if op == "<":
        return value < cond[1]
    if op == "in":
        return cond[1] <= value <= cond[2]
    raise ValueError(f"unknown condition {cond!r}")


# prediction -------------------------------------------------------------------------


def rule_fires(rule: Rule, window: Sequence[float]) -> bool:
    """True iff the last ``w`` samples all exceed ``theta``."""
    if len(window) < rule.window:
        return False
    return all(v > rule.threshold for v in list(window)[-rule.window:])


def predict_faults(config: PredictionConfig, samples: Mapping[str, Sequence[float]]) -> Optional[Rule]:
    """First rule that fires on the given per-sensor sample windows, or None."""
    for rule in config.rules:
        if rule_fires(rule, samples.get(rule.sensor, ())):
            return rule
    return None


def first_firing_index(rule: Rule, series: Sequence[float]) -> Optional[int]:
    """Index (0-based) of the sample at which ``rule`` first fires on a series."""
    run = 0
    for i, v in enumerate(series):
        run = run + 1 if v > rule.threshold else 0
        if run >= rule.window:
            return i
    return None


class SampleFilter:
    """Preprocessing stage: drops non-finite readings and applies a moving average."""

    def __init__(self, length: int = 1):
        self.buf: deque[float] = deque(maxlen=length)

    def push(self, value: float) -> Optional[float]:
        if not np.isfinite(value):
            return None
        self.buf.append(float(value))
        return sum(self.buf) / len(self.buf)


@dataclass
class KnowledgeBase:
    """Fired-rule history; suppresses repeat predictions for a subject already flagged."""

    fired: list[tuple[float, str, str]] = field(default_factory=list)
    open: set[str] = field(default_factory=set)

    def record(self, t: float, subject: str, rule: Rule) -> bool:
        if subject in self.open:
            return False
        self.open.add(subject)
        self.fired.append((t, subject, rule.sensor))
        return True

    def close(self, subject: str) -> None:
        self.open.discard(subject)


@dataclass
class PredictionScore:
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0

    @property
    def predictions(self) -> int:
        return self.true_positives + self.false_positives

    @property
    def fp_rate(self) -> float:
        """Fraction of predictions that were not followed by a real activation."""
        return self.false_positives / self.predictions if self.predictions else 0.0

    @property
    def precision(self) -> float:
        return self.true_positives / self.predictions if self.predictions else 1.0

    @property
    def recall(self) -> float:
        actual = self.true_positives + self.false_negatives
        return self.true_positives / actual if actual else 1.0


def score_predictions(
    predictions: Sequence[tuple[float, str]],
    activations: Sequence[tuple[float, str]],
    horizon: float,
) -> PredictionScore:
    """Match predictions to would-be activations on the same subject within ``horizon``.

    An activation counts as predicted if some prediction on that subject lies
    in ``[t_act - horizon, t_act]``; each prediction matches at most one activation.
    """
    score = PredictionScore()
    used = [False] * len(predictions)
    for t_act, subj in sorted(activations):
        hit = None
        for i, (t_pred, p_subj) in enumerate(predictions):
            if not used[i] and p_subj == subj and t_act - horizon <= t_pred <= t_act:
                hit = i
                break
        if hit is None:
            score.false_negatives += 1
        else:
            used[hit] = True
            score.true_positives += 1
    score.false_positives = used.count(False)
    return score
