"""Control sub-system: failure detection, recovery, improvement and transitions.

One logical controller runs inline with the simulation loop at control ticks.
Each pass reads the sensors, detects new errors, classifies the system state,
then either recovers (new errors) or searches for an improvement (periodic,
on topology growth, or on a large variation of the sensed metrics). Any
resulting configuration is installed through a best-effort transition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .engine import Runtime, deploy, node_container
from .graph import FusionProcess, sinks
from .placement import (
    Composition,
    Configuration,
    CostWeights,
    PlacementProblem,
    configuration_from_assignment,
    cost_breakdown,
    find_first_admissible,
    find_optimal,
    is_admissible,
    total_cost,
)
from .topology import Topology, channel_key

INTER_EF = "inter-EF"
INTRA_EF = "intra-EF"
ERROR_FAMILIES = {
    "ef-unreachable": INTER_EF,
    "channel-broken": INTER_EF,
    "node-internal": INTRA_EF,
    "deadlock": INTRA_EF,
}


@dataclass(frozen=True)
class ErrorEvent:
    time: float
    kind: str
    subjects: tuple[str, ...]
    detail: str = ""

    def __post_init__(self):
        if self.kind not in ERROR_FAMILIES:
            raise ValueError(f"unknown error kind {self.kind!r}")

    @property
    def family(self) -> str:
        return ERROR_FAMILIES[self.kind]


@dataclass(frozen=True)
class ControllerPolicy:
    heartbeat_timeout: float = 3
    improvement_period: float = 10
    epsilon: float = 0.1
    sensor_variation_threshold: float = 0.2
    heartbeat_interval: float = 1
    control_interval: float = 1
    solver_ef: str | None = None

    def __post_init__(self):
        for name in ("heartbeat_timeout", "improvement_period", "sensor_variation_threshold",
                     "heartbeat_interval", "control_interval"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")


@dataclass
class TransitionReport:
    old_generation: int
    new_generation: int
    dispositions: dict[str, str]
    tokens_preserved: int
    tokens_lost: int

    @property
    def moved(self) -> list[str]:
        return [n for n, d in sorted(self.dispositions.items()) if d == "moved"]

    def to_fields(self) -> dict:
        return {
            "from_generation": self.old_generation,
            "to_generation": self.new_generation,
            "dispositions": {n: self.dispositions[n] for n in sorted(self.dispositions)},
            "preserved": self.tokens_preserved,
            "lost": self.tokens_lost,
        }


@dataclass(frozen=True)
class SystemStatus:
    state: str  # ok | degraded | failed
    errors: tuple[ErrorEvent, ...] = ()
    failed_sinks: tuple[str, ...] = ()

    def to_fields(self) -> dict:
        return {
            "state": self.state,
            "errors": [e.kind for e in self.errors],
            "failed_sinks": list(self.failed_sinks),
        }


def unproducible_sinks(c: Configuration | None, process: FusionProcess, topology: Topology) -> list[str]:
    """Sinks with no source-to-sink route made of usable nodes and usable link chains."""
    if c is None:
        return sinks(process)
    usable = {n for n in process.node_ids if topology.is_ef_alive(c.assignment.get(n, ""))}
    reached = {n for n in usable if process.node(n).is_source}
    frontier = sorted(reached)
    while frontier:
        node = frontier.pop()
        for link in process.outgoing(node):
            if link.dst in reached or link.dst not in usable:
                continue
            chain = c.link_paths.get(link)
            if chain is None or not all(topology.hop_usable(a, b) for a, b in chain):
                continue
            reached.add(link.dst)
            frontier.append(link.dst)
    return [s for s in sinks(process) if s not in reached]


def classify(errors: Iterable[ErrorEvent], c: Configuration | None, p: PlacementProblem) -> SystemStatus:
    """ok without errors; failed if some sink lost every producing route; degraded otherwise."""
    errors = tuple(errors)
    if not errors:
        return SystemStatus("ok")
    dead = unproducible_sinks(c, p.process, p.topology)
    if dead:
        return SystemStatus("failed", errors, tuple(dead))
    return SystemStatus("degraded", errors)


def transition(rt: Runtime, c_old: Configuration, c_new: Configuration) -> tuple[Runtime, TransitionReport]:
    """Apply ``c_new`` to the runtime with the best-effort policy.

    Containers that stay on their EF keep their queues, even across an
    implementation swap. Containers that move are rebuilt empty on the new EF
    (queued tokens are lost) but keep their latched parameters. Tokens in
    flight on a link whose chain changed are lost; the others continue.
    """
    process = rt.process
    dispositions: dict[str, str] = {}
    preserved = lost = 0
    for node in process.node_ids:
        old = rt.containers[node]
        new_ef = c_new.assignment.get(node)
        new_impl = c_new.impls.get(node, process.node(node).default_impl)
        if new_ef is None:
            dispositions[node] = "dropped"
            lost += old.queued()
            del rt.containers[node]
        elif new_ef == old.ef:
            dispositions[node] = "kept-in-place" if new_impl == old.impl else "impl-swapped"
            old.impl = new_impl
            preserved += old.queued()
        else:
            dispositions[node] = "moved"
            lost += old.queued()
            rt.containers[node] = node_container(process, node, new_ef, new_impl, params=old.latched_params)

    for tid in sorted(rt.in_flight):
        link = rt.in_flight[tid].link
        if c_old.link_paths.get(link) != c_new.link_paths.get(link):
            del rt.in_flight[tid]
            lost += 1
        else:
            preserved += 1

    rt.lost += lost
    rt.config = c_new
    report = TransitionReport(c_old.generation, c_new.generation, dispositions, preserved, lost)
    rt.record("transition", **report.to_fields())
    rt._wake_stalled()
    return rt, report


def _metrics(reading) -> tuple[float, float]:
    intervals = [v for v in reading.intervals.values() if v is not None]
    mean_interval = sum(intervals) / len(intervals) if intervals else 0.0
    return float(reading.total_depth()), mean_interval


def _varied(now: tuple[float, float], base: tuple[float, float], threshold: float) -> bool:
    return any(abs(a - b) / max(abs(b), 1.0) > threshold for a, b in zip(now, base))


def _num(x: float):
    return None if x is None or math.isinf(x) else x


class Controller:
    """Single logical controller standing in for the per-EF control sub-systems."""

    def __init__(
        self,
        process: FusionProcess,
        policy: ControllerPolicy | None = None,
        eligibility: Mapping[str, Iterable[str]] | None = None,
        channel_weights: Mapping[tuple[str, str], float] | None = None,
        weights: CostWeights | None = None,
        compose: Composition | None = None,
    ):
        self.process = process
        self.policy = policy or ControllerPolicy()
        self.eligibility = {k: list(v) for k, v in (eligibility or {}).items()}
        self.channel_weights = dict(channel_weights or {})
        self.weights = weights or CostWeights()
        self.compose = compose
        self.config: Configuration | None = None
        self.generation = 0
        self.installed: list[Configuration] = []
        self.reports: list[TransitionReport] = []
        self.status = SystemStatus("ok")
        self.last_improvement: float = 0
        self._baseline: tuple[float, float] | None = None
        self._known: tuple[frozenset, frozenset] | None = None
        self._deadlocked = False

    # -- problem construction -------------------------------------------------

    def problem(self, topology: Topology) -> PlacementProblem:
        return PlacementProblem.build(
            self.process, topology, self.eligibility, self.channel_weights, self.weights, self.compose
        )

    def plan_initial(self, topology: Topology) -> Configuration | None:
        p = self.problem(topology)
        return find_optimal(p) or find_first_admissible(p)

    def start(
        self,
        topology: Topology,
        config: Configuration | None = None,
        registry=None,
        seed: int = 0,
    ) -> Runtime | None:
        """Select (unless given) and deploy the first configuration; None if infeasible."""
        config = config or self.plan_initial(topology)
        if config is None:
            self.status = SystemStatus("failed", (), tuple(sinks(self.process)))
            return None
        self.generation = 1
        config = config.with_generation(1)
        rt = deploy(config, self.process, topology, self.eligibility, registry=registry, seed=seed)
        self.config = config
        self.installed.append(config)
        self._log_install(rt, config, "initial")
        self._known = self._alive_elements(rt)
        self._baseline = _metrics(rt.read_sensors())
        return rt

    def _log_install(self, rt: Runtime, config: Configuration, reason: str):
        cost = cost_breakdown(config, self.problem(rt.believed_topology()))
        d = config.to_dict()
        rt.record("install", generation=config.generation, reason=reason, assignment=d["assignment"],
                  impls=d["impls"], paths=d["paths"], cost={k: _num(v) for k, v in cost.items()},
                  solver_ef=self.policy.solver_ef)

    # -- monitoring -------------------------------------------------------------

    def _alive_elements(self, rt: Runtime) -> tuple[frozenset, frozenset]:
        t = rt.topology
        efs = frozenset(e.id for e in t.efs if rt.believed_alive(e.id) and e.alive)
        chans = frozenset(c.key for c in t.channels if c.alive)
        return efs, chans

    def detect_errors(self, rt: Runtime) -> list[ErrorEvent]:
        """Errors that appeared since the previous pass; also refreshes the liveness view."""
        now = rt.clock
        found: list[ErrorEvent] = []
        for e in rt.topology.efs:
            age = rt.heartbeat_age(e.id)
            if age is None:
                continue
            if e.id not in rt.suspected and age > self.policy.heartbeat_timeout:
                rt.suspected.add(e.id)
                found.append(ErrorEvent(now, "ef-unreachable", (e.id,), f"no heartbeat for {age}"))
            elif e.id in rt.suspected and age <= self.policy.heartbeat_timeout:
                rt.suspected.discard(e.id)
                rt.record("ef-restored", ef=e.id)
        for ev in rt.drain_topology_events():
            if ev.kind == "channel-down":
                found.append(ErrorEvent(now, "channel-broken", channel_key(*ev.channel)))
        for rec in rt.drain_errors():
            found.append(ErrorEvent(now, "node-internal", (rec["node"], rec["ef"]), rec["detail"]))
        stranded = rt.stranded()
        if stranded and not self._deadlocked:
            stuck = tuple(n for n in rt.process.node_ids if rt.containers[n].queued())
            found.append(ErrorEvent(now, "deadlock", stuck, "no container can fire and data is stranded"))
        self._deadlocked = stranded
        for err in found:
            rt.record("error", family=err.family, error=err.kind, subjects=list(err.subjects), detail=err.detail)
        return found

    def assess(self, rt: Runtime, errors: Iterable[ErrorEvent] = ()) -> SystemStatus:
        """Status of the installed configuration under the current liveness view."""
        p = self.problem(rt.believed_topology())
        if self.config is None:
            return SystemStatus("failed", tuple(errors), tuple(sinks(self.process)))
        impacting = [e for e in errors if e.family == INTRA_EF]
        t = p.topology
        for ef in sorted(rt.suspected):
            if self.config.uses_ef(ef):
                impacting.append(ErrorEvent(rt.clock, "ef-unreachable", (ef,)))
        for key in sorted(self.config.channels_used()):
            if not t.has_channel(*key) or not t.channel(*key).alive:
                impacting.append(ErrorEvent(rt.clock, "channel-broken", key))
        return classify(impacting, self.config, p)

    # -- planning ---------------------------------------------------------------

    def recover(self, rt: Runtime) -> Configuration | None:
        """Fastest configuration compatible with the surviving resources.

        The installed configuration is kept when it is still admissible;
        otherwise the first admissible one in search order is taken.
        """
        p = self.problem(rt.believed_topology())
        if self.config is not None and is_admissible(self.config, p)[0]:
            rt.record("recovery", outcome="kept", generation=self.config.generation)
            return self.config
        found = find_first_admissible(p)
        if found is None:
            rt.record("recovery-failed", terminal=True, detail="no admissible configuration")
            return None
        rt.record("recovery", outcome="found")
        return found

    def improve(self, rt: Runtime, reason: str = "periodic") -> Configuration | None:
        """Optimal candidate if it beats the installed configuration by the epsilon margin."""
        p = self.problem(rt.believed_topology())
        self.last_improvement = rt.clock
        self._baseline = _metrics(rt.read_sensors())
        candidate = find_optimal(p)
        current = math.inf
        if self.config is not None and is_admissible(self.config, p)[0]:
            current = total_cost(self.config, p)
        if candidate is None:
            rt.record("improvement-searched", reason=reason, result="none", current_cost=_num(current))
            return None
        cost = total_cost(candidate, p)
        accepted = (
            not candidate.same_plan(self.config)
            and cost < current
            and cost <= (1 - self.policy.epsilon) * current
        )
        rt.record("improvement-searched", reason=reason, result="candidate" if accepted else "none",
                  candidate_cost=cost, current_cost=_num(current))
        return candidate if accepted else None

    def install(self, rt: Runtime, config: Configuration, reason: str) -> TransitionReport | None:
        """Transition to ``config`` unless it equals the installed plan."""
        if config.same_plan(self.config):
            return None
        p = self.problem(rt.believed_topology())
        new = config.with_generation(self.generation + 1)
        ok, violations = is_admissible(new, p)
        if not ok:
            raise ValueError("refusing inadmissible configuration: " + "; ".join(map(str, violations)))
        _, report = transition(rt, self.config, new)
        self.generation = new.generation
        self.config = new
        self.installed.append(new)
        self.reports.append(report)
        self._log_install(rt, new, reason)
        return report

    def swap_implementation(self, rt: Runtime, node: str, impl: str) -> TransitionReport | None:
        if impl not in self.process.node(node).impls:
            raise ValueError(f"{impl!r} is not an implementation of {node!r}")
        return self.install(rt, self.config.with_impl(node, impl), "impl-swap")

    def install_assignment(self, rt: Runtime, assignment: Mapping[str, str], reason: str = "manual"):
        p = self.problem(rt.believed_topology())
        return self.install(rt, configuration_from_assignment(p, assignment, self.config.impls), reason)

    # -- loop -------------------------------------------------------------------

    def control_step(self, rt: Runtime) -> list[dict]:
        """One monitor/analyse/plan/execute pass; returns the records it logged."""
        start = len(rt.log)
        reading = rt.read_sensors()
        errors = self.detect_errors(rt)
        known = self._alive_elements(rt)
        grew = self._known is not None and bool((known[0] - self._known[0]) | (known[1] - self._known[1]))
        self._known = known

        candidate = None
        reason = None
        if errors:
            classified = classify(errors, self.config, self.problem(rt.believed_topology()))
            rt.record("classified", **classified.to_fields())
            candidate, reason = self.recover(rt), "recovery"
        else:
            trigger = None
            if grew:
                trigger = "topology-growth"
            elif rt.clock - self.last_improvement >= self.policy.improvement_period:
                trigger = "periodic"
            elif self._baseline is not None and _varied(
                _metrics(reading), self._baseline, self.policy.sensor_variation_threshold
            ):
                trigger = "sensor-variation"
            if trigger:
                candidate, reason = self.improve(rt, trigger), "improvement"
        if candidate is not None:
            self.install(rt, candidate, reason)

        status = self.assess(rt, errors)
        if status.state != self.status.state or status.failed_sinks != self.status.failed_sinks:
            rt.record("status", **status.to_fields())
        self.status = status
        return rt.log[start:]
