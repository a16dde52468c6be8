"""Scenario runner: interleaves timeline injections, engine steps and control passes."""
from __future__ import annotations

import json
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable

from .controller import Controller, SystemStatus
from .engine import Runtime
from .placement import cost_breakdown, configuration_from_assignment
from .scenario import TOPOLOGY_EVENTS, Scenario


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"), allow_nan=False)


@dataclass
class RunResult:
    records: list[dict]
    summary: dict
    exit_status: int
    runtime: Runtime | None = None
    controller: Controller | None = None

    def log_lines(self) -> list[str]:
        return [dumps_record(r) for r in self.records]

    def log_text(self) -> str:
        return "".join(line + "\n" for line in self.log_lines())


def _ticks(period: float, horizon: float) -> list[float]:
    out, k = [], 1
    while k * period <= horizon:
        t = k * period
        out.append(int(t) if float(t).is_integer() else t)
        k += 1
    return out


@dataclass
class Simulation:
    scenario: Scenario
    seed: int | None = None
    horizon: float | None = None
    registry: dict | None = None
    observers: list[Callable[[Runtime, str], None]] = field(default_factory=list)

    def __post_init__(self):
        sc = self.scenario
        self.seed = sc.seed if self.seed is None else self.seed
        self.horizon = sc.horizon if self.horizon is None else self.horizon
        self.controller = Controller(
            sc.process, sc.policy, sc.eligibility, sc.channel_weights, sc.weights
        )
        self.runtime: Runtime | None = None

    def _notify(self, phase: str):
        for obs in self.observers:
            obs(self.runtime, phase)

    def start(self) -> Runtime | None:
        sc = self.scenario
        ctrl = self.controller
        initial = None
        if sc.initial_assignment is not None:
            initial = configuration_from_assignment(ctrl.problem(sc.topology), sc.initial_assignment)
        self.runtime = rt = ctrl.start(sc.topology, initial, registry=self.registry, seed=self.seed)
        if rt is None:
            return None
        rng = random.Random(self.seed)
        counters = Counter()
        emissions = []
        for ev in sc.timeline:
            if ev.kind == "source-emit":
                for t in ev.emission_times(self.horizon, rng):
                    emissions.append((t, ev.data["node"]))
        for t, node in sorted(emissions, key=lambda e: e[0]):
            counters[node] += 1
            # payload of a stimulus is its per-source sequence number
            rt.schedule_emission(node, t, counters[node])
        return rt

    def _apply(self, ev):
        rt, ctrl = self.runtime, self.controller
        if ev.kind in TOPOLOGY_EVENTS:
            rt.apply_topology_event(ev.topology_event())
        elif ev.kind == "set-parameter":
            rt.set_parameter(ev.data["node"], ev.data["name"], ev.data.get("value"))
        elif ev.kind == "impl-error":
            rt.inject_fault(ev.data["node"], ev.data.get("count", 1))
        elif ev.kind == "swap-impl":
            ctrl.swap_implementation(rt, ev.data["node"], ev.data["impl"])

    def run(self) -> RunResult:
        rt = self.start()
        if rt is None:
            return self._infeasible()
        sc, ctrl, policy = self.scenario, self.controller, self.scenario.policy
        by_time = defaultdict(list)
        for ev in sc.timeline:
            if ev.kind != "source-emit" and ev.time <= self.horizon:
                by_time[ev.time].append(ev)
        heartbeats = set(_ticks(policy.heartbeat_interval, self.horizon))
        controls = set(_ticks(policy.control_interval, self.horizon))
        boundaries = sorted(set(by_time) | heartbeats | controls | {self.horizon})
        self._notify("start")
        for b in boundaries:
            rt.run_until(b)
            self._notify("engine")
            for ev in by_time.get(b, ()):
                self._apply(ev)
            if b in heartbeats:
                rt.heartbeat(b)
            rt.settle()
            self._notify("timeline")
            if b in controls:
                ctrl.control_step(rt)
                rt.settle()
                self._notify("control")
        status = ctrl.assess(rt)
        rt.record("end", status=status.state, failed_sinks=list(status.failed_sinks), **rt.ledger())
        summary = self._summary(status)
        return RunResult(rt.log, summary, 1 if status.state == "failed" else 0, rt, ctrl)

    def _infeasible(self) -> RunResult:
        status = self.controller.status
        rec = {"time": 0, "seq": 0, "kind": "end", "status": status.state,
               "failed_sinks": list(status.failed_sinks), "detail": "no admissible initial configuration"}
        summary = {
            "scenario": self.scenario.name, "seed": self.seed, "horizon": self.horizon,
            "configurations_installed": 0, "transitions": [],
            "tokens": {"produced": 0, "consumed": 0, "queued": 0, "in_flight": 0, "lost": 0},
            "status": status.to_fields(), "cost": None,
        }
        return RunResult([rec], summary, 1, None, self.controller)

    def _summary(self, status: SystemStatus) -> dict:
        rt, ctrl = self.runtime, self.controller
        cost = cost_breakdown(ctrl.config, ctrl.problem(rt.believed_topology()))
        errors = Counter(r["error"] for r in rt.log if r["kind"] == "error")
        return {
            "scenario": self.scenario.name,
            "seed": self.seed,
            "horizon": self.horizon,
            "configurations_installed": len(ctrl.installed),
            "final_assignment": ctrl.config.to_dict()["assignment"],
            "transitions": [
                {"from": r.old_generation, "to": r.new_generation, "moved": r.moved,
                 "preserved": r.tokens_preserved, "lost": r.tokens_lost}
                for r in ctrl.reports
            ],
            "tokens": rt.ledger(),
            "errors": dict(sorted(errors.items())),
            "status": status.to_fields(),
            "cost": cost,
        }



def run(scenario: Scenario, seed: int | None = None, horizon: float | None = None) -> RunResult:
    return Simulation(scenario, seed=seed, horizon=horizon).run()


def compare_logs(expected: list[str], actual: list[str]) -> tuple[int, str | None, str | None] | None:
    """First diverging line (1-based index, expected, actual), or None when identical."""
    for i in range(max(len(expected), len(actual))):
        e = expected[i] if i < len(expected) else None
        a = actual[i] if i < len(actual) else None
        if e != a:
            return i + 1, e, a
    return None
