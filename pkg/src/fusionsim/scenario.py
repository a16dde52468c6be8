"""Scenario files: process, topology, placement inputs, policy and timeline.

Scenarios are JSON documents (YAML is accepted too). Every problem found is
reported with the offending element's path and, when it can be located, its
line in the source text.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

import yaml

from .controller import ControllerPolicy
from .graph import FusionNodeSpec, FusionProcess, Link, validate_process
from .placement import CostWeights
from .topology import Channel, ExecutionFramework, Topology, TopologyEvent, channel_key, check_topology

TOPOLOGY_EVENTS = ("ef-down", "ef-up", "channel-down", "channel-up", "ef-added")
EVENT_KINDS = ("source-emit", *TOPOLOGY_EVENTS, "set-parameter", "impl-error", "swap-impl")


@dataclass(frozen=True)
class ScenarioIssue:
    path: str
    message: str
    line: int | None = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.path}: {self.message}"


class ScenarioError(ValueError):
    def __init__(self, issues: list[ScenarioIssue]):
        self.issues = issues
        super().__init__("\n".join(str(i) for i in issues))


@dataclass
class TimelineEvent:
    time: float
    kind: str
    data: dict = field(default_factory=dict)

    def topology_event(self) -> TopologyEvent:
        d = self.data
        if self.kind in ("ef-down", "ef-up"):
            return TopologyEvent(self.kind, ef=d["ef"])
        if self.kind in ("channel-down", "channel-up"):
            return TopologyEvent(self.kind, channel=tuple(d["channel"]))
        if self.kind == "ef-added":
            spec = d["ef"]
            new_ef = _ef(spec)
            chans = tuple(
                Channel(new_ef.id, c["to"], c.get("cost", 1), c.get("latency", 1), c.get("alive", True))
                for c in spec.get("channels", ())
            )
            return TopologyEvent("ef-added", new_ef=new_ef, new_channels=chans)
        raise ValueError(f"{self.kind} is not a topology event")

    def emission_times(self, horizon: float, rng: random.Random) -> list[float]:
        """Expand a source-emit schedule into concrete instants within the horizon."""
        d = self.data
        if "times" in d:
            return [t for t in d["times"] if t <= horizon]
        until = min(d.get("until", horizon), horizon)
        if "rate" in d:
            out, t = [], self.time
            while True:
                t += rng.expovariate(d["rate"])
                if t > until:
                    return out
                out.append(t)
        period = d.get("period", 1)
        count = d.get("count")
        out, k = [], 0
        while True:
            t = self.time + k * period
            if t > until or (count is not None and k >= count):
                return out
            out.append(t)
            k += 1


@dataclass
class Scenario:
    name: str
    process: FusionProcess
    topology: Topology
    eligibility: dict[str, list[str]] = field(default_factory=dict)
    channel_weights: dict[tuple[str, str], float] = field(default_factory=dict)
    weights: CostWeights = field(default_factory=CostWeights)
    policy: ControllerPolicy = field(default_factory=ControllerPolicy)
    timeline: list[TimelineEvent] = field(default_factory=list)
    horizon: float = 10
    seed: int = 0
    initial_assignment: dict[str, str] | None = None


def _ef(d: dict) -> ExecutionFramework:
    return ExecutionFramework(
        id=d["id"], machine=d.get("machine", ""), host=d.get("host", ""),
        memory_capacity=d.get("memory", 10), alive=d.get("alive", True),
    )


def _line_index(text: str) -> dict[tuple, int]:
    """Map element paths to 1-based source lines using the YAML composer."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    index: dict[tuple, int] = {}

    def walk(node, path):
        index[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, path + (k.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return index


class _Checker:
    def __init__(self, lines: dict[tuple, int]):
        self.lines = lines
        self.issues: list[ScenarioIssue] = []

    def err(self, path: tuple, message: str):
        line = None
        for cut in range(len(path), -1, -1):
            if path[:cut] in self.lines:
                line = self.lines[path[:cut]]
                break
        shown = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in path).lstrip(".") or "<root>"
        self.issues.append(ScenarioIssue(shown, message, line))

    def expect(self, value, kind, path, what) -> bool:
        if not isinstance(value, kind) or (kind in (int, float, (int, float)) and isinstance(value, bool)):
            self.err(path, f"{what} has the wrong type ({type(value).__name__})")
            return False
        return True


def _load(text: str):
    if text.lstrip().startswith(("{", "[")):
        try:
            return json.loads(text), None
        except json.JSONDecodeError as exc:
            return None, ScenarioIssue("<document>", f"malformed JSON: {exc.msg}", exc.lineno)
    try:
        return yaml.safe_load(text), None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        return None, ScenarioIssue("<document>", f"malformed YAML: {exc}", mark.line + 1 if mark else None)


def parse_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario; raises ScenarioError listing every issue."""
    data, syntax = _load(text)
    if syntax is not None:
        raise ScenarioError([syntax])
    chk = _Checker(_line_index(text))
    if not isinstance(data, dict):
        chk.err((), "scenario must be an object")
        raise ScenarioError(chk.issues)

    process = _parse_process(data.get("process"), chk)
    topology = _parse_topology(data.get("topology"), chk)
    node_ids = set(process.node_ids) if process else set()
    ef_ids = set(topology.ef_ids) if topology else set()

    eligibility = {}
    for node, efs in (data.get("eligibility") or {}).items():
        path = ("eligibility", node)
        if node not in node_ids:
            chk.err(path, f"unknown node {node!r}")
        if not chk.expect(efs, list, path, "eligibility") or not efs:
            if isinstance(efs, list):
                chk.err(path, "eligibility set must not be empty")
            continue
        for i, ef in enumerate(efs):
            if ef not in ef_ids and not _added_later(data, ef):
                chk.err(path + (i,), f"unknown EF {ef!r}")
        eligibility[node] = list(efs)

    weights_d = data.get("weights") or {}
    weights = CostWeights()
    channel_weights = {}
    try:
        weights = CostWeights(weights_d.get("distribution", 1.0), weights_d.get("communication", 1.0))
    except (ValueError, TypeError) as exc:
        chk.err(("weights",), str(exc))
    for i, cw in enumerate(weights_d.get("channels", ())):
        path = ("weights", "channels", i)
        ends = cw.get("between", ())
        if len(ends) != 2 or (topology and not topology.has_channel(*ends)):
            chk.err(path, f"unknown channel {ends!r}")
            continue
        alpha = cw.get("alpha", 1.0)
        if not (isinstance(alpha, (int, float)) and alpha > 0):
            chk.err(path, "alpha must be a positive number")
            continue
        channel_weights[channel_key(*ends)] = float(alpha)

    policy = ControllerPolicy()
    try:
        policy = ControllerPolicy(**(data.get("policy") or {}))
    except (TypeError, ValueError) as exc:
        chk.err(("policy",), str(exc))

    horizon = data.get("horizon", 10)
    if not isinstance(horizon, (int, float)) or isinstance(horizon, bool) or horizon <= 0:
        chk.err(("horizon",), "horizon must be a positive number")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        chk.err(("seed",), "seed must be an integer")

    timeline = _parse_timeline(data.get("timeline") or [], chk, process, topology)

    initial = data.get("initial")
    initial_assignment = None
    if initial is not None:
        assignment = initial.get("assignment", {}) if isinstance(initial, dict) else None
        if not isinstance(assignment, dict):
            chk.err(("initial",), "initial must hold an assignment object")
        else:
            for node, ef in assignment.items():
                if node not in node_ids:
                    chk.err(("initial", "assignment", node), f"unknown node {node!r}")
                if ef not in ef_ids:
                    chk.err(("initial", "assignment", node), f"unknown EF {ef!r}")
            initial_assignment = dict(assignment)

    if chk.issues:
        raise ScenarioError(chk.issues)
    return Scenario(
        name=str(data.get("name", "scenario")), process=process, topology=topology,
        eligibility=eligibility, channel_weights=channel_weights, weights=weights, policy=policy,
        timeline=timeline, horizon=horizon, seed=seed, initial_assignment=initial_assignment,
    )


def _added_later(data: dict, ef: str) -> bool:
    for ev in data.get("timeline") or ():
        if isinstance(ev, dict) and ev.get("event") == "ef-added" and isinstance(ev.get("ef"), dict):
            if ev["ef"].get("id") == ef:
                return True
    return False


def _parse_process(d, chk: _Checker) -> FusionProcess | None:
    if not isinstance(d, dict):
        chk.err(("process",), "missing process description")
        return None
    nodes = []
    for i, nd in enumerate(d.get("nodes", [])):
        path = ("process", "nodes", i)
        if not isinstance(nd, dict) or "id" not in nd:
            chk.err(path, "node needs an id")
            continue
        params = nd.get("params", {})
        if not isinstance(params, dict):
            chk.err(path + ("params",), "params must map names to default values")
            params = {}
        memory = nd.get("memory", 1)
        if not isinstance(memory, int) or isinstance(memory, bool):
            chk.err(path + ("memory",), "memory must be an integer")
            memory = 0
        nodes.append(FusionNodeSpec(
            id=str(nd["id"]), inputs=nd.get("inputs", []), outputs=nd.get("outputs", []),
            params=params, impls=nd.get("impls", ["identity"]), memory_demand=memory,
        ))
    links = []
    for i, ld in enumerate(d.get("links", [])):
        try:
            links.append(Link.parse(ld["from"], ld["to"]))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            chk.err(("process", "links", i), f"bad link: {exc}")
    ids = [n.id for n in nodes]
    for i, node_id in enumerate(ids):
        if ids.index(node_id) != i:
            chk.err(("process", "nodes", i), f"duplicate node {node_id!r}")
    process = FusionProcess(tuple(nodes), tuple(links))
    by_link = {l: i for i, l in enumerate(links)}
    for v in validate_process(process):
        path = ("process",)
        for link, i in by_link.items():
            if v.subject == str(link):
                path = ("process", "links", i)
        node = v.subject.split(".")[0]
        if path == ("process",) and node in ids:
            path = ("process", "nodes", ids.index(node))
        chk.err(path, str(v))
    return process


def _parse_topology(d, chk: _Checker) -> Topology | None:
    if not isinstance(d, dict):
        chk.err(("topology",), "missing topology description")
        return None
    efs = []
    for i, ed in enumerate(d.get("efs", [])):
        if not isinstance(ed, dict) or "id" not in ed:
            chk.err(("topology", "efs", i), "EF needs an id")
            continue
        efs.append(_ef(ed))
    chans = []
    for i, cd in enumerate(d.get("channels", [])):
        ends = cd.get("between") if isinstance(cd, dict) else None
        if not isinstance(ends, list) or len(ends) != 2:
            chk.err(("topology", "channels", i), "channel needs 'between': [ef, ef]")
            continue
        chans.append(Channel(ends[0], ends[1], cd.get("cost", 1), cd.get("latency", 1), cd.get("alive", True)))
    t = Topology(tuple(efs), tuple(chans))
    for problem in check_topology(t):
        chk.err(("topology",), problem)
    return t


def _parse_timeline(items, chk: _Checker, process, topology) -> list[TimelineEvent]:
    events = []
    node_ids = set(process.node_ids) if process else set()
    known_efs = set(topology.ef_ids) if topology else set()
    known_channels = {c.key for c in topology.channels} if topology else set()
    last_time = None
    for i, ev in enumerate(items):
        path = ("timeline", i)
        if not isinstance(ev, dict):
            chk.err(path, "timeline entry must be an object")
            continue
        t = ev.get("time")
        kind = ev.get("event")
        if not isinstance(t, (int, float)) or isinstance(t, bool) or t < 0:
            chk.err(path + ("time",), "time must be a non-negative number")
            continue
        if last_time is not None and t < last_time:
            chk.err(path + ("time",), f"unsorted timeline: {t} after {last_time}")
        last_time = t
        if kind not in EVENT_KINDS:
            chk.err(path + ("event",), f"unknown event kind {kind!r}")
            continue
        data = {k: v for k, v in ev.items() if k not in ("time", "event")}

        def need_node(key="node"):
            node = data.get(key)
            if node not in node_ids:
                chk.err(path + (key,), f"unknown node {node!r}")
                return None
            return process.node(node)

        if kind == "source-emit":
            spec = need_node()
            if spec is not None and not spec.is_source:
                chk.err(path + ("node",), f"{spec.id!r} is not a source node")
            rate = data.get("rate")
            if rate is not None and not (isinstance(rate, (int, float)) and rate > 0):
                chk.err(path + ("rate",), "rate must be positive")
            if not (isinstance(data.get("period", 1), (int, float)) and data.get("period", 1) > 0):
                chk.err(path + ("period",), "period must be positive")
        elif kind in ("ef-down", "ef-up"):
            if data.get("ef") not in known_efs:
                chk.err(path + ("ef",), f"unknown EF {data.get('ef')!r}")
        elif kind in ("channel-down", "channel-up"):
            ends = data.get("channel")
            if not isinstance(ends, list) or len(ends) != 2 or channel_key(*map(str, ends)) not in known_channels:
                chk.err(path + ("channel",), f"unknown channel {ends!r}")
        elif kind == "ef-added":
            spec = data.get("ef")
            if not isinstance(spec, dict) or "id" not in spec:
                chk.err(path + ("ef",), "ef-added needs an EF object with an id")
                continue
            if spec["id"] in known_efs:
                chk.err(path + ("ef", "id"), f"EF {spec['id']!r} already exists")
            for j, c in enumerate(spec.get("channels", ())):
                if not isinstance(c, dict) or c.get("to") not in known_efs:
                    chk.err(path + ("ef", "channels", j), f"unknown EF {c.get('to') if isinstance(c, dict) else c!r}")
                else:
                    known_channels.add(channel_key(spec["id"], c["to"]))
            known_efs.add(spec["id"])
        elif kind == "set-parameter":
            spec = need_node()
            if spec is not None and data.get("name") not in spec.param_names:
                chk.err(path + ("name",), f"node {spec.id!r} has no parameter {data.get('name')!r}")
        elif kind == "impl-error":
            need_node()
            count = data.get("count", 1)
            if not isinstance(count, int) or count < 1:
                chk.err(path + ("count",), "count must be a positive integer")
        elif kind == "swap-impl":
            spec = need_node()
            if spec is not None and data.get("impl") not in spec.impls:
                chk.err(path + ("impl",), f"{data.get('impl')!r} is not an implementation of {spec.id!r}")
        events.append(TimelineEvent(t, kind, data))
    return events

