"""Deterministic virtual-time execution of a deployed configuration.

Each fusion node lives in a container on its EF with one FIFO queue per
input port and latched parameter values. A container fires when every queue
holds a token and every consumer is reachable according to the control view;
one firing consumes exactly one token per queue. Tokens travel along the
link's channel chain hop by hop. A hop whose channel or next EF is down
holds the token at the current EF until the hop comes back (acknowledged
transport), so transport itself never loses data.

Source nodes have no input ports. Their scheduled stimuli (readings from the
external sensor) are queued under the pseudo-port ``@ext`` and consumed by
firings like ordinary inputs.
"""
from __future__ import annotations

import heapq
import itertools
from collections import Counter, deque
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from .graph import FusionProcess, Link
from .implementations import Implementation, resolve
from .placement import Configuration, PlacementProblem, is_admissible
from .topology import Chain, Topology, TopologyEvent, apply_topology_event, channel_key

EXTERNAL_PORT = "@ext"


class EngineError(Exception):
    pass


class InadmissibleConfiguration(EngineError):
    def __init__(self, violations):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


@dataclass
class DataToken:
    id: int
    payload: Any
    produced_at: float
    origin: tuple[str, str]


@dataclass
class NodeContainer:
    node: str
    ef: str
    impl: str
    input_queues: dict[str, deque]
    latched_params: dict[str, Any]
    last_fired: float | None = None
    interval: float | None = None

    def queued(self) -> int:
        return sum(len(q) for q in self.input_queues.values())


@dataclass
class InFlightToken:
    token: DataToken
    link: Link
    remaining: Chain
    at: str
    arrival: float | None = None
    ticket: int = 0


@dataclass(frozen=True)
class SensorReading:
    time: float
    intervals: dict[str, float | None]
    depths: dict[str, int]
    channel_tokens: dict[str, int]
    heartbeat_age: dict[str, float | None]

    def total_depth(self) -> int:
        return sum(self.depths.values())


def node_container(process: FusionProcess, node_id: str, ef: str, impl: str, params=None) -> NodeContainer:
    spec = process.node(node_id)
    ports = spec.inputs or (EXTERNAL_PORT,)
    latched = spec.param_defaults
    if params:
        latched.update({k: v for k, v in params.items() if k in latched})
    return NodeContainer(node_id, ef, impl, {p: deque() for p in ports}, latched)


class Runtime:
    """Mutable runtime state plus the simulation loop that advances it."""

    def __init__(
        self,
        process: FusionProcess,
        config: Configuration,
        topology: Topology,
        registry: Mapping[str, Implementation] | None = None,
        seed: int = 0,
    ):
        self.process = process
        self.config = config
        self.topology = topology
        self.registry = registry
        self.seed = seed
        self.clock: float = 0
        self.containers: dict[str, NodeContainer] = {
            n: node_container(process, n, config.assignment[n], config.impls.get(n, process.node(n).default_impl))
            for n in process.node_ids
        }
        self.in_flight: dict[int, InFlightToken] = {}
        self.log: list[dict] = []
        self.observers: list[Callable[[dict], None]] = []
        self.produced = 0
        self.consumed = 0
        self.lost = 0
        self.channel_tokens: Counter = Counter()
        # control view: EFs currently suspected dead by the failure detector
        self.suspected: set[str] = {e.id for e in topology.efs if not e.alive}
        self.last_heartbeat: dict[str, float | None] = {
            e.id: (0 if e.alive else None) for e in topology.efs
        }
        self._heap: list = []
        self._seq = itertools.count()
        self._token_ids = itertools.count(1)
        self._tickets = itertools.count(1)
        self._record_seq = itertools.count()
        self._faults: Counter = Counter()
        self._errors: list[dict] = []
        self._topology_events: list[TopologyEvent] = []

    # -- logging -----------------------------------------------------------

    def record(self, kind: str, **fields) -> dict:
        rec = {"time": self.clock, "seq": next(self._record_seq), "kind": kind}
        rec.update(fields)
        self.log.append(rec)
        for obs in self.observers:
            obs(rec)
        return rec

    def ledger(self) -> dict[str, int]:
        return {
            "produced": self.produced,
            "consumed": self.consumed,
            "queued": sum(c.queued() for c in self.containers.values()),
            "in_flight": len(self.in_flight),
            "lost": self.lost,
        }

    # -- liveness as seen by the control system ---------------------------

    def believed_alive(self, ef: str) -> bool:
        return self.topology.has_ef(ef) and ef not in self.suspected

    def believed_topology(self) -> Topology:
        return self.topology.with_dead_efs(self.suspected)

    def path_believed_alive(self, link: Link) -> bool:
        dst_ef = self.containers[link.dst].ef
        if not self.believed_alive(dst_ef):
            return False
        for a, b in self.config.link_paths.get(link, ()):
            if not self.topology.has_channel(a, b) or not self.topology.channel(a, b).alive:
                return False
            if not self.believed_alive(a) or not self.believed_alive(b):
                return False
        return True

    def heartbeat(self, now: float | None = None):
        """Record a heartbeat from every EF that is actually up."""
        now = self.clock if now is None else now
        for e in self.topology.efs:
            if e.alive:
                self.last_heartbeat[e.id] = now

    def heartbeat_age(self, ef: str) -> float | None:
        last = self.last_heartbeat.get(ef)
        return None if last is None else self.clock - last

    # -- firing -------------------------------------------------------------

    def can_fire(self, node: str) -> bool:
        c = self.containers[node]
        if not self.topology.is_ef_alive(c.ef):
            return False
        if any(not q for q in c.input_queues.values()):
            return False
        return all(self.path_believed_alive(link) for link in self.process.outgoing(node))

    def fire(self, node: str) -> list[DataToken]:
        if not self.can_fire(node):
            raise EngineError(f"{node} cannot fire at t={self.clock}")
        c = self.containers[node]
        spec = self.process.node(node)
        ports = list(c.input_queues)
        depths = [len(c.input_queues[p]) for p in ports]
        taken = [c.input_queues[p].popleft() for p in ports]
        consumed_ids = [t.id for t in taken]
        inputs = tuple(t.payload for t in taken)
        params = dict(c.latched_params)
        try:
            if self._faults[node] > 0:
                self._faults[node] -= 1
                raise OverflowError("injected arithmetic overflow")
            outputs = tuple(resolve(c.impl, self.registry)(inputs, params, len(spec.outputs)))
            if len(outputs) != len(spec.outputs):
                raise ValueError(f"{c.impl} returned {len(outputs)} values for {len(spec.outputs)} outputs")
        except Exception as exc:  # noqa: BLE001 - any failure of the entity is a node error
            self.lost += len(taken)
            rec = self.record(
                "node-error", node=node, ef=c.ef, impl=c.impl, consumed=consumed_ids,
                depths=depths, detail=f"{type(exc).__name__}: {exc}",
            )
            self._errors.append(rec)
            return []
        self.consumed += len(taken)
        if c.last_fired is not None:
            c.interval = self.clock - c.last_fired
        c.last_fired = self.clock

        produced: list[tuple[DataToken, Link]] = []
        for port, value in zip(spec.outputs, outputs):
            for link in self.process.outgoing(node):
                if link.src_port == port:
                    tok = DataToken(next(self._token_ids), value, self.clock, (node, port))
                    produced.append((tok, link))
        self.record(
            "fire", node=node, ef=c.ef, impl=c.impl, consumed=consumed_ids,
            depths=depths, produced=[t.id for t, _ in produced],
        )
        for tok, link in produced:
            self._send(tok, link)
        return [t for t, _ in produced]

    def settle(self) -> list[dict]:
        """Fire everything fireable at the current instant, in node-id order."""
        start = len(self.log)
        progress = True
        while progress:
            progress = False
            for node in self.process.node_ids:
                while self.can_fire(node):
                    self.fire(node)
                    progress = True
        return self.log[start:]

    # -- transport ----------------------------------------------------------

    def _send(self, tok: DataToken, link: Link):
        # counted here so the ledger balances at every logged record
        self.produced += 1
        chain = self.config.link_paths.get(link, ())
        if not chain:
            self._deliver(tok, link)
            return
        ift = InFlightToken(tok, link, tuple(chain), chain[0][0])
        self.in_flight[tok.id] = ift
        self._depart(ift)

    def _depart(self, ift: InFlightToken):
        a, b = ift.remaining[0]
        if self.topology.hop_usable(a, b):
            ift.arrival = self.clock + self.topology.channel(a, b).latency
            ift.ticket = next(self._tickets)
            heapq.heappush(self._heap, (ift.arrival, next(self._seq), "arrive", (ift.token.id, ift.ticket)))
        else:
            ift.arrival = None
            self.record("stall", token=ift.token.id, at=a, hop=[a, b])

    def _arrive(self, token_id: int, ticket: int):
        ift = self.in_flight.get(token_id)
        if ift is None or ift.ticket != ticket:
            return  # dropped or rescheduled since
        a, b = ift.remaining[0]
        if not self.topology.hop_usable(a, b):
            # not acknowledged: the token is still held at the sending EF
            ift.arrival = None
            self.record("stall", token=token_id, at=a, hop=[a, b])
            return
        self.channel_tokens[channel_key(a, b)] += 1
        ift.at = b
        ift.remaining = ift.remaining[1:]
        if ift.remaining:
            self._depart(ift)
        else:
            del self.in_flight[token_id]
            self._deliver(ift.token, ift.link)

    def _deliver(self, tok: DataToken, link: Link):
        q = self.containers[link.dst].input_queues[link.dst_port]
        q.append(tok)
        self.record("deliver", token=tok.id, node=link.dst, port=link.dst_port, depth=len(q))

    def _wake_stalled(self):
        for tid in sorted(self.in_flight):
            ift = self.in_flight[tid]
            if ift.arrival is None and self.topology.hop_usable(*ift.remaining[0]):
                self._depart(ift)

    # -- scheduled inputs ---------------------------------------------------

    def schedule_emission(self, node: str, time: float, payload: Any = None):
        if not self.process.node(node).is_source:
            raise EngineError(f"{node} is not a source node")
        heapq.heappush(self._heap, (time, next(self._seq), "emit", (node, payload)))

    def pending_emissions(self) -> int:
        return sum(1 for entry in self._heap if entry[2] == "emit")

    def _emit(self, node: str, payload: Any):
        c = self.containers[node]
        if not self.topology.is_ef_alive(c.ef):
            self.record("emit-skipped", node=node, ef=c.ef)
            return
        tok = DataToken(next(self._token_ids), payload, self.clock, (node, EXTERNAL_PORT))
        self.produced += 1
        q = c.input_queues[EXTERNAL_PORT]
        q.append(tok)
        self.record("emit", token=tok.id, node=node, depth=len(q))

    # -- control inputs -----------------------------------------------------

    def set_parameter(self, node: str, name: str, value: Any) -> dict:
        if node not in self.containers:
            raise KeyError(f"unknown node {node!r}")
        c = self.containers[node]
        if name not in c.latched_params:
            raise KeyError(f"node {node!r} has no parameter {name!r}")
        c.latched_params[name] = value
        return self.record("set-parameter", node=node, name=name, value=value)

    def inject_fault(self, node: str, count: int = 1) -> dict:
        if node not in self.containers:
            raise KeyError(f"unknown node {node!r}")
        self._faults[node] += count
        return self.record("fault-injected", node=node, count=count)

    def apply_topology_event(self, event: TopologyEvent) -> dict:
        self.topology = apply_topology_event(self.topology, event)
        if event.kind == "ef-added":
            self.last_heartbeat[event.new_ef.id] = self.clock if event.new_ef.alive else None
            if not event.new_ef.alive:
                self.suspected.add(event.new_ef.id)
        self._topology_events.append(event)
        rec = self.record("topology", event=event.kind, **event.describe())
        self._wake_stalled()
        return rec

    def drain_topology_events(self) -> list[TopologyEvent]:
        events, self._topology_events = self._topology_events, []
        return events

    def drain_errors(self) -> list[dict]:
        errors, self._errors = self._errors, []
        return errors

    # -- loop ---------------------------------------------------------------

    def next_event_time(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def step(self) -> list[dict]:
        """Advance to the next scheduled instant and process everything due then."""
        if not self._heap:
            return []
        start = len(self.log)
        now = self._heap[0][0]
        self.clock = max(self.clock, now)
        while self._heap and self._heap[0][0] == now:
            _, _, kind, ref = heapq.heappop(self._heap)
            if kind == "arrive":
                self._arrive(*ref)
            elif kind == "emit":
                self._emit(*ref)
        self.settle()
        return self.log[start:]

    def run_until(self, time: float) -> list[dict]:
        start = len(self.log)
        while self._heap and self._heap[0][0] <= time:
            self.step()
        self.clock = max(self.clock, time)
        return self.log[start:]

    # -- sensors ------------------------------------------------------------

    def read_sensors(self) -> SensorReading:
        depths = {}
        intervals = {}
        for node in self.process.node_ids:
            c = self.containers[node]
            intervals[node] = c.interval
            for port, q in c.input_queues.items():
                depths[f"{node}.{port}"] = len(q)
        return SensorReading(
            time=self.clock,
            intervals=intervals,
            depths=depths,
            channel_tokens={f"{a}|{b}": n for (a, b), n in sorted(self.channel_tokens.items())},
            heartbeat_age={e.id: self.heartbeat_age(e.id) for e in self.topology.efs},
        )

    def stranded(self) -> bool:
        """Quiescent with data stuck: nothing can fire, nothing moves, nothing scheduled."""
        if self.in_flight or self.pending_emissions():
            return False
        if not any(c.queued() for c in self.containers.values()):
            return False
        return not any(self.can_fire(n) for n in self.process.node_ids)


def deploy(
    config: Configuration,
    process: FusionProcess,
    topology: Topology,
    eligibility: Mapping[str, Any] | None = None,
    registry: Mapping[str, Implementation] | None = None,
    seed: int = 0,
) -> Runtime:
    """Create one container per node on its assigned EF, queues empty, clock at 0."""
    problem = PlacementProblem.build(process, topology, eligibility)
    ok, violations = is_admissible(config, problem)
    if not ok:
        raise InadmissibleConfiguration(violations)
    rt = Runtime(process, config, topology, registry=registry, seed=seed)
    rt.record("deploy", generation=config.generation, **_plan_fields(config))
    return rt


def _plan_fields(config: Configuration) -> dict:
    d = config.to_dict()
    return {"assignment": d["assignment"], "impls": d["impls"], "paths": d["paths"]}
