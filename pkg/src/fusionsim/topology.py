"""Execution support: execution frameworks (EFs), channels and shortest chains.

The execution graph is undirected. Dead elements stay in the topology with
``alive=False`` so that they can come back under the same id.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable

Hop = tuple[str, str]
Chain = tuple[Hop, ...]


class UnknownElementError(KeyError):
    pass


def channel_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class ExecutionFramework:
    id: str
    machine: str = ""
    host: str = ""
    memory_capacity: int = 10
    alive: bool = True


@dataclass(frozen=True)
class Channel:
    a: str
    b: str
    cost: float = 1
    latency: float = 1
    alive: bool = True

    def __post_init__(self):
        a, b = channel_key(self.a, self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def key(self) -> tuple[str, str]:
        return (self.a, self.b)

    def other(self, ef: str) -> str:
        return self.b if ef == self.a else self.a


@dataclass(frozen=True)
class Topology:
    efs: tuple[ExecutionFramework, ...] = ()
    channels: tuple[Channel, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "efs", tuple(sorted(self.efs, key=lambda e: e.id)))
        object.__setattr__(self, "channels", tuple(sorted(self.channels, key=lambda c: c.key)))

    @classmethod
    def build(cls, efs: Iterable[ExecutionFramework], channels: Iterable[Channel] = ()) -> "Topology":
        """Construct and check a topology, raising ``ValueError`` on bad input."""
        t = cls(tuple(efs), tuple(channels))
        problems = check_topology(t)
        if problems:
            raise ValueError("; ".join(problems))
        return t

    @cached_property
    def _ef_map(self) -> dict[str, ExecutionFramework]:
        return {e.id: e for e in self.efs}

    @cached_property
    def _channel_map(self) -> dict[tuple[str, str], Channel]:
        return {c.key: c for c in self.channels}

    @property
    def ef_ids(self) -> list[str]:
        return [e.id for e in self.efs]

    def ef(self, ef_id: str) -> ExecutionFramework:
        try:
            return self._ef_map[ef_id]
        except KeyError:
            raise UnknownElementError(f"unknown EF {ef_id!r}") from None

    def has_ef(self, ef_id: str) -> bool:
        return ef_id in self._ef_map

    def channel(self, a: str, b: str) -> Channel:
        try:
            return self._channel_map[channel_key(a, b)]
        except KeyError:
            raise UnknownElementError(f"unknown channel {a!r}-{b!r}") from None

    def has_channel(self, a: str, b: str) -> bool:
        return channel_key(a, b) in self._channel_map

    def alive_efs(self) -> list[str]:
        return [e.id for e in self.efs if e.alive]

    def is_ef_alive(self, ef_id: str) -> bool:
        e = self._ef_map.get(ef_id)
        return e is not None and e.alive

    def hop_usable(self, a: str, b: str) -> bool:
        """A hop can carry data iff the channel and both endpoint EFs are alive."""
        c = self._channel_map.get(channel_key(a, b))
        return c is not None and c.alive and self.is_ef_alive(a) and self.is_ef_alive(b)

    def alive_channels(self) -> list[Channel]:
        return [c for c in self.channels if c.alive and self.is_ef_alive(c.a) and self.is_ef_alive(c.b)]

    def with_ef(self, ef: ExecutionFramework) -> "Topology":
        efs = [e for e in self.efs if e.id != ef.id] + [ef]
        return Topology(tuple(efs), self.channels)

    def with_channel(self, channel: Channel) -> "Topology":
        chans = [c for c in self.channels if c.key != channel.key] + [channel]
        return Topology(self.efs, tuple(chans))

    def with_dead_efs(self, dead: Iterable[str]) -> "Topology":
        dead = set(dead)
        if not dead:
            return self
        efs = tuple(replace(e, alive=False) if e.id in dead else e for e in self.efs)
        return Topology(efs, self.channels)

    def fingerprint(self) -> tuple:
        return (
            tuple((e.id, e.alive) for e in self.efs),
            tuple((c.key, c.cost, c.alive) for c in self.channels),
        )


def check_topology(t: Topology) -> list[str]:
    problems = []
    seen = set()
    for e in t.efs:
        if e.id in seen:
            problems.append(f"duplicate EF {e.id!r}")
        seen.add(e.id)
        if e.memory_capacity < 0:
            problems.append(f"EF {e.id!r} has negative memory capacity")
    keys = set()
    for c in t.channels:
        if c.a == c.b:
            problems.append(f"channel {c.a!r}-{c.b!r} connects an EF to itself")
        if c.key in keys:
            problems.append(f"duplicate channel {c.a!r}-{c.b!r}")
        keys.add(c.key)
        for end in c.key:
            if end not in seen:
                problems.append(f"channel {c.a!r}-{c.b!r} references unknown EF {end!r}")
        if not c.cost > 0:
            problems.append(f"channel {c.a!r}-{c.b!r} must have positive cost")
        if c.latency < 0:
            problems.append(f"channel {c.a!r}-{c.b!r} has negative latency")
    return problems


@dataclass(frozen=True)
class TopologyEvent:
    kind: str  # ef-down | ef-up | channel-down | channel-up | ef-added
    ef: str | None = None
    channel: tuple[str, str] | None = None
    new_ef: ExecutionFramework | None = None
    new_channels: tuple[Channel, ...] = ()

    KINDS = ("ef-down", "ef-up", "channel-down", "channel-up", "ef-added")

    def describe(self) -> dict:
        if self.kind.startswith("channel"):
            return {"channel": list(channel_key(*self.channel))}
        if self.kind == "ef-added":
            return {"ef": self.new_ef.id, "channels": [list(c.key) for c in self.new_channels]}
        return {"ef": self.ef}


def apply_topology_event(t: Topology, event: TopologyEvent) -> Topology:
    """Return the topology after ``event``; raises UnknownElementError for bad ids."""
    kind = event.kind
    if kind in ("ef-down", "ef-up"):
        ef = t.ef(event.ef)
        return t.with_ef(replace(ef, alive=(kind == "ef-up")))
    if kind in ("channel-down", "channel-up"):
        ch = t.channel(*event.channel)
        return t.with_channel(replace(ch, alive=(kind == "channel-up")))
    if kind == "ef-added":
        if event.new_ef is None:
            raise ValueError("ef-added needs an EF description")
        if t.has_ef(event.new_ef.id):
            raise ValueError(f"EF {event.new_ef.id!r} already exists")
        t = t.with_ef(event.new_ef)
        for ch in event.new_channels:
            if event.new_ef.id not in ch.key:
                raise ValueError(f"channel {ch.a!r}-{ch.b!r} does not touch the added EF")
            t.ef(ch.other(event.new_ef.id))
            if t.has_channel(ch.a, ch.b):
                raise ValueError(f"duplicate channel {ch.a!r}-{ch.b!r}")
            t = t.with_channel(ch)
        return t
    raise ValueError(f"unknown topology event kind {kind!r}")


def _close(a: float, b: float) -> bool:
    return a == b or math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)


class PathTable:
    """All-pairs minimal costs and one canonical channel chain per EF pair.

    Pairs with no alive route are absent.
    """

    def __init__(self, dist: dict[tuple[str, str], float], chains: dict[tuple[str, str], Chain], fingerprint: tuple):
        self._dist = dist
        self._chains = chains
        self.fingerprint = fingerprint

    def distance(self, a: str, b: str) -> float | None:
        return self._dist.get((a, b))

    def chain(self, a: str, b: str) -> Chain | None:
        return self._chains.get((a, b))

    def has_path(self, a: str, b: str) -> bool:
        return (a, b) in self._dist

    def pairs(self) -> list[tuple[str, str]]:
        return sorted(self._dist)

    def is_stale(self, t: Topology) -> bool:
        return t.fingerprint() != self.fingerprint

    def as_dict(self) -> dict:
        return {
            f"{a}->{b}": {"cost": self._dist[(a, b)], "chain": [list(h) for h in self._chains[(a, b)]]}
            for a, b in self.pairs()
        }

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PathTable) and self._dist == other._dist and self._chains == other._chains


def compute_path_table(t: Topology) -> PathTable:
    """Floyd-Warshall over the alive execution graph.

    Chains are rebuilt greedily from the distance matrix: at every EF the next
    hop is the smallest-id neighbour lying on some shortest route, which gives
    the lexicographically smallest EF sequence among all minimal chains.
    """
    nodes = t.alive_efs()
    index = {e: i for i, e in enumerate(nodes)}
    n = len(nodes)
    inf = math.inf
    dist = [[inf] * n for _ in range(n)]
    for i in range(n):
        dist[i][i] = 0
    adj: dict[str, list[tuple[str, float]]] = {e: [] for e in nodes}
    for c in t.alive_channels():
        i, j = index[c.a], index[c.b]
        if c.cost < dist[i][j]:
            dist[i][j] = dist[j][i] = c.cost
        adj[c.a].append((c.b, c.cost))
        adj[c.b].append((c.a, c.cost))
    for e in adj:
        adj[e].sort()

    for k in range(n):
        dk = dist[k]
        for i in range(n):
            dik = dist[i][k]
            if dik == inf:
                continue
            di = dist[i]
            for j in range(n):
                via = dik + dk[j]
                if via < di[j]:
                    di[j] = via

    table: dict[tuple[str, str], float] = {}
    chains: dict[tuple[str, str], Chain] = {}
    for s in nodes:
        for d in nodes:
            cost = dist[index[s]][index[d]]
            if cost == inf:
                continue
            table[(s, d)] = cost
            chains[(s, d)] = _rebuild_chain(s, d, adj, dist, index)
    return PathTable(table, chains, t.fingerprint())


def _rebuild_chain(s, d, adj, dist, index) -> Chain:
    hops = []
    cur = s
    di = index[d]
    while cur != d:
        remaining = dist[index[cur]][di]
        for nxt, cost in adj[cur]:
            if _close(cost + dist[index[nxt]][di], remaining):
                hops.append((cur, nxt))
                cur = nxt
                break
        else:  # pragma: no cover - distances come from the same graph
            raise RuntimeError(f"cannot rebuild chain {s}->{d}")
    return tuple(hops)
