"""Fusion process model.

A fusion process is a discrete dataflow graph: nodes are fusion functions with
input, parameter and output ports, edges link an output port to an input port.
Everything here is immutable and side-effect free.
"""
from __future__ import annotations

import heapq
from collections import Counter, defaultdict, deque
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Iterable, Mapping


@dataclass(frozen=True)
class FusionNodeSpec:
    """Static description of one fusion function."""

    id: str
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    params: tuple[tuple[str, Any], ...] = ()
    impls: tuple[str, ...] = ("identity",)
    memory_demand: int = 1

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "impls", tuple(self.impls))
        params = self.params
        if isinstance(params, Mapping):
            params = params.items()
        object.__setattr__(self, "params", tuple((str(k), v) for k, v in params))

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.params)

    @property
    def param_defaults(self) -> dict[str, Any]:
        return dict(self.params)

    @property
    def is_source(self) -> bool:
        return not self.inputs

    @property
    def is_sink(self) -> bool:
        return not self.outputs

    @property
    def default_impl(self) -> str | None:
        return self.impls[0] if self.impls else None


@dataclass(frozen=True, order=True)
class Link:
    """Connection from an output port of one node to an input port of another."""

    src: str
    src_port: str
    dst: str
    dst_port: str

    @classmethod
    def parse(cls, src: str, dst: str) -> "Link":
        """Build a link from ``"node.port"`` endpoint strings."""
        s_node, _, s_port = src.partition(".")
        d_node, _, d_port = dst.partition(".")
        if not (s_node and s_port and d_node and d_port):
            raise ValueError(f"link endpoints must look like node.port: {src!r} -> {dst!r}")
        return cls(s_node, s_port, d_node, d_port)

    def __str__(self) -> str:
        return f"{self.src}.{self.src_port}->{self.dst}.{self.dst_port}"


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.kind}: {self.subject}" + (f" ({self.detail})" if self.detail else "")


@dataclass(frozen=True)
class FusionProcess:
    nodes: tuple[FusionNodeSpec, ...] = ()
    links: tuple[Link, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "links", tuple(sorted(set(self.links))))

    @cached_property
    def _by_id(self) -> dict[str, FusionNodeSpec]:
        return {n.id: n for n in self.nodes}

    def node(self, node_id: str) -> FusionNodeSpec:
        return self._by_id[node_id]

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._by_id

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    @cached_property
    def _outgoing(self) -> dict[str, tuple[Link, ...]]:
        out = defaultdict(list)
        for link in self.links:
            out[link.src].append(link)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def _incoming(self) -> dict[str, tuple[Link, ...]]:
        inc = defaultdict(list)
        for link in self.links:
            inc[link.dst].append(link)
        return {k: tuple(v) for k, v in inc.items()}

    def outgoing(self, node_id: str) -> tuple[Link, ...]:
        return self._outgoing.get(node_id, ())

    def incoming(self, node_id: str) -> tuple[Link, ...]:
        return self._incoming.get(node_id, ())


def validate_process(p: FusionProcess) -> list[Violation]:
    """Return every structural problem of ``p``; an empty list means valid."""
    found: list[Violation] = []
    ids = Counter(n.id for n in p.nodes)
    for node_id, count in sorted(ids.items()):
        if count > 1:
            found.append(Violation("duplicate-node", node_id, f"{count} definitions"))

    for n in p.nodes:
        for label, names in (("inputs", n.inputs), ("params", n.param_names), ("outputs", n.outputs)):
            for name, count in sorted(Counter(names).items()):
                if count > 1:
                    found.append(Violation("duplicate-port", f"{n.id}.{name}", label))
        if not n.impls:
            found.append(Violation("no-impl", n.id, "at least one implementation is required"))
        if n.memory_demand < 0:
            found.append(Violation("memory", n.id, f"negative demand {n.memory_demand}"))
        if not n.inputs and not n.outputs:
            found.append(Violation("degenerate", n.id, "node has neither inputs nor outputs"))

    fan_in: Counter = Counter()
    for link in p.links:
        src = p._by_id.get(link.src)
        dst = p._by_id.get(link.dst)
        if src is None or link.src_port not in src.outputs:
            found.append(Violation("dangling-link", str(link), f"no output port {link.src}.{link.src_port}"))
        if dst is None or link.dst_port not in dst.inputs:
            found.append(Violation("dangling-link", str(link), f"no input port {link.dst}.{link.dst_port}"))
        fan_in[(link.dst, link.dst_port)] += 1
    for (node_id, port), count in sorted(fan_in.items()):
        if count > 1:
            found.append(Violation("fan-in > 1", f"{node_id}.{port}", f"{count} links"))
    for n in p.nodes:
        for port in n.inputs:
            if fan_in[(n.id, port)] == 0:
                found.append(Violation("unlinked-input", f"{n.id}.{port}"))

    cyclic = _cyclic_nodes(p)
    if cyclic:
        found.append(Violation("cycle", ",".join(cyclic)))

    reached = _reachable_from_sources(p)
    for n in p.nodes:
        if n.inputs and n.id not in reached:
            found.append(Violation("unreachable", n.id, "not fed by any source"))
    return found


def _edges(p: FusionProcess) -> dict[str, set[str]]:
    succ: dict[str, set[str]] = {n.id: set() for n in p.nodes}
    for link in p.links:
        if link.src in succ and link.dst in succ:
            succ[link.src].add(link.dst)
    return succ


def _cyclic_nodes(p: FusionProcess) -> list[str]:
    succ = _edges(p)
    indeg = Counter()
    for dsts in succ.values():
        for d in dsts:
            indeg[d] += 1
    queue = deque(sorted(n for n in succ if indeg[n] == 0))
    seen = set()
    while queue:
        n = queue.popleft()
        seen.add(n)
        for d in sorted(succ[n]):
            indeg[d] -= 1
            if indeg[d] == 0:
                queue.append(d)
    left = set(succ) - seen
    # peel off nodes that only lead out of the cyclic core
    changed = True
    while changed:
        changed = False
        for n in sorted(left):
            if not succ[n] & left:
                left.discard(n)
                changed = True
    return sorted(left)


def _reachable_from_sources(p: FusionProcess) -> set[str]:
    succ = _edges(p)
    stack = [n.id for n in p.nodes if n.is_source]
    seen = set(stack)
    while stack:
        for d in succ[stack.pop()]:
            if d not in seen:
                seen.add(d)
                stack.append(d)
    return seen


def sources(p: FusionProcess) -> list[str]:
    return [n.id for n in p.nodes if n.is_source]


def sinks(p: FusionProcess) -> list[str]:
    return [n.id for n in p.nodes if n.is_sink]


def topological_order(p: FusionProcess) -> list[str]:
    """Kahn's algorithm, smallest id first among ready nodes."""
    succ = _edges(p)
    indeg = Counter()
    for dsts in succ.values():
        for d in dsts:
            indeg[d] += 1
    ready = [n for n in succ if indeg[n] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for d in succ[n]:
            indeg[d] -= 1
            if indeg[d] == 0:
                heapq.heappush(ready, d)
    if len(order) != len(succ):
        raise ValueError("process graph has a cycle")
    return order


def make_process(nodes: Iterable[FusionNodeSpec], links: Iterable[Link | tuple[str, str]]) -> FusionProcess:
    """Convenience constructor accepting ``("a.out", "b.in")`` link pairs."""
    parsed = [l if isinstance(l, Link) else Link.parse(*l) for l in links]
    return FusionProcess(tuple(nodes), tuple(parsed))
