"""Configuration selection as a small constraint problem.

Variables are node -> EF assignments. Constraints: per-node eligibility,
per-EF memory, and existence of a channel chain for every link. Link chains
are never searched: they are read from the precomputed shortest-path table.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .graph import FusionProcess, Link, Violation
from .topology import Chain, PathTable, Topology, channel_key, compute_path_table

Composition = Callable[[float, float], float]


@dataclass(frozen=True)
class CostWeights:
    distribution: float = 1.0
    communication: float = 1.0

    def __post_init__(self):
        if self.distribution < 0 or self.communication < 0:
            raise ValueError("cost weights must be non-negative")


@dataclass(frozen=True)
class Configuration:
    assignment: Mapping[str, str]
    link_paths: Mapping[Link, Chain]
    impls: Mapping[str, str] = field(default_factory=dict)
    generation: int = 0

    def same_plan(self, other: "Configuration | None") -> bool:
        """Equal up to the generation number."""
        return (
            other is not None
            and dict(self.assignment) == dict(other.assignment)
            and dict(self.impls) == dict(other.impls)
            and dict(self.link_paths) == dict(other.link_paths)
        )

    def with_generation(self, generation: int) -> "Configuration":
        return Configuration(dict(self.assignment), dict(self.link_paths), dict(self.impls), generation)

    def with_impl(self, node: str, impl: str) -> "Configuration":
        impls = dict(self.impls)
        impls[node] = impl
        return Configuration(dict(self.assignment), dict(self.link_paths), impls, self.generation)

    def uses_ef(self, ef: str) -> bool:
        if ef in self.assignment.values():
            return True
        return any(ef in hop for chain in self.link_paths.values() for hop in chain)

    def channels_used(self) -> set[tuple[str, str]]:
        return {channel_key(*hop) for chain in self.link_paths.values() for hop in chain}

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "assignment": {n: self.assignment[n] for n in sorted(self.assignment)},
            "impls": {n: self.impls[n] for n in sorted(self.impls)},
            "paths": {str(l): [list(h) for h in self.link_paths[l]] for l in sorted(self.link_paths)},
        }


@dataclass
class PlacementProblem:
    process: FusionProcess
    topology: Topology
    paths: PathTable
    eligibility: dict[str, frozenset[str]]
    channel_weights: dict[tuple[str, str], float] = field(default_factory=dict)
    weights: CostWeights = field(default_factory=CostWeights)
    compose: Composition | None = None

    @classmethod
    def build(
        cls,
        process: FusionProcess,
        topology: Topology,
        eligibility: Mapping[str, Iterable[str]] | None = None,
        channel_weights: Mapping[tuple[str, str], float] | None = None,
        weights: CostWeights | None = None,
        compose: Composition | None = None,
        paths: PathTable | None = None,
    ) -> "PlacementProblem":
        """Fill in defaults: nodes without an eligibility entry may go anywhere."""
        eligibility = eligibility or {}
        elig = {
            n: frozenset(eligibility[n]) if n in eligibility else frozenset(topology.ef_ids)
            for n in process.node_ids
        }
        alphas = {channel_key(*k): float(v) for k, v in (channel_weights or {}).items()}
        for k, v in alphas.items():
            if not v > 0:
                raise ValueError(f"channel weight for {k} must be positive")
        if paths is None or paths.is_stale(topology):
            paths = compute_path_table(topology)
        return cls(process, topology, paths, elig, alphas, weights or CostWeights(), compose)

    def candidates(self, node: str) -> list[str]:
        return sorted(e for e in self.eligibility[node] if self.topology.is_ef_alive(e))

    def efs(self) -> list[str]:
        """The EF set used by the distribution cost: every alive EF."""
        return self.topology.alive_efs()

    def alpha(self, key: tuple[str, str]) -> float:
        return self.channel_weights.get(channel_key(*key), 1.0)

    def h(self, c_d: float, c_c: float) -> float:
        if self.compose is not None:
            return self.compose(c_d, c_c)
        return self.weights.distribution * c_d + self.weights.communication * c_c


def configuration_from_assignment(
    p: PlacementProblem,
    assignment: Mapping[str, str],
    impls: Mapping[str, str] | None = None,
    generation: int = 0,
) -> Configuration:
    """Attach table chains (and default implementations) to an assignment.

    Links whose endpoints have no route are left out; ``is_admissible`` then
    reports them.
    """
    link_paths = {}
    for link in p.process.links:
        a, b = assignment.get(link.src), assignment.get(link.dst)
        if a is None or b is None:
            continue
        chain = p.paths.chain(a, b)
        if chain is not None:
            link_paths[link] = chain
    chosen = {n.id: n.default_impl for n in p.process.nodes}
    if impls:
        chosen.update(impls)
    return Configuration(dict(assignment), link_paths, chosen, generation)


def is_admissible(c: Configuration, p: PlacementProblem) -> tuple[bool, list[Violation]]:
    found: list[Violation] = []
    t = p.topology
    for n in p.process.nodes:
        ef = c.assignment.get(n.id)
        if ef is None:
            found.append(Violation("assignment", n.id, "node is not assigned"))
            continue
        if not t.has_ef(ef):
            found.append(Violation("unknown-ef", n.id, f"assigned to unknown EF {ef}"))
            continue
        if not t.is_ef_alive(ef):
            found.append(Violation("dead-ef", n.id, f"assigned to dead EF {ef}"))
        if ef not in p.eligibility.get(n.id, ()):
            found.append(Violation("eligibility", n.id, f"{ef} is not eligible"))
        impl = c.impls.get(n.id, n.default_impl)
        if impl not in n.impls:
            found.append(Violation("impl", n.id, f"unknown implementation {impl}"))
    for extra in sorted(set(c.assignment) - set(p.process.node_ids)):
        found.append(Violation("assignment", extra, "not a node of the process"))

    load = Counter()
    for n in p.process.nodes:
        if n.id in c.assignment:
            load[c.assignment[n.id]] += n.memory_demand
    for ef, used in sorted(load.items()):
        if t.has_ef(ef) and used > t.ef(ef).memory_capacity:
            found.append(Violation("memory", ef, f"demand {used} > capacity {t.ef(ef).memory_capacity}"))

    for link in p.process.links:
        a, b = c.assignment.get(link.src), c.assignment.get(link.dst)
        if a is None or b is None:
            continue
        expected = p.paths.chain(a, b)
        if expected is None:
            found.append(Violation("path", str(link), f"no alive chain {a}->{b}"))
        elif c.link_paths.get(link) != expected:
            found.append(Violation("chain", str(link), "chain differs from the shortest-path table"))
    return not found, found


def cost_distribution(c: Configuration, efs: Iterable[str]) -> int:
    """Spread of node counts: max n(e) - min n(e) over the EF set."""
    efs = list(efs)
    if not efs:
        return 0
    counts = Counter(c.assignment.values())
    per_ef = [counts.get(e, 0) for e in efs]
    return max(per_ef) - min(per_ef)


def cost_communication(c: Configuration, alpha: Mapping[tuple[str, str], float] | None = None) -> float:
    """Weighted channel usage: sum over channels of alpha_u * (links crossing u)."""
    alpha = alpha or {}
    usage = Counter()
    for link, chain in c.link_paths.items():
        for hop in chain:
            usage[channel_key(*hop)] += 1
    return sum(alpha.get(u, 1.0) * n for u, n in sorted(usage.items()))


def total_cost(c: Configuration, p: PlacementProblem) -> float:
    return p.h(cost_distribution(c, p.efs()), cost_communication(c, p.channel_weights))


def cost_breakdown(c: Configuration, p: PlacementProblem) -> dict:
    c_d = cost_distribution(c, p.efs())
    c_c = cost_communication(c, p.channel_weights)
    return {"distribution": c_d, "communication": c_c, "total": p.h(c_d, c_c)}


class _Search:
    """Depth-first search in node-id order, EF candidates in id order."""

    def __init__(self, p: PlacementProblem):
        self.p = p
        self.nodes = p.process.node_ids
        self.cands = [p.candidates(n) for n in self.nodes]
        self.demand = [p.process.node(n).memory_demand for n in self.nodes]
        pos = {n: i for i, n in enumerate(self.nodes)}
        # links become checkable once their later endpoint is fixed
        self.closing: list[list[Link]] = [[] for _ in self.nodes]
        for link in p.process.links:
            if link.src in pos and link.dst in pos:
                self.closing[max(pos[link.src], pos[link.dst])].append(link)
        self.assigned: dict[str, str] = {}
        self.load = Counter()

    def _close_links(self, depth: int) -> float | None:
        """Communication cost added by links closed at ``depth``; None if a link has no chain."""
        added = 0.0
        for link in self.closing[depth]:
            chain = self.p.paths.chain(self.assigned[link.src], self.assigned[link.dst])
            if chain is None:
                return None
            for hop in chain:
                added += self.p.alpha(hop)
        return added

    def walk(self, depth: int = 0, partial_cc: float = 0.0):
        """Yield (assignment, partial communication cost) for every admissible leaf."""
        if depth == len(self.nodes):
            yield dict(self.assigned), partial_cc
            return
        node = self.nodes[depth]
        cap = self.p.topology
        for ef in self.cands[depth]:
            if self.load[ef] + self.demand[depth] > cap.ef(ef).memory_capacity:
                continue
            self.assigned[node] = ef
            self.load[ef] += self.demand[depth]
            added = self._close_links(depth)
            if added is not None:
                if not self.prune(partial_cc + added):
                    yield from self.walk(depth + 1, partial_cc + added)
            self.load[ef] -= self.demand[depth]
            del self.assigned[node]

    def prune(self, partial_cc: float) -> bool:
        return False


def find_first_admissible(p: PlacementProblem) -> Configuration | None:
    """First admissible assignment in the fixed search order, or None."""
    search = _Search(p)
    if any(not c for c in search.cands):
        return None
    for assignment, _ in search.walk():
        return configuration_from_assignment(p, assignment)
    return None


class _BranchAndBound(_Search):
    def __init__(self, p: PlacementProblem):
        super().__init__(p)
        self.best_cost = math.inf

    def prune(self, partial_cc: float) -> bool:
        if self.best_cost == math.inf:
            return False
        # compose is assumed non-decreasing in both arguments
        bound = self.p.h(0, partial_cc)
        return bound > self.best_cost + 1e-9 * max(1.0, abs(self.best_cost))


def find_optimal(p: PlacementProblem) -> Configuration | None:
    """Minimal-cost admissible configuration; ties go to the lexicographically first assignment."""
    search = _BranchAndBound(p)
    if any(not c for c in search.cands):
        return None
    best = None
    for assignment, _ in search.walk():
        config = configuration_from_assignment(p, assignment)
        cost = total_cost(config, p)
        if cost < search.best_cost:
            best, search.best_cost = config, cost
    return best
