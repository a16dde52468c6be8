"""Small factories for processes, topologies and random instances."""
from __future__ import annotations

import random

from fusionsim.graph import FusionNodeSpec, make_process
from fusionsim.placement import CostWeights, PlacementProblem
from fusionsim.topology import Channel, ExecutionFramework, Topology


def node(id, inputs=(), outputs=(), params=None, impls=("identity",), memory=1):
    return FusionNodeSpec(id, tuple(inputs), tuple(outputs), params or {}, tuple(impls), memory)


def chain_process(*ids, impls=("identity",), memory=1):
    """Linear pipeline ids[0] -> ids[1] -> ... ; the last node is a sink."""
    nodes = []
    for i, n in enumerate(ids):
        ins = ("in",) if i else ()
        outs = ("out",) if i < len(ids) - 1 else ()
        nodes.append(node(n, ins, outs, impls=impls if i else ("identity",), memory=memory))
    links = [(f"{a}.out", f"{b}.in") for a, b in zip(ids, ids[1:])]
    return make_process(nodes, links)


def topo(efs, channels=(), memory=10):
    """``efs`` are ids (or ExecutionFramework); ``channels`` are (a, b) or (a, b, cost)."""
    built = [e if isinstance(e, ExecutionFramework) else ExecutionFramework(e, memory_capacity=memory) for e in efs]
    chans = []
    for c in channels:
        if isinstance(c, Channel):
            chans.append(c)
        else:
            chans.append(Channel(c[0], c[1], c[2] if len(c) > 2 else 1))
    return Topology.build(built, chans)


def random_connected_topology(rng: random.Random, n: int, max_cost: int = 5, extra: float = 0.3):
    ids = [f"e{i}" for i in range(n)]
    chans = {}
    for i in range(1, n):
        j = rng.randrange(i)
        chans[(ids[j], ids[i])] = rng.randint(1, max_cost)
    for i in range(n):
        for j in range(i + 1, n):
            if (ids[i], ids[j]) not in chans and rng.random() < extra:
                chans[(ids[i], ids[j])] = rng.randint(1, max_cost)
    return topo(ids, [(a, b, c) for (a, b), c in chans.items()])


def random_dag_process(rng: random.Random, n: int):
    """Random DAG: node i>0 takes 1 or 2 inputs from earlier nodes; all nodes have one output."""
    ids = [f"n{i}" for i in range(n)]
    nodes, links = [], []
    for i, nid in enumerate(ids):
        ins = ()
        if i:
            k = 1 if i == 1 or rng.random() < 0.7 else 2
            ins = tuple(f"in{p}" for p in range(k))
            for port in ins:
                links.append((f"{ids[rng.randrange(i)]}.out", f"{nid}.{port}"))
        nodes.append(node(nid, ins, ("out",), memory=rng.randint(0, 2)))
    return make_process(nodes, links)


def random_problem(rng: random.Random, max_nodes: int = 5, max_efs: int = 4):
    """Random placement instance: eligibility, capacities, channel weights and cost weights."""
    n = rng.randint(1, max_nodes)
    m = rng.randint(1, max_efs)
    process = random_dag_process(rng, n)
    ids = [f"e{i}" for i in range(m)]
    efs = [ExecutionFramework(e, memory_capacity=rng.randint(0, 4), alive=rng.random() > 0.1) for e in ids]
    chans = []
    for i in range(m):
        for j in range(i + 1, m):
            if rng.random() < 0.6:
                chans.append(Channel(ids[i], ids[j], rng.randint(1, 3), alive=rng.random() > 0.1))
    t = Topology.build(efs, chans)
    elig = {nid: rng.sample(ids, rng.randint(1, m)) for nid in process.node_ids}
    alphas = {c.key: rng.choice([1, 2, 3, 0.5]) for c in chans if rng.random() < 0.5}
    weights = CostWeights(rng.choice([0, 0.5, 1, 2, 3]), rng.choice([0, 0.5, 1, 2, 3]))
    return PlacementProblem.build(process, t, elig, alphas, weights)
