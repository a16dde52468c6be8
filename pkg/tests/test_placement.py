import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import chain_process, node, random_problem, topo
from oracles import brute_force_optimum, chain_tally, enumerate_placements, histogram_spread
from fusionsim.graph import make_process
from fusionsim.placement import (
    Configuration,
    CostWeights,
    PlacementProblem,
    configuration_from_assignment,
    cost_breakdown,
    cost_communication,
    cost_distribution,
    find_first_admissible,
    find_optimal,
    is_admissible,
    total_cost,
)
from fusionsim.topology import ExecutionFramework


def oracle_args(p: PlacementProblem):
    nodes = p.process.node_ids
    efs = p.efs()
    demand = {n: p.process.node(n).memory_demand for n in nodes}
    capacity = {e.id: e.memory_capacity for e in p.topology.efs}
    links = [(l.src, l.dst) for l in p.process.links]
    chains = {k: p.paths.chain(*k) for k in p.paths.pairs()}
    return nodes, efs, p.eligibility, demand, capacity, links, chains


def oracle_first(p):
    nodes, efs, elig, demand, capacity, links, chains = oracle_args(p)
    return next(enumerate_placements(nodes, efs, elig, demand, capacity, links, chains), None)


def oracle_best(p):
    nodes, efs, elig, demand, capacity, links, chains = oracle_args(p)
    return brute_force_optimum(nodes, efs, elig, demand, capacity, links, chains,
                               p.channel_weights, p.weights.distribution, p.weights.communication)


def two_node_problem(weights):
    p = chain_process("a", "b")
    return PlacementProblem.build(p, topo(["e1", "e2"], [("e1", "e2")]), weights=weights)


def caps_topology(caps):
    ids = sorted(caps)
    return topo([ExecutionFramework(e, memory_capacity=caps[e]) for e in ids], list(zip(ids, ids[1:])))


# -- admissibility ----------------------------------------------------------

def test_all_on_one_ef_admissible():
    p = PlacementProblem.build(chain_process("a", "b", "c"), topo(["big", "other"], [("big", "other")]))
    c = configuration_from_assignment(p, {"a": "big", "b": "big", "c": "big"})
    assert is_admissible(c, p) == (True, [])
    assert all(chain == () for chain in c.link_paths.values())


def test_eligibility_violation():
    p = PlacementProblem.build(chain_process("a", "b"), topo(["e1", "e2"], [("e1", "e2")]),
                               eligibility={"b": ["e2"]})
    ok, found = is_admissible(configuration_from_assignment(p, {"a": "e1", "b": "e1"}), p)
    assert not ok and [v.kind for v in found] == ["eligibility"]


def test_memory_violation():
    proc = make_process([node("a", outputs=("o",), memory=3), node("b", ("i",), memory=3)], [("a.o", "b.i")])
    t = topo(["e"], memory=5)
    p = PlacementProblem.build(proc, t)
    ok, found = is_admissible(configuration_from_assignment(p, {"a": "e", "b": "e"}), p)
    assert not ok and [v.kind for v in found] == ["memory"]
    assert "6 > capacity 5" in found[0].detail


def test_assignment_path_and_dead_violations():
    t = topo(["e1", "e2", "e3"], [("e1", "e2")])
    p = PlacementProblem.build(chain_process("a", "b"), t)
    ok, found = is_admissible(configuration_from_assignment(p, {"a": "e1"}), p)
    assert [v.kind for v in found] == ["assignment"]
    ok, found = is_admissible(configuration_from_assignment(p, {"a": "e1", "b": "e3"}), p)
    assert [v.kind for v in found] == ["path"]
    t2 = t.with_dead_efs(["e2"])
    p2 = PlacementProblem.build(chain_process("a", "b"), t2)
    ok, found = is_admissible(configuration_from_assignment(p2, {"a": "e2", "b": "e2"}), p2)
    assert "dead-ef" in [v.kind for v in found]


def test_chain_must_match_table():
    t = topo(["a", "b", "c"], [("a", "b"), ("b", "c"), ("a", "c", 5)])
    p = PlacementProblem.build(chain_process("x", "y"), t)
    good = configuration_from_assignment(p, {"x": "a", "y": "c"})
    link = p.process.links[0]
    bad = Configuration(good.assignment, {link: (("a", "c"),)}, good.impls)
    assert is_admissible(good, p)[0]
    assert [v.kind for v in is_admissible(bad, p)[1]] == ["chain"]


# -- cost model ---------------------------------------------------------------

def test_cd_balanced_and_skewed():
    c = Configuration({"a": "e1", "b": "e1", "c": "e2", "d": "e2"}, {})
    assert cost_distribution(c, ["e1", "e2"]) == 0
    c = Configuration({"a": "e1", "b": "e1", "c": "e1"}, {})
    assert cost_distribution(c, ["e1", "e2"]) == 3


def test_cd_counts_idle_efs():
    c = Configuration({"a": "e1"}, {})
    assert cost_distribution(c, ["e1"]) == 0
    assert cost_distribution(c, ["e1", "e2", "e3"]) == 1


def test_cc_colocated_zero_and_two_hop_chain():
    t = topo(["a", "b", "c"], [("a", "b"), ("b", "c")])
    p = PlacementProblem.build(chain_process("x", "y"), t)
    assert cost_communication(configuration_from_assignment(p, {"x": "b", "y": "b"})) == 0
    assert cost_communication(configuration_from_assignment(p, {"x": "a", "y": "c"})) == 2


def test_cc_weighted_by_alpha():
    t = topo(["a", "b", "c"], [("a", "b"), ("b", "c")])
    p = PlacementProblem.build(chain_process("x", "y"), t, channel_weights={("c", "b"): 4})
    assert cost_communication(configuration_from_assignment(p, {"x": "a", "y": "c"}), p.channel_weights) == 5


def test_total_cost_composition():
    p = two_node_problem(CostWeights(1, 1))
    z = configuration_from_assignment(p, {"a": "e1", "b": "e2"})
    assert p.h(0, 0) == 0
    assert p.h(2, 3) == 5
    assert total_cost(z, p) == 1  # C_d 0, one hop
    q = PlacementProblem.build(p.process, p.topology, compose=lambda d, c: max(d, c) * 10)
    assert total_cost(configuration_from_assignment(q, {"a": "e1", "b": "e1"}), q) == 20
    with pytest.raises(ValueError):
        CostWeights(-1, 1)


def test_three_candidates_ordered_by_hand_tally():
    # x -> y -> z on path topology a - b - c ; w = (1, 2)
    t = topo(["a", "b", "c"], [("a", "b"), ("b", "c")])
    p = PlacementProblem.build(chain_process("x", "y", "z"), t, weights=CostWeights(1, 2))
    cands = {
        "spread": {"x": "a", "y": "b", "z": "c"},   # C_d 0, C_c 2 -> 4
        "stacked": {"x": "a", "y": "a", "z": "a"},  # C_d 3, C_c 0 -> 3
        "far": {"x": "a", "y": "c", "z": "a"},      # C_d 2, C_c 4 -> 10
    }
    costs = {k: total_cost(configuration_from_assignment(p, a), p) for k, a in cands.items()}
    assert costs == {"spread": 4, "stacked": 3, "far": 10}
    assert sorted(costs, key=costs.get) == ["stacked", "spread", "far"]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_cost_formulas_match_tallies(seed):
    rng = random.Random(seed)
    p = random_problem(rng, max_nodes=6, max_efs=4)
    nodes, efs, elig, demand, capacity, links, chains = oracle_args(p)
    options = list(enumerate_placements(nodes, efs, elig, demand, capacity, links, chains))
    if not options:
        return
    a = rng.choice(options)
    c = configuration_from_assignment(p, a)
    assert is_admissible(c, p)[0]
    assert cost_distribution(c, p.efs()) == histogram_spread(a, efs)
    assert cost_communication(c, p.channel_weights) == chain_tally(c.link_paths, p.channel_weights)
    bd = cost_breakdown(c, p)
    assert bd["total"] == p.weights.distribution * bd["distribution"] + p.weights.communication * bd["communication"]


# -- solvers ------------------------------------------------------------------

def test_forced_unique_configuration():
    t = topo(["e1", "e2", "e3"], [("e1", "e2"), ("e2", "e3")])
    p = PlacementProblem.build(chain_process("a", "b", "c"), t, {"a": ["e3"], "b": ["e1"], "c": ["e2"]})
    c = find_first_admissible(p)
    assert dict(c.assignment) == {"a": "e3", "b": "e1", "c": "e2"}
    assert find_optimal(p).same_plan(c)


def test_disjoint_from_capacity_is_infeasible():
    proc = make_process([node("a", outputs=("o",), memory=2), node("b", ("i",), memory=2)], [("a.o", "b.i")])
    t = caps_topology({"small": 1, "big": 5})
    p = PlacementProblem.build(proc, t, {"a": ["small"], "b": ["small"]})
    assert find_first_admissible(p) is None
    assert find_optimal(p) is None


def test_dead_eligible_set_infeasible():
    t = topo(["e1", "e2"], [("e1", "e2")]).with_dead_efs(["e2"])
    p = PlacementProblem.build(chain_process("a", "b"), t, {"b": ["e2"]})
    assert find_first_admissible(p) is None


def test_pure_communication_colocates_on_lowest_id():
    c = find_optimal(two_node_problem(CostWeights(0, 1)))
    assert dict(c.assignment) == {"a": "e1", "b": "e1"}


def test_pure_balance_splits_nodes():
    c = find_optimal(two_node_problem(CostWeights(1, 0)))
    assert dict(c.assignment) == {"a": "e1", "b": "e2"}


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6))
def test_first_admissible_is_lexicographic_first(seed):
    p = random_problem(random.Random(seed), max_nodes=4, max_efs=3)
    expected = oracle_first(p)
    got = find_first_admissible(p)
    if expected is None:
        assert got is None
    else:
        assert dict(got.assignment) == expected
        assert is_admissible(got, p)[0]


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6))
def test_optimal_matches_enumeration(seed):
    p = random_problem(random.Random(seed))
    best, winner = oracle_best(p)
    got = find_optimal(p)
    if winner is None:
        assert got is None
        return
    assert is_admissible(got, p)[0]
    assert total_cost(got, p) == best
    assert dict(got.assignment) == winner
    assert total_cost(got, p) <= total_cost(find_first_admissible(p), p)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([2, 3, 10]))
def test_weight_scaling_keeps_winner(seed, k):
    p = random_problem(random.Random(seed))
    scaled = PlacementProblem.build(
        p.process, p.topology, p.eligibility, p.channel_weights,
        CostWeights(p.weights.distribution * k, p.weights.communication * k),
    )
    a, b = find_optimal(p), find_optimal(scaled)
    assert (a is None) == (b is None)
    if a is not None:
        assert a.same_plan(b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_solvers_deterministic(seed):
    p1 = random_problem(random.Random(seed))
    p2 = random_problem(random.Random(seed))
    for solve in (find_first_admissible, find_optimal):
        a, b = solve(p1), solve(p2)
        assert (a is None and b is None) or a.same_plan(b)


def test_to_dict_is_sorted_and_json_ready():
    import json

    p = two_node_problem(CostWeights())
    c = configuration_from_assignment(p, {"b": "e2", "a": "e1"}, generation=3)
    d = c.to_dict()
    assert list(d["assignment"]) == ["a", "b"]
    assert d["paths"] == {"a.out->b.in": [["e1", "e2"]]}
    json.dumps(d)
