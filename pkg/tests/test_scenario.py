import json
import random

import pytest

from fusionsim.cli import read_scenario_text
from fusionsim.scenario import ScenarioError, TimelineEvent, parse_scenario
from fusionsim.simulation import Simulation


def minimal(**extra):
    doc = {
        "name": "pair",
        "horizon": 10,
        "process": {
            "nodes": [{"id": "src", "outputs": ["o"]}, {"id": "dst", "inputs": ["i"]}],
            "links": [{"from": "src.o", "to": "dst.i"}],
        },
        "topology": {"efs": [{"id": "e1"}, {"id": "e2"}], "channels": [{"between": ["e1", "e2"]}]},
    }
    doc.update(extra)
    return doc


def issues(doc):
    text = doc if isinstance(doc, str) else json.dumps(doc, indent=2)
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text)
    return err.value.issues


def test_bundled_passer_by_parses():
    sc = parse_scenario(read_scenario_text("passer-by"))
    assert sc.name == "passer-by"
    assert len(sc.process.nodes) == 4
    assert sc.policy.solver_ef == "room3a"
    assert [e.time for e in sc.timeline] == sorted(e.time for e in sc.timeline)


def test_empty_timeline_deploys_and_idles():
    sc = parse_scenario(json.dumps(minimal()))
    res = Simulation(sc).run()
    assert res.exit_status == 0
    assert res.summary["configurations_installed"] == 1
    assert res.summary["tokens"]["produced"] == 0


def test_unknown_ef_named_in_error():
    doc = minimal(timeline=[{"time": 2, "event": "ef-down", "ef": "mars"}])
    found = issues(doc)
    assert len(found) == 1
    assert "mars" in found[0].message and found[0].path == "timeline[0].ef"
    assert found[0].line is not None


def test_unsorted_timeline():
    doc = minimal(timeline=[
        {"time": 5, "event": "ef-down", "ef": "e2"},
        {"time": 1, "event": "ef-up", "ef": "e2"},
    ])
    assert any("unsorted" in i.message for i in issues(doc))


def test_malformed_json_reports_line():
    found = issues('{\n  "name": "x",\n  "process": {,}\n}')
    assert found[0].line == 3 and "malformed JSON" in found[0].message


def test_yaml_accepted_and_lines_located():
    text = (
        "name: y\n"
        "process:\n"
        "  nodes:\n"
        "    - {id: src, outputs: [o]}\n"
        "  links: []\n"
        "topology:\n"
        "  efs: [{id: e1}]\n"
        "timeline:\n"
        "  - {time: 1, event: set-parameter, node: src, name: gain, value: 2}\n"
    )
    found = issues(text)
    assert found[0].line == 9 and "gain" in found[0].message
    sc = parse_scenario(text.split("timeline:")[0])
    assert sc.name == "y"


def test_all_issues_collected():
    doc = minimal(horizon=-1, seed="x", eligibility={"ghost": ["e1"], "dst": ["nowhere"]})
    messages = " | ".join(str(i) for i in issues(doc))
    for needle in ("horizon", "seed", "ghost", "nowhere"):
        assert needle in messages


def test_invalid_process_reported_by_path():
    doc = minimal()
    doc["process"]["links"].append({"from": "src.o", "to": "dst.i"})
    doc["process"]["nodes"].append({"id": "x", "inputs": ["i"]})
    msgs = [str(i) for i in issues(doc)]
    assert any("unlinked-input" in m for m in msgs)


@pytest.mark.parametrize(
    "event",
    [
        {"time": 1, "event": "teleport"},
        {"time": 1, "event": "source-emit", "node": "dst"},
        {"time": 1, "event": "channel-down", "channel": ["e1", "e9"]},
        {"time": 1, "event": "impl-error", "node": "dst", "count": 0},
        {"time": 1, "event": "swap-impl", "node": "dst", "impl": "nope"},
        {"time": -1, "event": "ef-up", "ef": "e1"},
        {"time": 1, "event": "ef-added", "ef": {"id": "e1"}},
    ],
)
def test_bad_events(event):
    assert issues(minimal(timeline=[event]))


def test_ef_added_ids_usable_later():
    doc = minimal(
        eligibility={"dst": ["e2", "e3"]},
        timeline=[
            {"time": 1, "event": "ef-added", "ef": {"id": "e3", "memory": 4, "channels": [{"to": "e1"}]}},
            {"time": 2, "event": "channel-down", "channel": ["e3", "e1"]},
            {"time": 3, "event": "ef-down", "ef": "e3"},
        ],
    )
    sc = parse_scenario(json.dumps(doc))
    ev = sc.timeline[0].topology_event()
    assert ev.new_ef.memory_capacity == 4 and ev.new_channels[0].key == ("e1", "e3")


def test_emission_schedules():
    rng = random.Random(0)
    ev = TimelineEvent(1, "source-emit", {"node": "s", "period": 2, "until": 7})
    assert ev.emission_times(100, rng) == [1, 3, 5, 7]
    ev = TimelineEvent(0, "source-emit", {"node": "s", "period": 1, "count": 3})
    assert ev.emission_times(100, rng) == [0, 1, 2]
    ev = TimelineEvent(0, "source-emit", {"node": "s", "times": [1, 4, 20]})
    assert ev.emission_times(10, rng) == [1, 4]
    ev = TimelineEvent(0, "source-emit", {"node": "s", "rate": 2.0})
    times = ev.emission_times(5, random.Random(1))
    assert times == sorted(times) and all(0 < t <= 5 for t in times)
    assert times == ev.emission_times(5, random.Random(1))


def test_initial_assignment_used():
    doc = minimal(initial={"assignment": {"src": "e2", "dst": "e2"}})
    res = Simulation(parse_scenario(json.dumps(doc))).run()
    assert res.records[1]["assignment"] == {"dst": "e2", "src": "e2"}
    assert issues(minimal(initial={"assignment": {"src": "e7"}}))


def test_policy_errors_surface():
    assert issues(minimal(policy={"epsilon": 2}))
    assert issues(minimal(policy={"bogus": 1}))
