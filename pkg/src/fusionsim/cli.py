"""Command line front end: validate, plan, paths, simulate and replay scenarios."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from .graph import validate_process
from .placement import cost_breakdown, find_first_admissible, find_optimal
from .scenario import Scenario, ScenarioError, parse_scenario
from .simulation import Simulation, compare_logs
from .topology import compute_path_table

log = logging.getLogger("fusionsim")

BUNDLED = {"passer-by": "passer_by.json"}

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def read_scenario_text(ref: str) -> str:
    """Scenario text from a path, or from a bundled scenario name."""
    if ref in BUNDLED:
        return resources.files("fusionsim.scenarios").joinpath(BUNDLED[ref]).read_text()
    return Path(ref).read_text()


def load_scenario(ref: str) -> Scenario:
    return parse_scenario(read_scenario_text(ref))


def _emit(obj, out: str | None):
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_validate(sc: Scenario, args) -> int:
    violations = [str(v) for v in validate_process(sc.process)]
    _emit({"scenario": sc.name, "valid": not violations, "violations": violations}, args.out)
    return EXIT_OK if not violations else EXIT_FAILED


def cmd_plan(sc: Scenario, args) -> int:
    sim = Simulation(sc, seed=args.seed, horizon=args.horizon)
    p = sim.controller.problem(sc.topology)
    config = find_optimal(p)
    solver = "optimal"
    if config is None:
        config, solver = find_first_admissible(p), "first-admissible"
    if config is None:
        _emit({"scenario": sc.name, "feasible": False}, args.out)
        return EXIT_FAILED
    d = config.to_dict()
    _emit({"scenario": sc.name, "feasible": True, "solver": solver, "assignment": d["assignment"],
           "paths": d["paths"], "cost": cost_breakdown(config, p)}, args.out)
    return EXIT_OK


def cmd_paths(sc: Scenario, args) -> int:
    _emit(compute_path_table(sc.topology).as_dict(), args.out)
    return EXIT_OK


def cmd_simulate(sc: Scenario, args) -> int:
    result = Simulation(sc, seed=args.seed, horizon=args.horizon).run()
    if args.out:
        Path(args.out).write_text(result.log_text())
    json.dump(result.summary, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return result.exit_status


def cmd_replay(sc: Scenario, args) -> int:
    if not args.log:
        log.error("replay needs --log PATH (a log written by simulate --out)")
        return EXIT_USAGE
    expected = Path(args.log).read_text().splitlines()
    actual = Simulation(sc, seed=args.seed, horizon=args.horizon).run().log_lines()
    diff = compare_logs(expected, actual)
    if diff is None:
        print(f"replay ok: {len(actual)} records identical")
        return EXIT_OK
    line, exp, act = diff
    print(f"replay diverged at record {line}")
    print(f"  expected: {exp}")
    print(f"  actual:   {act}")
    return EXIT_FAILED


COMMANDS = {
    "validate": cmd_validate,
    "plan": cmd_plan,
    "paths": cmd_paths,
    "simulate": cmd_simulate,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusionsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--scenario", required=True,
                        help="scenario file, or a bundled name: " + ", ".join(BUNDLED))
        sp.add_argument("--out", help="output file (event log for simulate)")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--horizon", type=float, help="override the scenario horizon")
        if name == "replay":
            sp.add_argument("--log", help="event log to check against")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    if args.horizon is not None and args.horizon.is_integer():
        args.horizon = int(args.horizon)
    try:
        sc = load_scenario(args.scenario)
    except OSError as exc:
        log.error("cannot read scenario: %s", exc)
        return EXIT_USAGE
    except ScenarioError as exc:
        for issue in exc.issues:
            print(issue, file=sys.stderr)
        return EXIT_USAGE
    return COMMANDS[args.command](sc, args)


if __name__ == "__main__":
    sys.exit(main())
