#!/usr/bin/env python3
"""
HiveSim - Cloud-Edge Swarm Platform CLI Interface
Validate task-graph programs, synthesize placements and run swarm simulations.
"""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from tqdm import tqdm

from hivesim import __version__
from hivesim.analyze import QueueingOracle
from hivesim.dsl import load_program
from hivesim.errors import (ConfigError, ConstraintConflict, ExplorationBudgetExceeded,
                            HiveSimError, ParseError, SimulationError, UnknownWorkload,
                            ValidationError)
from hivesim.experiment import ExperimentSpec, run_experiment
from hivesim.export import ReportExporter
from hivesim.synth import MODES, AccelConfig, enumerate_plans, synthesize
from hivesim.utils import setup_logging
from hivesim.workloads import ACCEL_CHOICES, ScenarioConfig, list_profiles, load_scenario

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2
EXIT_INFEASIBLE = 3


def parse_pins(pins: Optional[List[str]]) -> Dict[str, str]:
    """Turn ``task=Cloud`` items into a hint mapping."""
    hints = {}
    for item in pins or []:
        task, sep, location = item.partition('=')
        if not sep or not task or not location:
            raise ConfigError(f"bad --pin {item!r}; expected task=Cloud|Edge")
        hints[task] = location
    return hints


def resolve_scenario(args) -> ScenarioConfig:
    """
    Load the scenario named on the command line and apply flag overrides.

    The positional argument is a scenario JSON file or a built-in workload id.
    """
    source = args.scenario
    if source.endswith('.json') or os.path.sep in source:
        if not Path(source).is_file():
            raise FileNotFoundError(f"scenario file not found: {source}")
        scenario = load_scenario(source)
    else:
        if source not in list_profiles():
            raise UnknownWorkload(f"unknown workload {source!r}; built-ins: {', '.join(list_profiles())}")
        scenario = ScenarioConfig(name=source, workload=source)

    changes: Dict[str, Any] = {}
    if getattr(args, 'program', None):
        if not Path(args.program).is_file():
            raise FileNotFoundError(f"program not found: {args.program}")
        changes['program'] = args.program
    for flag, key in (('devices', 'devices'), ('fps', 'fps'), ('frame_bytes', 'frame_bytes'),
                      ('accel', 'accel')):
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = value
    if getattr(args, 'keepalive_s', None) is not None:
        changes['cluster'] = {**scenario.cluster, 'keepalive_s': args.keepalive_s}
    if getattr(args, 'replan', False):
        changes['controller'] = {**scenario.controller, 'replan': True}
    if getattr(args, 'synth_seed', None) is not None:
        changes['seed'] = args.synth_seed
    pins = parse_pins(getattr(args, 'pin', None))
    if pins:
        changes['pins'] = {**scenario.pins, **pins}
    scenario = scenario.replace(**changes) if changes else scenario
    scenario.check()
    return scenario


def cmd_check(args) -> int:
    """Parse and validate a DSL program."""
    print(f"🔍 Checking {args.program}")
    try:
        graph = load_program(args.program)
    except ParseError as e:
        print(f"   ❌ {e.format()}")
        return EXIT_INVALID
    except ValidationError as e:
        for issue in e.issues:
            print(f"   ❌ {issue}")
        return EXIT_INVALID
    except OSError as e:
        print(f"   ❌ I/O error: {e}")
        return EXIT_IO

    directives = len(graph.orderings) + len(graph.directives)
    print(f"   ✓ {len(graph.tasks)} task(s), {len(graph.edges())} edge(s), {directives} directive(s)")
    for constraint in graph.constraints:
        print(f"   • constraint {constraint.describe()}")
    print("\n✅ Program is valid")
    return EXIT_OK


def cmd_synth(args) -> int:
    """Enumerate, evaluate and select placement plans."""
    scenario = resolve_scenario(args)
    graph = scenario.graph()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pins = parse_pins(args.pin)
    count = len(enumerate_plans(graph, not args.no_prune, {**scenario.pins, **pins}))

    print(f"🧭 Synthesizing placements for {scenario.name} ({scenario.workload})")
    print(f"   {count} candidate plan(s) over {len(graph.tasks)} task(s)")
    with tqdm(total=count, desc="Evaluating") as bar:
        result = synthesize(scenario, prune=not args.no_prune, pins=pins,
                            accel=AccelConfig.from_flag(scenario.accel), jobs=args.jobs,
                            progress=lambda: bar.update(1))

    exporter = ReportExporter(result, scenario_name=scenario.name, constraints=graph.constraints)
    if exporter.export_plans_json(str(out / 'plans.json')):
        print(f"   ✓ Plans: {out / 'plans.json'}")
    if exporter.export_evals_csv(str(out / 'evals.csv')):
        print(f"   ✓ Evaluations: {out / 'evals.csv'}")
    if exporter.export_markdown(str(out / 'synth.md')):
        print(f"   ✓ Report: {out / 'synth.md'}")

    if result.selected is None:
        print(f"\n❌ No feasible plan. Nearest miss: plan {result.nearest_miss.plan_id} "
              f"({result.nearest_miss.describe()}) violates {', '.join(result.violations)}")
        return EXIT_INFEASIBLE
    print(f"\n✅ Selected plan {result.selected.plan_id}: {result.selected.describe()}")
    return EXIT_OK


def cmd_run(args) -> int:
    """Run simulations for every mode, seed and sweep point."""
    scenario = resolve_scenario(args)
    modes = list(MODES) if 'all' in args.mode else list(dict.fromkeys(args.mode))
    spec = ExperimentSpec(
        scenario=scenario,
        modes=modes,
        seeds=args.seed,
        sweep_devices=args.sweep_devices or [],
        sweep_fps=args.sweep_fps or [],
        sweep_frame_bytes=args.sweep_frame_bytes or [],
        out=args.out,
        jobs=args.jobs,
        trace=args.trace,
        prune=not args.no_prune,
    )
    spec.check()
    total = len(spec.points()) * len(spec.modes) * len(spec.seeds)
    print(f"🐝 Running {scenario.name}: {len(spec.points())} point(s) x {len(modes)} mode(s) "
          f"x {len(spec.seeds)} seed(s)")
    try:
        with tqdm(total=total, desc="Simulating") as bar:
            rows = run_experiment(spec, progress=lambda: bar.update(1))
    except SimulationError as e:
        print(f"\n❌ Simulation failed: {e}")
        return EXIT_INVALID

    exporter = ReportExporter(summary_rows=rows, scenario_name=scenario.name)
    out = Path(args.out)
    if exporter.export_markdown(str(out / 'summary.md')):
        print(f"   ✓ Summary: {out / 'summary.md'}")
    print(f"   ✓ Table: {out / 'summary.csv'}")
    for row in rows:
        print(f"   {row['point']:<18} {row['mode']:<12} seed {row['seed']:<3} "
              f"p99 {row['p99_ms']:>9.1f} ms  battery {row['mean_battery_drain_pct']:>6.2f}%  "
              f"peak {row['peak_wireless_mbps']:>8.1f} Mbps")
    print(f"\n✅ {len(rows)} run(s) complete! Results saved to {out}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    """Validate the simulator against analytic queueing results."""
    print("📐 Running queueing oracle checks")
    oracle = QueueingOracle(args.rho, args.arrivals, args.seed[0],
                            scenario_s=None if args.no_little else args.little_s)
    steps = len(args.rho) + (0 if args.no_little else 1)
    with tqdm(total=steps, desc="Checking") as bar:
        report = oracle.analyze(progress=lambda: bar.update(1))
    for check in report['checks']:
        mark = '✓' if check['passed'] else '❌'
        note = f" ({check['note']})" if check['note'] else ''
        print(f"   {mark} {check['check']:<6} {check['subject']:<28} measured {check['measured']:.4f} "
              f"expected {check['expected']:.4f} dev {check['deviation']:.2%}{note}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / 'oracle.json', 'w', encoding='utf-8') as f:
            json.dump(report, f, indent=2, sort_keys=True)
        print(f"   ✓ Report: {out / 'oracle.json'}")
    if not report['passed']:
        print(f"\n❌ {report['failed_checks']} check(s) outside tolerance")
        return EXIT_INVALID
    print("\n✅ All checks within tolerance")
    return EXIT_OK


def add_scenario_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('scenario', type=str, help='Scenario JSON file or built-in workload id')
    parser.add_argument('--program', type=str, help='DSL program overriding the workload graph')
    parser.add_argument('--devices', type=int, help='Swarm size')
    parser.add_argument('--fps', type=float, help='Capture rate per device')
    parser.add_argument('--frame-bytes', dest='frame_bytes', type=int, help='Frame size in bytes')
    parser.add_argument('--accel', choices=ACCEL_CHOICES, help='Acceleration: none, net, mem or all')
    parser.add_argument('--keepalive-s', dest='keepalive_s', type=float, help='Container keep-alive window')
    parser.add_argument('--pin', action='append', metavar='TASK=SIDE', help='Placement hint (repeatable)')
    parser.add_argument('--no-prune', action='store_true', help='Disable the meaningfulness rules')
    parser.add_argument('--jobs', type=int, default=1, help='Parallel workers (default: 1)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='HiveSim - program, place and simulate cloud-edge swarm jobs',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Examples:
  %(prog)s check scenarios/scenario_b.hive
  %(prog)s synth ScenarioA --out ./results/synth
  %(prog)s run scenarios/scenario_a.json --mode all --seed 0 1 2 3 4 --out ./results/a
  %(prog)s run ScenarioA --mode hivemind centralized --sweep-devices 16 100 1000
  %(prog)s oracle --rho 0.5 0.8 0.9
        '''
    )
    parser.add_argument('--log-level', type=str, default=None, help='Logging level (default: WARNING)')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    check = sub.add_parser('check', help='Parse and validate a DSL program')
    check.add_argument('program', type=str, help='Path to a .hive program')

    synth = sub.add_parser('synth', help='Enumerate and rank placement plans')
    add_scenario_flags(synth)
    synth.add_argument('--seed', dest='synth_seed', type=int, default=None, help='Probe seed')
    synth.add_argument('--out', type=str, default='./results/synth', help='Output directory')

    run = sub.add_parser('run', help='Run simulations')
    add_scenario_flags(run)
    run.add_argument('--mode', nargs='+', choices=list(MODES) + ['all'], default=['all'],
                     help='Modes to run (default: all)')
    run.add_argument('--seed', type=int, nargs='+', default=[0], help='Seeds (default: 0)')
    run.add_argument('--sweep-devices', dest='sweep_devices', type=int, nargs='+', help='Device counts')
    run.add_argument('--sweep-fps', dest='sweep_fps', type=float, nargs='+', help='Frame rates')
    run.add_argument('--sweep-frame-bytes', dest='sweep_frame_bytes', type=int, nargs='+',
                     help='Frame sizes')
    run.add_argument('--trace', action='store_true', help='Write an NDJSON event trace per run')
    run.add_argument('--replan', action='store_true', help='Enable runtime re-planning')
    run.add_argument('--out', type=str, default='./results/run', help='Output directory')

    oracle = sub.add_parser('oracle', help='Validate against queueing theory')
    oracle.add_argument('--rho', type=float, nargs='+', default=[0.5, 0.8, 0.9], help='M/M/1 loads')
    oracle.add_argument('--arrivals', type=int, default=None, help='Arrivals per M/M/1 run')
    oracle.add_argument('--seed', type=int, nargs='+', default=[0], help='Seed')
    oracle.add_argument('--little-s', dest='little_s', type=float, default=30.0,
                        help="ScenarioA horizon for the Little's-law check")
    oracle.add_argument('--no-little', dest='no_little', action='store_true',
                        help="Skip the Little's-law check")
    oracle.add_argument('--out', type=str, default=None, help='Output directory')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    print(f"🐝 HiveSim v{__version__}")
    print("=" * 50)

    handlers = {'check': cmd_check, 'synth': cmd_synth, 'run': cmd_run, 'oracle': cmd_oracle}
    try:
        return handlers[args.command](args)
    except (FileNotFoundError, ConfigError, UnknownWorkload) as e:
        print(f"\n❌ {e}")
        return EXIT_IO
    except OSError as e:
        print(f"\n❌ I/O error: {e}")
        return EXIT_IO
    except (ParseError, ValidationError, ConstraintConflict, ExplorationBudgetExceeded, ValueError) as e:
        print(f"\n❌ {e}")
        return EXIT_INVALID
    except HiveSimError as e:
        print(f"\n❌ {e}")
        return EXIT_INVALID


if __name__ == '__main__':
    sys.exit(main())
