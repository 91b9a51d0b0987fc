"""
Experiment runner: canonical modes, seeds and sweep points.

Each (sweep point, mode, seed) is one simulation whose MetricsReport lands in
``<out>/<point>/<mode>/seed-<seed>/metrics.json``; a summary table compares
the modes. Output files carry no wall-clock data, so repeating a run with the
same ExperimentSpec rewrites the same bytes.
"""

import csv
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from hivesim.sim.kernel import MetricsReport
from hivesim.synth import MODES, PlacementPlan, plan_for_mode
from hivesim.utils import config_hash, round_float, sanitize
from hivesim.workloads import ScenarioConfig

logger = logging.getLogger(__name__)

SCHEMA = 'hivesim.metrics/1'
SUMMARY_SCHEMA = 'hivesim.summary/1'

SUMMARY_FIELDS = [
    'point', 'mode', 'seed', 'devices', 'fps', 'frame_bytes', 'plan_id',
    'p50_ms', 'p99_ms', 'mean_battery_drain_pct', 'peak_wireless_mbps', 'mean_wireless_mbps',
    'cloud_function_s', 'completed', 'failed', 'coverage', 'goal_met', 'completion_time_s',
    'config_hash',
]

SWEEP_AXES = ('devices', 'fps', 'frame_bytes')


@dataclass
class ExperimentSpec:
    """What to run: one scenario under several modes, seeds and sweep points."""
    scenario: ScenarioConfig
    modes: List[str] = field(default_factory=lambda: list(MODES))
    seeds: List[int] = field(default_factory=lambda: [0])
    sweep_devices: List[int] = field(default_factory=list)
    sweep_fps: List[float] = field(default_factory=list)
    sweep_frame_bytes: List[int] = field(default_factory=list)
    out: str = 'results'
    jobs: int = 1
    trace: bool = False
    prune: bool = True
    pins: Dict[str, str] = field(default_factory=dict)

    def check(self) -> None:
        unknown = [m for m in self.modes if m not in MODES]
        if unknown:
            raise ValueError(f"unknown mode(s) {', '.join(unknown)}; expected {', '.join(MODES)}")
        if not self.seeds:
            raise ValueError('at least one seed is required')
        if self.jobs < 1:
            raise ValueError('jobs must be >= 1')

    def points(self) -> List[Tuple[str, ScenarioConfig]]:
        """Sweep points as (label, scenario), in axis order."""
        axes = [(name, values) for name, values in zip(SWEEP_AXES, (
            self.sweep_devices, self.sweep_fps, self.sweep_frame_bytes)) if values]
        if not axes:
            return [('base', self.scenario)]
        points = []
        for combo in itertools.product(*(values for _, values in axes)):
            changes = {name: value for (name, _), value in zip(axes, combo)}
            label = '_'.join(f"{name.replace('_', '-')}-{value:g}" for name, value in changes.items())
            points.append((label, self.scenario.replace(**changes)))
        return points


def run_hash(scenario: ScenarioConfig, mode: str, plan: PlacementPlan) -> str:
    """SHA-256 of the resolved run configuration; the seed is recorded separately."""
    resolved = scenario.to_dict()
    resolved.pop('seed', None)
    return config_hash({
        'scenario': resolved,
        'profile': scenario.profile().to_dict(),
        'mode': mode,
        'plan': plan.to_dict(),
    })


def build_report(scenario: ScenarioConfig, plan: PlacementPlan, mode: str, seed: int,
                 metrics: MetricsReport, run_id: str) -> Dict[str, Any]:
    return {
        'schema': SCHEMA,
        'run_id': run_id,
        'scenario': scenario.name,
        'workload': scenario.workload,
        'mode': mode,
        'seed': seed,
        'config_hash': run_hash(scenario, mode, plan),
        'plan': plan.to_dict(),
        'metrics': metrics.to_dict(),
    }


def write_json(data: Any, path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(sanitize(data), f, indent=2, sort_keys=True)
        f.write('\n')


def summary_row(point: str, report: Dict[str, Any], scenario: ScenarioConfig) -> Dict[str, Any]:
    metrics = report['metrics']
    e2e = metrics['latency'].get('e2e', {})
    extra = metrics.get('extra', {})
    profile = scenario.profile()
    return {
        'point': point,
        'mode': report['mode'],
        'seed': report['seed'],
        'devices': scenario.devices,
        'fps': scenario.fps or profile.fps,
        'frame_bytes': scenario.frame_bytes or profile.frame_bytes,
        'plan_id': report['plan']['plan_id'],
        'p50_ms': round_float(e2e.get('p50_ms', 0.0), 3),
        'p99_ms': round_float(e2e.get('p99_ms', 0.0), 3),
        'mean_battery_drain_pct': round_float(metrics['battery']['mean_drain_pct'], 4),
        'peak_wireless_mbps': round_float(metrics['bandwidth']['peak_wireless_mbps'], 3),
        'mean_wireless_mbps': round_float(metrics['bandwidth']['mean_wireless_mbps'], 3),
        'cloud_function_s': round_float(extra.get('cloud', {}).get('function_seconds', 0.0), 3),
        'completed': metrics['counters'].get('completed', 0),
        'failed': metrics['counters'].get('failed', 0),
        'coverage': round_float(extra.get('coverage', 0.0), 4),
        'goal_met': metrics.get('goals', {}).get('met'),
        'completion_time_s': round_float(metrics['completion_time_s'] or 0.0, 3),
        'config_hash': report['config_hash'],
    }


@dataclass
class RunJob:
    point: str
    scenario: ScenarioConfig
    plan: PlacementPlan
    mode: str
    seed: int
    out_dir: Optional[str] = None
    trace: bool = False

    @property
    def run_id(self) -> str:
        return f"{self.scenario.name}-{self.point}-{self.mode}-seed{self.seed}"


def run_single(job: RunJob) -> Dict[str, Any]:
    """
    Simulate one (point, mode, seed) and write its metrics file.

    Returns:
        The summary row for the run

    Raises:
        SimulationError: the run hit a cap (carries the run id)
    """
    from hivesim.sim.world import World

    trace_path = None
    if job.trace and job.out_dir:
        os.makedirs(job.out_dir, exist_ok=True)
        trace_path = os.path.join(job.out_dir, 'trace.ndjson')
    scenario = job.scenario.replace(seed=job.seed)
    world = World(scenario, job.plan, job.seed, mode=job.mode, trace_path=trace_path,
                  run_id=job.run_id)
    metrics = world.run()
    report = build_report(scenario, job.plan, job.mode, job.seed, metrics, job.run_id)
    if job.out_dir:
        write_json(report, os.path.join(job.out_dir, 'metrics.json'))
    return summary_row(job.point, report, scenario)


def plan_jobs(spec: ExperimentSpec) -> Tuple[List[RunJob], Dict[Tuple[str, str], PlacementPlan]]:
    """One plan per (point, mode); hivemind synthesizes once per point."""
    jobs, plans = [], {}
    for point, scenario in spec.points():
        for mode in spec.modes:
            plan = plan_for_mode(scenario, mode, prune=spec.prune, pins=spec.pins, jobs=spec.jobs)
            plans[(point, mode)] = plan
            logger.info(f"{point}/{mode}: plan {plan.plan_id} ({plan.describe()})")
            for seed in spec.seeds:
                out_dir = os.path.join(spec.out, point, mode, f"seed-{seed}") if spec.out else None
                jobs.append(RunJob(point, scenario, plan, mode, seed, out_dir, spec.trace))
    return jobs, plans


def run_experiment(spec: ExperimentSpec,
                   progress: Optional[Callable[[], None]] = None) -> List[Dict[str, Any]]:
    """
    Run every (point, mode, seed) of an ExperimentSpec and write the summary files.

    Args:
        spec: Experiment description
        progress: Optional callable invoked once per finished run

    Returns:
        Summary rows sorted by (point, mode, seed)
    """
    spec.check()
    jobs, _ = plan_jobs(spec)
    rows = []
    if spec.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            for row in pool.map(run_single, jobs):
                rows.append(row)
                if progress:
                    progress()
    else:
        for job in jobs:
            rows.append(run_single(job))
            if progress:
                progress()
    point_order = {label: i for i, (label, _) in enumerate(spec.points())}
    mode_order = {mode: i for i, mode in enumerate(spec.modes)}
    rows.sort(key=lambda r: (point_order[r['point']], mode_order[r['mode']], r['seed']))
    if spec.out:
        write_summary(rows, spec.out)
    return rows


def write_summary(rows: Sequence[Dict[str, Any]], out: str) -> None:
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, 'summary.csv'), 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=SUMMARY_FIELDS, lineterminator='\n')
        writer.writeheader()
        writer.writerows(rows)
    write_json({'schema': SUMMARY_SCHEMA, 'runs': list(rows), 'modes': compare_modes(rows)},
               os.path.join(out, 'summary.json'))


def compare_modes(rows: Sequence[Dict[str, Any]]) -> Dict[str, Dict[str, Dict[str, float]]]:
    """Per point and mode, the seed-averaged headline metrics."""
    table: Dict[str, Dict[str, Dict[str, float]]] = {}
    keys = ('p50_ms', 'p99_ms', 'mean_battery_drain_pct', 'peak_wireless_mbps', 'cloud_function_s')
    groups: Dict[Tuple[str, str], List[Dict[str, Any]]] = {}
    for row in rows:
        groups.setdefault((row['point'], row['mode']), []).append(row)
    for (point, mode), group in groups.items():
        table.setdefault(point, {})[mode] = {
            key: round_float(sum(r[key] for r in group) / len(group), 4) for key in keys
        }
    return table
