"""
Placement synthesis: enumerate cloud/edge plans, attach data paths, evaluate and select.

Plans are produced by binary counting over the tasks in declaration order
(task i is bit i, Cloud=0, Edge=1); a plan's id is its full bitmask, so the
enumeration order is the ascending order of ids.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from hivesim.config import ControllerConfig
from hivesim.dsl import PerfConstraint, TaskGraph, parse_location
from hivesim.errors import ConstraintConflict, ExplorationBudgetExceeded, NoFeasiblePlan
from hivesim.sim.kernel import MetricsReport
from hivesim.sim.net import DataPathKind
from hivesim.utils import percentile, s_to_us, us_to_ms, us_to_s

logger = logging.getLogger(__name__)

CLOUD = 'Cloud'
EDGE = 'Edge'

MODES = ('hivemind', 'centralized', 'distributed')

# Free tasks explored exhaustively (2**16 plans).
EXPLORATION_BUDGET = 16


@dataclass(frozen=True)
class Location:
    """Where a task runs. An Edge location carries the devices it applies to."""
    kind: str
    edge_scope: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.kind not in (CLOUD, EDGE):
            raise ValueError(f"unknown location kind {self.kind!r}")
        if (self.kind == EDGE) != bool(self.edge_scope):
            raise ValueError('edge_scope is required for Edge and forbidden for Cloud')

    @classmethod
    def cloud(cls) -> 'Location':
        return cls(CLOUD)

    @classmethod
    def edge(cls, scope: Sequence[str] = ('all',)) -> 'Location':
        return cls(EDGE, tuple(scope))

    @classmethod
    def parse(cls, text: str) -> 'Location':
        """``Cloud``, ``Edge`` (all devices), ``Edge:all`` or ``Edge:d0,d3``."""
        if text == EDGE:
            return cls.edge()
        parsed = parse_location(text)
        if parsed is None:
            raise ValueError(f"bad location {text!r}")
        kind, scope = parsed
        return cls(kind, scope)

    @property
    def is_edge(self) -> bool:
        return self.kind == EDGE

    def includes(self, device_id: str) -> bool:
        return self.is_edge and ('all' in self.edge_scope or device_id in self.edge_scope)

    def __str__(self) -> str:
        return CLOUD if self.kind == CLOUD else f"Edge:{','.join(self.edge_scope)}"


@dataclass(frozen=True)
class AccelConfig:
    network_accel: bool = True
    remote_mem: bool = True

    @classmethod
    def from_flag(cls, flag: str) -> 'AccelConfig':
        if flag not in ('none', 'net', 'mem', 'all'):
            raise ValueError(f"accel must be none, net, mem or all, not {flag!r}")
        return cls(network_accel=flag in ('net', 'all'), remote_mem=flag in ('mem', 'all'))

    @property
    def flag(self) -> str:
        if self.network_accel and self.remote_mem:
            return 'all'
        if self.network_accel:
            return 'net'
        return 'mem' if self.remote_mem else 'none'


@dataclass
class PlacementPlan:
    plan_id: int
    assignment: Dict[str, Location]
    edge_paths: Dict[Tuple[str, str], str] = field(default_factory=dict)
    accel: AccelConfig = field(default_factory=AccelConfig)

    def location_for(self, task: str, device_id: str) -> str:
        """CLOUD or EDGE for this task's instance on one device."""
        location = self.assignment[task]
        return EDGE if location.includes(device_id) else CLOUD

    def path_for(self, parent: str, child: str, device_id: str) -> str:
        return data_path(self.location_for(parent, device_id),
                         self.location_for(child, device_id), self.accel)

    @property
    def edge_tasks(self) -> List[str]:
        return [t for t, loc in self.assignment.items() if loc.is_edge]

    def describe(self) -> str:
        return ', '.join(f"{task}={loc}" for task, loc in self.assignment.items())

    def to_dict(self) -> Dict[str, Any]:
        return {
            'plan_id': self.plan_id,
            'assignment': {task: str(loc) for task, loc in self.assignment.items()},
            'edge_paths': {f"{p}->{c}": kind for (p, c), kind in self.edge_paths.items()},
            'accel': self.accel.flag,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PlacementPlan':
        edge_paths = {}
        for key, kind in data.get('edge_paths', {}).items():
            parent, child = key.split('->', 1)
            edge_paths[(parent, child)] = kind
        return cls(int(data['plan_id']),
                   {task: Location.parse(text) for task, text in data['assignment'].items()},
                   edge_paths, AccelConfig.from_flag(data.get('accel', 'all')))


def data_path(parent_side: str, child_side: str, accel: AccelConfig) -> str:
    if parent_side != child_side:
        return DataPathKind.RPC_ACCELERATED if accel.network_accel else DataPathKind.RPC_CLOUD_EDGE
    if parent_side == CLOUD:
        return DataPathKind.REMOTE_MEMORY if accel.remote_mem else DataPathKind.STORE_EXCHANGE
    return DataPathKind.ON_DEVICE_LOCAL


def plan_id_for(graph: TaskGraph, assignment: Dict[str, Location]) -> int:
    return sum(1 << i for i, name in enumerate(graph.task_names) if assignment[name].is_edge)


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def forced_locations(graph: TaskGraph, prune: bool = True,
                     pins: Optional[Dict[str, str]] = None) -> Dict[str, Location]:
    """
    Locations fixed by Place directives, hints and the meaningfulness rules.

    Raises:
        ConstraintConflict: a hint contradicts a Place directive or a pruning rule
    """
    forced: Dict[str, Location] = {}
    for task, text in graph.place_directives().items():
        forced[task] = Location.parse(text)
    for task, text in (pins or {}).items():
        if task not in graph.task_names:
            raise ConstraintConflict(f"hint for undeclared task {task}")
        try:
            location = Location.parse(text)
        except ValueError as e:
            raise ConstraintConflict(f"hint {task}={text}: {e}") from None
        if task in forced and forced[task].kind != location.kind:
            raise ConstraintConflict(f"hint {task}={text} contradicts Place({task},'{forced[task]}')")
        forced.setdefault(task, location)
    if prune:
        for task in graph.tasks:
            if not (task.is_source or task.is_actuation):
                continue
            rule = 'sensor source' if task.is_source else 'actuation task'
            if task.name in forced and not forced[task.name].is_edge:
                raise ConstraintConflict(f"{rule} {task.name} is fixed to the cloud")
            forced.setdefault(task.name, Location.edge())
    return forced


def enumerate_plans(graph: TaskGraph, prune: bool = True, pins: Optional[Dict[str, str]] = None,
                    budget: int = EXPLORATION_BUDGET) -> List[PlacementPlan]:
    """
    Every meaningful cloud/edge assignment of the graph.

    Args:
        graph: Valid task graph
        prune: Apply the meaningfulness rules (sources and actuation tasks on Edge)
        pins: Placement hints, task -> 'Cloud' | 'Edge' | 'Edge:<scope>'
        budget: Maximum number of free tasks

    Returns:
        Plans ordered by plan_id, data paths not yet attached

    Raises:
        ConstraintConflict: fixed placements are jointly unsatisfiable
        ExplorationBudgetExceeded: more free tasks than the budget
    """
    forced = forced_locations(graph, prune, pins)
    names = graph.task_names
    free = [name for name in names if name not in forced]
    if len(free) > budget:
        raise ExplorationBudgetExceeded(
            f"{len(free)} free tasks exceed the exploration budget of {budget}; "
            f"add Place directives or --pin hints")
    plans = []
    for mask in range(1 << len(free)):
        assignment = {}
        for name in names:
            if name in forced:
                assignment[name] = forced[name]
            else:
                bit = free.index(name)
                assignment[name] = Location.edge() if mask >> bit & 1 else Location.cloud()
        plans.append(PlacementPlan(plan_id_for(graph, assignment), assignment))
    logger.debug(f"Enumerated {len(plans)} plan(s) over {len(free)} free task(s)")
    return plans


def attach_data_paths(plan: PlacementPlan, graph: TaskGraph, accel: AccelConfig) -> PlacementPlan:
    """Label every graph edge with its data path; SameContainer is left to the scheduler."""
    paths = {}
    for parent, child in graph.edges():
        paths[(parent, child)] = data_path(plan.assignment[parent].kind,
                                           plan.assignment[child].kind, accel)
    return PlacementPlan(plan.plan_id, dict(plan.assignment), paths, accel)


def uniform_plan(graph: TaskGraph, kind: str, accel: AccelConfig,
                 respect_forced: bool = True) -> PlacementPlan:
    """All tasks on one tier; with respect_forced, Place directives and pruning still hold."""
    forced = forced_locations(graph) if respect_forced else {}
    if kind == EDGE:
        assignment = {name: Location.edge() for name in graph.task_names}
        for name, loc in forced.items():
            assignment[name] = loc
    else:
        assignment = {name: forced.get(name, Location.cloud()) for name in graph.task_names}
    plan = PlacementPlan(plan_id_for(graph, assignment), assignment)
    return attach_data_paths(plan, graph, accel)


# ---------------------------------------------------------------------------
# Evaluation and selection
# ---------------------------------------------------------------------------

@dataclass
class PlanEvaluation:
    plan_id: int
    predicted_p50_latency: float
    predicted_p99_latency: float
    mean_battery_drain: float
    peak_bandwidth: float
    cloud_cost: float
    throughput: float = 0.0

    def measure(self, constraint: PerfConstraint) -> float:
        if constraint.metric in ('latency', 'exec_time'):
            return self.predicted_p99_latency
        if constraint.metric == 'throughput':
            return self.throughput
        return self.cloud_cost

    def violations(self, constraints: Iterable[PerfConstraint]) -> List[PerfConstraint]:
        return [c for c in constraints if not c.is_met(self.measure(c))]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'plan_id': self.plan_id,
            'p50_ms': self.predicted_p50_latency,
            'p99_ms': self.predicted_p99_latency,
            'battery_drain_pct': self.mean_battery_drain,
            'peak_bandwidth_mbps': self.peak_bandwidth,
            'cloud_cost_fs': self.cloud_cost,
            'throughput_rps': self.throughput,
        }


def summarize_run(plan_id: int, metrics: MetricsReport) -> PlanEvaluation:
    latency = metrics.samples('e2e')
    duration = metrics.completion_time_s or 0.0
    return PlanEvaluation(
        plan_id=plan_id,
        predicted_p50_latency=latency.percentile_ms(50),
        predicted_p99_latency=latency.percentile_ms(99),
        mean_battery_drain=max(0.0, metrics.mean_battery_drain()),
        peak_bandwidth=metrics.peak_bandwidth_mbps('wireless'),
        cloud_cost=float(metrics.extra.get('cloud', {}).get('function_seconds', 0.0)),
        throughput=latency.count / duration if duration > 0 else 0.0)


def evaluate_plan(plan: PlacementPlan, scenario, seed: int) -> PlanEvaluation:
    """
    Simulate the scenario under one plan.

    Raises:
        SimulationError: the run hit a cap
    """
    from hivesim.sim.world import World

    world = World(scenario, plan, seed, mode='hivemind',
                  run_id=f"{scenario.name}-plan{plan.plan_id}-seed{seed}")
    metrics = world.run()
    return summarize_run(plan.plan_id, metrics)


def _evaluate_job(args) -> PlanEvaluation:
    plan, scenario, seed = args
    return evaluate_plan(plan, scenario, seed)


def selection_key(evaluation: PlanEvaluation) -> Tuple[float, float, float, int]:
    return (evaluation.predicted_p99_latency, evaluation.mean_battery_drain,
            evaluation.cloud_cost, evaluation.plan_id)


def select_plan(evals: Sequence[PlanEvaluation], constraints: Sequence[PerfConstraint],
                plans: Optional[Sequence[PlacementPlan]] = None):
    """
    Pick the feasible plan minimizing (p99 latency, battery drain, cloud cost, plan_id).

    Returns:
        The PlacementPlan when `plans` is given, else the winning PlanEvaluation

    Raises:
        NoFeasiblePlan: no evaluation meets every constraint; carries the
            plan with the least total relative excess
    """
    if not evals:
        raise ValueError('select_plan needs at least one evaluation')
    by_id = {p.plan_id: p for p in plans} if plans is not None else {}
    feasible = [e for e in evals if not e.violations(constraints)]
    if not feasible:
        def total_excess(e: PlanEvaluation) -> Tuple[float, Tuple]:
            return sum(c.excess(e.measure(c)) for c in constraints), selection_key(e)

        nearest = min(evals, key=total_excess)
        violated = [c.describe() for c in nearest.violations(constraints)]
        raise NoFeasiblePlan(by_id.get(nearest.plan_id, nearest), violated)
    best = min(feasible, key=selection_key)
    return by_id[best.plan_id] if plans is not None else best


@dataclass
class SynthesisResult:
    plans: List[PlacementPlan]
    evaluations: List[PlanEvaluation]
    selected: Optional[PlacementPlan] = None
    nearest_miss: Optional[PlacementPlan] = None
    violations: List[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.selected is not None


def synthesize(scenario, prune: bool = True, pins: Optional[Dict[str, str]] = None,
               accel: Optional[AccelConfig] = None, jobs: int = 1,
               progress=None) -> SynthesisResult:
    """
    Enumerate, evaluate (on the scenario's profiling trial) and select a plan.

    Args:
        scenario: ScenarioConfig
        prune: Apply the meaningfulness rules
        pins: Placement hints merged over the scenario's own
        accel: Acceleration flags (defaults to the scenario's)
        jobs: Parallel evaluation workers
        progress: Optional callable invoked once per finished evaluation

    Returns:
        SynthesisResult; `selected` is None when no plan is feasible
    """
    graph = scenario.graph()
    accel = accel or AccelConfig.from_flag(scenario.accel)
    hints = {**scenario.pins, **(pins or {})}
    plans = [attach_data_paths(p, graph, accel) for p in enumerate_plans(graph, prune, hints)]
    trial = scenario.trial()
    work = [(plan, trial, scenario.seed) for plan in plans]
    if jobs > 1 and len(plans) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            evaluations = []
            for evaluation in pool.map(_evaluate_job, work):
                evaluations.append(evaluation)
                if progress:
                    progress()
    else:
        evaluations = []
        for item in work:
            evaluations.append(_evaluate_job(item))
            if progress:
                progress()
    result = SynthesisResult(plans, evaluations)
    try:
        result.selected = select_plan(evaluations, graph.constraints, plans)
        logger.info(f"Selected plan {result.selected.plan_id}: {result.selected.describe()}")
    except NoFeasiblePlan as e:
        result.nearest_miss = e.nearest_miss
        result.violations = e.violations
        logger.warning(str(e))
    return result


def plan_for_mode(scenario, mode: str, prune: bool = True,
                  pins: Optional[Dict[str, str]] = None, jobs: int = 1) -> PlacementPlan:
    """
    Plan used by a canonical mode.

    centralized: everything not forced to the edge in the cloud, no acceleration.
    distributed: everything on the edge. hivemind: the synthesized plan with
    the scenario's acceleration (nearest miss when nothing is feasible).
    """
    graph = scenario.graph()
    if mode == 'centralized':
        return uniform_plan(graph, CLOUD, AccelConfig.from_flag('none'))
    if mode == 'distributed':
        return uniform_plan(graph, EDGE, AccelConfig.from_flag('none'))
    if mode != 'hivemind':
        raise ValueError(f"unknown mode {mode!r}")
    if scenario.plan == 'all-cloud':
        return uniform_plan(graph, CLOUD, AccelConfig.from_flag(scenario.accel))
    if scenario.plan == 'all-edge':
        return uniform_plan(graph, EDGE, AccelConfig.from_flag(scenario.accel))
    if scenario.plan == 'centralized':
        return uniform_plan(graph, CLOUD, AccelConfig.from_flag('none'))
    result = synthesize(scenario, prune=prune, pins=pins, jobs=jobs)
    if result.selected is not None:
        return result.selected
    logger.warning(f"No feasible plan for {scenario.name}; running the nearest miss "
                   f"(violates {', '.join(result.violations)})")
    return result.nearest_miss


# ---------------------------------------------------------------------------
# Runtime re-planning
# ---------------------------------------------------------------------------

class Replanner:
    """
    Periodic constraint check that moves one task from the cloud to the edge.

    A violation over the trailing window moves the free cloud task with the
    heaviest cross-tier input; a moved task is not moved again within the
    cooldown. Running instances finish under the plan they started with.
    """

    def __init__(self, graph: TaskGraph, config: ControllerConfig,
                 input_bytes: Dict[str, int], fixed: Iterable[str] = ()):
        self.graph = graph
        self.constraints = list(graph.constraints)
        self.window_us = s_to_us(config.replan_window_s)
        self.cooldown_us = s_to_us(config.replan_cooldown_s)
        self.input_bytes = input_bytes
        self.fixed = set(fixed)
        self.moved_at: Dict[str, int] = {}

    def violated(self, now_us: int, metrics: MetricsReport) -> List[PerfConstraint]:
        start = max(0, now_us - self.window_us)
        window = metrics.samples('e2e').window(start)
        span_s = us_to_s(now_us - start)
        violated = []
        for constraint in self.constraints:
            if constraint.metric in ('latency', 'exec_time'):
                if window and not constraint.is_met(us_to_ms(percentile(window, 99))):
                    violated.append(constraint)
            elif constraint.metric == 'throughput' and span_s > 0:
                if not constraint.is_met(len(window) / span_s):
                    violated.append(constraint)
        return violated

    def replan(self, now_us: int, current: PlacementPlan,
               metrics: MetricsReport) -> Optional[PlacementPlan]:
        """A new plan when a constraint is violated and a task can move; else None."""
        violated = self.violated(now_us, metrics)
        if not violated:
            return None
        candidates = [
            name for name in self.graph.task_names
            if not current.assignment[name].is_edge and name not in self.fixed
            and now_us - self.moved_at.get(name, -self.cooldown_us - 1) > self.cooldown_us
        ]
        if not candidates:
            return None
        order = self.graph.task_names
        task = max(candidates, key=lambda n: (self.input_bytes.get(n, 0), -order.index(n)))
        assignment = dict(current.assignment)
        assignment[task] = Location.edge()
        self.moved_at[task] = now_us
        plan = PlacementPlan(plan_id_for(self.graph, assignment), assignment)
        plan = attach_data_paths(plan, self.graph, current.accel)
        logger.info(f"Replan at t={us_to_s(now_us):.1f}s ({', '.join(c.describe() for c in violated)} "
                    f"violated): {task} -> Edge, plan {plan.plan_id}")
        return plan
