"""
Scenario assembly: one kernel driving the swarm, the network and the cluster.

The World plays the centralized controller. Every frame period it advances
the devices along their coverage routes and turns captured frames into jobs.
A job walks the per-frame part of the task graph; each task instance runs on
the device or in the cluster as the placement plan says, and data crossing
tiers goes through the network. Tasks not downstream of a sensor source are
setup tasks and run once per device before it takes off.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import networkx as nx

from hivesim.dsl import parse_node_set
from hivesim.errors import ConfigError, LinkDown, MissionInfeasible
from hivesim.sim.cloud import PRIORITIES, FunctionInvocation, ServerlessCluster
from hivesim.sim.edge import (Activity, Cell, EdgeDevice, build_field, drain_battery,
                              partition_field, place_items, place_people, plan_route,
                              region_adjacency, repartition_on_failure, step_device)
from hivesim.sim.kernel import Component, Kernel, MetricsReport, ServiceStation, SimEvent, sample
from hivesim.sim.net import CLOUD as CLOUD_ENDPOINT
from hivesim.sim.net import HeartbeatMonitor, Network
from hivesim.synth import (CLOUD, EDGE, MODES, AccelConfig, PlacementPlan, Replanner,
                           data_path, forced_locations)
from hivesim.utils import US_PER_S, s_to_us, us_to_s
from hivesim.workloads import ScenarioConfig, device_ids

logger = logging.getLogger(__name__)

LEARN_PERIOD_S = 10.0


@dataclass
class Job:
    """One frame (or one-second batch) travelling through the task graph."""
    job_id: int
    device: EdgeDevice
    capture_us: int
    frames: int
    frame_bytes: int
    tags: List[str]
    tasks: List[str]
    setup: bool = False
    pending: Dict[str, int] = field(default_factory=dict)
    outputs: Dict[str, Tuple[str, int, Optional[int]]] = field(default_factory=dict)
    ready_us: Dict[str, int] = field(default_factory=dict)
    done: Set[str] = field(default_factory=set)
    skipped: Set[str] = field(default_factory=set)
    barrier_keys: Dict[str, Tuple] = field(default_factory=dict)
    arrived: Set[str] = field(default_factory=set)
    detected: Optional[Set[str]] = None
    network_us: int = 0
    failed: bool = False
    finished: bool = False

    @property
    def remaining(self) -> int:
        return len(self.tasks) - len(self.done) - len(self.skipped)


@dataclass
class Barrier:
    expected: int = 0
    waiting: List[Job] = field(default_factory=list)


class World(Component):
    """
    A complete simulated deployment for one (scenario, plan, seed).

    Args:
        scenario: Scenario configuration
        plan: Placement plan with data paths attached
        seed: Run seed
        mode: hivemind, centralized or distributed (peer coordination traffic)
        trace_path: Optional NDJSON event log
        run_id: Label for logs and errors
    """

    def __init__(self, scenario: ScenarioConfig, plan: PlacementPlan, seed: int,
                 mode: str = 'hivemind', trace_path: Optional[str] = None,
                 run_id: Optional[str] = None):
        super().__init__('world')
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.scenario = scenario
        self.plan = plan
        self.seed = seed
        self.mode = mode
        self.profile = scenario.profile()
        self.graph = scenario.graph()
        missing = [t for t in self.graph.task_names if t not in self.profile.tasks]
        if missing:
            raise ConfigError(f"workload {self.profile.id} has no parameters for {', '.join(missing)}")
        self.device_class = scenario.device_config()
        self.controller = scenario.controller_config()
        self.detection = scenario.detection_config()
        self.fps = scenario.fps or self.profile.fps
        self.capture_fps = 1.0 / self.profile.period_s if self.profile.arrival == 'periodic' else self.fps
        self.frame_bytes = scenario.frame_bytes or self.profile.frame_bytes
        self.tick_us = max(1, int(round(US_PER_S / self.capture_fps)))

        self.kernel = Kernel(seed, scenario.sim_limits(), trace_path, run_id)
        self.metrics: MetricsReport = self.kernel.metrics
        self.kernel.register(self)
        self._build_field()
        self._build_devices()
        self.network = Network(self.kernel, scenario.topology_config(), self.device_ids,
                               is_alive=lambda d: self.devices[d].alive)
        self.cluster = self.kernel.register(
            ServerlessCluster(scenario.cluster_config(), self.controller, self.metrics))
        self.monitor = self.kernel.register(HeartbeatMonitor(self.controller, self.metrics))
        self.monitor.subscribe(self._on_failure, self._on_rejoin)
        self._analyze_graph()

        self.jobs: Dict[int, Job] = {}
        self.barriers: Dict[Tuple, Barrier] = {}
        self.batches: Dict[str, list] = {}
        self.launched: Set[str] = set()
        self.former: Dict[str, Set[Cell]] = {}
        self.killed_at: Dict[str, int] = {}
        self.found: Set[str] = set()
        self.goal_time_us: Optional[int] = None
        self.coverage_time_us: Optional[int] = None
        self.infeasible: Optional[str] = None
        self.all_dead = False
        self._next_job = 0
        self._next_inv = 0
        self.replanner: Optional[Replanner] = None
        if self.controller.replan and mode == 'hivemind':
            self.replanner = Replanner(self.graph, self.controller, self._input_estimates(),
                                       fixed=forced_locations(self.graph))

    # -- construction --------------------------------------------------------

    def _build_field(self) -> None:
        s = self.scenario
        self.field = build_field(s.devices, s.cells_per_device)
        self.field.obstacles = self.field.obstacle_cells_from_rects(s.obstacles)
        items = s.items if s.items is not None else self.profile.targets.get('item', 0)
        people = s.people if s.people is not None else self.profile.targets.get('person', 0)
        self.field.targets = (place_items(self.field, items, self.kernel.rng('items'))
                              + place_people(self.field, people, self.seed, s.person_speed_mps))
        self.target_kind = {t.target_id: t.kind for t in self.field.targets}

    def _build_devices(self) -> None:
        self.device_ids = device_ids(self.scenario.devices)
        self.regions = partition_field(self.field, self.device_ids)
        self.adjacency = region_adjacency(self.regions)
        self.free = self.field.free_cells()
        self.devices: Dict[str, EdgeDevice] = {}
        self.assigned: Dict[str, Set[Cell]] = {}
        self.covered: Set[Cell] = set()
        self.unreachable: Set[Cell] = set()
        dc = self.device_class
        for i, device_id in enumerate(self.device_ids):
            region = self.regions[device_id]
            device = EdgeDevice(device_id, i, dc, battery=dc.battery_pct, region=region,
                                own_cells=list(region.cells))
            device.station = self.kernel.register(ServiceStation(f"{device_id}-cpu", dc.cores))
            route = plan_route(region.cells, self.field, allowed=self.free)
            device.assign_route(route)
            self.unreachable.update(route.dropped)
            if route.waypoints:
                device.x, device.y = self.field.cell_center(route.waypoints[0].cell)
            else:
                device.x, device.y = (region.x0 + region.x1) / 2, (region.y0 + region.y1) / 2
            self.assigned[device_id] = set(region.cells)
            self.devices[device_id] = device
        self.coverage_target = set(self.free) - self.unreachable

    def _analyze_graph(self) -> None:
        graph = self.graph
        dag = graph.to_networkx()
        order = {name: i for i, name in enumerate(graph.task_names)}
        self.sources = [t.name for t in graph.tasks if t.is_source]
        per_frame = set(self.sources)
        for source in self.sources:
            per_frame |= nx.descendants(dag, source)
        topo = list(nx.lexicographical_topological_sort(dag, key=order.get))
        self.frame_tasks = [t for t in topo if t in per_frame]
        self.setup_tasks = [t for t in topo if t not in per_frame]
        self.data_parents = {t.name: [p for p in t.parents if p in order] for t in graph.tasks}

        def same_phase(a: str, b: str) -> bool:
            return (a in per_frame) == (b in per_frame)

        self.deps = {name: {p for p in self.data_parents[name] if same_phase(p, name)}
                     for name in graph.task_names}
        for ordering in graph.orderings:
            first, second = ordering.subjects
            if ordering.kind == 'Serial':
                before, after = first, second
            elif ordering.kind == 'Synchronize' and second in order:
                before, after = second, first
            else:
                continue
            if same_phase(before, after) and before not in nx.descendants(dag, after):
                self.deps[after].add(before)
                dag.add_edge(before, after)
        self.children = {name: [c for c in topo if name in self.deps[c]] for name in graph.task_names}
        self.downstream = {name: nx.descendants(dag, name) for name in graph.task_names}
        self.sync_tasks = set(graph.sync_all_tasks())
        self.persist = {d.subject for d in graph.directives_of('Persist')}
        self.isolate = {d.subject for d in graph.directives_of('Isolate')}
        self.priority = {d.subject: PRIORITIES[d.payload.get('priority', 'normal')]
                         for d in graph.directives_of('Schedule')}
        self.node_sets = {d.subject: parse_node_set(d.payload['nodes'])
                          for d in graph.directives_of('Schedule') if 'nodes' in d.payload}
        self.restore = {d.subject: d.payload.get('policy', 'respawn')
                        for d in graph.directives_of('Restore')}
        self.learn_global = [d.subject for d in graph.directives_of('Learn')
                             if d.payload.get('scope') == 'Global']
        self.shards = {}
        for name in graph.task_names:
            task = self.profile.task(name)
            factor = 1.0 / task.parallelism
            self.shards[name] = (task.cloud.scaled(factor), task.edge.scaled(factor))
        goal = self.profile.goal or {}
        self.goal_kind = goal.get('target')
        self.goal_task = goal.get('task')
        self.goal_total = {t.target_id for t in self.field.targets if t.kind == self.goal_kind}
        self.patrol = any(t.kind == self.goal_kind and t.max_speed > 0 for t in self.field.targets)

    def _input_estimates(self) -> Dict[str, int]:
        """Static per-task input size, used to rank tasks for migration."""
        estimates = {}
        for name in self.graph.task_names:
            total = self.profile.task(name).input_bytes
            if name in self.sources:
                total += self.frame_bytes
            for parent in self.data_parents[name]:
                total += self.profile.task(parent).output_size(self.frame_bytes, 0)
            estimates[name] = total
        return estimates

    # -- run -----------------------------------------------------------------

    @property
    def coverage_complete(self) -> bool:
        return self.coverage_target <= self.covered

    @property
    def goal_met(self) -> bool:
        return self.goal_total <= self.found

    @property
    def done(self) -> bool:
        if self.all_dead or self.infeasible:
            return True
        if not self.coverage_complete:
            return False
        if self.patrol and not self.goal_met:
            return False
        return self.metrics.in_flight == 0

    def start(self) -> None:
        for device_id, device in self.devices.items():
            self.metrics.record_battery(device_id, 0, device.battery)
            self.monitor.watch(device_id)
        self.schedule(0, 'setup')
        self.schedule(self.tick_us, 'tick')
        self.schedule(US_PER_S, 'second')
        self.schedule(s_to_us(self.controller.heartbeat_period_s), 'heartbeat')
        if self.learn_global:
            self.schedule(s_to_us(LEARN_PERIOD_S), 'learn')
        if self.replanner is not None:
            self.schedule(s_to_us(self.controller.replan_interval_s), 'replan')
        for failure in self.scenario.failures:
            device_id = str(failure['device'])
            if device_id not in self.devices:
                raise ConfigError(f"failure for unknown device {device_id}")
            self.kernel.schedule_at(s_to_us(failure['at_s']) + 1, self.id, 'fail_device', device=device_id)
            if failure.get('recover_s') is not None:
                self.kernel.schedule_at(s_to_us(failure['recover_s']), self.id, 'recover_device',
                                        device=device_id)
        for failure in self.scenario.node_failures:
            self.kernel.schedule_at(s_to_us(failure['at_s']), self.cluster.id, 'fail_node',
                                    node=int(failure['node']))

    def run(self) -> MetricsReport:
        """Run to the mission end (or the scenario's fixed duration) and return the metrics."""
        self.start()
        if self.scenario.duration_s is not None:
            metrics = self.kernel.run(time_cap_us=s_to_us(self.scenario.duration_s))
        else:
            metrics = self.kernel.run(until=lambda _kernel: self.done)
        self._finalize()
        return metrics

    def handle(self, event: SimEvent) -> None:
        kind = event.kind
        if kind == 'tick':
            self._tick()
        elif kind == 'second':
            self._second()
        elif kind == 'heartbeat':
            self._heartbeat()
        elif kind == 'heartbeat_recv':
            self.monitor.receive(event.params['device'])
        elif kind == 'setup':
            self._setup()
        elif kind == 'fail_device':
            self._kill(event.params['device'])
        elif kind == 'recover_device':
            self._recover(event.params['device'])
        elif kind == 'learn':
            self._learn()
        elif kind == 'replan':
            self._replan()

    # -- movement and capture ------------------------------------------------

    def _tick(self) -> None:
        now = self.now
        epoch = now // self.tick_us
        batched = self.profile.arrival == 'per-batch'
        for device in self.devices.values():
            if not device.alive or not device.flying:
                continue
            result = step_device(device, self.tick_us, self.field, now - self.tick_us,
                                 self.capture_fps, self.frame_bytes)
            for waypoint in result.arrived:
                if waypoint.visit:
                    self._visit(waypoint.cell)
            for frame in result.frames:
                self.metrics.count('frames_captured')
                if batched:
                    self.batches.setdefault(device.device_id, []).append(frame)
                else:
                    self._inject(device, [frame], epoch, frame.capture_us)
            if device.alive and device.route_done:
                self._route_finished(device)
        if not any(d.alive for d in self.devices.values()):
            if not self.all_dead:
                logger.warning(f"Every device is down at t={us_to_s(now):.1f}s")
            self.all_dead = True
        self.schedule(self.tick_us, 'tick')

    def _visit(self, cell: Cell) -> None:
        if cell in self.covered:
            return
        self.covered.add(cell)
        if self.coverage_time_us is None and self.coverage_complete:
            self.coverage_time_us = self.now
            logger.info(f"Coverage complete at t={us_to_s(self.now):.1f}s")

    def _route_finished(self, device: EdgeDevice) -> None:
        if self.patrol and not self.goal_met and self.assigned[device.device_id]:
            device.passes += 1
            start = self.field.cell_of(device.x, device.y)
            device.assign_route(plan_route(sorted(self.assigned[device.device_id]), self.field,
                                           start=start, allowed=self.free))
            return
        device.flying = device.capturing = False

    def _second(self) -> None:
        now = self.now
        for device_id, device in self.devices.items():
            self.metrics.record_battery(device_id, now, device.battery)
        for device_id in list(self.batches):
            frames = self.batches.pop(device_id)
            device = self.devices[device_id]
            if frames and device.alive:
                self._inject(device, frames, now // US_PER_S, now)
        if self.mode == 'distributed':
            for device in self.devices.values():
                self._peer_exchange(device, self.controller.peer_sync_bytes)
        self.schedule(US_PER_S, 'second')

    def _peer_exchange(self, device: EdgeDevice, nbytes: int) -> None:
        if not device.alive or device.device_id not in self.launched:
            return
        for neighbour in sorted(self.adjacency.neighbors(device.device_id),
                                key=lambda d: self.devices[d].index):
            if self.devices[neighbour].alive:
                self._send(None, device.device_id, neighbour, nbytes, None, lambda: None)

    def _learn(self) -> None:
        for device in self.devices.values():
            edge_learners = [t for t in self.learn_global
                             if self.plan.location_for(t, device.device_id) == EDGE]
            if not edge_learners or not device.alive or device.device_id not in self.launched:
                continue
            nbytes = self.controller.model_update_bytes * len(edge_learners)
            if self.mode == 'distributed':
                self._peer_exchange(device, nbytes)
            else:
                self._send(None, device.device_id, CLOUD_ENDPOINT, nbytes,
                           data_path(EDGE, CLOUD, self.plan.accel), lambda: None)
        self.schedule(s_to_us(LEARN_PERIOD_S), 'learn')

    def _replan(self) -> None:
        plan = self.replanner.replan(self.now, self.plan, self.metrics)
        if plan is not None:
            self.plan = plan
            self.metrics.count('replans')
        self.schedule(s_to_us(self.controller.replan_interval_s), 'replan')

    # -- setup ---------------------------------------------------------------

    def _setup(self) -> None:
        for device in self.devices.values():
            if not self.setup_tasks:
                self._launch(device)
                continue
            job = self._new_job(device, 0, 0, [], self.setup_tasks, setup=True)
            self._start_job(job)

    def _launch(self, device: EdgeDevice, job: Optional[Job] = None) -> None:
        """Deliver setup outputs to the per-frame tasks' side, then take off."""
        handoffs = []
        if job is not None:
            for name in self.setup_tasks:
                if name not in job.outputs:
                    continue
                side, nbytes, _ = job.outputs[name]
                for child in self.graph.task(name).children:
                    if child in self.frame_tasks and \
                            self.plan.location_for(child, device.device_id) != side:
                        handoffs.append((side, nbytes))
                        break
        remaining = [len(handoffs)]

        def take_off() -> None:
            remaining[0] -= 1
            if remaining[0] > 0 or not device.alive:
                return
            self.launched.add(device.device_id)
            if device.route.waypoints:
                device.flying = device.capturing = True
            logger.debug(f"Device {device.device_id} took off at t={us_to_s(self.now):.3f}s")

        if not handoffs:
            remaining[0] = 1
            take_off()
            return
        for side, nbytes in handoffs:
            src, dst = (CLOUD_ENDPOINT, device.device_id) if side == CLOUD else (device.device_id, CLOUD_ENDPOINT)
            self._send(job, src, dst, nbytes, data_path(side, EDGE if side == CLOUD else CLOUD,
                                                        self.plan.accel), take_off)

    # -- jobs ----------------------------------------------------------------

    def _new_job(self, device: EdgeDevice, capture_us: int, frames: int, tags: List[str],
                 tasks: List[str], setup: bool = False) -> Job:
        job = Job(self._next_job, device, capture_us, frames, self.frame_bytes, tags, tasks, setup=setup)
        self._next_job += 1
        job.pending = {t: len(self.deps[t]) for t in tasks}
        self.jobs[job.job_id] = job
        return job

    def _inject(self, device: EdgeDevice, frames: list, epoch: int, capture_us: int) -> None:
        tags = sorted({tag for frame in frames for tag in frame.tags})
        job = self._new_job(device, capture_us, len(frames), tags, self.frame_tasks)
        self.metrics.count('injected')
        for name in self.frame_tasks:
            if name in self.sync_tasks:
                key = (name, epoch, self._barrier_scope(job, name))
                self.barriers.setdefault(key, Barrier()).expected += 1
                job.barrier_keys[name] = key
        self._start_job(job)

    def _start_job(self, job: Job) -> None:
        for name in job.tasks:
            if job.pending[name] == 0:
                self._ready(job, name)

    def _barrier_scope(self, job: Job, name: str) -> str:
        if self.plan.location_for(name, job.device.device_id) == CLOUD:
            return CLOUD_ENDPOINT
        return job.device.device_id

    def _ready(self, job: Job, name: str) -> None:
        if job.failed or name in job.skipped:
            return
        job.ready_us[name] = self.now
        if name in job.barrier_keys:
            key = job.barrier_keys[name]
            job.arrived.add(name)
            self.barriers[key].waiting.append(job)
            self._release(key)
            return
        self._gather(job, name)

    def _leave_barriers(self, job: Job, names) -> None:
        for name in names:
            key = job.barrier_keys.get(name)
            if key is None or name in job.arrived or key not in self.barriers:
                continue
            self.barriers[key].expected -= 1
            self._release(key)

    def _release(self, key: Tuple) -> None:
        barrier = self.barriers.get(key)
        if barrier is None or len(barrier.waiting) < barrier.expected:
            return
        del self.barriers[key]
        for job in barrier.waiting:
            if not job.failed:
                self._gather(job, key[0])

    def _gather(self, job: Job, name: str) -> None:
        """Move every input to the task's side, then execute it."""
        device_id = job.device.device_id
        side = self.plan.location_for(name, device_id)
        accel = self.plan.accel
        inputs: List[Tuple[str, int, Optional[int]]] = []
        if name in self.sources:
            inputs.append((EDGE, job.frames * job.frame_bytes, None))
        profile = self.profile.task(name)
        if profile.input_bytes:
            inputs.append((CLOUD, profile.input_bytes, None))
        for parent in self.data_parents[name]:
            if parent in job.outputs:
                inputs.append(job.outputs[parent])
        local = [(nbytes, container) for s, nbytes, container in inputs if s == side]
        remote = [(s, nbytes) for s, nbytes, _ in inputs if s != side and nbytes > 0]
        remaining = [len(remote)]

        def arrived() -> None:
            remaining[0] -= 1
            if remaining[0] == 0 and not job.failed:
                self._execute(job, name, side, local)

        if not remote:
            self._execute(job, name, side, local)
            return
        for src_side, nbytes in remote:
            src, dst = (device_id, CLOUD_ENDPOINT) if src_side == EDGE else (CLOUD_ENDPOINT, device_id)
            self._send(job, src, dst, nbytes, data_path(src_side, side, accel), arrived)

    def _send(self, job: Optional[Job], src: str, dst: str, nbytes: int, path: Optional[str],
              on_arrival) -> None:
        def delivered(elapsed: int) -> None:
            if job is not None:
                job.network_us += elapsed
            on_arrival()

        def lost() -> None:
            if job is not None:
                self._fail(job, f"transfer {src}->{dst} lost")

        try:
            self.network.transfer(src, dst, nbytes, path, delivered, lost)
        except LinkDown as e:
            if job is not None:
                self._fail(job, str(e))
            return
        if src != CLOUD_ENDPOINT:
            drain_battery(self.devices[src], Activity(radio_bytes=nbytes))

    def _execute(self, job: Job, name: str, side: str, local: List[Tuple[int, Optional[int]]]) -> None:
        if job.failed:
            return
        profile = self.profile.task(name)
        cloud_dist, edge_dist = self.shards[name]
        shards = profile.parallelism
        left = [shards]
        if side == EDGE:
            device = job.device
            if not device.alive:
                self._fail(job, f"device {device.device_id} is down")
                return
            stream = self.kernel.rng(f"{device.device_id}-exec")

            def shard_done(_job, _sojourn) -> None:
                if job.failed:
                    return
                if not device.alive:
                    self._fail(job, f"device {device.device_id} is down")
                    return
                left[0] -= 1
                if left[0] == 0:
                    self._complete(job, name, EDGE, None)

            for _ in range(shards):
                service = sample(edge_dist, stream)
                drain_battery(device, Activity(compute_core_ms=service / 1000))
                device.station.submit(job, shard_done, service_us=service)
            return

        input_bytes = sum(nbytes for nbytes, _ in local)
        parent_container = next((c for _, c in local if c is not None), None)
        path = data_path(CLOUD, CLOUD, self.plan.accel) if input_bytes else None
        last_container: List[Optional[int]] = [None]

        def invocation_done(inv: FunctionInvocation) -> None:
            if job.failed:
                return
            left[0] -= 1
            if inv.container is not None:
                last_container[0] = inv.container.id
            if left[0] == 0:
                self._complete(job, name, CLOUD, last_container[0])

        def invocation_failed(inv: FunctionInvocation, reason: str) -> None:
            self._fail(job, f"{name}: {reason}")

        for _ in range(shards):
            inv = FunctionInvocation(
                inv_id=self._next_inv, instance_id=f"{job.job_id}:{name}", task_type=name,
                arrival_us=self.now, service=cloud_dist, deps_id=profile.deps_id,
                parent_container=parent_container, input_bytes=input_bytes // shards,
                input_path=path, output_bytes=profile.output_bytes, isolated=name in self.isolate,
                priority=self.priority.get(name, PRIORITIES['normal']),
                nodes=self.node_sets.get(name), restore=self.restore.get(name, 'respawn'),
                on_done=invocation_done, on_fail=invocation_failed)
            self._next_inv += 1
            self.cluster.invoke(inv)

    def _screen(self, job: Job) -> bool:
        """Whether a frame yields candidates for the downstream stages."""
        stream = self.kernel.rng('detection')
        seen = [tag for tag in job.tags if not stream.bernoulli(self.detection.false_negative_rate)]
        if seen:
            return True
        if stream.bernoulli(self.detection.false_positive_rate):
            self.metrics.count('false_positives')
            return True
        return False

    def _detect(self, job: Job, kind: str) -> Set[str]:
        stream = self.kernel.rng('detection')
        found = {tag for tag in job.tags if self.target_kind.get(tag) == kind
                 and not stream.bernoulli(self.detection.false_negative_rate)}
        if stream.bernoulli(self.detection.false_positive_rate):
            self.metrics.count('false_positives')
        return found

    def _complete(self, job: Job, name: str, side: str, container: Optional[int]) -> None:
        if job.failed:
            return
        now = self.now
        profile = self.profile.task(name)
        job.done.add(name)
        if not job.setup:
            self.metrics.record_latency(f"task:{name}", now, now - job.ready_us[name])
        if profile.detects:
            job.detected = self._detect(job, profile.detects)
        tags = len(job.detected) if job.detected is not None else len(job.tags)
        size = profile.output_size(job.frames * job.frame_bytes if profile.output_is_frame
                                   else self.frame_bytes, tags)
        job.outputs[name] = (side, size, container)
        if name == self.goal_task and not job.setup:
            self._goal_progress(job)
        if name in self.persist:
            self._persist(job, side, size)
        if profile.pass_rule == 'targets' and not job.setup and not self._screen(job):
            cut = [t for t in job.tasks if t in self.downstream[name] and t not in job.done]
            job.skipped.update(cut)
            self.metrics.count('frames_filtered')
            self._leave_barriers(job, cut)
        for child in self.children[name]:
            if child not in job.pending:
                continue
            job.pending[child] -= 1
            if job.pending[child] == 0 and child not in job.skipped:
                self._ready(job, child)
        if job.remaining == 0 and not job.finished:
            self._finish(job)

    def _goal_progress(self, job: Job) -> None:
        if job.detected is not None:
            tags = job.detected
        else:
            tags = {t for t in job.tags if self.target_kind.get(t) == self.goal_kind}
        self.found.update(t for t in tags if self.target_kind.get(t) == self.goal_kind)
        if self.goal_total and self.goal_time_us is None and self.goal_met:
            self.goal_time_us = self.now
            logger.info(f"Goal met: all {len(self.goal_total)} {self.goal_kind}(s) found "
                        f"at t={us_to_s(self.now):.1f}s")

    def _persist(self, job: Job, side: str, nbytes: int) -> None:
        if side == CLOUD:
            self.cluster.persist(nbytes)
            return
        self._send(None, job.device.device_id, CLOUD_ENDPOINT, nbytes,
                   data_path(EDGE, CLOUD, self.plan.accel), lambda: self.cluster.persist(nbytes))

    def _finish(self, job: Job) -> None:
        job.finished = True
        self.jobs.pop(job.job_id, None)
        if job.setup:
            self._launch(job.device, job)
            return
        now = self.now
        self.metrics.count('completed')
        self.metrics.record_latency('e2e', now, now - job.capture_us)
        self.metrics.record_latency('network', now, job.network_us)

    def _fail(self, job: Job, reason: str) -> None:
        if job.failed or job.finished:
            return
        job.failed = True
        self.jobs.pop(job.job_id, None)
        logger.debug(f"Job {job.job_id} on {job.device.device_id} failed: {reason}")
        if job.setup:
            if job.device.alive:
                self._launch(job.device)
            return
        self.metrics.count('failed')
        self._leave_barriers(job, list(job.barrier_keys))

    # -- heartbeats and failures ----------------------------------------------

    def _heartbeat(self) -> None:
        stream = self.kernel.rng('heartbeat')
        path = data_path(EDGE, CLOUD, self.plan.accel)
        size = self.controller.heartbeat_bytes
        for device_id, device in self.devices.items():
            if not device.alive:
                continue
            if stream.bernoulli(self.controller.heartbeat_loss):
                self.metrics.count('heartbeats_lost')
                continue
            self.metrics.count('heartbeats_sent')
            delay = math.ceil(self.network.transfer_estimate_us(device_id, CLOUD_ENDPOINT, size, path))
            self.schedule(delay, 'heartbeat_recv', device=device_id)
            drain_battery(device, Activity(radio_bytes=size))
        self.schedule(s_to_us(self.controller.heartbeat_period_s), 'heartbeat')

    def _kill(self, device_id: str) -> None:
        device = self.devices[device_id]
        if not device.alive:
            return
        device.alive = False
        device.flying = device.capturing = False
        self.killed_at[device_id] = self.now
        logger.info(f"Device {device_id} went down at t={us_to_s(self.now):.3f}s")

    def _recover(self, device_id: str) -> None:
        device = self.devices[device_id]
        if device.alive or device.battery <= 0:
            return
        device.alive = True
        logger.info(f"Device {device_id} back up at t={us_to_s(self.now):.3f}s")

    def _remaining_cells(self, cells) -> List[Cell]:
        return sorted(c for c in cells if c not in self.covered and c not in self.unreachable)

    def _reroute(self, device: EdgeDevice) -> None:
        cells = self._remaining_cells(self.assigned[device.device_id])
        start = self.field.cell_of(device.x, device.y)
        route = plan_route(cells, self.field, start=start, allowed=self.free)
        self.unreachable.update(route.dropped)
        self.coverage_target -= set(route.dropped)
        device.assign_route(route)
        if device.alive and device.device_id in self.launched and cells:
            device.flying = device.capturing = True

    def _on_failure(self, device_id: str, now: int) -> None:
        """Hand the silent device's uncovered cells to its region neighbours."""
        uncovered = self._remaining_cells(self.assigned[device_id])
        self.former[device_id] = set(self.assigned[device_id])
        self.assigned[device_id] = set()
        try:
            acquired = repartition_on_failure(device_id, self.devices, self.adjacency, self.field,
                                              uncovered, self.controller.battery_threshold)
        except MissionInfeasible as e:
            logger.warning(f"Mission infeasible: {e}")
            self.infeasible = str(e)
            return
        for neighbour, cells in acquired.items():
            self.assigned[neighbour].update(cells)
            self._reroute(self.devices[neighbour])

    def _on_rejoin(self, device_id: str, now: int) -> None:
        """Give a rejoined device back its former cells that are still uncovered."""
        former = self.former.pop(device_id, set())
        back = set(self._remaining_cells(former))
        for other, cells in self.assigned.items():
            if other != device_id and cells & back:
                cells.difference_update(back)
                self._reroute(self.devices[other])
        self.assigned[device_id] = former
        device = self.devices[device_id]
        self._reroute(device)

    # -- results ---------------------------------------------------------------

    def _finalize(self) -> None:
        m = self.metrics
        m.counters['unreachable_cells'] = len(self.unreachable)
        target = self.coverage_target
        e2e = m.samples('e2e').percentile_ms(50)
        network = m.samples('network').percentile_ms(50)
        m.extra.update({
            'mode': self.mode,
            'plan_id': self.plan.plan_id,
            'devices': len(self.devices),
            'routers': self.network.router_count,
            'free_cells': len(self.free),
            'covered_cells': len(self.covered & target),
            'coverage': len(self.covered & target) / len(target) if target else 1.0,
            'coverage_time_s': us_to_s(self.coverage_time_us) if self.coverage_time_us is not None else None,
            'network_share': network / e2e if e2e > 0 else 0.0,
            'cloud': self.cluster.stats(),
            'failures': {
                d: {'failed_at_s': us_to_s(t),
                    'detected_at_s': us_to_s(self.monitor.detected_at[d])
                    if d in self.monitor.detected_at else None}
                for d, t in sorted(self.killed_at.items())
            },
            'mission_infeasible': self.infeasible,
            'all_devices_down': self.all_dead,
        })
        if self.goal_kind:
            m.goals = {
                'target': self.goal_kind,
                'task': self.goal_task,
                'found': len(self.found),
                'total': len(self.goal_total),
                'met': self.goal_met,
                'time_s': us_to_s(self.goal_time_us) if self.goal_time_us is not None else None,
            }
