"""
Serverless cluster and its scheduler.

The controller spends a fixed decision time per invocation, then places it:
parent's container, a warm idle container, a cold start on the least-utilized
node, or (after evicting an idle container) a cold start; otherwise the
invocation waits in the controller queue. Idle containers are kept alive for
a configurable window. Stragglers get one speculative duplicate on another
node, and nodes that keep producing stragglers are put on probation.
"""

import heapq
import logging
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Tuple

import numpy as np

from hivesim.config import ClusterConfig, ControllerConfig
from hivesim.errors import NoCapacity
from hivesim.sim.kernel import (Component, Distribution, MetricsReport, ServiceStation,
                                SimEvent, sample)
from hivesim.sim.net import DataPathKind
from hivesim.utils import ms_to_us, s_to_us

logger = logging.getLogger(__name__)

PRIORITIES = {'high': 0, 'normal': 1, 'low': 2}

INSTANTIATING = 'Instantiating'
BUSY = 'Busy'
IDLE = 'Idle'
TERMINATED = 'Terminated'

_TRANSITIONS = {
    INSTANTIATING: (BUSY, TERMINATED),
    BUSY: (IDLE, TERMINATED),
    IDLE: (BUSY, TERMINATED),
    TERMINATED: (),
}


@dataclass
class ServerNode:
    index: int
    logical_cores: int
    memory_mb: int
    slowdown: float = 1.0
    probation_until: Optional[int] = None
    down: bool = False
    cores: List[Optional[int]] = field(default_factory=list)
    straggler_times: Deque[int] = field(default_factory=deque)

    def __post_init__(self):
        if not self.cores:
            self.cores = [None] * self.logical_cores

    @property
    def id(self) -> str:
        return f"node-{self.index}"

    @property
    def cores_in_use(self) -> int:
        return sum(1 for c in self.cores if c is not None)

    @property
    def utilization(self) -> float:
        return self.cores_in_use / self.logical_cores

    def free_core(self) -> Optional[int]:
        for core, owner in enumerate(self.cores):
            if owner is None:
                return core
        return None

    def on_probation(self, now: int) -> bool:
        return self.probation_until is not None and now < self.probation_until


@dataclass
class ContainerInst:
    id: int
    node: ServerNode
    task_type: str
    deps_id: str
    isolated: bool = False
    state: str = INSTANTIATING
    idle_since: Optional[int] = None
    pinned_cores: List[int] = field(default_factory=list)
    resident_output: Optional[Tuple[str, int]] = None

    def transition(self, state: str) -> None:
        assert state in _TRANSITIONS[self.state], f"container {self.id}: {self.state} -> {state}"
        self.state = state


@dataclass
class FunctionInvocation:
    """One function execution request (a task instance, or one shard of it)."""
    inv_id: int
    instance_id: str
    task_type: str
    arrival_us: int
    service: Distribution
    deps_id: str = ''
    parent_container: Optional[int] = None
    input_bytes: int = 0
    input_path: Optional[str] = None
    output_bytes: int = 0
    isolated: bool = False
    priority: int = 1
    nodes: Optional[List[int]] = None
    restore: str = 'respawn'
    is_speculative: bool = False
    original: Optional['FunctionInvocation'] = None
    duplicate: Optional['FunctionInvocation'] = None
    on_done: Optional[Callable[['FunctionInvocation'], None]] = None
    on_fail: Optional[Callable[['FunctionInvocation', str], None]] = None
    start_us: Optional[int] = None
    end_us: Optional[int] = None
    cold_start: bool = False
    decision: Optional[str] = None
    instantiation_us: int = 0
    exchange_us: int = 0
    node: Optional[ServerNode] = None
    container: Optional[ContainerInst] = None
    pending_event: Optional[SimEvent] = None
    straggler_flagged: bool = False
    cancelled: bool = False
    consumed: bool = False
    attempt: int = 0


class JobLatencyTracker:
    """Per task type execution-duration samples and a periodically refreshed percentile."""

    def __init__(self, percentile: float = 90.0, min_samples: int = 20,
                 refresh_us: int = 1_000_000, keep: int = 2000):
        self.percentile = percentile
        self.min_samples = min_samples
        self.refresh_us = refresh_us
        self.samples: Dict[str, Deque[int]] = {}
        self.estimates: Dict[str, float] = {}
        self._refreshed: Dict[str, int] = {}
        self.keep = keep

    def add(self, task_type: str, duration_us: int) -> None:
        self.samples.setdefault(task_type, deque(maxlen=self.keep)).append(duration_us)

    def threshold(self, task_type: str, now: int) -> Optional[float]:
        """Current percentile estimate, or None during warmup."""
        samples = self.samples.get(task_type)
        if not samples or len(samples) < self.min_samples:
            return None
        last = self._refreshed.get(task_type)
        if last is None or now - last >= self.refresh_us:
            self.estimates[task_type] = float(np.percentile(np.asarray(samples), self.percentile))
            self._refreshed[task_type] = now
        return self.estimates[task_type]


class ServerlessCluster(Component):
    """
    Cluster nodes, containers, controller queue and the placement policy.

    Args:
        config: Cluster shape and container parameters
        controller: Straggler and probation knobs
        metrics: Report receiving counters and samples
    """

    def __init__(self, config: ClusterConfig, controller: ControllerConfig,
                 metrics: MetricsReport, component_id: str = 'cloud'):
        super().__init__(component_id)
        self.config = config
        self.controller_config = controller
        self.metrics = metrics
        self.nodes = [ServerNode(i, config.cores_per_node, config.memory_mb, config.slowdown(i))
                      for i in range(config.nodes)]
        self.containers: Dict[int, ContainerInst] = {}
        self.idle_order: 'OrderedDict[int, ContainerInst]' = OrderedDict()
        self.pending: List[Tuple[int, int, FunctionInvocation]] = []
        self.running: Dict[int, FunctionInvocation] = {}
        self.placed: Dict[int, FunctionInvocation] = {}
        self.active = 0
        self.tracker = JobLatencyTracker(controller.straggler_percentile,
                                         controller.straggler_min_samples,
                                         s_to_us(controller.tracker_refresh_s))
        self.keepalive_us = s_to_us(config.keepalive_s)
        self.cold_start = Distribution.lognormal(config.cold_start_p50_ms, config.cold_start_p99_ms)
        self.busy_core_us = 0
        self._next_container = 0
        self._next_seq = 0
        self._rr = 0
        self._scanning = False
        self.controller_station: Optional[ServiceStation] = None
        self.store: Optional[ServiceStation] = None
        self.stream = None

    def attach(self, kernel) -> None:
        super().attach(kernel)
        self.stream = kernel.rng(self.id)
        self.controller_station = kernel.register(ServiceStation(
            f"{self.id}-controller", self.config.controller_workers))
        self.store = kernel.register(ServiceStation(f"{self.id}-store", self.config.store_servers))

    # -- admission ---------------------------------------------------------

    def invoke(self, inv: FunctionInvocation) -> None:
        """Submit an invocation through the controller (fixed decision overhead)."""
        self.metrics.count('invocations')
        self.controller_station.submit(inv, self._decided,
                                       service_us=ms_to_us(self.config.controller_overhead_ms),
                                       priority=inv.priority)

    def _decided(self, inv: FunctionInvocation, _sojourn: int) -> None:
        if inv.cancelled:
            return
        if self.pending:
            self._enqueue(inv)
            self._drain()
        elif self.active >= self.config.concurrency_limit or self.schedule_invocation(inv) is None:
            self._enqueue(inv)

    def _enqueue(self, inv: FunctionInvocation) -> None:
        if len(self.pending) >= self.config.queue_cap:
            self.metrics.count('rejected')
            logger.warning(f"Controller queue full; rejecting invocation {inv.inv_id}")
            if inv.on_fail:
                inv.on_fail(inv, str(NoCapacity('cluster cores exhausted and controller queue full')))
            return
        self.metrics.count('queued_invocations')
        heapq.heappush(self.pending, (inv.priority, self._next_seq, inv))
        self._next_seq += 1

    def _drain(self) -> None:
        """
        Place queued invocations in priority order.

        An invocation whose Schedule node set has no room keeps its place in
        the queue without blocking later ones. An unrestricted invocation that
        cannot be placed means no core is free anywhere, so the scan stops.
        """
        blocked = []
        while self.pending and self.active < self.config.concurrency_limit:
            entry = heapq.heappop(self.pending)
            inv = entry[2]
            if inv.cancelled:
                continue
            if self.schedule_invocation(inv) is None:
                blocked.append(entry)
                if not inv.nodes:
                    break
        for entry in blocked:
            heapq.heappush(self.pending, entry)

    # -- placement ---------------------------------------------------------

    def _eligible(self, inv: FunctionInvocation, exclude: Optional[ServerNode] = None) -> List[ServerNode]:
        now = self.now
        allowed = set(inv.nodes) if inv.nodes else None
        return [n for n in self.nodes
                if not n.down and not n.on_probation(now) and n is not exclude
                and (allowed is None or n.index in allowed)]

    def _rank(self, node: ServerNode) -> Tuple[float, int]:
        return node.utilization, (node.index - self._rr) % len(self.nodes)

    def schedule_invocation(self, inv: FunctionInvocation,
                            exclude: Optional[ServerNode] = None) -> Optional[str]:
        """
        Place an invocation and start it.

        Returns:
            'same_container', 'warm' or 'cold'; None when it must wait
        """
        parent = self.containers.get(inv.parent_container) if inv.parent_container is not None else None
        if (parent is not None and parent.state == IDLE and parent.deps_id == inv.deps_id
                and not inv.isolated and not parent.isolated and parent.node is not exclude
                and not parent.node.down):
            self._reuse(inv, parent)
            inv.decision = 'same_container'
            self.metrics.count('same_container')
            return inv.decision

        nodes = self._eligible(inv, exclude)
        if not inv.isolated:
            idle = [c for c in self.idle_order.values()
                    if c.task_type == inv.task_type and c.deps_id == inv.deps_id
                    and not c.isolated and c.node in nodes]
            if idle:
                container = min(idle, key=lambda c: (self._rank(c.node), -c.idle_since, c.id))
                self._reuse(inv, container)
                inv.decision = 'warm'
                self.metrics.count('warm_starts')
                return inv.decision

        candidates = [n for n in nodes if n.free_core() is not None]
        if not candidates:
            victim = next((c for c in self.idle_order.values() if c.node in nodes), None)
            if victim is None:
                return None
            self.metrics.count('evictions')
            logger.debug(f"Evicting idle container {victim.id} on {victim.node.id}")
            self._terminate(victim)
            candidates = [victim.node]
        node = min(candidates, key=self._rank)
        self._cold_start(inv, node)
        inv.decision = 'cold'
        return inv.decision

    def _claim(self, inv: FunctionInvocation, container: ContainerInst) -> None:
        inv.container = container
        inv.node = container.node
        self.placed[inv.inv_id] = inv
        self.active += 1
        self._rr = (self._rr + 1) % len(self.nodes)

    def _reuse(self, inv: FunctionInvocation, container: ContainerInst) -> None:
        self.idle_order.pop(container.id, None)
        container.transition(BUSY)
        container.idle_since = None
        self._claim(inv, container)
        self._exchange(inv)

    def _cold_start(self, inv: FunctionInvocation, node: ServerNode) -> None:
        core = node.free_core()
        container = ContainerInst(self._next_container, node, inv.task_type, inv.deps_id,
                                  isolated=inv.isolated, pinned_cores=[core])
        self._next_container += 1
        assert node.cores[core] is None, f"core {core} on {node.id} already pinned"
        node.cores[core] = container.id
        self.containers[container.id] = container
        self._claim(inv, container)
        inv.cold_start = True
        inv.instantiation_us = sample(self.cold_start, self.stream)
        self.metrics.count('cold_starts')
        logger.debug(f"Cold start of {inv.task_type} on {node.id} ({inv.instantiation_us}us)")
        inv.pending_event = self.schedule(inv.instantiation_us, 'ready', inv=inv)

    # -- data exchange and execution -----------------------------------------

    def exchange_data(self, nbytes: int, path: str) -> int:
        """
        Latency in µs of handing a parent's output to a cloud child over `path`.

        StoreExchange is the idle-store cost of one write plus one read.
        """
        if path == DataPathKind.SAME_CONTAINER:
            return int(round(self.config.same_container_us))
        if path == DataPathKind.REMOTE_MEMORY:
            bits_per_us = self.config.remote_mem_gbps * 1000
            return int(round(2.1 + nbytes * 8 / bits_per_us))
        if path == DataPathKind.STORE_EXCHANGE:
            return 2 * self._store_request_us(nbytes)
        if path == DataPathKind.ON_DEVICE_LOCAL or path is None:
            return 0
        raise ValueError(f"{path} is not an intra-cloud data path")

    def _store_request_us(self, nbytes: int) -> int:
        return ms_to_us(self.config.store_base_ms) + int(round(nbytes / self.config.store_mb_per_s))

    def persist(self, nbytes: int, on_done: Optional[Callable[[], None]] = None) -> None:
        """One asynchronous write of a task output to the backing store."""
        def written(_job, _sojourn):
            self.metrics.count('persisted_outputs')
            if on_done:
                on_done()

        self.store.submit(nbytes, written, service_us=self._store_request_us(nbytes))

    def _exchange(self, inv: FunctionInvocation) -> None:
        path = inv.input_path
        if inv.decision == 'same_container' or (
                inv.parent_container is not None and inv.container.id == inv.parent_container):
            path = DataPathKind.SAME_CONTAINER
        if path == DataPathKind.STORE_EXCHANGE and not inv.is_speculative:
            size = self._store_request_us(inv.input_bytes)
            begun = self.now
            attempt = inv.attempt

            def current() -> bool:
                return not inv.cancelled and inv.attempt == attempt

            def after_read(_job, _sojourn):
                if current():
                    inv.exchange_us = self.now - begun
                    self._execute(inv)

            def after_write(_job, _sojourn):
                if current():
                    self.store.submit(inv, after_read, service_us=size)

            self.store.submit(inv, after_write, service_us=size)
            return
        inv.exchange_us = self.exchange_data(inv.input_bytes, path) if inv.input_bytes or path else 0
        if inv.exchange_us:
            inv.pending_event = self.schedule(inv.exchange_us, 'execute', inv=inv)
        else:
            self._execute(inv)

    def _execute(self, inv: FunctionInvocation) -> None:
        inv.start_us = self.now
        service = int(round(sample(inv.service, self.stream) * inv.node.slowdown))
        self.running[inv.inv_id] = inv
        inv.pending_event = self.schedule(service, 'finish', inv=inv)
        if self.controller_config.straggler_mitigation and not self._scanning:
            self._scanning = True
            self.schedule(ms_to_us(self.controller_config.straggler_scan_ms), 'scan')

    def _finish(self, inv: FunctionInvocation) -> None:
        inv.end_us = self.now
        inv.pending_event = None
        self.running.pop(inv.inv_id, None)
        self.busy_core_us += inv.end_us - inv.start_us
        container = inv.container
        self._release(inv, container)
        if not inv.is_speculative:
            self.tracker.add(inv.task_type, inv.end_us - inv.start_us)
        original = inv.original or inv
        other = original.duplicate if inv is original else original
        if other is not None and not other.cancelled and other.end_us is None:
            self._cancel(other)
            self.metrics.count('speculative_cancelled')
            if inv.is_speculative:
                self.metrics.count('speculative_wins')
        if not original.consumed:
            original.consumed = True
            if inv is not original:
                original.end_us = inv.end_us
                original.node = inv.node
                original.container = inv.container
            self.metrics.count('results_consumed')
            if original.on_done:
                original.on_done(original)
        self._drain()

    def _release(self, inv: FunctionInvocation, container: ContainerInst) -> None:
        self.active -= 1
        self.placed.pop(inv.inv_id, None)
        if container.state == TERMINATED:
            return
        container.resident_output = (inv.instance_id, inv.output_bytes)
        if container.isolated or self.keepalive_us == 0:
            self._terminate(container)
            return
        container.transition(IDLE)
        container.idle_since = self.now
        self.idle_order[container.id] = container
        self.schedule(self.keepalive_us + 1, 'expire', container=container.id)

    def _cancel(self, inv: FunctionInvocation) -> None:
        inv.cancelled = True
        if inv.pending_event is not None:
            inv.pending_event.cancel()
        self.running.pop(inv.inv_id, None)
        if inv.container is not None and inv.container.state != TERMINATED:
            if inv.start_us is not None:
                self.busy_core_us += self.now - inv.start_us
            self.active -= 1
            self.placed.pop(inv.inv_id, None)
            self._terminate(inv.container)

    def _terminate(self, container: ContainerInst) -> None:
        self.idle_order.pop(container.id, None)
        for core in container.pinned_cores:
            if container.node.cores[core] == container.id:
                container.node.cores[core] = None
        container.transition(TERMINATED)
        container.idle_since = None
        self.containers.pop(container.id, None)

    # -- periodic policies -----------------------------------------------------

    def tick_keepalive(self, now: int) -> List[int]:
        """Terminate idle containers idle for longer than the keep-alive window."""
        terminated = []
        while self.idle_order:
            container = next(iter(self.idle_order.values()))
            if now - container.idle_since <= self.keepalive_us:
                break
            self._terminate(container)
            terminated.append(container.id)
        if terminated:
            self.metrics.count('keepalive_terminations', len(terminated))
            self._drain()
        return terminated

    def detect_stragglers(self, now: int) -> List[FunctionInvocation]:
        """Spawn one speculative duplicate, on a different node, per straggling invocation."""
        spawned = []
        for inv in list(self.running.values()):
            if inv.is_speculative or inv.duplicate is not None or inv.cancelled:
                continue
            threshold = self.tracker.threshold(inv.task_type, now)
            if threshold is None or now - inv.start_us <= threshold:
                continue
            if not inv.straggler_flagged:
                inv.straggler_flagged = True
                self.metrics.count('stragglers_detected')
                inv.node.straggler_times.append(now)
            duplicate = FunctionInvocation(
                inv_id=-inv.inv_id - 1, instance_id=inv.instance_id, task_type=inv.task_type,
                arrival_us=now, service=inv.service, deps_id=inv.deps_id,
                input_bytes=inv.input_bytes, input_path=inv.input_path,
                output_bytes=inv.output_bytes, priority=inv.priority, nodes=inv.nodes,
                is_speculative=True, original=inv)
            if self.schedule_invocation(duplicate, exclude=inv.node) is None:
                continue
            inv.duplicate = duplicate
            self.metrics.count('stragglers_respawned')
            logger.debug(f"Straggler {inv.inv_id} on {inv.node.id}; duplicate on {duplicate.node.id}")
            spawned.append(duplicate)
        return spawned

    def update_probation(self, now: int) -> List[ServerNode]:
        """Put nodes with too many recent stragglers on probation."""
        if not self.controller_config.probation:
            return []
        window = s_to_us(self.controller_config.probation_window_s)
        changed = []
        for node in self.nodes:
            while node.straggler_times and now - node.straggler_times[0] > window:
                node.straggler_times.popleft()
            if node.on_probation(now):
                continue
            if len(node.straggler_times) >= self.controller_config.probation_stragglers:
                node.probation_until = now + s_to_us(self.controller_config.probation_s)
                node.straggler_times.clear()
                self.metrics.count('probations')
                logger.info(f"{node.id} on probation until t={node.probation_until / 1e6:.1f}s")
                changed.append(node)
        return changed

    def fail_node(self, index: int) -> None:
        """Take a node down; invocations on it are re-issued or failed per their Restore policy."""
        node = self.nodes[index]
        node.down = True
        logger.info(f"{node.id} failed at t={self.now / 1e6:.3f}s")
        lost = [inv for inv in list(self.placed.values()) if inv.node is node]
        for container in [c for c in self.containers.values() if c.node is node]:
            if container.state == IDLE:
                self._terminate(container)
        for inv in lost:
            original = inv.original or inv
            self._cancel(inv)
            if inv.is_speculative or original.duplicate is not None and not original.duplicate.cancelled:
                continue
            if inv.restore == 'respawn':
                self.metrics.count('restored')
                inv.cancelled = False
                inv.attempt += 1
                inv.container = inv.node = inv.start_us = inv.pending_event = None
                inv.cold_start = False
                self.invoke(inv)
            elif inv.on_fail:
                inv.on_fail(inv, f"{node.id} failed")
        self._drain()

    def handle(self, event: SimEvent) -> None:
        kind = event.kind
        if kind == 'ready':
            inv = event.params['inv']
            inv.pending_event = None
            inv.container.transition(BUSY)
            self._exchange(inv)
        elif kind == 'execute':
            self._execute(event.params['inv'])
        elif kind == 'finish':
            self._finish(event.params['inv'])
        elif kind == 'expire':
            self.tick_keepalive(self.now)
        elif kind == 'scan':
            self.detect_stragglers(self.now)
            self.update_probation(self.now)
            if self.running:
                self.schedule(ms_to_us(self.controller_config.straggler_scan_ms), 'scan')
            else:
                self._scanning = False
        elif kind == 'fail_node':
            self.fail_node(event.params['node'])

    def stats(self) -> Dict[str, float]:
        return {
            'function_seconds': self.busy_core_us / 1e6,
            'containers_alive': len(self.containers),
            'nodes_on_probation': sum(1 for n in self.nodes if n.on_probation(self.now)),
        }


class FunctionDriver(Component):
    """
    Open-loop arrivals of a single task type into the cluster.

    Args:
        cluster: Target cluster
        task_type: Function name
        service: Execution-time distribution on one cloud core
        invocations: Number of arrivals to generate
        mean_gap_ms: Mean inter-arrival time
        poisson: Exponential gaps when True, fixed gaps otherwise
    """

    def __init__(self, cluster: ServerlessCluster, task_type: str, service: Distribution,
                 invocations: int, mean_gap_ms: float, poisson: bool = True,
                 input_bytes: int = 0, input_path: Optional[str] = None,
                 component_id: str = 'driver'):
        super().__init__(component_id)
        self.cluster = cluster
        self.task_type = task_type
        self.service = service
        self.invocations = invocations
        self.mean_gap_ms = mean_gap_ms
        self.poisson = poisson
        self.input_bytes = input_bytes
        self.input_path = input_path
        self.issued = 0
        self.finished = 0
        self.results: List[FunctionInvocation] = []
        self.stream = None

    def attach(self, kernel) -> None:
        super().attach(kernel)
        self.stream = kernel.rng(self.id)

    def begin(self) -> None:
        if self.invocations > 0:
            self.schedule(0, 'arrive')

    def _gap_us(self) -> int:
        if self.poisson:
            return max(0, int(round(self.stream.exponential(self.mean_gap_ms) * 1000)))
        return ms_to_us(self.mean_gap_ms)

    def handle(self, event: SimEvent) -> None:
        inv = FunctionInvocation(self.issued, f"{self.task_type}-{self.issued}", self.task_type,
                                 self.now, self.service, input_bytes=self.input_bytes,
                                 input_path=self.input_path, on_done=self._done)
        self.cluster.metrics.count('injected')
        self.issued += 1
        self.cluster.invoke(inv)
        if self.issued < self.invocations:
            self.schedule(self._gap_us(), 'arrive')

    def _done(self, inv: FunctionInvocation) -> None:
        self.finished += 1
        self.results.append(inv)
        metrics = self.cluster.metrics
        metrics.count('completed')
        metrics.record_latency(self.task_type, self.now, self.now - inv.arrival_us)
        metrics.record_latency('instantiation', self.now, inv.instantiation_us)

    @property
    def done(self) -> bool:
        return self.finished >= self.invocations

    def cold_fraction(self, warmup: int = 0) -> float:
        ordered = sorted(self.results, key=lambda inv: inv.inv_id)[warmup:]
        return sum(1 for inv in ordered if inv.cold_start) / len(ordered) if ordered else 0.0

    def cold_start_share(self) -> float:
        """Median instantiation time over median end-to-end latency."""
        if not self.results:
            return 0.0
        latency = np.median([inv.end_us - inv.arrival_us for inv in self.results])
        instantiation = np.median([inv.instantiation_us for inv in self.results])
        return float(instantiation / latency) if latency else 0.0
