"""
Network model: processor-sharing links, RPC paths and heartbeat failure detection.

Endpoints are ``'cloud'`` or a device id. A device reaches the cloud through
its wireless router and the top-of-rack switch; hops are traversed in order.
"""

import heapq
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Set

from hivesim.config import ControllerConfig, TopologyConfig
from hivesim.errors import LinkDown
from hivesim.sim.kernel import Component, MetricsReport, SimEvent
from hivesim.utils import ms_to_us, s_to_us

logger = logging.getLogger(__name__)

CLOUD = 'cloud'


class DataPathKind:
    """How data moves along one task-graph edge."""
    RPC_CLOUD_EDGE = 'RpcCloudEdge'
    RPC_ACCELERATED = 'RpcAccelerated'
    STORE_EXCHANGE = 'StoreExchange'
    REMOTE_MEMORY = 'RemoteMemory'
    SAME_CONTAINER = 'SameContainer'
    ON_DEVICE_LOCAL = 'OnDeviceLocal'

    CROSS_TIER = (RPC_CLOUD_EDGE, RPC_ACCELERATED)
    CLOUD_ONLY = (STORE_EXCHANGE, REMOTE_MEMORY, SAME_CONTAINER)
    EDGE_ONLY = (ON_DEVICE_LOCAL,)
    ALL = CROSS_TIER + CLOUD_ONLY + EDGE_ONLY


# ---------------------------------------------------------------------------
# Links
# ---------------------------------------------------------------------------

@dataclass
class Flow:
    flow_id: int
    nbytes: int
    finish_tag: float
    on_done: Callable[[int], None]
    started_us: int


class Link(Component):
    """
    Link with equal-share processor sharing among active flows.

    Uses virtual time: V advances at capacity/n bits per flow per µs, a flow
    finishes when V reaches its finish tag. One completion event is pending
    at a time; stale ones are ignored by version.
    """

    def __init__(self, link_id: str, capacity_mbps: float, base_latency_us: int,
                 kind: str, metrics: Optional[MetricsReport] = None):
        super().__init__(link_id)
        self.capacity = float(capacity_mbps)   # 1 Mbps == 1 bit/µs
        self.base_latency_us = int(base_latency_us)
        self.kind = kind
        self.metrics = metrics
        self.flows: List = []
        self.virtual = 0.0
        self.last_us = 0
        self.version = 0
        self._seq = 0
        self.bytes_served = 0.0

    @property
    def active(self) -> int:
        return len(self.flows)

    def share_mbps(self) -> float:
        return self.capacity / len(self.flows) if self.flows else self.capacity

    def _advance(self) -> None:
        now = self.now
        dt = now - self.last_us
        if self.flows and dt > 0:
            self.virtual += dt * self.capacity / len(self.flows)
            served = dt * self.capacity / 8
            self.bytes_served += served
            if self.metrics is not None:
                self.metrics.record_bytes(self.id, self.last_us, now, served)
        self.last_us = now

    def _reschedule(self) -> None:
        self.version += 1
        if not self.flows:
            return
        granted = len(self.flows) * self.share_mbps()
        assert granted <= self.capacity * (1 + 1e-9), f"link {self.id} over capacity"
        remaining = max(0.0, self.flows[0][0] - self.virtual)
        delay = math.ceil(remaining * len(self.flows) / self.capacity)
        self.schedule(delay, 'complete', version=self.version)

    def start(self, nbytes: int, on_done: Callable[[int], None]) -> None:
        """Begin serving nbytes; on_done(elapsed_us) fires when the last bit leaves."""
        self._advance()
        if nbytes <= 0:
            on_done(0)
            return
        flow = Flow(self._seq, nbytes, self.virtual + nbytes * 8, on_done, self.now)
        heapq.heappush(self.flows, (flow.finish_tag, flow.flow_id, flow))
        self._seq += 1
        self._reschedule()

    def set_capacity(self, capacity_mbps: float) -> None:
        self._advance()
        logger.info(f"Link {self.id} capacity {self.capacity:.1f} -> {capacity_mbps:.1f} Mbps")
        self.capacity = float(capacity_mbps)
        self._reschedule()

    def handle(self, event: SimEvent) -> None:
        if event.kind == 'capacity':
            self.set_capacity(event.params['mbps'])
            return
        if event.params['version'] != self.version:
            return
        self._advance()
        done = [heapq.heappop(self.flows)[2]]
        tolerance = 1e-6 * max(1.0, abs(self.virtual))
        while self.flows and self.flows[0][0] <= self.virtual + tolerance:
            done.append(heapq.heappop(self.flows)[2])
        self._reschedule()
        for flow in done:
            flow.on_done(self.now - flow.started_us)


# ---------------------------------------------------------------------------
# RPC paths
# ---------------------------------------------------------------------------

class RpcPathModel:
    """
    Per-request RPC overhead with a NIC queue at the single-core rate limit.

    The NIC is a FIFO with fractional-µs backlog: each request occupies
    the longer of 1 / (rate_per_core * cores) seconds and its payload's
    wire time at nic_gbps.
    """

    def __init__(self, kind: str, overhead_us: float, ns_per_byte: float,
                 rate_per_core: float, cores: int = 1, nic_gbps: Optional[float] = None):
        self.kind = kind
        self.overhead_us = overhead_us
        self.ns_per_byte = ns_per_byte
        self.rate_per_core = rate_per_core
        self.cores = cores
        self.nic_gbps = nic_gbps
        self.backlog_until = 0.0
        self.requests = 0
        self.queued = 0

    @property
    def capacity_rps(self) -> float:
        return self.rate_per_core * self.cores

    def request_overhead_us(self, nbytes: int) -> float:
        return self.overhead_us + self.ns_per_byte * nbytes / 1000.0

    def wire_time_us(self, nbytes: int) -> float:
        if not self.nic_gbps:
            return 0.0
        return nbytes * 8 / (self.nic_gbps * 1000.0)

    def admit(self, now_us: int, nbytes: int) -> float:
        """Delay in µs (NIC wait + overhead) for one request issued at now_us."""
        service = max(1e6 / self.capacity_rps, self.wire_time_us(nbytes))
        start = max(float(now_us), self.backlog_until)
        if start > now_us:
            self.queued += 1
        self.backlog_until = start + service
        self.requests += 1
        return (start - now_us) + self.request_overhead_us(nbytes)


def rpc_capacity_check(path: RpcPathModel, rate: float, cores: Optional[int] = None) -> bool:
    """
    True when `rate` requests/s fit the path's per-core limit without queueing.

    Args:
        path: RPC path model
        rate: Offered requests per second (>= 0)
        cores: Cores serving the path (defaults to the path's own)
    """
    if rate < 0:
        raise ValueError('rate must be >= 0')
    cores = path.cores if cores is None else cores
    return rate <= path.rate_per_core * cores


def baseline_path(topology: TopologyConfig) -> RpcPathModel:
    return RpcPathModel('Baseline', topology.rpc_baseline_us, topology.rpc_baseline_ns_per_byte,
                        topology.rpc_baseline_rps_per_core, topology.rpc_cores, topology.nic_gbps)


def accelerated_path(topology: TopologyConfig) -> RpcPathModel:
    return RpcPathModel('Accelerated', topology.rpc_accel_us, 0.0,
                        topology.rpc_accel_rps_per_core, topology.rpc_cores, topology.nic_gbps)


# ---------------------------------------------------------------------------
# Topology and transfers
# ---------------------------------------------------------------------------

class Network:
    """
    Wireless routers plus a wired ToR link.

    Args:
        kernel: Simulation kernel that owns the link components
        topology: Link capacities and path parameters
        device_ids: Devices in attachment order (device i uses router i % routers)
        is_alive: Callback telling whether a device endpoint is alive
    """

    def __init__(self, kernel, topology: TopologyConfig, device_ids: List[str],
                 is_alive: Optional[Callable[[str], bool]] = None):
        self.kernel = kernel
        self.topology = topology
        self.metrics = kernel.metrics
        self.is_alive = is_alive or (lambda device_id: True)
        ensure_relay(kernel)
        self.router_count = topology.router_count(len(device_ids))
        self.routers = [
            kernel.register(Link(f"wireless-r{i}", topology.router_mbps,
                                 ms_to_us(topology.wireless_latency_ms), 'wireless', self.metrics))
            for i in range(self.router_count)
        ]
        # the fabric scales with the wireless edge it serves
        tor_scale = max(1.0, self.router_count / topology.routers)
        self.tor = kernel.register(Link('wired-tor', topology.tor_gbps * 1000 * tor_scale,
                                        int(topology.wired_latency_us), 'wired', self.metrics))
        self.attachment = {d: self.routers[i % self.router_count] for i, d in enumerate(device_ids)}
        self.paths = {
            DataPathKind.RPC_CLOUD_EDGE: baseline_path(topology),
            DataPathKind.RPC_ACCELERATED: accelerated_path(topology),
        }
        self.links = {link.id: link for link in self.routers + [self.tor]}
        for change in topology.changes():
            if change.link not in self.links:
                logger.warning(f"Capacity change for unknown link {change.link} ignored")
                continue
            kernel.schedule_at(s_to_us(change.at_s), change.link, 'capacity', mbps=change.mbps)

    def route(self, src: str, dst: str) -> List[Link]:
        if src == CLOUD and dst == CLOUD:
            return [self.tor]
        if src == CLOUD:
            return [self.tor, self.attachment[dst]]
        if dst == CLOUD:
            return [self.attachment[src], self.tor]
        first, second = self.attachment[src], self.attachment[dst]
        return [first] if first is second else [first, second]

    def transfer(self, src: str, dst: str, nbytes: int, path_kind: Optional[str],
                 on_done: Callable[[int], None],
                 on_fail: Optional[Callable[[], None]] = None) -> None:
        """
        Move nbytes from src to dst hop by hop.

        Latency = RPC overhead (+ NIC wait) + per-hop base latency + shared-rate service.
        on_done(total_elapsed_us) fires at delivery.

        Raises:
            LinkDown: an endpoint is a dead device at transfer start
        """
        for endpoint in (src, dst):
            if endpoint != CLOUD and not self.is_alive(endpoint):
                self.metrics.count('transfers_failed')
                raise LinkDown(f"endpoint {endpoint} is down")
        hops = self.route(src, dst)
        started = self.kernel.now
        overhead = 0
        rpc = self.paths.get(path_kind)
        if rpc is not None:
            overhead = math.ceil(rpc.admit(self.kernel.now, nbytes))

        def hop(index: int) -> None:
            if index == len(hops):
                on_done(self.kernel.now - started)
                return
            for endpoint in (src, dst):
                if endpoint != CLOUD and not self.is_alive(endpoint):
                    self.metrics.count('transfers_failed')
                    if on_fail is not None:
                        on_fail()
                    return
            link = hops[index]
            self.kernel.schedule(link.base_latency_us, _RELAY, kind='relay',
                                 action=lambda: link.start(nbytes, lambda _: hop(index + 1)))

        if overhead:
            self.kernel.schedule(overhead, _RELAY, kind='relay', action=lambda: hop(0))
        else:
            hop(0)

    def transfer_estimate_us(self, src: str, dst: str, nbytes: int, path_kind: Optional[str]) -> float:
        """Idle-network latency estimate (no contention)."""
        total = 0.0
        rpc = self.paths.get(path_kind)
        if rpc is not None:
            total += rpc.request_overhead_us(nbytes)
        for link in self.route(src, dst):
            total += link.base_latency_us + nbytes * 8 / link.capacity
        return total


_RELAY = 'net-relay'


class Relay(Component):
    """Runs deferred callbacks; lets the network chain hops without per-transfer components."""

    def __init__(self):
        super().__init__(_RELAY)

    def handle(self, event: SimEvent) -> None:
        event.params['action']()


def ensure_relay(kernel) -> None:
    if _RELAY not in kernel.components:
        kernel.register(Relay())


# ---------------------------------------------------------------------------
# Heartbeats
# ---------------------------------------------------------------------------

class HeartbeatMonitor(Component):
    """
    Controller-side failure detector.

    A device is declared failed when more than `timeout` has passed since its
    last received heartbeat (strictly greater). A heartbeat from a declared
    device marks it rejoined.
    """

    def __init__(self, config: ControllerConfig, metrics: MetricsReport,
                 component_id: str = 'heartbeat-monitor'):
        super().__init__(component_id)
        self.timeout_us = s_to_us(config.heartbeat_timeout_s)
        self.metrics = metrics
        self.last_recv: Dict[str, int] = {}
        self.declared: Set[str] = set()
        self.detected_at: Dict[str, int] = {}
        self._deadline: Dict[str, SimEvent] = {}
        self._on_failure: List[Callable[[str, int], None]] = []
        self._on_rejoin: List[Callable[[str, int], None]] = []

    def subscribe(self, on_failure: Optional[Callable[[str, int], None]] = None,
                  on_rejoin: Optional[Callable[[str, int], None]] = None) -> None:
        if on_failure:
            self._on_failure.append(on_failure)
        if on_rejoin:
            self._on_rejoin.append(on_rejoin)

    def watch(self, device_id: str) -> None:
        self.receive(device_id)

    def receive(self, device_id: str) -> None:
        now = self.now
        self.last_recv[device_id] = now
        previous = self._deadline.pop(device_id, None)
        if previous is not None:
            previous.cancel()
        self._deadline[device_id] = self.schedule(self.timeout_us + 1, 'deadline', device=device_id)
        if device_id in self.declared:
            self.declared.discard(device_id)
            self.metrics.count('rejoins')
            logger.info(f"Device {device_id} rejoined at t={now / 1e6:.3f}s")
            for callback in self._on_rejoin:
                callback(device_id, now)

    def monitor_heartbeats(self, now: int) -> List[str]:
        """Declare every watched device silent for more than the timeout; return new failures."""
        failed = []
        for device_id, last in sorted(self.last_recv.items()):
            if device_id not in self.declared and now - last > self.timeout_us:
                self.declared.add(device_id)
                self.detected_at[device_id] = now
                failed.append(device_id)
        for device_id in failed:
            self.metrics.count('failures')
            logger.info(f"Device {device_id} declared failed at t={now / 1e6:.3f}s")
            for callback in self._on_failure:
                callback(device_id, now)
        return failed

    def handle(self, event: SimEvent) -> None:
        self.monitor_heartbeats(self.now)
