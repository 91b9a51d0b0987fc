"""
Tests for links, RPC paths, routing and heartbeat failure detection.
"""

import pytest

from hivesim.config import ControllerConfig, TopologyConfig
from hivesim.errors import LinkDown
from hivesim.sim.kernel import Component
from hivesim.sim.net import (CLOUD, DataPathKind, HeartbeatMonitor, Link, Network,
                             accelerated_path, baseline_path, rpc_capacity_check)


class Beater(Component):
    """Sends a heartbeat every second until `stop_s`."""

    def __init__(self, monitor, device_id, stop_s):
        super().__init__(f"beater-{device_id}")
        self.monitor = monitor
        self.device_id = device_id
        self.stop_us = stop_s * 1_000_000

    def handle(self, event):
        self.monitor.receive(self.device_id)
        if self.now < self.stop_us:
            self.schedule(1_000_000, 'beat')


# ---------------------------------------------------------------------------
# Links
# ---------------------------------------------------------------------------

def test_single_flow_on_router(kernel):
    link = kernel.register(Link('wireless-r0', 867, 0, 'wireless', kernel.metrics))
    elapsed = []
    link.start(2_000_000, elapsed.append)
    kernel.run()
    assert elapsed == [18455]


def test_equal_flows_share_the_link(kernel):
    link = kernel.register(Link('wireless-r0', 867, 0, 'wireless', kernel.metrics))
    elapsed = []
    link.start(2_000_000, elapsed.append)
    link.start(2_000_000, elapsed.append)
    kernel.run()
    assert elapsed == [36909, 36909]
    assert link.active == 0


def test_short_flow_finishes_first(kernel):
    link = kernel.register(Link('l', 8, 0, 'wired'))
    finished = []
    link.start(1000, lambda us: finished.append(('long', us)))
    link.start(100, lambda us: finished.append(('short', us)))
    kernel.run()
    # 8 Mbps is one byte per µs; the short flow gets half of it until it leaves
    assert finished == [('short', 200), ('long', 1100)]


def test_empty_transfer_completes_immediately(kernel):
    link = kernel.register(Link('l', 100, 0, 'wired'))
    elapsed = []
    link.start(0, elapsed.append)
    assert elapsed == [0]


def test_capacity_change(kernel):
    topology = TopologyConfig(capacity_changes=[{'at_s': 1, 'link': 'wireless-r0', 'mbps': 100},
                                                {'at_s': 1, 'link': 'wireless-r9', 'mbps': 5}])
    network = Network(kernel, topology, ['d0'])
    kernel.run(time_cap_us=2_000_000)
    assert network.routers[0].capacity == 100.0
    assert network.routers[1].capacity == 867.0


# ---------------------------------------------------------------------------
# RPC paths
# ---------------------------------------------------------------------------

def test_rpc_capacity_boundaries():
    topology = TopologyConfig()
    baseline = baseline_path(topology)
    assert rpc_capacity_check(baseline, 1_000_000)
    assert not rpc_capacity_check(baseline, 1_000_001)
    assert rpc_capacity_check(baseline, 2_000_000, cores=2)
    assert rpc_capacity_check(baseline, 0)
    assert rpc_capacity_check(accelerated_path(topology), 12_400_000)
    assert not rpc_capacity_check(accelerated_path(topology), 12_400_001)
    with pytest.raises(ValueError):
        rpc_capacity_check(baseline, -1)


def test_accelerated_path_is_cheaper():
    topology = TopologyConfig()
    assert accelerated_path(topology).request_overhead_us(1_000_000) == pytest.approx(2.1)
    assert baseline_path(topology).request_overhead_us(1_000_000) == pytest.approx(1040.0)


def test_nic_queue_at_rate_limit():
    path = baseline_path(TopologyConfig())
    assert path.admit(0, 0) == pytest.approx(40.0)
    assert path.admit(0, 0) == pytest.approx(41.0)
    assert (path.requests, path.queued) == (2, 1)
    assert path.admit(10, 0) == pytest.approx(40.0)


def test_nic_line_rate_bounds_large_requests():
    path = accelerated_path(TopologyConfig(nic_gbps=10.0))
    assert path.wire_time_us(1_000_000) == pytest.approx(800.0)
    assert path.admit(0, 1_000_000) == pytest.approx(2.1)
    assert path.admit(0, 1_000_000) == pytest.approx(802.1)
    faster = accelerated_path(TopologyConfig(nic_gbps=40.0))
    faster.admit(0, 1_000_000)
    assert faster.admit(0, 1_000_000) == pytest.approx(202.1)


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

def test_routes(kernel):
    network = Network(kernel, TopologyConfig(), ['d0', 'd1', 'd2'])
    r0, r1 = network.routers
    assert network.route('d0', CLOUD) == [r0, network.tor]
    assert network.route(CLOUD, 'd1') == [network.tor, r1]
    assert network.route('d0', 'd2') == [r0]
    assert network.route('d0', 'd1') == [r0, r1]
    assert network.route(CLOUD, CLOUD) == [network.tor]


def test_routers_scale_with_devices(kernel):
    network = Network(kernel, TopologyConfig(), [f"d{i}" for i in range(32)])
    assert network.router_count == 4
    assert network.tor.capacity == pytest.approx(80_000.0)


def test_transfer_matches_estimate(kernel):
    network = Network(kernel, TopologyConfig(), ['d0'])
    elapsed = []
    network.transfer('d0', CLOUD, 1_000_000, DataPathKind.RPC_CLOUD_EDGE, elapsed.append)
    kernel.run()
    estimate = network.transfer_estimate_us('d0', CLOUD, 1_000_000, DataPathKind.RPC_CLOUD_EDGE)
    assert estimate == pytest.approx(1040 + 2000 + 8_000_000 / 867 + 200)
    assert elapsed == [pytest.approx(estimate, abs=2)]
    assert kernel.metrics.peak_bandwidth_mbps('wireless') > 0


def test_transfer_to_dead_device(kernel):
    network = Network(kernel, TopologyConfig(), ['d0', 'd1'], is_alive=lambda d: d != 'd1')
    with pytest.raises(LinkDown):
        network.transfer(CLOUD, 'd1', 100, None, lambda _us: None)
    assert kernel.metrics.counters['transfers_failed'] == 1


def test_transfer_fails_when_endpoint_dies_midway(kernel):
    alive = {'d0': True}
    network = Network(kernel, TopologyConfig(), ['d0'], is_alive=lambda d: alive[d])
    failed, done = [], []
    network.transfer('d0', CLOUD, 10_000_000, None, done.append, on_fail=lambda: failed.append(True))
    kernel.run(time_cap_us=5_000)
    alive['d0'] = False
    kernel.run()
    assert failed == [True] and done == []


# ---------------------------------------------------------------------------
# Heartbeats
# ---------------------------------------------------------------------------

def test_silent_device_detected_after_timeout(kernel):
    monitor = kernel.register(HeartbeatMonitor(ControllerConfig(), kernel.metrics))
    declared = []
    monitor.subscribe(on_failure=lambda d, t: declared.append((d, t)))
    monitor.watch('d0')
    assert monitor.monitor_heartbeats(3_000_000) == []
    kernel.run()
    assert declared == [('d0', 3_000_001)]
    assert monitor.detected_at == {'d0': 3_000_001}
    assert kernel.metrics.counters['failures'] == 1


def test_heartbeats_keep_device_alive(kernel):
    monitor = kernel.register(HeartbeatMonitor(ControllerConfig(), kernel.metrics))
    kernel.register(Beater(monitor, 'd0', stop_s=5))
    kernel.schedule(0, 'beater-d0', 'beat')
    kernel.run()
    assert monitor.detected_at == {'d0': 8_000_001}


def test_rejoin(kernel):
    monitor = kernel.register(HeartbeatMonitor(ControllerConfig(), kernel.metrics))
    rejoined = []
    monitor.subscribe(on_rejoin=lambda d, t: rejoined.append(d))
    monitor.watch('d0')
    kernel.run(time_cap_us=4_000_000)
    assert 'd0' in monitor.declared
    monitor.receive('d0')
    assert rejoined == ['d0']
    assert 'd0' not in monitor.declared
    assert kernel.metrics.counters['rejoins'] == 1
