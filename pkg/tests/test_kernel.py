"""
Tests for the discrete-event kernel, random streams, distributions and metrics.
"""

import json

import numpy as np
import pytest

from hivesim.analyze import PoissonSource, mm1_check
from hivesim.config import SimLimits
from hivesim.errors import InvalidDistribution, LivelockError, SimulationError
from hivesim.sim.kernel import (Component, Distribution, Kernel, MetricsReport, RngStream,
                                ServiceStation, sample)


class Recorder(Component):
    def __init__(self, component_id='recorder'):
        super().__init__(component_id)
        self.seen = []

    def handle(self, event):
        self.seen.append((self.now, event.kind))


class Spinner(Component):
    """Reschedules itself without advancing the clock."""

    def handle(self, event):
        self.schedule(0, 'spin')


def mm1_kernel(seed: int, arrivals: int = 2000):
    kernel = Kernel(seed, run_id=f"mm1-{seed}")
    station = kernel.register(ServiceStation('mm1', 1, Distribution.exponential(1000.0),
                                             kernel.rng('mm1-service')))
    source = kernel.register(PoissonSource(station, 0.5, arrivals))
    source.begin()
    return kernel, source


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------

def test_deterministic_sample():
    stream = RngStream(1, 'x')
    assert {sample(Distribution.deterministic(5), stream) for _ in range(100)} == {5000}


def test_exponential_mean():
    stream = RngStream(42, 'exp')
    dist = Distribution.exponential(10.0)
    draws = np.array([sample(dist, stream) for _ in range(1_000_000)])
    assert draws.min() >= 0
    assert draws.mean() / 1000 == pytest.approx(10.0, rel=0.01)


def test_lognormal_quantiles():
    stream = RngStream(42, 'lognormal')
    dist = Distribution.lognormal(100.0, 1000.0)
    draws = np.array([sample(dist, stream) for _ in range(1_000_000)]) / 1000
    assert np.percentile(draws, 50) == pytest.approx(100.0, rel=0.05)
    assert np.percentile(draws, 99) == pytest.approx(1000.0, rel=0.05)
    assert dist.median_ms == 100.0


def test_empirical_draws_from_values():
    stream = RngStream(3, 'emp')
    dist = Distribution.empirical([1, 2, 4])
    assert {sample(dist, stream) for _ in range(500)} == {1000, 2000, 4000}
    assert dist.mean_ms == pytest.approx(7 / 3)


@pytest.mark.parametrize('build', [
    lambda: Distribution.exponential(0),
    lambda: Distribution.deterministic(-1),
    lambda: Distribution.lognormal(100, 50),
    lambda: Distribution.empirical([]),
    lambda: Distribution.from_dict({'kind': 'weibull', 'shape': 2}),
    lambda: Distribution.from_dict({'mean_ms': 3}),
    lambda: Distribution.from_dict({'kind': 'exponential', 'mean': 3}),
])
def test_invalid_distributions(build):
    with pytest.raises(InvalidDistribution):
        build()


def test_scaled_and_round_trip():
    dist = Distribution.lognormal(50, 120)
    assert Distribution.from_dict(dist.to_dict()) == dist
    assert dist.scaled(2).params == {'p50_ms': 100, 'p99_ms': 240}
    assert dist.scaled(2).mean_ms == pytest.approx(2 * dist.mean_ms)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def test_streams_are_reproducible_and_independent():
    alpha = RngStream(7, 'alpha')
    a = [alpha.uniform() for _ in range(3)]
    again = RngStream(7, 'alpha')
    assert [again.uniform() for _ in range(3)] == a
    beta = RngStream(7, 'beta')
    assert [beta.uniform() for _ in range(3)] != a
    assert RngStream(8, 'alpha').uniform() != a[0]


def test_new_stream_does_not_perturb_others():
    k1 = Kernel(5)
    draws1 = [k1.rng('cloud').exponential(1.0) for _ in range(10)]
    k2 = Kernel(5)
    k2.rng('extra').uniform()
    draws2 = [k2.rng('cloud').exponential(1.0) for _ in range(10)]
    assert draws1 == draws2


# ---------------------------------------------------------------------------
# Event loop
# ---------------------------------------------------------------------------

def test_events_run_in_time_then_insertion_order(kernel):
    recorder = kernel.register(Recorder())
    kernel.schedule(5, 'recorder', 'b')
    kernel.schedule(1, 'recorder', 'a')
    kernel.schedule(5, 'recorder', 'c')
    kernel.run()
    assert recorder.seen == [(1, 'a'), (5, 'b'), (5, 'c')]


def test_cancelled_events_are_skipped(kernel):
    recorder = kernel.register(Recorder())
    event = kernel.schedule(3, 'recorder', 'gone')
    kernel.schedule(4, 'recorder', 'kept')
    event.cancel()
    kernel.run()
    assert recorder.seen == [(4, 'kept')]


def test_scheduling_in_the_past_fails(kernel):
    kernel.register(Recorder())
    with pytest.raises(SimulationError):
        kernel.schedule(-1, 'recorder', 'late')


def test_duplicate_component(kernel):
    kernel.register(Recorder())
    with pytest.raises(SimulationError):
        kernel.register(Recorder())


def test_zero_arrivals_end_at_time_cap(kernel):
    report = kernel.run(until=lambda _k: False, time_cap_us=5_000_000)
    assert report.completion_time_s == 5.0
    assert report.latencies == {}
    assert report.events_processed == 0


def test_time_cap_leaves_later_events_unprocessed(kernel):
    recorder = kernel.register(Recorder())
    kernel.schedule(10, 'recorder', 'early')
    kernel.schedule(1000, 'recorder', 'late')
    kernel.run(time_cap_us=100)
    assert recorder.seen == [(10, 'early')]


def test_until_predicate_stops_the_run(kernel):
    recorder = kernel.register(Recorder())
    for t in range(1, 6):
        kernel.schedule(t, 'recorder', str(t))
    report = kernel.run(until=lambda k: len(recorder.seen) == 3)
    assert report.completion_time_s == pytest.approx(3e-6)
    assert len(recorder.seen) == 3


def test_livelock_detection():
    kernel = Kernel(0, SimLimits(stall_cap=100), run_id='spin')
    kernel.register(Spinner('spinner'))
    kernel.schedule(0, 'spinner', 'spin')
    with pytest.raises(LivelockError, match='spin'):
        kernel.run()


def test_same_seed_same_trace():
    hashes = []
    for seed in (42, 42, 43):
        kernel, _ = mm1_kernel(seed)
        hashes.append(kernel.run().trace_hash)
    assert hashes[0] == hashes[1]
    assert hashes[0] != hashes[2]


def test_trace_file(tmp_path):
    path = tmp_path / 'trace.ndjson'
    kernel = Kernel(1, trace_path=str(path))
    kernel.register(Recorder())
    kernel.schedule(2, 'recorder', 'ping')
    kernel.run()
    lines = path.read_text(encoding='utf-8').splitlines()
    assert [json.loads(line) for line in lines] == [{'t': 2, 'component': 'recorder', 'kind': 'ping'}]


# ---------------------------------------------------------------------------
# Stations
# ---------------------------------------------------------------------------

def test_station_serves_by_priority(kernel):
    station = kernel.register(ServiceStation('s', 1))
    order = []
    for job, priority in (('a', 1), ('b', 2), ('c', 0)):
        station.submit(job, lambda j, _sojourn: order.append(j), service_us=10, priority=priority)
    kernel.run()
    assert order == ['a', 'c', 'b']
    stats = station.stats()
    assert stats['completions'] == 3
    assert stats['utilization'] == pytest.approx(1.0)
    assert stats['mean_wait_s'] == pytest.approx(10e-6)


def test_station_conservation():
    kernel, _ = mm1_kernel(9, arrivals=500)
    kernel.run(time_cap_us=100_000_000)
    station = kernel.components['mm1']
    assert station.arrivals == station.completions + station.busy + station.queue_length


def test_mm1_half_load():
    result = mm1_check(0.5, arrivals=100_000, seed=1)
    assert result.expected == pytest.approx(2.0)
    assert result.passed, result


@pytest.mark.slow
def test_mm1_heavy_load():
    result = mm1_check(0.8, seed=2)
    assert result.expected == pytest.approx(5.0)
    assert result.passed, result


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def test_reservoir_beyond_exact_limit():
    metrics = MetricsReport(SimLimits(exact_samples=100, reservoir_size=50))
    for i in range(1000):
        metrics.record_latency('t', i, i)
    samples = metrics.samples('t')
    assert samples.count == 1000
    assert samples.sampled and len(samples.values) == 50
    assert samples.mean_ms() == pytest.approx(0.4995)


def test_reservoir_downsampling_keeps_distinct_samples():
    metrics = MetricsReport(SimLimits(exact_samples=100, reservoir_size=60))
    for i in range(101):
        metrics.record_latency('t', i, i)
    values = metrics.samples('t').values
    assert len(values) == 60
    assert len(set(values)) == 60
    assert values == sorted(values)
    assert RngStream(3, 'x').sample_indices(10, 10) == list(range(10))


def test_bandwidth_buckets_and_peak():
    metrics = MetricsReport()
    metrics.record_bytes('wireless-r0', 0, 1_000_000, 125_000)
    metrics.record_bytes('wireless-r1', 500_000, 1_500_000, 250_000)
    metrics.record_bytes('wired-tor', 0, 1_000_000, 10_000_000)
    assert metrics.bandwidth_trace('wireless-r1') == [(0, pytest.approx(1.0)), (1, pytest.approx(1.0))]
    assert metrics.peak_bandwidth_mbps('wireless') == pytest.approx(2.0)
    assert metrics.peak_bandwidth_mbps('') == pytest.approx(82.0)


def test_counters_and_in_flight():
    metrics = MetricsReport()
    metrics.count('injected', 5)
    metrics.count('completed', 3)
    metrics.count('failed')
    assert metrics.in_flight == 1
    data = metrics.to_dict()
    assert data['in_flight'] == 1
    assert data['counters']['injected'] == 5


def test_battery_drain():
    metrics = MetricsReport()
    metrics.record_battery('d0', 0, 100.0)
    metrics.record_battery('d0', 1_000_000, 97.5)
    metrics.record_battery('d1', 0, 100.0)
    metrics.record_battery('d1', 1_000_000, 99.5)
    assert metrics.battery_drain() == {'d0': pytest.approx(2.5), 'd1': pytest.approx(0.5)}
    assert metrics.mean_battery_drain() == pytest.approx(1.5)
