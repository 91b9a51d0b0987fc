"""
Deterministic discrete-event simulation kernel.

Time is integer microseconds. Events are ordered by (timestamp, sequence);
each component draws randomness from its own seeded stream so adding a
component never perturbs the draws of another.
"""

import hashlib
import heapq
import json
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Deque, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from hivesim.config import SimLimits
from hivesim.errors import InvalidDistribution, LivelockError, SimulationError
from hivesim.utils import US_PER_S, percentile, round_float, us_to_ms, us_to_s

logger = logging.getLogger(__name__)

Z99 = float(norm.ppf(0.99))
RNG_BLOCK = 1024


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

@dataclass
class SimEvent:
    timestamp: int
    sequence: int
    target: str
    kind: str
    params: Dict[str, Any] = field(default_factory=dict)
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


class EventQueue:
    """Min-heap of events keyed by (timestamp, sequence)."""

    def __init__(self):
        self._heap: List[Tuple[int, int, SimEvent]] = []
        self._sequence = 0

    def push(self, timestamp: int, target: str, kind: str, params: Dict[str, Any]) -> SimEvent:
        event = SimEvent(int(timestamp), self._sequence, target, kind, params)
        self._sequence += 1
        heapq.heappush(self._heap, (event.timestamp, event.sequence, event))
        return event

    def pop(self) -> SimEvent:
        return heapq.heappop(self._heap)[2]

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------

def stream_key(stream_id: str) -> int:
    """Stable 64-bit key for a stream name (independent of PYTHONHASHSEED)."""
    return int.from_bytes(hashlib.blake2b(stream_id.encode('utf-8'), digest_size=8).digest(), 'big')


class RngStream:
    """
    Independent deterministic random stream for one component.

    Draws are buffered in blocks per variate type; the sequence depends only
    on (seed, stream_id) and this stream's own call order.
    """

    def __init__(self, seed: int, stream_id: str):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = stream_id
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(stream_key(stream_id),))
        self._rng = np.random.default_rng(sequence)
        self._buffers: Dict[str, Deque[float]] = {}

    def _draw(self, kind: str) -> float:
        buffer = self._buffers.get(kind)
        if not buffer:
            if kind == 'uniform':
                block = self._rng.random(RNG_BLOCK)
            elif kind == 'exponential':
                block = self._rng.standard_exponential(RNG_BLOCK)
            else:
                block = self._rng.standard_normal(RNG_BLOCK)
            buffer = deque(block.tolist())
            self._buffers[kind] = buffer
        return buffer.popleft()

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        return low + (high - low) * self._draw('uniform')

    def exponential(self, mean: float) -> float:
        return mean * self._draw('exponential')

    def normal(self) -> float:
        return self._draw('normal')

    def bernoulli(self, p: float) -> bool:
        return p > 0 and self._draw('uniform') < p

    def index(self, n: int) -> int:
        return min(n - 1, int(self._draw('uniform') * n))

    def choice(self, items: Sequence[Any]) -> Any:
        return items[self.index(len(items))]

    def sample_indices(self, n: int, k: int) -> List[int]:
        """k distinct indices out of range(n), ascending."""
        return sorted(int(i) for i in self._rng.choice(n, size=k, replace=False))


@dataclass
class Distribution:
    """
    Service-time distribution (parameters in milliseconds).

    kinds: deterministic(value_ms) | exponential(mean_ms) |
    lognormal(p50_ms, p99_ms) | empirical(values_ms)
    """
    kind: str
    params: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def deterministic(cls, value_ms: float) -> 'Distribution':
        return cls('deterministic', {'value_ms': value_ms}).checked()

    @classmethod
    def exponential(cls, mean_ms: float) -> 'Distribution':
        return cls('exponential', {'mean_ms': mean_ms}).checked()

    @classmethod
    def lognormal(cls, p50_ms: float, p99_ms: float) -> 'Distribution':
        return cls('lognormal', {'p50_ms': p50_ms, 'p99_ms': p99_ms}).checked()

    @classmethod
    def empirical(cls, values_ms: Sequence[float]) -> 'Distribution':
        return cls('empirical', {'values_ms': list(values_ms)}).checked()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Distribution':
        if not isinstance(data, dict) or 'kind' not in data:
            raise InvalidDistribution(f"distribution needs a 'kind': {data!r}")
        params = {k: v for k, v in data.items() if k != 'kind'}
        return cls(data['kind'], params).checked()

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind, **self.params}

    def checked(self) -> 'Distribution':
        p = self.params
        try:
            if self.kind == 'deterministic':
                ok = float(p['value_ms']) > 0
            elif self.kind == 'exponential':
                ok = float(p['mean_ms']) > 0
            elif self.kind == 'lognormal':
                ok = 0 < float(p['p50_ms']) < float(p['p99_ms'])
            elif self.kind == 'empirical':
                values = [float(v) for v in p['values_ms']]
                ok = bool(values) and min(values) >= 0 and max(values) > 0
            else:
                raise InvalidDistribution(f"unknown distribution kind {self.kind!r}")
        except (KeyError, TypeError, ValueError):
            raise InvalidDistribution(f"bad parameters for {self.kind}: {p!r}") from None
        if not ok:
            raise InvalidDistribution(f"nonpositive or inconsistent parameters for {self.kind}: {p!r}")
        return self

    @property
    def lognormal_params(self) -> Tuple[float, float]:
        mu = math.log(self.params['p50_ms'])
        sigma = (math.log(self.params['p99_ms']) - mu) / Z99
        return mu, sigma

    def scaled(self, factor: float) -> 'Distribution':
        """Same shape, every duration multiplied by factor."""
        p = self.params
        if self.kind == 'deterministic':
            return Distribution.deterministic(p['value_ms'] * factor)
        if self.kind == 'exponential':
            return Distribution.exponential(p['mean_ms'] * factor)
        if self.kind == 'lognormal':
            return Distribution.lognormal(p['p50_ms'] * factor, p['p99_ms'] * factor)
        return Distribution.empirical([v * factor for v in p['values_ms']])

    @property
    def mean_ms(self) -> float:
        p = self.params
        if self.kind == 'deterministic':
            return float(p['value_ms'])
        if self.kind == 'exponential':
            return float(p['mean_ms'])
        if self.kind == 'lognormal':
            mu, sigma = self.lognormal_params
            return math.exp(mu + sigma * sigma / 2)
        return float(np.mean(p['values_ms']))

    @property
    def median_ms(self) -> float:
        p = self.params
        if self.kind == 'deterministic':
            return float(p['value_ms'])
        if self.kind == 'exponential':
            return float(p['mean_ms']) * math.log(2)
        if self.kind == 'lognormal':
            return float(p['p50_ms'])
        return float(np.median(p['values_ms']))


def sample(dist: Distribution, stream: RngStream) -> int:
    """
    Draw one duration in integer microseconds.

    Args:
        dist: Validated distribution
        stream: Random stream of the calling component

    Returns:
        Nonnegative duration in µs
    """
    p = dist.params
    if dist.kind == 'deterministic':
        value_ms = p['value_ms']
    elif dist.kind == 'exponential':
        value_ms = stream.exponential(p['mean_ms'])
    elif dist.kind == 'lognormal':
        mu, sigma = dist.lognormal_params
        value_ms = math.exp(mu + sigma * stream.normal())
    elif dist.kind == 'empirical':
        value_ms = stream.choice(p['values_ms'])
    else:
        raise InvalidDistribution(f"unknown distribution kind {dist.kind!r}")
    return max(0, int(round(value_ms * 1000)))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

class SampleSet:
    """Latency samples: exact up to a limit, reservoir beyond it."""

    def __init__(self, exact_limit: int, reservoir_size: int, stream: RngStream,
                 window_keep: int = 200_000):
        self.exact_limit = exact_limit
        self.reservoir_size = reservoir_size
        self.stream = stream
        self.values: List[int] = []
        self.count = 0
        self.total = 0
        self.sampled = False
        self.recent: Deque[Tuple[int, int]] = deque(maxlen=window_keep)

    def add(self, t_us: int, value_us: int) -> None:
        self.count += 1
        self.total += value_us
        self.recent.append((t_us, value_us))
        if not self.sampled:
            self.values.append(value_us)
            if len(self.values) > self.exact_limit:
                keep = self.stream.sample_indices(len(self.values), self.reservoir_size)
                self.values = [self.values[i] for i in keep]
                self.sampled = True
            return
        slot = self.stream.index(self.count)
        if slot < self.reservoir_size:
            self.values[slot] = value_us

    def percentile_ms(self, q: float) -> float:
        return us_to_ms(percentile(self.values, q))

    def mean_ms(self) -> float:
        return us_to_ms(self.total / self.count) if self.count else 0.0

    def window(self, start_us: int) -> List[int]:
        return [v for t, v in self.recent if t >= start_us]


class MetricsReport:
    """Everything a run measures: latencies, traces, counters and station stats."""

    COUNTERS = (
        'injected', 'completed', 'failed', 'rejected', 'cold_starts', 'warm_starts',
        'same_container', 'invocations', 'stragglers_detected', 'stragglers_respawned',
        'speculative_wins', 'speculative_cancelled', 'results_consumed', 'failures',
        'rejoins', 'replans', 'probations', 'evictions', 'keepalive_terminations', 'restored',
        'persisted_outputs', 'unreachable_cells', 'transfers_failed', 'frames_captured',
        'frames_filtered', 'queued_invocations', 'heartbeats_sent', 'heartbeats_lost',
    )

    def __init__(self, limits: Optional[SimLimits] = None, stream: Optional[RngStream] = None):
        self.limits = limits or SimLimits()
        self.stream = stream or RngStream(0, 'metrics')
        self.latencies: Dict[str, SampleSet] = {}
        self.battery: Dict[str, List[Tuple[float, float]]] = {}
        self.link_bytes: Dict[str, Dict[int, float]] = {}
        self.counters: Dict[str, int] = {name: 0 for name in self.COUNTERS}
        self.completion_time_s: Optional[float] = None
        self.goals: Dict[str, Any] = {}
        self.stations: Dict[str, Dict[str, Any]] = {}
        self.extra: Dict[str, Any] = {}
        self.trace_hash: str = ''
        self.events_processed = 0

    def count(self, name: str, amount: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + amount

    def samples(self, task_type: str) -> SampleSet:
        if task_type not in self.latencies:
            self.latencies[task_type] = SampleSet(self.limits.exact_samples,
                                                  self.limits.reservoir_size, self.stream)
        return self.latencies[task_type]

    def record_latency(self, task_type: str, t_us: int, latency_us: int) -> None:
        self.samples(task_type).add(t_us, latency_us)

    def record_battery(self, device_id: str, t_us: int, pct: float) -> None:
        self.battery.setdefault(device_id, []).append((us_to_s(t_us), pct))

    def record_bytes(self, link_id: str, start_us: int, end_us: int, nbytes: float) -> None:
        """Spread bytes served on a link over 1-second buckets."""
        buckets = self.link_bytes.setdefault(link_id, {})
        if end_us <= start_us:
            second = start_us // US_PER_S
            buckets[second] = buckets.get(second, 0.0) + nbytes
            return
        rate = nbytes / (end_us - start_us)
        t = start_us
        while t < end_us:
            second = t // US_PER_S
            boundary = min(end_us, (second + 1) * US_PER_S)
            buckets[second] = buckets.get(second, 0.0) + rate * (boundary - t)
            t = boundary

    @property
    def in_flight(self) -> int:
        return self.counters['injected'] - self.counters['completed'] - self.counters['failed']

    def bandwidth_trace(self, link_id: str) -> List[Tuple[int, float]]:
        """(second, Mbps) pairs, time ordered."""
        buckets = self.link_bytes.get(link_id, {})
        return [(s, buckets[s] * 8 / 1e6) for s in sorted(buckets)]

    def peak_bandwidth_mbps(self, prefix: str = '') -> float:
        """Peak over time of the summed bandwidth of links whose id starts with prefix."""
        totals: Dict[int, float] = {}
        for link_id, buckets in self.link_bytes.items():
            if link_id.startswith(prefix):
                for second, nbytes in buckets.items():
                    totals[second] = totals.get(second, 0.0) + nbytes
        return max(totals.values()) * 8 / 1e6 if totals else 0.0

    def mean_bandwidth_mbps(self, prefix: str = '') -> float:
        totals: Dict[int, float] = {}
        for link_id, buckets in self.link_bytes.items():
            if link_id.startswith(prefix):
                for second, nbytes in buckets.items():
                    totals[second] = totals.get(second, 0.0) + nbytes
        if not totals:
            return 0.0
        span = max(totals) + 1
        return sum(totals.values()) * 8 / 1e6 / span

    def battery_drain(self) -> Dict[str, float]:
        return {d: trace[0][1] - trace[-1][1] for d, trace in self.battery.items() if trace}

    def mean_battery_drain(self) -> float:
        drains = list(self.battery_drain().values())
        return float(np.mean(drains)) if drains else 0.0

    def latency_summary(self) -> Dict[str, Dict[str, float]]:
        return {
            task: {
                'count': s.count,
                'mean_ms': s.mean_ms(),
                'p50_ms': s.percentile_ms(50),
                'p90_ms': s.percentile_ms(90),
                'p99_ms': s.percentile_ms(99),
            }
            for task, s in sorted(self.latencies.items())
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            'latency': self.latency_summary(),
            'counters': dict(sorted(self.counters.items())),
            'in_flight': self.in_flight,
            'completion_time_s': self.completion_time_s,
            'goals': self.goals,
            'battery': {
                'mean_drain_pct': self.mean_battery_drain(),
                'drain_pct': dict(sorted(self.battery_drain().items())),
                'traces': {d: [[round_float(t, 3), round_float(p, 4)] for t, p in trace]
                           for d, trace in sorted(self.battery.items())},
            },
            'bandwidth': {
                'peak_wireless_mbps': self.peak_bandwidth_mbps('wireless'),
                'mean_wireless_mbps': self.mean_bandwidth_mbps('wireless'),
                'peak_total_mbps': self.peak_bandwidth_mbps(''),
                'traces': {link: [[s, round_float(m, 4)] for s, m in self.bandwidth_trace(link)]
                           for link in sorted(self.link_bytes)},
            },
            'stations': dict(sorted(self.stations.items())),
            'extra': self.extra,
            'events_processed': self.events_processed,
            'trace_hash': self.trace_hash,
        }


# ---------------------------------------------------------------------------
# Components
# ---------------------------------------------------------------------------

class Component:
    """Event target registered with a Kernel."""

    def __init__(self, component_id: str):
        self.id = component_id
        self.kernel: Optional['Kernel'] = None

    def attach(self, kernel: 'Kernel') -> None:
        self.kernel = kernel

    @property
    def now(self) -> int:
        return self.kernel.now

    def schedule(self, delay_us: int, kind: str, **params) -> SimEvent:
        return self.kernel.schedule(delay_us, self.id, kind, **params)

    def handle(self, event: SimEvent) -> None:
        raise NotImplementedError


class ServiceStation(Component):
    """
    FIFO multi-server queue with utilization and Little's-law accounting.

    Jobs are submitted with a completion callback; a lower priority value is
    served first, FIFO within a priority.
    """

    def __init__(self, station_id: str, servers: int = 1,
                 dist: Optional[Distribution] = None, stream: Optional[RngStream] = None):
        super().__init__(station_id)
        if servers < 1:
            raise ValueError(f"station {station_id} needs at least one server")
        self.servers = servers
        self.dist = dist
        self.stream = stream
        self.busy = 0
        self.queue: List[Tuple[int, int, Any]] = []
        self._seq = 0
        self.arrivals = 0
        self.completions = 0
        self.sojourn_total_us = 0
        self.wait_total_us = 0
        self.busy_area = 0
        self.number_area = 0
        self.start_us: Optional[int] = None
        self.last_us = 0

    def _account(self) -> None:
        now = self.now
        if self.start_us is None:
            self.start_us = now
            self.last_us = now
        dt = now - self.last_us
        self.busy_area += self.busy * dt
        self.number_area += (self.busy + len(self.queue)) * dt
        self.last_us = now
        assert self.busy_area <= (now - self.start_us) * self.servers

    def submit(self, job: Any, on_done: Callable[[Any, int], None],
               service_us: Optional[int] = None, priority: int = 1) -> None:
        """Enqueue a job; on_done(job, sojourn_us) fires at completion."""
        self._account()
        self.arrivals += 1
        if service_us is None:
            service_us = sample(self.dist, self.stream)
        entry = (self.now, service_us, job, on_done)
        if self.busy < self.servers:
            self._start(entry)
        else:
            heapq.heappush(self.queue, (priority, self._seq, entry))
            self._seq += 1

    def _start(self, entry) -> None:
        arrived, service_us, _, _ = entry
        self.busy += 1
        self.wait_total_us += self.now - arrived
        self.schedule(service_us, 'done', entry=entry)

    def handle(self, event: SimEvent) -> None:
        self._account()
        arrived, _, job, on_done = event.params['entry']
        self.busy -= 1
        self.completions += 1
        sojourn = self.now - arrived
        self.sojourn_total_us += sojourn
        if self.queue:
            self._start(heapq.heappop(self.queue)[2])
        on_done(job, sojourn)

    @property
    def queue_length(self) -> int:
        return len(self.queue)

    def stats(self) -> Dict[str, Any]:
        """Time-averaged statistics over the observed interval."""
        self._account()
        elapsed = max(1, self.last_us - (self.start_us or 0))
        completions = max(1, self.completions)
        return {
            'servers': self.servers,
            'arrivals': self.arrivals,
            'completions': self.completions,
            'utilization': self.busy_area / (elapsed * self.servers),
            'mean_in_system': self.number_area / elapsed,
            'arrival_rate_per_s': self.arrivals / (elapsed / US_PER_S),
            'mean_sojourn_s': us_to_s(self.sojourn_total_us / completions),
            'mean_wait_s': us_to_s(self.wait_total_us / completions),
            'in_system': self.busy + len(self.queue),
        }


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------

class Kernel:
    """
    Single-threaded event loop.

    Args:
        seed: Run seed shared by every component stream
        limits: Time/event caps and sample limits
        trace_path: Optional NDJSON event log
        run_id: Label used in error messages
    """

    def __init__(self, seed: int, limits: Optional[SimLimits] = None,
                 trace_path: Optional[str] = None, run_id: Optional[str] = None):
        self.seed = seed
        self.limits = limits or SimLimits()
        self.run_id = run_id
        self.now = 0
        self.queue = EventQueue()
        self.components: Dict[str, Component] = {}
        self.streams: Dict[str, RngStream] = {}
        self.metrics = MetricsReport(self.limits, self.rng('metrics'))
        self._hash = hashlib.blake2b(digest_size=16)
        self._trace_path = trace_path
        self._trace_file = None
        self._stopped = False

    def rng(self, stream_id: str) -> RngStream:
        if stream_id not in self.streams:
            self.streams[stream_id] = RngStream(self.seed, stream_id)
        return self.streams[stream_id]

    def register(self, component: Component) -> Component:
        if component.id in self.components:
            raise SimulationError(f"duplicate component id {component.id}", self.run_id)
        self.components[component.id] = component
        component.attach(self)
        return component

    def schedule(self, delay_us: int, target: str, kind: str, **params) -> SimEvent:
        if delay_us < 0:
            raise SimulationError(f"event {kind} for {target} scheduled in the past", self.run_id)
        return self.queue.push(self.now + int(delay_us), target, kind, params)

    def schedule_at(self, timestamp_us: int, target: str, kind: str, **params) -> SimEvent:
        return self.schedule(int(timestamp_us) - self.now, target, kind, **params)

    def stop(self) -> None:
        self._stopped = True

    @property
    def trace_hash(self) -> str:
        return self._hash.hexdigest()

    def run(self, until: Optional[Callable[['Kernel'], bool]] = None,
            time_cap_us: Optional[int] = None) -> MetricsReport:
        """
        Process events until the end condition holds, the queue drains or a cap is hit.

        Args:
            until: Predicate checked after each event; True ends the run
            time_cap_us: Simulated-time cap (defaults to limits.time_cap_s)

        Returns:
            The MetricsReport (completion_time_s set when `until` fired)

        Raises:
            LivelockError: stall_cap events processed without clock progress
            SimulationError: event or wall-clock cap exceeded
        """
        cap = time_cap_us if time_cap_us is not None else int(self.limits.time_cap_s * US_PER_S)
        wall_start = time.monotonic()
        stalled = 0
        processed = 0
        finished = False
        if self._trace_path:
            self._trace_file = open(self._trace_path, 'w', encoding='utf-8')
        try:
            while self.queue and not self._stopped:
                next_time = self.queue.peek_time()
                if next_time > cap:
                    break
                event = self.queue.pop()
                if event.cancelled:
                    continue
                if event.timestamp < self.now:
                    raise SimulationError('event queue returned an event in the past', self.run_id)
                stalled = stalled + 1 if event.timestamp == self.now else 0
                if stalled > self.limits.stall_cap:
                    raise LivelockError(f"{stalled} events at t={self.now}us without clock progress",
                                        self.run_id)
                self.now = event.timestamp
                self._hash.update(f"{event.timestamp}|{event.target}|{event.kind}\n".encode('utf-8'))
                if self._trace_file is not None:
                    self._trace_file.write(json.dumps(
                        {'t': event.timestamp, 'component': event.target, 'kind': event.kind},
                        sort_keys=True) + '\n')
                self.components[event.target].handle(event)
                processed += 1
                if processed > self.limits.event_cap:
                    raise SimulationError(f"event cap {self.limits.event_cap} exceeded", self.run_id)
                if processed % 100_000 == 0 and time.monotonic() - wall_start > self.limits.wall_clock_cap_s:
                    raise SimulationError('wall-clock cap exceeded', self.run_id)
                if until is not None and until(self):
                    finished = True
                    break
        finally:
            if self._trace_file is not None:
                self._trace_file.close()
                self._trace_file = None
        if not finished:
            self.now = max(self.now, cap) if (self.queue or until is not None) else self.now
        self.metrics.completion_time_s = us_to_s(self.now)
        self.metrics.events_processed = processed
        self.metrics.trace_hash = self.trace_hash
        for component in self.components.values():
            if isinstance(component, ServiceStation) and component.arrivals:
                self.metrics.stations[component.id] = component.stats()
        logger.info(f"Run {self.run_id or ''} finished at t={us_to_s(self.now):.3f}s "
                    f"after {processed} events")
        return self.metrics
