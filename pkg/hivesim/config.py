"""
Configuration objects for HiveSim.

Every numeric default here is the documented default of the modeled system.
Values marked non-calibrated are placeholders chosen to reproduce directional
behaviour, not absolute hardware numbers.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar

from hivesim.errors import ConfigError

logger = logging.getLogger(__name__)

T = TypeVar('T', bound='ConfigMixin')


class ConfigMixin:
    """from_dict / to_dict for flat dataclass configs; unknown keys are rejected."""

    @classmethod
    def from_dict(cls: Type[T], data: Optional[Dict[str, Any]]) -> T:
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{cls.__name__}: unknown key(s) {', '.join(unknown)}")
        try:
            config = cls(**data)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{cls.__name__}: {e}") from None
        config.check()
        return config

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def check(self) -> None:
        """Range checks; subclasses raise ConfigError."""

    def replace(self: T, **changes) -> T:
        data = self.to_dict()
        data.update(changes)
        return type(self).from_dict(data)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass
class ClusterConfig(ConfigMixin):
    """Serverless cluster: 12 nodes x 40 cores by default."""
    nodes: int = 12
    cores_per_node: int = 40
    memory_mb: int = 196608
    keepalive_s: float = 15.0
    cold_start_p50_ms: float = 150.0
    cold_start_p99_ms: float = 900.0
    controller_overhead_ms: float = 1.0
    controller_workers: int = 1
    concurrency_limit: int = 1000
    queue_cap: int = 1_000_000
    store_servers: int = 8
    store_base_ms: float = 2.0
    store_mb_per_s: float = 200.0
    same_container_us: float = 10.0
    remote_mem_gbps: float = 10.0
    # node index (as string in JSON) -> service-time multiplier
    slow_nodes: Dict[str, float] = field(default_factory=dict)

    def check(self) -> None:
        _require(self.nodes >= 1, 'nodes must be >= 1')
        _require(self.cores_per_node >= 1, 'cores_per_node must be >= 1')
        _require(0 <= self.keepalive_s <= 30, 'keepalive_s must be within [0, 30]')
        _require(self.controller_workers >= 1, 'controller_workers must be >= 1')
        _require(self.concurrency_limit >= 1, 'concurrency_limit must be >= 1')
        _require(0 < self.cold_start_p50_ms < self.cold_start_p99_ms,
                 'cold start requires 0 < p50 < p99')
        for key, factor in self.slow_nodes.items():
            _require(str(key).isdigit() and factor > 0, f"bad slow_nodes entry {key}: {factor}")

    def slowdown(self, node_index: int) -> float:
        return float(self.slow_nodes.get(str(node_index), 1.0))


@dataclass
class CapacityChange(ConfigMixin):
    """Scheduled link capacity change (fault injection)."""
    at_s: float
    link: str
    mbps: float

    def check(self) -> None:
        _require(self.at_s >= 0 and self.mbps > 0, 'capacity change needs at_s >= 0 and mbps > 0')


@dataclass
class TopologyConfig(ConfigMixin):
    """Wireless routers, wired fabric and RPC path parameters."""
    routers: int = 2
    router_mbps: float = 867.0
    wireless_latency_ms: float = 2.0
    tor_gbps: float = 40.0
    nic_gbps: float = 10.0
    wired_latency_us: float = 0.0
    # One router per this many devices when scaling with swarm size.
    devices_per_router: int = 8
    scale_with_devices: bool = True
    rpc_baseline_us: float = 40.0
    rpc_baseline_ns_per_byte: float = 1.0
    rpc_baseline_rps_per_core: float = 1_000_000.0
    rpc_accel_us: float = 2.1
    rpc_accel_rps_per_core: float = 12_400_000.0
    rpc_cores: int = 1
    capacity_changes: List[Dict[str, Any]] = field(default_factory=list)

    def check(self) -> None:
        _require(self.routers >= 1, 'routers must be >= 1')
        _require(self.router_mbps > 0 and self.tor_gbps > 0 and self.nic_gbps > 0,
                 'link capacities must be > 0')
        _require(self.rpc_accel_us < self.rpc_baseline_us,
                 'accelerated RPC overhead must be below baseline')
        _require(self.devices_per_router >= 1, 'devices_per_router must be >= 1')
        for change in self.capacity_changes:
            CapacityChange.from_dict(change)

    def router_count(self, devices: int) -> int:
        if not self.scale_with_devices:
            return self.routers
        return max(self.routers, -(-devices // self.devices_per_router))

    def changes(self) -> List[CapacityChange]:
        return [CapacityChange.from_dict(c) for c in self.capacity_changes]


@dataclass
class DeviceClass(ConfigMixin):
    """Edge device parameter profile; battery rates are % per unit (non-calibrated)."""
    name: str = 'drone'
    speed_mps: float = 4.0
    battery_pct: float = 100.0
    motion_rate: float = 0.3        # %/s while moving
    hover_rate: float = 0.25        # %/s while stationary
    compute_rate: float = 1e-4      # % per core-ms
    radio_rate: float = 2e-8        # % per byte sent
    cores: int = 4

    def check(self) -> None:
        _require(self.speed_mps > 0, 'speed_mps must be > 0')
        _require(0 < self.battery_pct <= 100, 'battery_pct must be within (0, 100]')
        _require(min(self.motion_rate, self.hover_rate, self.compute_rate, self.radio_rate) >= 0,
                 'battery rates must be >= 0')
        _require(self.cores >= 1, 'cores must be >= 1')

    @classmethod
    def named(cls, name: str) -> 'DeviceClass':
        if name == 'drone':
            return cls()
        if name == 'car':
            # no hover term; larger pack drains slower per unit of activity
            return cls(name='car', speed_mps=2.0, battery_pct=100.0, motion_rate=0.1,
                       hover_rate=0.0, compute_rate=4e-5, radio_rate=8e-9, cores=8)
        raise ConfigError(f"unknown device class {name!r}")


@dataclass
class ControllerConfig(ConfigMixin):
    """Heartbeat, straggler, probation and re-planning knobs."""
    heartbeat_period_s: float = 1.0
    heartbeat_timeout_s: float = 3.0
    heartbeat_bytes: int = 64
    heartbeat_loss: float = 0.0
    straggler_mitigation: bool = True
    straggler_percentile: float = 90.0
    straggler_min_samples: int = 20
    straggler_scan_ms: float = 50.0
    tracker_refresh_s: float = 1.0
    probation: bool = True
    probation_stragglers: int = 5
    probation_window_s: float = 60.0
    probation_s: float = 180.0
    replan: bool = False
    replan_interval_s: float = 10.0
    replan_window_s: float = 10.0
    replan_cooldown_s: float = 30.0
    battery_threshold: float = 20.0
    peer_sync_bytes: int = 1_000_000
    model_update_bytes: int = 4_000_000

    def check(self) -> None:
        _require(self.heartbeat_period_s > 0, 'heartbeat_period_s must be > 0')
        _require(self.heartbeat_timeout_s > 0, 'heartbeat_timeout_s must be > 0')
        _require(0 <= self.heartbeat_loss < 1, 'heartbeat_loss must be within [0, 1)')
        _require(0 < self.straggler_percentile < 100, 'straggler_percentile must be within (0, 100)')
        _require(self.straggler_min_samples >= 1, 'straggler_min_samples must be >= 1')
        _require(self.probation_stragglers >= 1, 'probation_stragglers must be >= 1')
        _require(self.replan_interval_s > 0, 'replan_interval_s must be > 0')


@dataclass
class DetectionConfig(ConfigMixin):
    """Confusion model for detection/deduplication tasks; perfect by default."""
    false_positive_rate: float = 0.0
    false_negative_rate: float = 0.0

    def check(self) -> None:
        _require(0 <= self.false_positive_rate <= 1, 'false_positive_rate must be within [0, 1]')
        _require(0 <= self.false_negative_rate < 1, 'false_negative_rate must be within [0, 1)')

    @property
    def perfect(self) -> bool:
        return self.false_positive_rate == 0 and self.false_negative_rate == 0


@dataclass
class SimLimits(ConfigMixin):
    """End conditions and sample storage limits."""
    time_cap_s: float = 1800.0
    event_cap: int = 200_000_000
    stall_cap: int = 1_000_000
    wall_clock_cap_s: float = 600.0
    exact_samples: int = 10_000_000
    reservoir_size: int = 1_000_000

    def check(self) -> None:
        _require(self.time_cap_s > 0, 'time_cap_s must be > 0')
        _require(self.event_cap > 0 and self.stall_cap > 0, 'event caps must be > 0')
        _require(0 < self.reservoir_size <= self.exact_samples,
                 'reservoir_size must be within (0, exact_samples]')


def load_json(path: str) -> Dict[str, Any]:
    """
    Read a JSON config file.

    Raises:
        ConfigError: unreadable file or malformed JSON
    """
    try:
        with open(Path(path), 'r', encoding='utf-8') as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    logger.debug(f"Loaded config {path}")
    return data
