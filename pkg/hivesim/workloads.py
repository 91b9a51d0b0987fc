"""
Workload profiles and scenario configurations.

A WorkloadProfile pairs a DSL program with per-task service-time
distributions (cloud core and edge core), data sizes and an arrival pattern.
Profiles ship as JSON under ``profiles/``; HIVESIM_PROFILE_DIR points at an
alternative directory. All service times are synthetic and non-calibrated.
"""

import copy
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from hivesim.config import (ClusterConfig, ConfigMixin, ControllerConfig, DetectionConfig,
                            DeviceClass, SimLimits, TopologyConfig, load_json)
from hivesim.dsl import TaskGraph, load_program
from hivesim.errors import ConfigError, UnknownWorkload
from hivesim.sim.kernel import Distribution
from hivesim.utils import s_to_us

logger = logging.getLogger(__name__)

ROOT_DIR = Path(__file__).resolve().parent.parent
DEFAULT_PROFILE_DIR = ROOT_DIR / 'profiles'
SCENARIO_DIR = ROOT_DIR / 'scenarios'

ARRIVAL_PATTERNS = ('per-frame', 'per-batch', 'periodic')
PLAN_CHOICES = ('synthesized', 'all-cloud', 'all-edge', 'centralized')
ACCEL_CHOICES = ('none', 'net', 'mem', 'all')


def device_ids(count: int) -> List[str]:
    return [f"d{i}" for i in range(count)]


@dataclass
class TaskProfile:
    """Execution parameters of one task on each tier."""
    cloud: Distribution
    edge: Distribution
    input_bytes: int = 0
    output_bytes: int = 0
    output_is_frame: bool = False
    output_bytes_per_tag: int = 0
    parallelism: int = 1
    deps_id: str = ''
    pass_rule: Optional[str] = None
    detects: Optional[str] = None

    @classmethod
    def from_dict(cls, name: str, data: Dict[str, Any]) -> 'TaskProfile':
        data = dict(data)
        cloud = data.pop('cloud', None)
        edge = data.pop('edge', None)
        if cloud is None and edge is None:
            raise ConfigError(f"task {name}: needs a cloud or edge service distribution")
        cloud_dist = Distribution.from_dict(cloud or edge)
        edge_dist = Distribution.from_dict(edge or cloud)
        output = data.pop('output_bytes', 0)
        known = {'input_bytes', 'output_bytes_per_tag', 'parallelism', 'deps_id', 'pass_rule', 'detects'}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"task {name}: unknown key(s) {', '.join(unknown)}")
        profile = cls(cloud=cloud_dist, edge=edge_dist,
                      output_bytes=0 if output == 'frame' else int(output),
                      output_is_frame=output == 'frame',
                      input_bytes=int(data.get('input_bytes', 0)),
                      output_bytes_per_tag=int(data.get('output_bytes_per_tag', 0)),
                      parallelism=int(data.get('parallelism', 1)),
                      deps_id=str(data.get('deps_id', name)),
                      pass_rule=data.get('pass_rule'),
                      detects=data.get('detects'))
        if profile.parallelism < 1:
            raise ConfigError(f"task {name}: parallelism must be >= 1")
        if profile.pass_rule not in (None, 'targets'):
            raise ConfigError(f"task {name}: unknown pass_rule {profile.pass_rule!r}")
        return profile

    def to_dict(self) -> Dict[str, Any]:
        return {
            'cloud': self.cloud.to_dict(),
            'edge': self.edge.to_dict(),
            'input_bytes': self.input_bytes,
            'output_bytes': 'frame' if self.output_is_frame else self.output_bytes,
            'output_bytes_per_tag': self.output_bytes_per_tag,
            'parallelism': self.parallelism,
            'deps_id': self.deps_id,
            'pass_rule': self.pass_rule,
            'detects': self.detects,
        }

    def output_size(self, frame_bytes: int, tags: int) -> int:
        base = frame_bytes if self.output_is_frame else self.output_bytes
        return base + self.output_bytes_per_tag * tags


@dataclass
class WorkloadProfile:
    """One benchmark: program, task parameters and arrival pattern."""
    id: str
    program: str
    description: str = ''
    arrival: str = 'per-frame'
    fps: float = 8.0
    frame_bytes: int = 2_000_000
    period_s: float = 1.0
    goal: Optional[Dict[str, Any]] = None
    targets: Dict[str, int] = field(default_factory=dict)
    tasks: Dict[str, TaskProfile] = field(default_factory=dict)
    _graph: Optional[TaskGraph] = field(default=None, repr=False, compare=False)

    def task(self, name: str) -> TaskProfile:
        if name not in self.tasks:
            raise UnknownWorkload(f"profile {self.id} has no parameters for task {name!r}")
        return self.tasks[name]

    def graph(self) -> TaskGraph:
        if self._graph is None:
            self._graph = load_program(self.program)
        return self._graph

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'program': Path(self.program).name,
            'description': self.description,
            'arrival': self.arrival,
            'fps': self.fps,
            'frame_bytes': self.frame_bytes,
            'period_s': self.period_s,
            'goal': self.goal,
            'targets': dict(self.targets),
            'tasks': {name: t.to_dict() for name, t in sorted(self.tasks.items())},
        }


def profile_dir(override: Optional[str] = None) -> Path:
    return Path(override or os.environ.get('HIVESIM_PROFILE_DIR') or DEFAULT_PROFILE_DIR)


def _deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _index_profiles(directory: Path) -> Dict[str, Path]:
    index = {}
    if not directory.is_dir():
        return index
    for path in sorted(directory.glob('*.json')):
        try:
            profile_id = load_json(str(path)).get('id')
        except ConfigError as e:
            logger.warning(f"Skipping unreadable profile {path}: {e}")
            continue
        if profile_id:
            index[str(profile_id)] = path
    return index


def list_profiles(directory: Optional[str] = None) -> List[str]:
    return sorted(_index_profiles(profile_dir(directory)))


def load_profile(profile_id: str, overrides: Optional[Dict[str, Any]] = None,
                 directory: Optional[str] = None) -> WorkloadProfile:
    """
    Load a built-in (or HIVESIM_PROFILE_DIR) workload profile.

    Args:
        profile_id: S1..S10, ScenarioA or ScenarioB (or any id in the directory)
        overrides: Nested dict merged over the profile JSON before parsing
        directory: Profile directory override

    Returns:
        The WorkloadProfile

    Raises:
        UnknownWorkload: no profile with this id
        ConfigError: malformed profile
    """
    base = profile_dir(directory)
    path = _index_profiles(base).get(profile_id)
    if path is None:
        raise UnknownWorkload(f"unknown workload {profile_id!r} (profiles in {base})")
    data = _deep_merge(load_json(str(path)), overrides or {})
    program = Path(data.get('program', ''))
    if not program.is_absolute():
        program = (path.parent / program).resolve()
    arrival = data.get('arrival', 'per-frame')
    if arrival not in ARRIVAL_PATTERNS:
        raise ConfigError(f"profile {profile_id}: arrival must be one of {', '.join(ARRIVAL_PATTERNS)}")
    tasks = {name: TaskProfile.from_dict(name, spec) for name, spec in data.get('tasks', {}).items()}
    profile = WorkloadProfile(
        id=str(data['id']), program=str(program), description=data.get('description', ''),
        arrival=arrival, fps=float(data.get('fps', 8.0)),
        frame_bytes=int(data.get('frame_bytes', 2_000_000)),
        period_s=float(data.get('period_s', 1.0)), goal=data.get('goal'),
        targets={k: int(v) for k, v in data.get('targets', {}).items()}, tasks=tasks)
    missing = [t for t in profile.graph().task_names if t not in tasks]
    if missing:
        raise ConfigError(f"profile {profile_id}: no parameters for task(s) {', '.join(missing)}")
    logger.debug(f"Loaded profile {profile_id} from {path}")
    return profile


# ---------------------------------------------------------------------------
# Arrivals
# ---------------------------------------------------------------------------

@dataclass
class Arrival:
    time_us: int
    device_id: str
    index: int
    frames: int = 1


def generate_arrivals(profile: WorkloadProfile, devices: int, horizon_s: float,
                      fps: Optional[float] = None) -> List[Arrival]:
    """
    Nominal task-arrival schedule per device over (0, horizon].

    per-frame: one arrival per captured frame; per-batch: one arrival per
    second carrying that second's frames; periodic: one arrival every
    period_s. The schedule is a pure function of its arguments.
    """
    fps = profile.fps if fps is None else fps
    if horizon_s <= 0 or devices <= 0:
        return []
    horizon_us = s_to_us(horizon_s)
    arrivals: List[Arrival] = []
    for device_id in device_ids(devices):
        if profile.arrival == 'per-frame':
            period = 1e6 / fps
            count = int(horizon_s * fps + 1e-9)
            times = [int(round(k * period)) for k in range(1, count + 1)]
            frames = 1
        elif profile.arrival == 'per-batch':
            times = [s_to_us(k) for k in range(1, int(horizon_s + 1e-9) + 1)]
            frames = max(1, int(round(fps)))
        else:
            period = s_to_us(profile.period_s)
            times = list(range(period, horizon_us + 1, period))
            frames = 1
        arrivals.extend(Arrival(t, device_id, i, frames) for i, t in enumerate(times) if t <= horizon_us)
    arrivals.sort(key=lambda a: (a.time_us, int(a.device_id[1:])))
    return arrivals


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

@dataclass
class ScenarioConfig(ConfigMixin):
    """Everything one simulation run needs besides the plan and the seed."""
    name: str = 'scenario'
    workload: str = 'ScenarioA'
    program: Optional[str] = None
    devices: int = 16
    device_class: str = 'drone'
    device: Dict[str, Any] = field(default_factory=dict)
    fps: Optional[float] = None
    frame_bytes: Optional[int] = None
    cells_per_device: int = 16
    obstacles: List[List[float]] = field(default_factory=list)
    items: Optional[int] = None
    people: Optional[int] = None
    person_speed_mps: float = 1.5
    duration_s: Optional[float] = None
    plan: str = 'synthesized'
    accel: str = 'all'
    seed: int = 0
    pins: Dict[str, str] = field(default_factory=dict)
    profile_overrides: Dict[str, Any] = field(default_factory=dict)
    cluster: Dict[str, Any] = field(default_factory=dict)
    topology: Dict[str, Any] = field(default_factory=dict)
    controller: Dict[str, Any] = field(default_factory=dict)
    detection: Dict[str, Any] = field(default_factory=dict)
    limits: Dict[str, Any] = field(default_factory=dict)
    failures: List[Dict[str, Any]] = field(default_factory=list)
    node_failures: List[Dict[str, Any]] = field(default_factory=list)
    trial_devices: int = 16
    trial_horizon_s: float = 10.0

    def check(self) -> None:
        if self.devices < 1:
            raise ConfigError('devices must be >= 1')
        if self.cells_per_device < 1:
            raise ConfigError('cells_per_device must be >= 1')
        if self.plan not in PLAN_CHOICES:
            raise ConfigError(f"plan must be one of {', '.join(PLAN_CHOICES)}")
        if self.accel not in ACCEL_CHOICES:
            raise ConfigError(f"accel must be one of {', '.join(ACCEL_CHOICES)}")
        if self.duration_s is not None and self.duration_s <= 0:
            raise ConfigError('duration_s must be > 0')
        if self.fps is not None and self.fps <= 0:
            raise ConfigError('fps must be > 0')
        for failure in self.failures:
            if 'device' not in failure or 'at_s' not in failure:
                raise ConfigError(f"device failure needs 'device' and 'at_s': {failure}")
        for failure in self.node_failures:
            if 'node' not in failure or 'at_s' not in failure:
                raise ConfigError(f"node failure needs 'node' and 'at_s': {failure}")
        # surface nested errors at load time
        self.cluster_config()
        self.topology_config()
        self.controller_config()
        self.detection_config()
        self.sim_limits()
        self.device_config()

    def cluster_config(self) -> ClusterConfig:
        return ClusterConfig.from_dict(self.cluster)

    def topology_config(self) -> TopologyConfig:
        return TopologyConfig.from_dict(self.topology)

    def controller_config(self) -> ControllerConfig:
        return ControllerConfig.from_dict(self.controller)

    def detection_config(self) -> DetectionConfig:
        return DetectionConfig.from_dict(self.detection)

    def sim_limits(self) -> SimLimits:
        return SimLimits.from_dict(self.limits)

    def device_config(self) -> DeviceClass:
        base = DeviceClass.named(self.device_class).to_dict()
        base.update(self.device)
        return DeviceClass.from_dict(base)

    def profile(self) -> WorkloadProfile:
        return load_profile(self.workload, self.profile_overrides)

    def graph(self) -> TaskGraph:
        if self.program:
            return load_program(self.program)
        return self.profile().graph()

    def trial(self) -> 'ScenarioConfig':
        """Bounded copy used to profile candidate plans."""
        return self.replace(devices=min(self.devices, self.trial_devices),
                            duration_s=self.trial_horizon_s, failures=[], node_failures=[])


def load_scenario(path: str) -> ScenarioConfig:
    """
    Load a scenario JSON file; a relative ``program`` resolves against the file's directory.

    Raises:
        ConfigError: unreadable file, unknown keys or invalid values
    """
    data = load_json(path)
    program = data.get('program')
    if program and not Path(program).is_absolute():
        data['program'] = str((Path(path).resolve().parent / program).resolve())
    data.setdefault('name', Path(path).stem)
    return ScenarioConfig.from_dict(data)
