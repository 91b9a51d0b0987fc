"""
Queueing oracle module for HiveSim.
Validates the simulator against analytic queueing results.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Optional

from hivesim.sim.kernel import Component, Distribution, Kernel, ServiceStation, SimEvent
from hivesim.utils import US_PER_S, round_float, us_to_s

logger = logging.getLogger(__name__)

MM1_TOLERANCE = 0.05
LITTLE_TOLERANCE = 0.10
LITTLE_MIN_COMPLETIONS = 50


@dataclass
class OracleResult:
    """Measured versus analytic value for one check."""
    check: str
    subject: str
    expected: float
    measured: float
    tolerance: float
    passed: bool
    note: str = ''

    @property
    def deviation(self) -> float:
        if self.expected == 0:
            return abs(self.measured)
        return abs(self.measured - self.expected) / self.expected

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['deviation'] = round_float(self.deviation)
        return data


class PoissonSource(Component):
    """Open-loop Poisson arrivals into one station."""

    def __init__(self, station: ServiceStation, rate_per_s: float, arrivals: int,
                 warmup: int = 0, component_id: str = 'source'):
        super().__init__(component_id)
        self.station = station
        self.mean_gap_s = 1.0 / rate_per_s
        self.remaining = arrivals
        self.warmup = warmup
        self.seen = 0
        self.sojourn_total_us = 0
        self.measured = 0
        self.stream = None

    def begin(self) -> None:
        self.stream = self.kernel.rng(self.id)
        self._next()

    def _next(self) -> None:
        if self.remaining <= 0:
            return
        self.remaining -= 1
        self.schedule(int(round(self.stream.exponential(self.mean_gap_s) * US_PER_S)), 'arrival')

    def _done(self, _job, sojourn_us: int) -> None:
        self.seen += 1
        if self.seen > self.warmup:
            self.sojourn_total_us += sojourn_us
            self.measured += 1

    def handle(self, event: SimEvent) -> None:
        self.station.submit(None, self._done)
        self._next()

    @property
    def mean_sojourn_s(self) -> float:
        return us_to_s(self.sojourn_total_us / self.measured) if self.measured else 0.0


def default_arrivals(rho: float) -> int:
    """Heavier load needs a longer run for the same confidence."""
    if rho >= 0.85:
        return 2_000_000
    return 1_000_000 if rho >= 0.7 else 100_000


def mm1_check(rho: float, arrivals: Optional[int] = None, seed: int = 0,
              tolerance: float = MM1_TOLERANCE) -> OracleResult:
    """
    Mean sojourn of an M/M/1 station (service rate 1/s) against 1/(mu - lambda).

    Args:
        rho: Offered load lambda/mu, in [0, 1)
        arrivals: Number of arrivals (default depends on rho)
        seed: Kernel seed
        tolerance: Allowed relative deviation

    Returns:
        OracleResult; rho == 0 is an empty-system pass
    """
    if not 0 <= rho < 1:
        raise ValueError(f"rho must be in [0, 1), got {rho}")
    subject = f"M/M/1 rho={rho:g}"
    if rho == 0:
        return OracleResult('mm1', subject, 0.0, 0.0, tolerance, True, 'empty system')
    arrivals = arrivals or default_arrivals(rho)
    kernel = Kernel(seed, run_id=f"oracle-mm1-{rho:g}")
    station = kernel.register(ServiceStation('mm1', 1, Distribution.exponential(1000.0),
                                             kernel.rng('mm1-service')))
    source = kernel.register(PoissonSource(station, rho, arrivals, warmup=arrivals // 100))
    source.begin()
    kernel.run(time_cap_us=2 ** 62)
    expected = 1.0 / (1.0 - rho)
    measured = source.mean_sojourn_s
    result = OracleResult('mm1', subject, expected, measured, tolerance, False)
    result.passed = result.deviation <= tolerance
    logger.info(f"{subject}: measured {measured:.4f}s, analytic {expected:.4f}s "
                f"({result.deviation:.2%} off)")
    return result


def littles_law_check(stations: Dict[str, Dict[str, Any]],
                      tolerance: float = LITTLE_TOLERANCE) -> List[OracleResult]:
    """
    Check L = lambda * W on every station with enough completions.

    Args:
        stations: Station statistics as exported in a MetricsReport
        tolerance: Allowed relative deviation

    Returns:
        One OracleResult per station; thin stations pass with a note
    """
    results = []
    for name, stats in sorted(stations.items()):
        expected = stats['arrival_rate_per_s'] * stats['mean_sojourn_s']
        measured = stats['mean_in_system']
        if stats['completions'] < LITTLE_MIN_COMPLETIONS:
            results.append(OracleResult('little', name, expected, measured, tolerance, True,
                                        'too few completions'))
            continue
        gap = abs(measured - expected)
        passed = gap <= tolerance * max(measured, expected) or gap < 1e-3
        results.append(OracleResult('little', name, expected, measured, tolerance, passed))
        if not passed:
            logger.warning(f"Little's law off on {name}: L={measured:.4f}, lambda*W={expected:.4f}")
    return results


def scenario_stations(duration_s: float = 30.0, seed: int = 0) -> Dict[str, Dict[str, Any]]:
    """Station statistics of a short ScenarioA run."""
    from hivesim.sim.world import World
    from hivesim.synth import plan_for_mode
    from hivesim.workloads import ScenarioConfig

    scenario = ScenarioConfig(name='oracle-scenario-a', workload='ScenarioA',
                              duration_s=duration_s, seed=seed)
    plan = plan_for_mode(scenario, 'centralized')
    world = World(scenario, plan, seed, mode='centralized', run_id='oracle-little')
    return world.run().stations


class QueueingOracle:
    """Runs the analytic checks and summarizes them."""

    def __init__(self, rhos: Iterable[float] = (0.5, 0.8, 0.9), arrivals: Optional[int] = None,
                 seed: int = 0, scenario_s: Optional[float] = 30.0):
        """
        Initialize the oracle.

        Args:
            rhos: M/M/1 loads to check
            arrivals: Arrivals per M/M/1 run (default depends on load)
            seed: Kernel seed
            scenario_s: ScenarioA horizon for the Little's-law check; None skips it
        """
        self.rhos = list(rhos)
        self.arrivals = arrivals
        self.seed = seed
        self.scenario_s = scenario_s
        self.results: List[OracleResult] = []

    def analyze(self, progress=None) -> Dict[str, Any]:
        for rho in self.rhos:
            self.results.append(mm1_check(rho, self.arrivals, self.seed))
            if progress:
                progress()
        if self.scenario_s:
            self.results.extend(littles_law_check(scenario_stations(self.scenario_s, self.seed)))
            if progress:
                progress()
        failed = [r for r in self.results if not r.passed]
        return {
            'total_checks': len(self.results),
            'failed_checks': len(failed),
            'passed': not failed,
            'checks': [r.to_dict() for r in self.results],
        }
