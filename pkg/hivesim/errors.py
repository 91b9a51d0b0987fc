"""
Exception hierarchy for HiveSim.
"""

from typing import Any, List, Optional, Sequence


class HiveSimError(Exception):
    """Base class for all HiveSim errors."""


class ConfigError(HiveSimError):
    """Invalid or unreadable configuration."""


class ParseError(HiveSimError):
    """Syntax error in a DSL program, located by line and column."""

    def __init__(self, message: str, line: int, col: int, path: Optional[str] = None):
        self.message = message
        self.line = line
        self.col = col
        self.path = path
        super().__init__(self.format())

    def format(self) -> str:
        return f"{self.path or '<input>'}:{self.line}:{self.col}: {self.message}"


class ValidationError(HiveSimError):
    """Semantic violations in a task graph. Carries the list of issues."""

    def __init__(self, issues: Sequence[Any]):
        self.issues = list(issues)
        super().__init__('; '.join(str(issue) for issue in self.issues))


class ConstraintConflict(HiveSimError):
    """Place directives or hints cannot be satisfied together with pruning rules."""


class ExplorationBudgetExceeded(HiveSimError):
    """Too many free tasks to enumerate placements exhaustively."""


class NoFeasiblePlan(HiveSimError):
    """No evaluated plan satisfies every constraint."""

    def __init__(self, nearest_miss: Any, violations: List[str]):
        self.nearest_miss = nearest_miss
        self.violations = list(violations)
        plan_id = getattr(nearest_miss, 'plan_id', None)
        super().__init__(f"no feasible plan; nearest miss is plan {plan_id} "
                         f"violating {', '.join(self.violations)}")


class SimulationError(HiveSimError):
    """A simulation could not complete."""

    def __init__(self, message: str, run_id: Optional[str] = None):
        self.run_id = run_id
        super().__init__(f"[{run_id}] {message}" if run_id else message)


class LivelockError(SimulationError):
    """The event cap was exceeded without clock progress."""


class InvalidDistribution(HiveSimError):
    """A service-time distribution has invalid parameters."""


class UnknownWorkload(HiveSimError):
    """No built-in or configured profile with the requested id."""


class NoCapacity(HiveSimError):
    """Cluster cores are exhausted and the controller queue is full."""


class UnreachableCell(HiveSimError):
    """A coverage cell cannot be reached because obstacles disconnect it."""


class MissionInfeasible(HiveSimError):
    """No eligible device can take over a failed device's area."""


class LinkDown(HiveSimError):
    """A transfer endpoint is a dead device."""
