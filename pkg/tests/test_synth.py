"""
Tests for placement enumeration, data-path labelling, selection and re-planning.
"""

import random

import pytest

from conftest import random_dag
from hivesim.config import ControllerConfig
from hivesim.dsl import ManagementDirective, PerfConstraint
from hivesim.errors import ConstraintConflict, ExplorationBudgetExceeded, NoFeasiblePlan
from hivesim.sim.kernel import MetricsReport
from hivesim.sim.net import DataPathKind
from hivesim.synth import (CLOUD, EDGE, AccelConfig, Location, PlacementPlan, PlanEvaluation,
                           Replanner, attach_data_paths, data_path, enumerate_plans,
                           forced_locations, select_plan, synthesize, uniform_plan)
from hivesim.workloads import ScenarioConfig

SCENARIO_A_INPUTS = {'createRoute': 50_000, 'frameFilter': 1_000_000,
                     'itemDetection': 200_000, 'mapUpdate': 2_000}


def graph_of(workload: str):
    return ScenarioConfig(name=workload, workload=workload).graph()


def brute_force_ids(graph, forced_bits):
    """Every bitmask whose forced tasks carry their forced bit."""
    names = graph.task_names
    ids = []
    for mask in range(1 << len(names)):
        if all((mask >> names.index(n) & 1) == bit for n, bit in forced_bits.items()):
            ids.append(mask)
    return ids


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def test_s1_plans_with_and_without_pruning():
    graph = graph_of('S1')
    assert [p.plan_id for p in enumerate_plans(graph, prune=False)] == [0, 1, 2, 3]
    pruned = enumerate_plans(graph, prune=True)
    assert [p.plan_id for p in pruned] == [1, 3]
    assert all(p.assignment['collectImage'].is_edge for p in pruned)


def test_scenario_a_has_sixteen_plans():
    graph = graph_of('ScenarioA')
    plans = enumerate_plans(graph)
    assert len(plans) == 16
    assert len({p.plan_id for p in plans}) == 16
    for plan in plans:
        assert plan.assignment['collectImage'].is_edge
        assert plan.assignment['obstacleAvoidance'].is_edge


def test_pins_reduce_the_space():
    graph = graph_of('ScenarioA')
    plans = enumerate_plans(graph, pins={'frameFilter': 'Edge', 'mapUpdate': 'Cloud'})
    assert len(plans) == 4
    assert all(p.assignment['frameFilter'].is_edge for p in plans)
    assert not any(p.assignment['mapUpdate'].is_edge for p in plans)


def test_pin_contradicting_place_directive():
    with pytest.raises(ConstraintConflict):
        enumerate_plans(graph_of('ScenarioA'), pins={'obstacleAvoidance': 'Cloud'})


def test_pin_contradicting_pruning_rule():
    graph = graph_of('ScenarioA')
    with pytest.raises(ConstraintConflict):
        enumerate_plans(graph, pins={'collectImage': 'Cloud'})
    assert len(enumerate_plans(graph, prune=False, pins={'collectImage': 'Cloud'})) == 16


def test_pin_for_unknown_task():
    with pytest.raises(ConstraintConflict):
        forced_locations(graph_of('S1'), pins={'nope': 'Edge'})


def test_exploration_budget():
    with pytest.raises(ExplorationBudgetExceeded):
        enumerate_plans(graph_of('ScenarioA'), budget=2)


def test_enumeration_matches_brute_force():
    rnd = random.Random(3)
    for _ in range(200):
        graph = random_dag(rnd, rnd.randint(1, 10))
        prune = rnd.random() < 0.7
        forced_bits = {}
        if prune:
            forced_bits.update({t.name: 1 for t in graph.tasks if t.is_source})
        for task in graph.tasks:
            if task.name not in forced_bits and rnd.random() < 0.15:
                side = rnd.choice([CLOUD, 'Edge:all'])
                graph.directives.append(ManagementDirective('Place', task.name, {'location': side}))
                forced_bits[task.name] = 0 if side == CLOUD else 1
        plans = enumerate_plans(graph, prune=prune)
        assert [p.plan_id for p in plans] == brute_force_ids(graph, forced_bits)
        for plan in plans:
            for i, name in enumerate(graph.task_names):
                assert plan.assignment[name].is_edge == bool(plan.plan_id >> i & 1)


# ---------------------------------------------------------------------------
# Data paths and plans
# ---------------------------------------------------------------------------

@pytest.mark.parametrize('parent, child, accel, expected', [
    (CLOUD, EDGE, 'all', DataPathKind.RPC_ACCELERATED),
    (EDGE, CLOUD, 'net', DataPathKind.RPC_ACCELERATED),
    (EDGE, CLOUD, 'none', DataPathKind.RPC_CLOUD_EDGE),
    (CLOUD, CLOUD, 'all', DataPathKind.REMOTE_MEMORY),
    (CLOUD, CLOUD, 'net', DataPathKind.STORE_EXCHANGE),
    (EDGE, EDGE, 'all', DataPathKind.ON_DEVICE_LOCAL),
    (EDGE, EDGE, 'none', DataPathKind.ON_DEVICE_LOCAL),
])
def test_data_path_table(parent, child, accel, expected):
    assert data_path(parent, child, AccelConfig.from_flag(accel)) == expected


def test_all_cloud_plan_paths():
    graph = graph_of('ScenarioA')
    plan = uniform_plan(graph, CLOUD, AccelConfig.from_flag('all'))
    assert plan.plan_id == 6
    assert plan.edge_paths == {
        ('createRoute', 'collectImage'): DataPathKind.RPC_ACCELERATED,
        ('collectImage', 'obstacleAvoidance'): DataPathKind.ON_DEVICE_LOCAL,
        ('collectImage', 'frameFilter'): DataPathKind.RPC_ACCELERATED,
        ('frameFilter', 'itemDetection'): DataPathKind.REMOTE_MEMORY,
        ('itemDetection', 'mapUpdate'): DataPathKind.REMOTE_MEMORY,
    }
    assert uniform_plan(graph, EDGE, AccelConfig()).plan_id == 63


def test_attached_paths_cover_every_edge():
    graph = graph_of('ScenarioB')
    for plan in enumerate_plans(graph):
        plan = attach_data_paths(plan, graph, AccelConfig.from_flag('none'))
        assert set(plan.edge_paths) == set(graph.edges())
        assert DataPathKind.REMOTE_MEMORY not in plan.edge_paths.values()


def test_plan_serialization():
    graph = graph_of('ScenarioA')
    plan = attach_data_paths(enumerate_plans(graph)[5], graph, AccelConfig.from_flag('mem'))
    assert PlacementPlan.from_dict(plan.to_dict()) == plan


def test_scoped_edge_location():
    location = Location.parse('Edge:d0,d3')
    plan = PlacementPlan(0, {'t': location})
    assert plan.location_for('t', 'd3') == EDGE
    assert plan.location_for('t', 'd1') == CLOUD
    assert str(location) == 'Edge:d0,d3'
    with pytest.raises(ValueError):
        Location.parse('Fog')


def test_accel_flag():
    assert AccelConfig.from_flag('none') == AccelConfig(False, False)
    assert AccelConfig.from_flag('mem').flag == 'mem'
    with pytest.raises(ValueError):
        AccelConfig.from_flag('fast')


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

def evaluation(plan_id, p99, battery=1.0, cost=1.0, throughput=10.0):
    return PlanEvaluation(plan_id, p99 / 2, p99, battery, 100.0, cost, throughput)


def test_select_plan_matches_filter_and_sort():
    rnd = random.Random(5)
    constraints = [PerfConstraint('latency', 200, 'ms'), PerfConstraint('throughput', 5, 'req/s', 'lower')]
    for _ in range(200):
        evals = [PlanEvaluation(i, 0.0, rnd.choice([100, 150, 180, 250]), rnd.choice([1.0, 2.0]),
                                0.0, rnd.choice([3.0, 4.0]), rnd.choice([4.0, 6.0]))
                 for i in rnd.sample(range(64), rnd.randint(1, 12))]
        feasible = [e for e in evals if e.predicted_p99_latency <= 200 and e.throughput >= 5]
        if not feasible:
            with pytest.raises(NoFeasiblePlan):
                select_plan(evals, constraints)
            continue
        expected = min(feasible, key=lambda e: (e.predicted_p99_latency, e.mean_battery_drain,
                                                e.cloud_cost, e.plan_id))
        assert select_plan(evals, constraints).plan_id == expected.plan_id


def test_select_plan_without_constraints_takes_lowest_tail():
    evals = [evaluation(3, 120.0), evaluation(1, 90.0), evaluation(2, 90.0, battery=0.5)]
    assert select_plan(evals, []).plan_id == 2


def test_select_plan_returns_plan_objects():
    plans = [PlacementPlan(7, {}), PlacementPlan(9, {})]
    chosen = select_plan([evaluation(7, 50.0), evaluation(9, 40.0)], [], plans)
    assert chosen is plans[1]


def test_no_feasible_plan_reports_nearest_miss():
    constraints = [PerfConstraint('latency', 200, 'ms')]
    with pytest.raises(NoFeasiblePlan) as info:
        select_plan([evaluation(1, 300.0), evaluation(2, 250.0)], constraints)
    assert info.value.nearest_miss.plan_id == 2
    assert info.value.violations == ['latency <= 200ms']


# ---------------------------------------------------------------------------
# Re-planning
# ---------------------------------------------------------------------------

def slow_metrics(latency_ms: float, now_s: int = 10) -> MetricsReport:
    """e2e samples over the nine seconds before now_s."""
    metrics = MetricsReport()
    for second in range(now_s - 9, now_s):
        metrics.record_latency('e2e', second * 1_000_000, int(latency_ms * 1000))
    return metrics


def make_replanner(graph):
    return Replanner(graph, ControllerConfig(replan=True), SCENARIO_A_INPUTS,
                     fixed=forced_locations(graph))


def test_replan_moves_heaviest_input_first():
    graph = graph_of('ScenarioA')
    replanner = make_replanner(graph)
    plan = uniform_plan(graph, CLOUD, AccelConfig())
    metrics = slow_metrics(6000.0)
    first = replanner.replan(10_000_000, plan, metrics)
    assert first.assignment['frameFilter'].is_edge
    assert first.plan_id == plan.plan_id + 8
    assert first.edge_paths[('collectImage', 'frameFilter')] == DataPathKind.ON_DEVICE_LOCAL
    second = replanner.replan(20_000_000, first, slow_metrics(6000.0, 20))
    assert second.assignment['itemDetection'].is_edge
    assert second.plan_id == first.plan_id + 16


def test_replan_respects_cooldown():
    graph = graph_of('ScenarioA')
    replanner = make_replanner(graph)
    plan = uniform_plan(graph, CLOUD, AccelConfig())
    moved = replanner.replan(10_000_000, plan, slow_metrics(6000.0))
    assert moved.assignment['frameFilter'].is_edge
    # frameFilter is back in the cloud but still cooling down
    again = replanner.replan(15_000_000, plan, slow_metrics(6000.0, 15))
    assert again.assignment['itemDetection'].is_edge
    assert not again.assignment['frameFilter'].is_edge


def test_no_replan_when_constraints_hold():
    graph = graph_of('ScenarioA')
    replanner = make_replanner(graph)
    plan = uniform_plan(graph, CLOUD, AccelConfig())
    assert replanner.violated(10_000_000, slow_metrics(1000.0)) == []
    assert replanner.replan(10_000_000, plan, slow_metrics(1000.0)) is None


def test_no_replan_when_everything_is_on_the_edge():
    graph = graph_of('ScenarioA')
    replanner = make_replanner(graph)
    plan = uniform_plan(graph, EDGE, AccelConfig())
    assert replanner.replan(10_000_000, plan, slow_metrics(6000.0)) is None


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_synthesize_s1():
    scenario = ScenarioConfig(name='s1', workload='S1', trial_devices=2, trial_horizon_s=5.0)
    result = synthesize(scenario)
    assert [p.plan_id for p in result.plans] == [1, 3]
    assert [e.plan_id for e in result.evaluations] == [1, 3]
    assert result.feasible
    assert result.selected.plan_id in (1, 3)
