"""
Tests for report exporters and result charts.
"""

import csv
import json

import pytest

from hivesim.dsl import PerfConstraint
from hivesim.export import ReportExporter
from hivesim.sim.kernel import MetricsReport
from hivesim.sim.net import DataPathKind
from hivesim.synth import AccelConfig, Location, PlacementPlan, PlanEvaluation, SynthesisResult
from hivesim.visualize import ResultsVisualizer


@pytest.fixture
def synthesis():
    cloud = PlacementPlan(1, {'collect': Location.edge(), 'detect': Location.cloud()},
                          {('collect', 'detect'): DataPathKind.RPC_ACCELERATED}, AccelConfig())
    edge = PlacementPlan(3, {'collect': Location.edge(), 'detect': Location.edge()},
                         {('collect', 'detect'): DataPathKind.ON_DEVICE_LOCAL}, AccelConfig())
    evaluations = [PlanEvaluation(1, 80.0, 240.0, 1.5, 300.0, 12.0),
                   PlanEvaluation(3, 450.0, 1300.0, 4.0, 0.5, 0.0)]
    return SynthesisResult([cloud, edge], evaluations, selected=cloud)


@pytest.fixture
def report():
    metrics = MetricsReport()
    for i in range(100):
        metrics.record_latency('e2e', i * 10_000, 1000 * (i + 1))
    metrics.record_battery('d0', 0, 100.0)
    metrics.record_battery('d0', 1_000_000, 99.0)
    metrics.record_bytes('wireless-r0', 0, 2_000_000, 500_000)
    plan = PlacementPlan(1, {'collect': Location.edge(), 'detect': Location.cloud()},
                         {('collect', 'detect'): DataPathKind.RPC_CLOUD_EDGE})
    return {'metrics': metrics.to_dict(), 'plan': plan.to_dict()}


def test_plans_json(synthesis, tmp_path):
    exporter = ReportExporter(synthesis, scenario_name='demo',
                              constraints=[PerfConstraint('latency', 1, 's')])
    assert exporter.export_plans_json(str(tmp_path / 'plans.json'))
    data = json.loads((tmp_path / 'plans.json').read_text(encoding='utf-8'))
    assert data['constraints'] == ['latency <= 1s']
    assert [p['plan_id'] for p in data['plans']] == [1, 3]
    assert data['plans'][0]['edge_paths'] == {'collect->detect': 'RpcAccelerated'}
    assert data['selected']['plan_id'] == 1


def test_evals_csv_marks_feasibility(synthesis, tmp_path):
    exporter = ReportExporter(synthesis, constraints=[PerfConstraint('latency', 1, 's')])
    assert exporter.export_evals_csv(str(tmp_path / 'evals.csv'))
    with open(tmp_path / 'evals.csv', encoding='utf-8') as f:
        rows = list(csv.DictReader(f))
    assert [(r['plan_id'], r['selected'], r['feasible']) for r in rows] == [
        ('1', 'True', 'True'), ('3', 'False', 'False')]


def test_markdown_report(synthesis, tmp_path):
    rows = [{'point': 'base', 'mode': 'hivemind', 'seed': 0, 'p50_ms': 10.0, 'p99_ms': 30.0,
             'mean_battery_drain_pct': 1.2, 'peak_wireless_mbps': 40.0, 'coverage': 1.0}]
    exporter = ReportExporter(synthesis, summary_rows=rows, scenario_name='demo')
    path = tmp_path / 'report.md'
    assert exporter.export_markdown(str(path))
    text = path.read_text(encoding='utf-8')
    assert '# HiveSim Report: demo' in text
    assert '| 1 * |' in text
    assert '| base | hivemind | 0 |' in text


def test_export_failure_returns_false(tmp_path):
    assert not ReportExporter(None).export_plans_json(str(tmp_path / 'plans.json'))


def test_charts(report, tmp_path):
    visualizer = ResultsVisualizer({'base/hivemind/seed-0': report})
    for render, name in ((visualizer.create_latency_chart, 'latency.html'),
                         (visualizer.create_battery_chart, 'battery.html'),
                         (visualizer.create_bandwidth_chart, 'bandwidth.html')):
        path = tmp_path / name
        assert render(str(path)) == str(path)
        assert path.stat().st_size > 0


def test_plan_graph(report, tmp_path):
    path = tmp_path / 'plan.html'
    assert ResultsVisualizer.create_plan_graph(report['plan'], str(path)) == str(path)
    assert 'collect' in path.read_text(encoding='utf-8')


def test_plot_loads_nested_reports(report, tmp_path):
    from plot import load_reports

    run_dir = tmp_path / 'base' / 'hivemind' / 'seed-0'
    run_dir.mkdir(parents=True)
    (run_dir / 'metrics.json').write_text(json.dumps(report), encoding='utf-8')
    reports = load_reports(tmp_path)
    assert list(reports) == ['base/hivemind/seed-0']
    assert reports['base/hivemind/seed-0']['plan']['plan_id'] == 1
